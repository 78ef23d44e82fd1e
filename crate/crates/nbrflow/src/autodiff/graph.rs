use crate::error::{Error, Result};

use super::params::{ParamSlice, ParamStore};
use super::tensor::Tensor;

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddConst,
    MulConst(f64),
    Matmul,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    Sum,
    Mean,
    SumRows,
    ConcatCols,
    Cols(Vec<usize>),
    BroadcastRows,
    Reshape,
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
}

/// Handle to a node in a [`Graph`]; carries the output shape.
#[derive(Debug, Clone, Copy)]
pub struct Var {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Gradients produced by [`Graph::backward`], indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, materialized as zeros when the output does not
    /// depend on it.
    pub fn get_or_zero(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.rows, v.cols))
    }
}

/// Single-use computation tape. Build a fresh graph per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    // (node id, parameter-store offset) for every param leaf on this tape
    params: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        let (rows, cols) = value.shape();
        self.nodes.push(Node { op, inputs, value, requires_grad });
        Var { id, rows, cols }
    }

    fn push_checked(
        &mut self,
        name: &str,
        op: Op,
        inputs: Vec<usize>,
        value: Tensor,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(op, inputs, value, requires_grad))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, vec![], value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf backed by a [`ParamStore`] block; its gradient is routed back to
    /// the store offsets by [`Graph::param_grads`].
    pub fn param(&mut self, store: &ParamStore, slice: ParamSlice) -> Var {
        let v = self.leaf(store.tensor(slice), true);
        self.params.push((v.id, slice.offset));
        v
    }

    fn binary_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let ok = (a.rows == b.rows && a.cols == b.cols)
            || (b.rows == 1 && b.cols == 1)
            || (b.rows == 1 && b.cols == a.cols)
            || (b.cols == 1 && b.rows == a.rows);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{name}: {}x{} vs {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )))
        }
    }

    fn broadcast_apply(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Tensor::zeros(a.rows, a.cols);
        for i in 0..a.rows {
            for j in 0..a.cols {
                let bi = if b.rows == 1 { 0 } else { i };
                let bj = if b.cols == 1 { 0 } else { j };
                out.set(i, j, f(av.get(i, j), bv.get(bi, bj)));
            }
        }
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("add", a, b)?;
        let v = self.broadcast_apply(a, b, |x, y| x + y);
        self.push_checked("add", Op::Add, vec![a.id, b.id], v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("sub", a, b)?;
        let v = self.broadcast_apply(a, b, |x, y| x - y);
        self.push_checked("sub", Op::Sub, vec![a.id, b.id], v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("mul", a, b)?;
        let v = self.broadcast_apply(a, b, |x, y| x * y);
        self.push_checked("mul", Op::Mul, vec![a.id, b.id], v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape("div", a, b)?;
        let v = self.broadcast_apply(a, b, |x, y| x / y);
        self.push_checked("div", Op::Div, vec![a.id, b.id], v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push_checked("add_const", Op::AddConst, vec![a.id], v)
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push_checked("mul_const", Op::MulConst(c), vec![a.id], v)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.mul_const(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push_checked("matmul", Op::Matmul, vec![a.id, b.id], v)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push_checked("exp", Op::Exp, vec![a.id], v)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let v = self.value(a).map(f64::ln);
        self.push_checked("log", Op::Log, vec![a.id], v)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push_checked("tanh", Op::Tanh, vec![a.id], v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push_checked("sigmoid", Op::Sigmoid, vec![a.id], v)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(softplus);
        self.push_checked("softplus", Op::Softplus, vec![a.id], v)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push_checked("relu", Op::Relu, vec![a.id], v)
    }

    /// Sum of all entries, producing a 1x1 scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push_checked("sum", Op::Sum, vec![a.id], v)
    }

    /// Mean of all entries, producing a 1x1 scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = (a.rows * a.cols) as f64;
        let v = Tensor::scalar(self.value(a).data().iter().sum::<f64>() / n);
        self.push_checked("mean", Op::Mean, vec![a.id], v)
    }

    /// Row-wise sum: `r x c -> r x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut out = Tensor::zeros(a.rows, 1);
        for i in 0..a.rows {
            out.set(i, 0, av.row_slice(i).iter().sum());
        }
        self.push_checked("sum_rows", Op::SumRows, vec![a.id], out)
    }

    /// Column-wise concatenation; all inputs must share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch("concat of zero tensors".into()));
        }
        let rows = parts[0].rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::ShapeMismatch("concat row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut at = 0;
            for p in parts {
                for j in 0..p.cols {
                    out.set(i, at + j, self.value(*p).get(i, j));
                }
                at += p.cols;
            }
        }
        self.push_checked(
            "concat",
            Op::ConcatCols,
            parts.iter().map(|p| p.id).collect(),
            out,
        )
    }

    /// Column gather (the `slice` op); indices may repeat or reorder.
    pub fn cols(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        if indices.iter().any(|&j| j >= a.cols) {
            return Err(Error::ShapeMismatch("column index out of range".into()));
        }
        let av = self.value(a);
        let mut out = Tensor::zeros(a.rows, indices.len());
        for i in 0..a.rows {
            for (jj, &j) in indices.iter().enumerate() {
                out.set(i, jj, av.get(i, j));
            }
        }
        self.push_checked("cols", Op::Cols(indices.to_vec()), vec![a.id], out)
    }

    /// Replicates a `1 x c` row across `n` rows.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        if a.rows != 1 {
            return Err(Error::ShapeMismatch("broadcast_rows needs a 1-row input".into()));
        }
        let row = self.value(a).data().to_vec();
        let mut data = Vec::with_capacity(n * a.cols);
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        let out = Tensor::new(n, a.cols, data)?;
        self.push_checked("broadcast", Op::BroadcastRows, vec![a.id], out)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).reshape(rows, cols)?;
        self.push_checked("reshape", Op::Reshape, vec![a.id], out)
    }

    /// Reverse pass from a scalar output. Gradients accumulate additively
    /// over fan-out; nodes the output does not depend on get no entry.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_node = &self.nodes[output.id];
        if out_node.value.len() != 1 {
            let (r, c) = out_node.value.shape();
            return Err(Error::NonScalarOutput(vec![r, c]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.id] = Some(Tensor::scalar(1.0));

        for id in (0..=output.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.backprop_node(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor>], id: usize, delta: Tensor) {
        match &mut grads[id] {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += dv;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Sums `g` down to the (possibly broadcast) shape of input `b`.
    fn reduce_to(g: &Tensor, rows: usize, cols: usize) -> Tensor {
        let (gr, gc) = g.shape();
        if (gr, gc) == (rows, cols) {
            return g.clone();
        }
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..gr {
            for j in 0..gc {
                let bi = if rows == 1 { 0 } else { i };
                let bj = if cols == 1 { 0 } else { j };
                let v = out.get(bi, bj) + g.get(i, j);
                out.set(bi, bj, v);
            }
        }
        out
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        let needs = |i: usize| self.nodes[ins[i]].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                if needs(0) {
                    Self::accumulate(grads, ins[0], g.clone());
                }
                if needs(1) {
                    let b = &self.nodes[ins[1]].value;
                    Self::accumulate(grads, ins[1], Self::reduce_to(g, b.rows(), b.cols()));
                }
            }
            Op::Sub => {
                if needs(0) {
                    Self::accumulate(grads, ins[0], g.clone());
                }
                if needs(1) {
                    let b = &self.nodes[ins[1]].value;
                    let neg = g.map(|x| -x);
                    Self::accumulate(grads, ins[1], Self::reduce_to(&neg, b.rows(), b.cols()));
                }
            }
            Op::Mul | Op::Div => {
                let a = &self.nodes[ins[0]].value;
                let b = &self.nodes[ins[1]].value;
                let (ar, ac) = a.shape();
                let bget = |i: usize, j: usize| {
                    b.get(if b.rows() == 1 { 0 } else { i }, if b.cols() == 1 { 0 } else { j })
                };
                let is_div = matches!(node.op, Op::Div);
                if needs(0) {
                    let mut da = Tensor::zeros(ar, ac);
                    for i in 0..ar {
                        for j in 0..ac {
                            let bv = bget(i, j);
                            let d = if is_div { g.get(i, j) / bv } else { g.get(i, j) * bv };
                            da.set(i, j, d);
                        }
                    }
                    Self::accumulate(grads, ins[0], da);
                }
                if needs(1) {
                    let mut full = Tensor::zeros(ar, ac);
                    for i in 0..ar {
                        for j in 0..ac {
                            let bv = bget(i, j);
                            let d = if is_div {
                                -g.get(i, j) * a.get(i, j) / (bv * bv)
                            } else {
                                g.get(i, j) * a.get(i, j)
                            };
                            full.set(i, j, d);
                        }
                    }
                    Self::accumulate(grads, ins[1], Self::reduce_to(&full, b.rows(), b.cols()));
                }
            }
            Op::AddConst => {
                if needs(0) {
                    Self::accumulate(grads, ins[0], g.clone());
                }
            }
            Op::MulConst(c) => {
                if needs(0) {
                    let c = *c;
                    Self::accumulate(grads, ins[0], g.map(|x| x * c));
                }
            }
            Op::Matmul => {
                let a = &self.nodes[ins[0]].value;
                let b = &self.nodes[ins[1]].value;
                if needs(0) {
                    let da = g.matmul(&b.transpose()).expect("backward matmul shapes");
                    Self::accumulate(grads, ins[0], da);
                }
                if needs(1) {
                    let db = a.transpose().matmul(g).expect("backward matmul shapes");
                    Self::accumulate(grads, ins[1], db);
                }
            }
            Op::Exp => {
                if needs(0) {
                    let out = &node.value;
                    let mut d = g.clone();
                    for (dv, ov) in d.data_mut().iter_mut().zip(out.data()) {
                        *dv *= ov;
                    }
                    Self::accumulate(grads, ins[0], d);
                }
            }
            Op::Log => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    let mut d = g.clone();
                    for (dv, av) in d.data_mut().iter_mut().zip(a.data()) {
                        *dv /= av;
                    }
                    Self::accumulate(grads, ins[0], d);
                }
            }
            Op::Tanh => {
                if needs(0) {
                    let out = &node.value;
                    let mut d = g.clone();
                    for (dv, ov) in d.data_mut().iter_mut().zip(out.data()) {
                        *dv *= 1.0 - ov * ov;
                    }
                    Self::accumulate(grads, ins[0], d);
                }
            }
            Op::Sigmoid => {
                if needs(0) {
                    let out = &node.value;
                    let mut d = g.clone();
                    for (dv, ov) in d.data_mut().iter_mut().zip(out.data()) {
                        *dv *= ov * (1.0 - ov);
                    }
                    Self::accumulate(grads, ins[0], d);
                }
            }
            Op::Softplus => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    let mut d = g.clone();
                    for (dv, av) in d.data_mut().iter_mut().zip(a.data()) {
                        *dv *= sigmoid(*av);
                    }
                    Self::accumulate(grads, ins[0], d);
                }
            }
            Op::Relu => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    let mut d = g.clone();
                    for (dv, av) in d.data_mut().iter_mut().zip(a.data()) {
                        if *av <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    Self::accumulate(grads, ins[0], d);
                }
            }
            Op::Sum => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    let gv = g.get(0, 0);
                    Self::accumulate(grads, ins[0], a.map(|_| gv));
                }
            }
            Op::Mean => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    let gv = g.get(0, 0) / a.len() as f64;
                    Self::accumulate(grads, ins[0], a.map(|_| gv));
                }
            }
            Op::SumRows => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    let (ar, ac) = a.shape();
                    let mut d = Tensor::zeros(ar, ac);
                    for i in 0..ar {
                        let gv = g.get(i, 0);
                        for j in 0..ac {
                            d.set(i, j, gv);
                        }
                    }
                    Self::accumulate(grads, ins[0], d);
                }
            }
            Op::ConcatCols => {
                let mut at = 0;
                let widths: Vec<(usize, usize, usize)> = ins
                    .iter()
                    .map(|&i| {
                        let t = &self.nodes[i].value;
                        (i, t.rows(), t.cols())
                    })
                    .collect();
                for (iid, rows, cols) in widths {
                    if self.nodes[iid].requires_grad {
                        let mut d = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                d.set(i, j, g.get(i, at + j));
                            }
                        }
                        Self::accumulate(grads, iid, d);
                    }
                    at += cols;
                }
            }
            Op::Cols(indices) => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    let (ar, ac) = a.shape();
                    let mut d = Tensor::zeros(ar, ac);
                    for i in 0..ar {
                        for (jj, &j) in indices.iter().enumerate() {
                            let v = d.get(i, j) + g.get(i, jj);
                            d.set(i, j, v);
                        }
                    }
                    Self::accumulate(grads, ins[0], d);
                }
            }
            Op::BroadcastRows => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    Self::accumulate(grads, ins[0], Self::reduce_to(g, 1, a.cols()));
                }
            }
            Op::Reshape => {
                if needs(0) {
                    let a = &self.nodes[ins[0]].value;
                    let d = g.reshape(a.rows(), a.cols()).expect("reshape backward");
                    Self::accumulate(grads, ins[0], d);
                }
            }
        }
    }

    /// Accumulates gradients of all param leaves into a flat vector aligned
    /// with the [`ParamStore`] that produced them.
    pub fn param_grads(&self, grads: &Gradients, store_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; store_len];
        for &(node_id, offset) in &self.params {
            if let Some(g) = &grads.grads[node_id] {
                for (i, v) in g.data().iter().enumerate() {
                    out[offset + i] += v;
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
