use rand::Rng;

use super::tensor::Tensor;

/// Handle to a contiguous block of trainable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlice {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in (-scale, scale).
    Uniform(f64),
}

/// Flat storage for every trainable parameter of a model. Allocation order is
/// deterministic, so a model rebuilt from its architecture descriptor maps
/// onto the same offsets.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { values: Vec::new() }
    }

    pub fn alloc(&mut self, rows: usize, cols: usize, init: Init, rng: &mut impl Rng) -> ParamSlice {
        let offset = self.values.len();
        let n = rows * cols;
        match init {
            Init::Zeros => self.values.extend(std::iter::repeat(0.0).take(n)),
            Init::Const(c) => self.values.extend(std::iter::repeat(c).take(n)),
            Init::Uniform(s) => self
                .values
                .extend((0..n).map(|_| rng.gen_range(-s..s))),
        }
        ParamSlice { offset, rows, cols }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: Vec<f64>) {
        self.values = values;
    }

    pub fn slice(&self, s: ParamSlice) -> &[f64] {
        &self.values[s.offset..s.offset + s.len()]
    }

    pub fn slice_mut(&mut self, s: ParamSlice) -> &mut [f64] {
        let n = s.len();
        &mut self.values[s.offset..s.offset + n]
    }

    pub fn tensor(&self, s: ParamSlice) -> Tensor {
        Tensor::new(s.rows, s.cols, self.slice(s).to_vec()).expect("slice shape consistent")
    }
}
