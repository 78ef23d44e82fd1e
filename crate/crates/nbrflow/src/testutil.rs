//! Independent numerical oracles used by the test suites. These deliberately
//! avoid the analytic paths they are used to check.

/// Dense Jacobian of `f` at `x` by central differences.
pub fn numerical_jacobian<F>(mut f: F, x: &[f64], h: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let d_out = f(x).len();
    let mut jac = vec![vec![0.0; x.len()]; d_out];
    let mut work = x.to_vec();
    for j in 0..x.len() {
        let orig = work[j];
        work[j] = orig + h;
        let plus = f(&work);
        work[j] = orig - h;
        let minus = f(&work);
        work[j] = orig;
        for i in 0..d_out {
            jac[i][j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// log|det A| via Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut logdet = 0.0;
    for col in 0..n {
        let (pivot, _) = a
            .iter()
            .enumerate()
            .skip(col)
            .map(|(i, row)| (i, row[col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        logdet += p.abs().ln();
        for i in col + 1..n {
            let factor = a[i][col] / p;
            for j in col..n {
                a[i][j] -= factor * a[col][j];
            }
        }
    }
    logdet
}

/// log|det| of the numerically assembled Jacobian of `f` at `x`.
pub fn numerical_logdet<F>(f: F, x: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    log_abs_det(numerical_jacobian(f, x, h))
}
