//! Dense matrix exponential by scaling-and-squaring with a Taylor core.

use ndarray::Array2;

/// 1-norm (max column sum) of a dense matrix.
fn norm_1(a: &Array2<f64>) -> f64 {
    let mut best = 0.0_f64;
    for col in a.columns() {
        let s: f64 = col.iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// exp(A) for a square real matrix. Scales A so the 1-norm is below 1/4,
/// runs the Taylor series to machine precision, then squares back. Intended
/// for the banded ladder-operator generators used in this crate, whose
/// norms stay modest.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    let norm = norm_1(a);
    let squarings = if norm <= 0.25 {
        0
    } else {
        (norm / 0.25).log2().ceil() as u32
    };
    let scale = 0.5_f64.powi(squarings as i32);
    let a_scaled = a.mapv(|v| v * scale);

    // Taylor: with ||A|| <= 1/4, 24 terms leave a remainder below 2^-100.
    let mut result = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..=24 {
        term = term.dot(&a_scaled) / (k as f64);
        result += &term;
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}
