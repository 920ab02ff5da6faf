//! Scalar activations and row kernels shared by the taped and plain paths.

use super::Mat;

/// Probability clamp applied before taking logarithms in [`bce`].
pub const BCE_CLAMP: f64 = 1e-12;

/// `max(x, 0)`; the derivative at 0 is taken as 0.
#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `ln(1 + eˣ)` in overflow-safe form.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with the probability clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Divides each row by its 2-norm. Rows with zero norm are replaced by the
/// last standard basis vector and reported in the returned mask.
pub fn normalize_rows(a: &Mat) -> (Mat, Vec<bool>) {
    let mut out = a.clone();
    let mut degenerate = vec![false; a.rows()];
    let cols = a.cols();
    for (r, flag) in degenerate.iter_mut().enumerate() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            row.fill(0.0);
            if cols > 0 {
                row[cols - 1] = 1.0;
            }
            *flag = true;
        } else {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    (out, degenerate)
}
