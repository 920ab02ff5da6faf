use super::NumError;

/// Central-difference gradient `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, NumError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(NumError::Contract(format!("finite difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(NumError::NonFinite(format!(
                "function evaluation around coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Smallest step tried by [`refined_derivative`].
pub const REFINE_MIN_STEP: f64 = 1e-8;

/// Derivative at offset 0 of a one-dimensional piecewise-smooth function.
///
/// Central differences at `h` and `h/2` are compared; when they disagree
/// beyond `1e-7` relative (plus `1e-10` absolute) a kink lies within reach of
/// the stencil and `h` shrinks tenfold. The accepted pair is combined by
/// Richardson extrapolation.
pub fn refined_derivative<F, E>(mut f: F, h0: f64) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    assert!(h0 > 0.0, "step must be positive");
    let mut h = h0;
    loop {
        let c1 = (f(h)? - f(-h)?) / (2.0 * h);
        let c2 = (f(0.5 * h)? - f(-0.5 * h)?) / h;
        let est = (4.0 * c2 - c1) / 3.0;
        let agree = (c1 - c2).abs() <= 1e-7 * c2.abs() + 1e-10;
        if agree || h * 0.1 < REFINE_MIN_STEP {
            return Ok(est);
        }
        h *= 0.1;
    }
}
