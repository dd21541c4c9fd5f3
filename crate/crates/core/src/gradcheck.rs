//! Central-difference gradient verification.
//!
//! Every loss kernel in this crate ships an analytic gradient; the test
//! suites compare those gradients against numeric differentiation of the
//! loss value. The helpers live in the library (not in a test module) so
//! integration tests and downstream users can run the same checks.

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct CheckResult {
    /// Largest per-coordinate relative error.
    pub max_rel_err: f64,
    /// Coordinate where the largest error occurred.
    pub worst_index: usize,
    /// Analytic gradient at the worst coordinate.
    pub worst_analytic: f64,
    /// Numeric gradient at the worst coordinate.
    pub worst_numeric: f64,
}

/// Central-difference gradient of `f` at `x` with step `h`:
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)` per coordinate.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        *g = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Per-coordinate relative error `|a - n| / max(|a|, |n|, floor)`; the floor
/// keeps coordinates where both gradients are near zero from amplifying
/// floating-point noise into spurious failures.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check_scalar_fn<F>(f: F, x: &[f64], analytic: &[f64], h: f64, floor: f64) -> CheckResult
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        x.len(),
        analytic.len(),
        "gradient length {} does not match input length {}",
        analytic.len(),
        x.len()
    );
    let numeric = numeric_gradient(f, x, h);
    let mut max = 0.0;
    let mut worst = 0;
    for i in 0..x.len() {
        let e = rel_err(analytic[i], numeric[i], floor);
        if e > max {
            max = e;
            worst = i;
        }
    }
    CheckResult {
        max_rel_err: max,
        worst_index: worst,
        worst_analytic: analytic.get(worst).copied().unwrap_or(0.0),
        worst_numeric: numeric.get(worst).copied().unwrap_or(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn numeric_gradient_of_quadratic() {
        // f(x) = sum x_i^2 has gradient 2x; central differences are exact for
        // quadratics up to roundoff.
        let x = vec![0.5, -1.25, 2.0];
        let g = numeric_gradient(|v| v.iter().map(|a| a * a).sum(), &x, 1e-5);
        for (gi, xi) in g.iter().zip(&x) {
            assert_abs_diff_eq!(*gi, 2.0 * xi, epsilon = 1e-9);
        }
    }

    #[test]
    fn check_accepts_correct_gradient() {
        let x = vec![0.3, 0.7, -0.2, 1.1];
        let analytic: Vec<f64> = x.iter().map(|v: &f64| v.cos()).collect();
        let r = check_scalar_fn(
            |v| v.iter().map(|a| a.sin()).sum(),
            &x,
            &analytic,
            1e-5,
            1e-6,
        );
        assert!(r.max_rel_err < 1e-7, "rel err {} too large", r.max_rel_err);
    }

    #[test]
    fn check_flags_wrong_gradient() {
        let x = vec![0.3, 0.7];
        let analytic = vec![1.0, 1.0]; // wrong for f = sum sin
        let r = check_scalar_fn(
            |v| v.iter().map(|a| a.sin()).sum(),
            &x,
            &analytic,
            1e-5,
            1e-6,
        );
        assert!(r.max_rel_err > 1e-2);
    }
}
