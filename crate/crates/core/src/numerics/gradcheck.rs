//! Central finite-difference gradient checking.
//!
//! Used by the test suites to verify every analytic gradient against an
//! independent numerical estimate. The comparison treats a component as
//! passing when |a − n| ≤ rtol·max(|a|, |n|) + atol, which behaves like a
//! relative check for O(1) gradients and tolerates finite-difference noise
//! near zero.

/// Central difference ∂f/∂x_i with the given step, one component at a time.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe);
        probe[i] = orig - step;
        let lo = f(&probe);
        probe[i] = orig;
        out.push((hi - lo) / (2.0 * step));
    }
    out
}

/// Worst relative discrepancy between analytic and numeric gradients,
/// after discounting an absolute-noise floor of `atol`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], atol: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        let excess = (diff - atol).max(0.0);
        let denom = a.abs().max(n.abs()).max(1e-12);
        worst = worst.max(excess / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_known_derivative() {
        // f = Σ x², ∂f/∂x = 2x.
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum();
        let x = [1.0, -2.0, 0.5];
        let num = central_diff(&mut f, &x, 1e-5);
        let ana = [2.0, -4.0, 1.0];
        assert!(max_rel_err(&ana, &num, 1e-9) < 1e-8);
    }

    #[test]
    fn rel_err_flags_disagreement() {
        assert!(max_rel_err(&[1.0], &[1.1], 1e-9) > 0.05);
        assert_eq!(max_rel_err(&[0.0], &[0.0], 1e-9), 0.0);
    }
}
