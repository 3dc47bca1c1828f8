//! Numerical differentiation, used by the test suites as an oracle that is
//! independent of the tape's backward rules.
//!
//! The checks re-run a caller-supplied forward closure at perturbed inputs,
//! so they exercise nothing of the reverse pass they validate.

/// Central finite differences of a scalar function at `at`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, at: &[f64], step: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let fp = f(&x);
            x[i] = orig - step;
            let fm = f(&x);
            x[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Worst relative disagreement between two gradient vectors.
///
/// The denominator is floored at 1e-3 so that coordinates where both
/// gradients are tiny compare absolutely (central differences carry ~1e-9
/// absolute noise at step 1e-6, which would otherwise dominate the ratio).
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Convenience wrapper: finite-difference `f` around `at` and compare with
/// the analytic gradient, returning the worst relative error.
pub fn check(
    f: impl FnMut(&[f64]) -> f64,
    at: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    let numeric = central_difference(f, at, step);
    max_rel_error(analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(x) = sum(x^2) has gradient 2x.
        let at = [1.0, -2.0, 3.5];
        let g = central_difference(|x| x.iter().map(|v| v * v).sum(), &at, 1e-6);
        for (gi, xi) in g.iter().zip(&at) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn rel_error_floors_tiny_gradients() {
        assert!(max_rel_error(&[0.0], &[1e-9]) < 1e-4);
        assert!(max_rel_error(&[1.0], &[1.1]) > 0.05);
    }
}
