use crate::error::{bail, Result};

/// Largest relative error between `analytic` and central differences of `f`
/// at `point`, with denominator `max(|a|, |n|, 1e-8)` per coordinate.
///
/// `f` must be twice differentiable near `point`; kinks (e.g. `|x|` at 0)
/// produce meaningless results.
pub fn grad_check(f: impl Fn(&[f64]) -> f64, analytic: &[f64], point: &[f64], h: f64) -> Result<f64> {
    if analytic.len() != point.len() {
        bail!(
            Shape,
            "{} gradient entries for {} coordinates",
            analytic.len(),
            point.len()
        );
    }
    if !(h > 0.0) {
        bail!(Domain, "step {h} must be positive");
    }
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x);
        x[i] = orig - h;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            bail!(Domain, "function is not finite around coordinate {i}");
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_one() {
        let err = grad_check(|x| x[0] * x[0], &[2.0], &[1.0], 1e-5).unwrap();
        assert!(err <= 1e-6);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = grad_check(|x| x[0] * x[0], &[2.5], &[1.0], 1e-5).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_evaluation_is_domain_error() {
        let r = grad_check(|x| (x[0]).ln(), &[1.0], &[0.0], 1e-5);
        assert!(matches!(r, Err(crate::Error::Domain(_))));
    }
}
