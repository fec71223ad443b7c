use super::Tensor;
use crate::{Error, Result};

/// Compares an analytic gradient against central finite differences.
///
/// `f` returns the scalar value at `x` together with its analytic gradient.
/// The result is the largest per-coordinate relative error
/// `|analytic - central| / max(|analytic|, |central|, floor)`, where the
/// floor sits four orders of magnitude above the central difference's
/// rounding noise `ε_mach·max(|f|, 1)/eps` (and never below 1e-8), so
/// gradients too small to resolve numerically are not scored on noise.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let (fx, analytic) = f(x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite(format!("f(x) = {fx}")));
    }
    if analytic.shape() != x.shape() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("gradient {:?} for input {:?}", analytic.shape(), x.shape()),
        ));
    }
    let floor = (1e4 * f64::EPSILON * fx.abs().max(1.0) / eps).max(1e-8);
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("f(x ± eps) at coordinate {i}")));
        }
        let central = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - central).abs() / a.abs().max(central.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot_self(x: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
        let v = x.data().iter().map(|a| a * a).sum();
        Ok((v, x.map(|a| 2.0 * a)))
    }

    #[test]
    fn exact_gradient_passes_tightly() {
        let x = Tensor::from_f64(&[4], &[0.3, -1.2, 2.5, 0.01]).unwrap();
        let err = finite_diff_check(dot_self, &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn broken_gradient_is_caught() {
        let x = Tensor::from_f64(&[3], &[0.5, 1.0, -2.0]).unwrap();
        let wrong = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let (v, g) = dot_self(x)?;
            // deliberately off by a factor of two
            Ok((v, g.map(|a| 0.5 * a)))
        };
        let err = finite_diff_check(wrong, &x, 1e-5).unwrap();
        assert!(err > 1e-1, "{err}");
    }

    #[test]
    fn unresolvable_gradients_are_not_scored_on_rounding_noise() {
        // a large constant plus a slope far below what central differences
        // can resolve at this magnitude
        let f = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            Ok((1e3 + 1e-10 * x.data()[0], Tensor::from_f64(&[1], &[1e-10]).unwrap()))
        };
        let x = Tensor::from_f64(&[1], &[0.7]).unwrap();
        assert!(finite_diff_check(f, &x, 1e-5).unwrap() < 1e-3);
    }

    #[test]
    fn rejects_eps_out_of_range_and_non_finite() {
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        assert!(finite_diff_check(dot_self, &x, 1e-2).is_err());
        let bad = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> { Ok((f64::NAN, x.clone())) };
        assert!(matches!(
            finite_diff_check(bad, &x, 1e-5),
            Err(Error::NonFinite(_))
        ));
    }
}
