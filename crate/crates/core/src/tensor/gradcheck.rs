use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Absolute error below which a coordinate passes regardless of relative error.
pub const FD_ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub passed: bool,
    /// Largest relative error among coordinates not covered by the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub numeric: Tensor,
}

/// Central differences of `f` at `point`, one coordinate at a time.
pub fn numeric_gradient<F>(mut f: F, point: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = point.data().to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&point.with_data(probe.clone())?)?;
        probe[i] = orig - step;
        let down = f(&point.with_data(probe.clone())?)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("function evaluation near coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Tensor::new(point.shape().to_vec(), grad)
}

/// Compares `analytic` against central differences of `f`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, analytic: &Tensor, tol: f64) -> Result<GradCheck>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if analytic.shape() != point.shape() {
        return Err(Error::dim(
            "finite_diff_check analytic gradient",
            format!("{:?}", point.shape()),
            format!("{:?}", analytic.shape()),
        ));
    }
    let numeric = numeric_gradient(f, point, FD_STEP)?;
    let mut passed = true;
    let mut max_rel_error = 0.0f64;
    let mut max_abs_error = 0.0f64;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        let abs = (a - n).abs();
        max_abs_error = max_abs_error.max(abs);
        if abs <= FD_ABS_FLOOR {
            continue;
        }
        let rel = abs / a.abs().max(n.abs());
        max_rel_error = max_rel_error.max(rel);
        if rel > tol {
            passed = false;
        }
    }
    Ok(GradCheck {
        passed,
        max_rel_error,
        max_abs_error,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x: f64) -> Tensor {
        Tensor::vector(vec![x]).unwrap()
    }

    #[test]
    fn square_passes() {
        let r = finite_diff_check(|t| Ok(t.data()[0].powi(2)), &at(2.0), &at(4.0), 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn constant_passes() {
        let r = finite_diff_check(|_| Ok(3.0), &at(2.0), &at(0.0), 1e-4).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_abs_error, 0.0);
    }

    #[test]
    fn wrong_gradient_fails() {
        // 2x + 1 is not the derivative of x^2
        let r = finite_diff_check(|t| Ok(t.data()[0].powi(2)), &at(2.0), &at(5.0), 1e-4).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn non_finite_evaluations_propagate() {
        let r = finite_diff_check(|_| Ok(f64::NAN), &at(1.0), &at(0.0), 1e-4);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
