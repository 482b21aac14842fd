use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|a − b| / max(1e-8, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1e-8f64.max(a.abs()).max(b.abs())
}

/// Central differences `(f(x + εe_i) − f(x − εe_i)) / 2ε`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value near coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub passed: bool,
}

pub fn check_gradient(analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0;
    let mut max_err = 0.0;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(*a, *n);
        if e > max_err || e.is_nan() {
            max_err = e;
            worst = i;
        }
    }
    GradCheckReport {
        max_relative_error: max_err,
        worst_coordinate: worst,
        passed: max_err < tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let g = finite_diff_grad(|x| x.iter().sum(), &[0.3, -2.0, 5.5], 1e-4).unwrap();
        for gi in g {
            assert!((gi - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn half_squared_norm() {
        let g = finite_diff_grad(|x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-6);
        assert!((g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_nonpositive_eps_and_nan() {
        assert!(finite_diff_grad(|x| x[0], &[1.0], 0.0).is_err());
        assert!(matches!(
            finite_diff_grad(|_| f64::NAN, &[1.0], 1e-3),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn report_flags_worst_coordinate() {
        let r = check_gradient(&[1.0, 2.0, 3.0], &[1.0, 2.1, 3.0], 1e-4);
        assert_eq!(r.worst_coordinate, 1);
        assert!(!r.passed);
        assert!(check_gradient(&[0.0], &[1e-12], 1e-3).passed);
    }
}
