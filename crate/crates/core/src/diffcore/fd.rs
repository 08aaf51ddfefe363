use crate::error::{Error, Result};

/// Floor on the denominator of the relative error.
pub const FD_FLOOR: f64 = 1e-8;

/// Relative discrepancy between an analytic derivative and a central
/// difference, with the shared floor convention.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Checks `analytic[i]` against `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`
/// for every listed coordinate and returns the largest relative error.
pub fn finite_difference_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[(usize, f64)],
    eps: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for &(i, a) in analytic {
        if i >= x.len() {
            return Err(Error::dim("finite_difference_check", format!("index < {}", x.len()), i));
        }
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(&x);
        x[i] = orig - eps;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("function value at coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// Dense variant: `analytic` holds the full gradient.
pub fn finite_difference_check_dense<F>(f: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(Error::dim("finite_difference_check_dense", point.len(), analytic.len()));
    }
    let pairs: Vec<(usize, f64)> = analytic.iter().copied().enumerate().collect();
    finite_difference_check(f, point, &pairs, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = finite_difference_check_dense(|x| x[0] * x[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn constant_function_is_zero_error() {
        let err = finite_difference_check_dense(|_| 4.0, &[1.0, 2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let err = finite_difference_check_dense(|x| x[0] * x[0], &[3.0], &[5.0], 1e-5).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn nonfinite_and_bad_eps_are_errors() {
        assert!(finite_difference_check_dense(|_| f64::NAN, &[0.0], &[0.0], 1e-5).is_err());
        assert!(finite_difference_check_dense(|x| x[0], &[0.0], &[1.0], 0.0).is_err());
    }
}
