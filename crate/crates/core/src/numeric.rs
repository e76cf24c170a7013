//! Scalar root finding and special functions.

use roots::{find_root_brent, Convergency};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// Stops when the bracket is down to a few ulps of the iterate.
struct RelConvergency {
    rel: f64,
    abs: f64,
    max_iter: usize,
}

impl Convergency<f64> for RelConvergency {
    fn is_root_found(&mut self, y: f64) -> bool {
        y == 0.0
    }
    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() <= self.abs + self.rel * x1.abs().max(x2.abs())
    }
    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= self.max_iter
    }
}

/// Brent's method on `[a, b]`, which must bracket a sign change.
pub fn brent<F: FnMut(f64) -> f64>(what: &'static str, a: f64, b: f64, tol_abs: f64, mut f: F) -> Result<f64> {
    let mut conv = RelConvergency {
        rel: 4.0 * f64::EPSILON,
        abs: tol_abs,
        max_iter: 200,
    };
    find_root_brent(a, b, &mut f, &mut conv).map_err(|e| match e {
        roots::SearchError::NoBracketing => Error::NoRoot(what),
        other => Error::no_conv(what, format!("{other:?}")),
    })
}

/// Bisection for a predicate that is false at `lo` and true at `hi`.
/// Returns the final bracket.
pub fn bisect_predicate<F>(mut lo: f64, mut hi: f64, tol: f64, mut pred: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<bool>,
{
    for _ in 0..400 {
        if hi - lo <= tol * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

/// Inverse error function on `(-1, 1)`, by a root solve on `erf`.
pub fn erf_inv(y: f64) -> Result<f64> {
    if !(y > -1.0 && y < 1.0) {
        return Err(Error::Precondition(format!("erf_inv needs |y| < 1, got {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while erf(hi) < y.abs() {
        hi *= 2.0;
    }
    let x = brent("erf_inv", 0.0, hi, 0.0, |x| erf(x) - y.abs())?;
    Ok(x.copysign(y))
}

/// Standard normal cumulative distribution.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Composite trapezoid rule on an equally spaced grid.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_inv_round_trip() {
        for y in [-0.99, -0.5, 0.1, 0.8, 0.999999] {
            let x = erf_inv(y).unwrap();
            assert!((erf(x) - y).abs() < 1e-15, "{y}");
        }
        assert!(erf_inv(1.0).is_err());
    }

    #[test]
    fn brent_finds_cos_root() {
        let x = brent("cos", 0.0, 3.0, 0.0, f64::cos).unwrap();
        assert!((x - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(brent("sq", 1.0, 2.0, 0.0, |x| x * x + 1.0), Err(Error::NoRoot("sq")));
    }

    #[test]
    fn bisect_threshold() {
        let (lo, hi) = bisect_predicate(0.0, 1.0, 1e-12, |x| Ok(x > 0.3)).unwrap();
        assert!(lo <= 0.3 && hi >= 0.3 && hi - lo < 1e-11);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let v: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        assert!((trapezoid(&v, 0.1) - 0.5).abs() < 1e-15);
    }
}
