//! Bracketing scalar root finding.

use thiserror::Error;

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("no sign change on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    NotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("bisection did not reach tolerance in {0} iterations")]
    NoConvergence(usize),
    #[error("non-finite function value at {0}")]
    NonFinite(f64),
}

/// Relative tolerance used for every invariant-state root.
pub const ROOT_REL_TOL: f64 = 1e-12;
/// Iteration cap for [`bisect`].
pub const ROOT_MAX_ITER: usize = 200;

/// Bisection on `[lo, hi]`; stops once the bracket width is below
/// `rel_tol · max(|lo|, |hi|, 1)` or `f` vanishes exactly.
pub fn bisect<T, F>(mut f: F, lo: T, hi: T, rel_tol: T, max_iter: usize) -> Result<T, RootError>
where
    T: Real,
    F: FnMut(T) -> T,
{
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    let as_f64 = |x: T| x.to_f64().unwrap_or(f64::NAN);
    if !f_lo.is_finite() {
        return Err(RootError::NonFinite(as_f64(lo)));
    }
    if !f_hi.is_finite() {
        return Err(RootError::NonFinite(as_f64(hi)));
    }
    if f_lo == T::zero() {
        return Ok(lo);
    }
    if f_hi == T::zero() {
        return Ok(hi);
    }
    if (f_lo > T::zero()) == (f_hi > T::zero()) {
        return Err(RootError::NotBracketed {
            lo: as_f64(lo),
            hi: as_f64(hi),
            f_lo: as_f64(f_lo),
            f_hi: as_f64(f_hi),
        });
    }
    let half = lit::<T>(0.5);
    for _ in 0..max_iter {
        let mid = half * (lo + hi);
        let scale = lo.abs().max(hi.abs()).max(T::one());
        if hi - lo <= rel_tol * scale {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if !f_mid.is_finite() {
            return Err(RootError::NonFinite(as_f64(mid)));
        }
        if f_mid == T::zero() {
            return Ok(mid);
        }
        if (f_mid > T::zero()) == (f_lo > T::zero()) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(RootError::NoConvergence(max_iter))
}

/// Largest root of `f` on `[lo, hi]`: scans `grid` cells downward from `hi`
/// for the first sign change and bisects inside it.
pub fn largest_root<T, F>(mut f: F, lo: T, hi: T, grid: usize) -> Result<T, RootError>
where
    T: Real,
    F: FnMut(T) -> T,
{
    let n = grid.max(1);
    let step = (hi - lo) / crate::scalar::count::<T>(n);
    let mut right = hi;
    let mut f_right = f(right);
    if f_right == T::zero() {
        return Ok(right);
    }
    for i in (0..n).rev() {
        let left = lo + step * crate::scalar::count::<T>(i);
        let f_left = f(left);
        if f_left == T::zero() {
            return Ok(left);
        }
        if (f_left > T::zero()) != (f_right > T::zero()) {
            return bisect(&mut f, left, right, lit(ROOT_REL_TOL), ROOT_MAX_ITER);
        }
        right = left;
        f_right = f_left;
    }
    let as_f64 = |x: T| x.to_f64().unwrap_or(f64::NAN);
    Err(RootError::NotBracketed {
        lo: as_f64(lo),
        hi: as_f64(hi),
        f_lo: as_f64(f(lo)),
        f_hi: as_f64(f(hi)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt_two() {
        let r = bisect(|x: f64| x * x - 2.0, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn rejects_missing_bracket() {
        assert!(matches!(
            bisect(|x: f64| x * x + 1.0, -1.0, 1.0, 1e-12, 200),
            Err(RootError::NotBracketed { .. })
        ));
    }

    #[test]
    fn picks_largest_root() {
        // roots at 0.127 and 7.873
        let r = largest_root(|x: f64| -(x * x - 8.0 * x + 1.0), 0.0, 8.0, 100).unwrap();
        assert!((r - (4.0 + 15f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn iteration_cap_is_reported() {
        assert_eq!(
            bisect(|x: f64| x - 0.3, 0.0, 1.0, 0.0, 5),
            Err(RootError::NoConvergence(5))
        );
    }
}
