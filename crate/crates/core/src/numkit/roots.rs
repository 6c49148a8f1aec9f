use crate::error::{Error, Result};

/// Bisection on a bracketing interval.
///
/// Stops when `|f(x)| <= tol` or the bracket has shrunk below `tol`. The
/// returned point always lies inside `[lo, hi]`.
pub fn bisect_root(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::Domain("function is NaN at a bracket end".into()));
    }
    if f_lo.abs() <= tol {
        return Ok(lo);
    }
    if f_hi.abs() <= tol {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoBracket { f_lo, f_hi });
    }
    for _ in 0..max_iter {
        let mid = lo + 0.5 * (hi - lo);
        let f_mid = f(mid);
        if f_mid.abs() <= tol || hi - lo <= tol {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        context: format!("bisection bracket [{lo}, {hi}]"),
    })
}
