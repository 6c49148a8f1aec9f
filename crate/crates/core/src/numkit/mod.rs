//! Numerical substrate: small dense SPD algebra, bracketed root finding,
//! the standard normal distribution, compensated summation and labelled
//! deterministic random streams.

mod linalg;
mod normal;
mod rng;
mod roots;
mod sum;

pub use linalg::{invert_spd, Cholesky, SymMatrix};
pub use normal::{normal_cdf, normal_pdf, normal_quantile, normal_sf, Z_975};
pub use rng::RngStream;
pub use roots::bisect_root;
pub use sum::{mean_compensated, CompensatedSum};

/// Logistic function.
#[inline]
pub fn invlogit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of a probability.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
