//! Sample-size planning for precise individual-level risk estimates from a
//! logistic core model.
//!
//! Fisher's information for the core model is decomposed into a unit
//! information matrix times the sample size, which gives closed-form
//! uncertainty intervals for every individual at any development sample size
//! and, inverted, the sample size needed to reach a target precision. The
//! crate also covers classification instability around a risk threshold,
//! subgroup summaries, the population-level minimum sample size criteria,
//! utility-based thresholds, and an IRLS Monte Carlo cross-check.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coremodel;
pub mod decision;
pub mod error;
pub mod fisherinfo;
pub mod instability;
pub mod minss;
pub mod oracle;
pub mod numkit;
pub mod population;
pub mod precision;
pub mod report;

pub use error::{Error, Result};
