//! Risk thresholds implied by the utilities of a binary act/don't-act
//! decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Utilities of the four (action, state) pathways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    /// act, state present
    pub u1: f64,
    /// act, state absent
    pub u2: f64,
    /// don't act, state present
    pub u3: f64,
    /// don't act, state absent
    pub u4: f64,
}

impl UtilitySpec {
    pub fn new(u1: f64, u2: f64, u3: f64, u4: f64) -> Self {
        UtilitySpec { u1, u2, u3, u4 }
    }

    fn check(&self) -> Result<()> {
        let all_finite = [self.u1, self.u2, self.u3, self.u4].iter().all(|u| u.is_finite());
        if !all_finite || !(self.u1 > self.u3) || !(self.u4 > self.u2) {
            return Err(Error::NoThreshold);
        }
        Ok(())
    }
}

/// Risk at which acting and not acting have equal expected utility.
pub fn risk_threshold(u: &UtilitySpec) -> Result<f64> {
    u.check()?;
    Ok(1.0 / (1.0 + (u.u1 - u.u3) / (u.u4 - u.u2)))
}

pub fn expected_utility(p: f64, u: &UtilitySpec, act: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} not in [0, 1]")));
    }
    Ok(if act { p * u.u1 + (1.0 - p) * u.u2 } else { p * u.u3 + (1.0 - p) * u.u4 })
}
