//! Population-level minimum sample size for a binary-outcome prediction
//! model: precise overall risk, small overfitting (uniform shrinkage), and
//! small optimism in apparent Nagelkerke R².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_risk(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::Domain(format!("overall risk {phi} not in (0, 1)")));
    }
    Ok(())
}

fn ceil_count(x: f64, what: &str) -> Result<u64> {
    if !x.is_finite() || x <= 0.0 || x > 9.0e15 {
        return Err(Error::Domain(format!("{what} sample size is not finite ({x})")));
    }
    Ok(x.ceil() as u64)
}

/// Largest achievable Cox–Snell R² for overall risk `phi`.
pub fn max_r2(phi: f64) -> Result<f64> {
    check_risk(phi)?;
    let lnl0 = phi * phi.ln() + (1.0 - phi) * (1.0 - phi).ln();
    Ok(1.0 - (2.0 * lnl0).exp())
}

/// Size needed to estimate the overall risk within ±`margin`.
pub fn criterion_i(phi: f64, margin: f64) -> Result<u64> {
    check_risk(phi)?;
    if !(margin > 0.0) {
        return Err(Error::Domain(format!("margin must be positive, got {margin}")));
    }
    // the conventional 1.96, not the exact normal quantile
    ceil_count((1.96 / margin).powi(2) * phi * (1.0 - phi), "criterion (i)")
}

/// Size giving expected uniform shrinkage `s` with `p` parameters.
pub fn criterion_ii(p: u32, s: f64, r2: f64) -> Result<u64> {
    if p == 0 {
        return Err(Error::Domain("need at least one predictor parameter".into()));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("shrinkage {s} not in (0, 1)")));
    }
    if !(r2 > 0.0 && r2 < s) {
        return Err(Error::Domain(format!("R² {r2} must lie in (0, {s})")));
    }
    ceil_count(p as f64 / ((s - 1.0) * (1.0 - r2 / s).ln()), "criterion (ii)")
}

/// Shrinkage giving expected optimism `optimism` in Nagelkerke R², and the
/// size that achieves it.
pub fn criterion_iii(p: u32, r2: f64, optimism: f64, phi: f64) -> Result<(f64, u64)> {
    if !(optimism > 0.0) {
        return Err(Error::Domain(format!("optimism must be positive, got {optimism}")));
    }
    let mx = max_r2(phi)?;
    let s = r2 / (r2 + optimism * mx);
    Ok((s, criterion_ii(p, s, r2)?))
}

fn default_shrinkage() -> f64 {
    0.9
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinSampleSpec {
    pub p_params: u32,
    pub overall_risk: f64,
    pub r2_cs: f64,
    #[serde(default = "default_shrinkage")]
    pub shrinkage: f64,
    #[serde(default = "default_delta")]
    pub margin_risk: f64,
    #[serde(default = "default_delta")]
    pub optimism: f64,
}

impl MinSampleSpec {
    pub fn new(p_params: u32, overall_risk: f64, r2_cs: f64) -> Self {
        MinSampleSpec {
            p_params,
            overall_risk,
            r2_cs,
            shrinkage: default_shrinkage(),
            margin_risk: default_delta(),
            optimism: default_delta(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_params == 0 {
            return Err(Error::Domain("need at least one predictor parameter".into()));
        }
        let mx = max_r2(self.overall_risk)?;
        if !(self.r2_cs > 0.0 && self.r2_cs < mx) {
            return Err(Error::Domain(format!(
                "R² {} must lie in (0, {mx:.4}) for overall risk {}",
                self.r2_cs, self.overall_risk
            )));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage < 1.0) {
            return Err(Error::Domain(format!("shrinkage {} not in (0, 1)", self.shrinkage)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinSampleResult {
    pub n1: u64,
    pub n2: u64,
    pub n3: u64,
    /// Shrinkage implied by the optimism criterion.
    pub s_required: f64,
    pub max_r2: f64,
    pub n_final: u64,
    pub events: u64,
    pub epp: f64,
}

impl MinSampleResult {
    /// Index (0-based) of the binding criterion; the first wins a tie.
    pub fn binding(&self) -> usize {
        [self.n1, self.n2, self.n3].iter().position(|&n| n == self.n_final).unwrap_or(0)
    }
}

/// The largest of the three criteria, with its event count.
pub fn pmsampsize(spec: &MinSampleSpec) -> Result<MinSampleResult> {
    spec.validate()?;
    let n1 = criterion_i(spec.overall_risk, spec.margin_risk)?;
    let n2 = criterion_ii(spec.p_params, spec.shrinkage, spec.r2_cs)?;
    let (s_required, n3) = criterion_iii(spec.p_params, spec.r2_cs, spec.optimism, spec.overall_risk)?;
    let n_final = n1.max(n2).max(n3);
    let events = (n_final as f64 * spec.overall_risk).ceil() as u64;
    Ok(MinSampleResult {
        n1,
        n2,
        n3,
        s_required,
        max_r2: max_r2(spec.overall_risk)?,
        n_final,
        events,
        epp: events as f64 / spec.p_params as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criterion_i_examples() {
        assert_eq!(criterion_i(0.174, 0.05).unwrap(), 221);
        assert_eq!(criterion_i(0.5, 0.05).unwrap(), 385);
        assert_eq!(criterion_i(0.059, 0.05).unwrap(), 86);
        assert_eq!(criterion_i(0.2, 0.05).unwrap(), criterion_i(0.8, 0.05).unwrap());
        assert!(criterion_i(0.0, 0.05).is_err());
        assert!(criterion_i(0.2, 0.0).is_err());
    }

    #[test]
    fn criterion_ii_examples() {
        assert_eq!(criterion_ii(3, 0.9, 0.0577).unwrap(), 453);
        // 511.147 before rounding up
        assert_eq!(criterion_ii(9, 0.9, 0.1453).unwrap(), 512);
        assert_eq!(criterion_ii(9, 0.9, 0.14534).unwrap(), 511);
        assert!(criterion_ii(3, 0.9, 0.9).is_err());
        assert!(criterion_ii(3, 0.9, 1e-4).unwrap() > criterion_ii(3, 0.9, 1e-3).unwrap());
    }

    #[test]
    fn criterion_iii_examples() {
        let (s, n) = criterion_iii(3, 0.0577, 0.05, 0.059).unwrap();
        assert!((s - 0.762).abs() < 5e-4, "{s}");
        assert_eq!(n, 160);
        let (s, n) = criterion_iii(9, 0.1453, 0.05, 0.174).unwrap();
        assert!((s - 0.828).abs() < 5e-4, "{s}");
        assert_eq!(n, 272);
        let (s, _) = criterion_iii(9, 0.1453, 1e-9, 0.174).unwrap();
        assert!(s > 1.0 - 1e-8);
    }

    #[test]
    fn max_r2_grid() {
        assert!((max_r2(0.059).unwrap() - 0.3613).abs() < 1e-4);
        assert!((max_r2(0.174).unwrap() - 0.6032).abs() < 1e-4);
        for i in 1..100 {
            let phi = i as f64 / 100.0;
            let brute = 1.0 - (phi.powf(phi) * (1.0 - phi).powf(1.0 - phi)).powi(2);
            assert!((max_r2(phi).unwrap() - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn foot_ulcer_overall() {
        let r = pmsampsize(&MinSampleSpec::new(3, 0.059, 0.0577)).unwrap();
        assert_eq!((r.n1, r.n2, r.n3), (86, 453, 160));
        assert_eq!(r.n_final, 453);
        assert_eq!(r.events, 27);
        assert_eq!(r.binding(), 1);
        assert!((r.epp - 9.0).abs() < 1e-12);
    }

    #[test]
    fn more_parameters_need_more_participants() {
        let base = pmsampsize(&MinSampleSpec::new(9, 0.174, 0.1453)).unwrap();
        let wide = pmsampsize(&MinSampleSpec::new(14, 0.174, 0.1453)).unwrap();
        assert!(wide.n_final > base.n_final);
        assert!((wide.n_final as i64 - 795).abs() <= 2, "{}", wide.n_final);
    }

    #[test]
    fn spec_rejects_impossible_r2() {
        assert!(pmsampsize(&MinSampleSpec::new(3, 0.059, 0.37)).is_err());
        assert!(pmsampsize(&MinSampleSpec::new(0, 0.059, 0.05)).is_err());
        let json = r#"{"p_params": 3, "overall_risk": 0.059, "r2_cs": 0.0577}"#;
        let spec: MinSampleSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec, MinSampleSpec::new(3, 0.059, 0.0577));
    }
}
