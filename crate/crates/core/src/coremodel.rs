//! The core logistic model `logit p = α + δ·Σ βₖxₖ`, its model-implied
//! overall risk and concordance, and calibration of `(α, δ)` to a target
//! overall risk and C-statistic by nested bisection.

use serde::{Deserialize, Serialize};
use serde_json::Map;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::{bisect_root, invlogit, logit, CompensatedSum};
use crate::population::{Dataset, Design};

/// Assumed true logistic model over named dataset columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreModel {
    pub alpha: f64,
    pub delta: f64,
    pub betas: Vec<f64>,
    pub predictor_names: Vec<String>,
}

impl CoreModel {
    pub fn new(alpha: f64, delta: f64, predictor_names: Vec<String>, betas: Vec<f64>) -> Result<Self> {
        if predictor_names.len() != betas.len() {
            return Err(Error::DimensionMismatch { expected: predictor_names.len(), got: betas.len() });
        }
        if !alpha.is_finite() || !delta.is_finite() || betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("model coefficients must be finite".into()));
        }
        Ok(CoreModel { alpha, delta, betas, predictor_names })
    }

    pub fn p(&self) -> usize {
        self.betas.len()
    }

    /// `Σ βₖxₖ`, the unscaled weighted sum.
    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        self.betas.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), got: x.len() });
        }
        Ok(self.alpha + self.delta * self.score(x))
    }

    pub fn risk(&self, x: &[f64]) -> Result<f64> {
        self.linear_predictor(x).map(invlogit)
    }

    /// Extracts this model's predictor columns, in model order.
    pub fn design(&self, ds: &Dataset) -> Result<Design> {
        ds.design(&self.predictor_names)
    }

    pub fn linear_predictors(&self, design: &Design) -> Vec<f64> {
        design.rows().map(|x| self.alpha + self.delta * self.score(x)).collect()
    }

    pub fn risks(&self, design: &Design) -> Vec<f64> {
        design.rows().map(|x| invlogit(self.alpha + self.delta * self.score(x))).collect()
    }

    /// Short content hash identifying the coefficients and their columns.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.alpha.to_le_bytes());
        h.update(self.delta.to_le_bytes());
        for (n, b) in self.predictor_names.iter().zip(&self.betas) {
            h.update(n.as_bytes());
            h.update([0u8]);
            h.update(b.to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Compensated mean of the model risks over all rows.
pub fn mean_risk(m: &CoreModel, ds: &Dataset) -> Result<f64> {
    if ds.n() == 0 {
        return Err(Error::EmptyInput);
    }
    let risks = m.risks(&m.design(ds)?);
    Ok(compensated_mean(&risks))
}

fn compensated_mean(xs: &[f64]) -> f64 {
    let mut s = CompensatedSum::new();
    s.extend(xs.iter().copied());
    s.value() / xs.len() as f64
}

/// Model-implied concordance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CStatistic {
    pub value: f64,
    /// Set when every linear predictor is equal, so C is undefined and
    /// reported as 0.5.
    pub degenerate: bool,
}

/// Rows sorted by a ranking key, with boundaries of tied runs.
struct RankGroups {
    order: Vec<usize>,
    /// `bounds[g]..bounds[g+1]` indexes `order` for group `g`.
    bounds: Vec<usize>,
}

impl RankGroups {
    fn new(keys: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
        let mut bounds = vec![0];
        for k in 1..order.len() {
            if keys[order[k]] != keys[order[k - 1]] {
                bounds.push(k);
            }
        }
        bounds.push(order.len());
        RankGroups { order, bounds }
    }

    fn n_groups(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Σᵢ≠ⱼ pᵢ(1−pⱼ)[1{keyᵢ>keyⱼ} + ½·1{keyᵢ=keyⱼ}] / Σᵢ≠ⱼ pᵢ(1−pⱼ).
    fn concordance(&self, p: &[f64]) -> CStatistic {
        if self.n_groups() < 2 {
            return CStatistic { value: 0.5, degenerate: true };
        }
        let mut num = CompensatedSum::new();
        let mut below = CompensatedSum::new();
        let mut sum_p = CompensatedSum::new();
        let mut sum_q = CompensatedSum::new();
        let mut sum_pq = CompensatedSum::new();
        for g in 0..self.n_groups() {
            let members = &self.order[self.bounds[g]..self.bounds[g + 1]];
            let mut tie_q = CompensatedSum::new();
            for &i in members {
                tie_q.add(1.0 - p[i]);
            }
            let below_v = below.value();
            let tie_v = tie_q.value();
            for &i in members {
                let (pi, qi) = (p[i], 1.0 - p[i]);
                num.add(pi * (below_v + 0.5 * (tie_v - qi)));
                sum_p.add(pi);
                sum_q.add(qi);
                sum_pq.add(pi * qi);
            }
            below.merge(&tie_q);
        }
        let den = sum_p.value() * sum_q.value() - sum_pq.value();
        if !(den > 0.0) {
            return CStatistic { value: 0.5, degenerate: true };
        }
        CStatistic { value: num.value() / den, degenerate: false }
    }
}

/// Exact model-implied C-statistic over all ordered pairs, in O(N log N).
pub fn model_c_statistic(m: &CoreModel, ds: &Dataset) -> Result<CStatistic> {
    if ds.n() < 2 {
        return Err(Error::Domain("C-statistic needs at least two rows".into()));
    }
    let design = m.design(ds)?;
    let lp = m.linear_predictors(&design);
    let p: Vec<f64> = lp.iter().map(|&v| invlogit(v)).collect();
    Ok(RankGroups::new(&lp).concordance(&p))
}

/// Target overall risk and C-statistic for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTarget {
    pub overall_risk: f64,
    pub c_statistic: f64,
    #[serde(default = "default_tol")]
    pub tol_risk: f64,
    #[serde(default = "default_tol")]
    pub tol_c: f64,
}

fn default_tol() -> f64 {
    0.001
}

impl CalibrationTarget {
    pub fn new(overall_risk: f64, c_statistic: f64) -> Self {
        CalibrationTarget { overall_risk, c_statistic, tol_risk: 0.001, tol_c: 0.001 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.overall_risk > 0.0 && self.overall_risk < 1.0) {
            return Err(Error::Domain(format!("overall risk {} not in (0, 1)", self.overall_risk)));
        }
        if !(self.c_statistic > 0.5 && self.c_statistic < 1.0) {
            return Err(Error::Domain(format!("C-statistic {} not in (0.5, 1)", self.c_statistic)));
        }
        if !(self.tol_risk > 0.0 && self.tol_c > 0.0) {
            return Err(Error::Domain("calibration tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Calibrated model plus the values it achieves on the calibration data.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub model: CoreModel,
    pub achieved_risk: f64,
    pub achieved_c: f64,
}

const DELTA_START: f64 = 16.0;
const DELTA_MAX: f64 = 1024.0;
const MAX_OUTER: usize = 200;

struct Calibrator {
    scores: Vec<f64>,
    groups: RankGroups,
    max_abs_score: f64,
    target: CalibrationTarget,
    buf: std::cell::RefCell<Vec<f64>>,
}

impl Calibrator {
    fn fill_risks(&self, alpha: f64, delta: f64) -> std::cell::Ref<'_, Vec<f64>> {
        {
            let mut buf = self.buf.borrow_mut();
            for (p, s) in buf.iter_mut().zip(&self.scores) {
                *p = invlogit(alpha + delta * s);
            }
        }
        self.buf.borrow()
    }

    fn mean_risk(&self, alpha: f64, delta: f64) -> f64 {
        compensated_mean(&self.fill_risks(alpha, delta))
    }

    fn alpha_for(&self, delta: f64) -> Result<f64> {
        let phi = self.target.overall_risk;
        let reach = delta * self.max_abs_score + 1.0;
        let centre = logit(phi);
        bisect_root(
            |a| self.mean_risk(a, delta) - phi,
            centre - reach,
            centre + reach,
            self.target.tol_risk * 1e-2,
            MAX_OUTER,
        )
    }

    /// `(α(δ), C(δ))` with α re-solved for the target risk at this δ.
    fn c_at(&self, delta: f64) -> Result<(f64, f64)> {
        let alpha = self.alpha_for(delta)?;
        if delta == 0.0 {
            return Ok((alpha, 0.5));
        }
        let p = self.fill_risks(alpha, delta);
        Ok((alpha, self.groups.concordance(&p).value))
    }
}

/// Finds `(α, δ ≥ 0)` so that the model with relative weights `betas` on the
/// columns `names` reproduces the target overall risk and C-statistic on `ds`.
pub fn calibrate(
    ds: &Dataset,
    names: &[String],
    betas: &[f64],
    target: CalibrationTarget,
) -> Result<Calibration> {
    target.validate()?;
    if betas.iter().all(|&b| b == 0.0) {
        return Err(Error::AllZeroWeights);
    }
    let shape = CoreModel::new(0.0, 1.0, names.to_vec(), betas.to_vec())?;
    let design = shape.design(ds)?;
    if design.n < 2 {
        return Err(Error::Domain("calibration needs at least two rows".into()));
    }
    let scores: Vec<f64> = design.rows().map(|x| shape.score(x)).collect();
    let max_abs_score = scores.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    let cal = Calibrator {
        groups: RankGroups::new(&scores),
        buf: std::cell::RefCell::new(vec![0.0; scores.len()]),
        scores,
        max_abs_score,
        target,
    };

    let goal = target.c_statistic;
    let mut hi = DELTA_START;
    loop {
        let (_, c) = cal.c_at(hi)?;
        if c >= goal {
            break;
        }
        if hi >= DELTA_MAX {
            return Err(Error::DeltaUnreachable { target: goal, reached: c, delta: hi });
        }
        hi *= 2.0;
    }
    let mut failure = None;
    let delta = bisect_root(
        |d| match cal.c_at(d) {
            Ok((_, c)) => c - goal,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        hi,
        target.tol_c * 0.1,
        MAX_OUTER,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let delta = delta?;
    let alpha = cal.alpha_for(delta)?;

    let model = CoreModel::new(alpha, delta, names.to_vec(), betas.to_vec())?;
    let achieved_risk = mean_risk(&model, ds)?;
    let achieved_c = model_c_statistic(&model, ds)?.value;
    if (achieved_risk - target.overall_risk).abs() > target.tol_risk
        || (achieved_c - goal).abs() > target.tol_c
    {
        return Err(Error::NoConvergence {
            iterations: MAX_OUTER,
            context: format!("calibration reached risk {achieved_risk}, C {achieved_c}"),
        });
    }
    Ok(Calibration { model, achieved_risk, achieved_c })
}

/// Expected Cox–Snell R² of the core model on `ds`:
/// `1 − exp(2(ℓ̄₀ − ℓ̄₁))` with ℓ̄₁ the mean expected per-row log-likelihood
/// and ℓ̄₀ that of the intercept-only model at the mean risk.
pub fn cox_snell_r2(m: &CoreModel, ds: &Dataset) -> Result<f64> {
    let risks = m.risks(&m.design(ds)?);
    if risks.is_empty() {
        return Err(Error::EmptyInput);
    }
    if risks.iter().any(|&p| p <= 0.0 || p >= 1.0) {
        return Err(Error::DegenerateRisks("a risk is exactly 0 or 1".into()));
    }
    let phi = compensated_mean(&risks);
    let mut l1 = CompensatedSum::new();
    l1.extend(risks.iter().map(|&p| p * p.ln() + (1.0 - p) * (1.0 - p).ln()));
    let l1 = l1.value() / risks.len() as f64;
    let l0 = phi * phi.ln() + (1.0 - phi) * (1.0 - phi).ln();
    Ok((1.0 - (2.0 * (l0 - l1)).exp()).max(0.0))
}

/// JSON model description: explicit coefficients, or relative weights plus
/// a calibration target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub betas: Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<CalibrationTarget>,
}

impl ModelSpec {
    pub fn explicit(m: &CoreModel) -> Self {
        ModelSpec {
            alpha: Some(m.alpha),
            delta: Some(m.delta),
            betas: m
                .predictor_names
                .iter()
                .zip(&m.betas)
                .map(|(n, b)| (n.clone(), serde_json::Value::from(*b)))
                .collect(),
            target: None,
        }
    }

    pub fn weights(&self) -> Result<(Vec<String>, Vec<f64>)> {
        let mut names = Vec::with_capacity(self.betas.len());
        let mut betas = Vec::with_capacity(self.betas.len());
        for (k, v) in &self.betas {
            names.push(k.clone());
            betas.push(
                v.as_f64()
                    .ok_or_else(|| Error::Domain(format!("beta `{k}` is not a number")))?,
            );
        }
        Ok((names, betas))
    }

    /// Resolves to a model, calibrating on `ds` when a target is given.
    pub fn resolve(&self, ds: &Dataset) -> Result<Calibration> {
        let (names, betas) = self.weights()?;
        match (self.target, self.alpha) {
            (Some(target), None) => calibrate(ds, &names, &betas, target),
            (None, Some(alpha)) => {
                let model = CoreModel::new(alpha, self.delta.unwrap_or(1.0), names, betas)?;
                let achieved_risk = mean_risk(&model, ds)?;
                let achieved_c = if ds.n() >= 2 { model_c_statistic(&model, ds)?.value } else { 0.5 };
                Ok(Calibration { model, achieved_risk, achieved_c })
            }
            _ => Err(Error::Domain(
                "core model needs either `alpha` (explicit) or `target` (calibration), not both".into(),
            )),
        }
    }
}
