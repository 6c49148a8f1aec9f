//! Monte Carlo cross-check of the closed-form uncertainty: simulate
//! development datasets from the core model, refit unpenalised logistic
//! regressions by IRLS and measure the spread of their predictions.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coremodel::CoreModel;
use crate::error::{Error, Result};
use crate::fisherinfo::{check_n, UnitInformation};
use crate::numkit::{invlogit, RngStream, SymMatrix};
use crate::population::{Dataset, Design};

const MAX_ITER: usize = 50;
const LOGLIK_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 20.0;
const STEP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Intercept first.
    pub betas: Vec<f64>,
    pub vcov: SymMatrix,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
}

impl FitResult {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.betas[0] + self.betas[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

struct Evaluation {
    loglik: f64,
    grad: Vec<f64>,
    info: SymMatrix,
}

fn evaluate(x: &Design, trials: &[f64], events: &[f64], beta: &[f64]) -> Evaluation {
    let dim = x.p + 1;
    let mut loglik = 0.0;
    let mut grad = vec![0.0; dim];
    let mut info = vec![0.0; dim * dim];
    let mut xt = vec![1.0; dim];
    for (i, row) in x.rows().enumerate() {
        if trials[i] == 0.0 {
            continue;
        }
        xt[1..].copy_from_slice(row);
        let eta: f64 = beta.iter().zip(&xt).map(|(b, v)| b * v).sum();
        let p = invlogit(eta);
        let log_p = -softplus(-eta);
        let log_q = -softplus(eta);
        loglik += events[i] * log_p + (trials[i] - events[i]) * log_q;
        let resid = events[i] - trials[i] * p;
        let w = trials[i] * p * (1.0 - p);
        for a in 0..dim {
            grad[a] += resid * xt[a];
            for b in 0..=a {
                info[a * dim + b] += w * xt[a] * xt[b];
            }
        }
    }
    let info = SymMatrix::from_lower_fn(dim, |a, b| info[a * dim + b]);
    Evaluation { loglik, grad, info }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Maximum likelihood fit on grouped binomial data: pattern `i` (a row of
/// `x`) was seen `trials[i]` times with `events[i]` outcomes.
pub fn fit_logistic_grouped(x: &Design, trials: &[f64], events: &[f64]) -> Result<FitResult> {
    if trials.len() != x.n || events.len() != x.n {
        return Err(Error::DimensionMismatch { expected: x.n, got: trials.len().min(events.len()) });
    }
    let total: f64 = trials.iter().sum();
    let hits: f64 = events.iter().sum();
    if total == 0.0 {
        return Err(Error::EmptyInput);
    }
    if hits == 0.0 || hits == total {
        return Err(Error::AllSameOutcome);
    }
    let mut beta = vec![0.0; x.p + 1];
    let mut cur = evaluate(x, trials, events, &beta);
    for iteration in 1..=MAX_ITER {
        if cur.grad.iter().all(|g| g.abs() <= GRAD_TOL) {
            if separated(x, trials, events, &beta) {
                return Err(Error::Separation { iteration });
            }
            return finish(beta, cur, iteration - 1);
        }
        let step = cur.info.cholesky()?.solve(&cur.grad);
        let mut scale = 1.0;
        let (next_beta, next) = loop {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let e = evaluate(x, trials, events, &trial);
            if e.loglik >= cur.loglik - 1e-12 * cur.loglik.abs() || scale < 1e-6 {
                break (trial, e);
            }
            scale *= 0.5;
        };
        let gain = next.loglik - cur.loglik;
        beta = next_beta;
        cur = next;
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) && gain > 0.0 {
            return Err(Error::Separation { iteration });
        }
        // a flat likelihood with large steps is drift towards infinity, not convergence
        let max_step = step.iter().fold(0.0f64, |a, s| a.max((scale * s).abs()));
        if gain.abs() <= LOGLIK_TOL && max_step <= STEP_TOL {
            if separated(x, trials, events, &beta) {
                return Err(Error::Separation { iteration });
            }
            return finish(beta, cur, iteration);
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITER, context: "logistic IRLS".into() })
}

/// Every observed pattern with a pure outcome is fitted as (numerically)
/// 0 or 1, which only happens when the estimates have run off to infinity.
fn separated(x: &Design, trials: &[f64], events: &[f64], beta: &[f64]) -> bool {
    let mut pure = 0;
    for (row, (&t, &e)) in x.rows().zip(trials.iter().zip(events)) {
        if t == 0.0 || (e != 0.0 && e != t) {
            continue;
        }
        pure += 1;
        let eta = beta[0] + beta[1..].iter().zip(row).map(|(b, v)| b * v).sum::<f64>();
        if (e / t - invlogit(eta)).abs() > 1e-6 {
            return false;
        }
    }
    pure > 0
}

fn finish(betas: Vec<f64>, e: Evaluation, iterations: usize) -> Result<FitResult> {
    let vcov = e.info.cholesky()?.inverse();
    Ok(FitResult { betas, vcov, converged: true, iterations, loglik: e.loglik })
}

/// Maximum likelihood fit with one Bernoulli outcome per design row.
pub fn fit_logistic(x: &Design, y: &[bool]) -> Result<FitResult> {
    if y.len() != x.n {
        return Err(Error::DimensionMismatch { expected: x.n, got: y.len() });
    }
    let patterns = Patterns::of(x);
    let mut trials = vec![0.0; patterns.len()];
    let mut events = vec![0.0; patterns.len()];
    for (&k, &v) in patterns.row_pattern.iter().zip(y) {
        trials[k] += 1.0;
        events[k] += f64::from(u8::from(v));
    }
    fit_logistic_grouped(&patterns.design, &trials, &events)
}

/// Distinct predictor rows of a design in first-seen order, plus the
/// pattern index of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Patterns {
    pub design: Design,
    pub row_pattern: Vec<usize>,
    pub counts: Vec<usize>,
}

impl Patterns {
    pub fn of(design: &Design) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut values = Vec::new();
        let mut counts = Vec::new();
        let row_pattern = design
            .rows()
            .map(|row| {
                // +0.0 folds −0.0 into 0.0
                let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
                let next = counts.len();
                let k = *index.entry(key).or_insert_with(|| {
                    values.extend_from_slice(row);
                    counts.push(0);
                    next
                });
                counts[k] += 1;
                k
            })
            .collect();
        let n = counts.len();
        Patterns { design: Design { n, p: design.p, values }, row_pattern, counts }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Spread of replicate-model predictions for one covariate pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternStability {
    pub true_risk: f64,
    pub logit_sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalStability {
    pub patterns: Patterns,
    pub stats: Vec<PatternStability>,
    pub reps_ok: usize,
    pub reps_failed: usize,
}

impl EmpiricalStability {
    /// Empirical interval of every population row.
    pub fn row_intervals(&self) -> Vec<(f64, f64)> {
        self.patterns.row_pattern.iter().map(|&k| (self.stats[k].lower, self.stats[k].upper)).collect()
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicate-model prediction spread with each replicate drawing from
/// `stream_for(rep)`.
pub fn empirical_stability_with<F>(
    m: &CoreModel,
    ds: &Dataset,
    n: usize,
    reps: usize,
    stream_for: F,
) -> Result<EmpiricalStability>
where
    F: Fn(usize) -> RngStream + Sync,
{
    if reps < 2 {
        return Err(Error::Domain(format!("need at least 2 replicates, got {reps}")));
    }
    check_n(n as f64)?;
    if ds.n() == 0 {
        return Err(Error::EmptyInput);
    }
    let design = m.design(ds)?;
    let patterns = Patterns::of(&design);
    let risks = m.risks(&design);
    let k = patterns.len();

    let fits: Vec<Option<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut g = stream_for(rep).generator();
            let mut trials = vec![0.0; k];
            let mut events = vec![0.0; k];
            for _ in 0..n {
                let row = g.random_range(0..ds.n());
                let pat = patterns.row_pattern[row];
                trials[pat] += 1.0;
                if g.random::<f64>() < risks[row] {
                    events[pat] += 1.0;
                }
            }
            let fit = fit_logistic_grouped(&patterns.design, &trials, &events).ok()?;
            Some(patterns.design.rows().map(|x| fit.linear_predictor(x)).collect())
        })
        .collect();
    let ok: Vec<Vec<f64>> = fits.into_iter().flatten().collect();
    let failed = reps - ok.len();
    if failed * 5 > reps || ok.len() < 2 {
        return Err(Error::TooFewSuccessfulReps { failed, reps });
    }

    let mut first_row = vec![usize::MAX; k];
    for (row, &pat) in patterns.row_pattern.iter().enumerate().rev() {
        first_row[pat] = row;
    }
    let stats = (0..k)
        .map(|pat| {
            let mut lps: Vec<f64> = ok.iter().map(|r| r[pat]).collect();
            let mean = lps.iter().sum::<f64>() / lps.len() as f64;
            let var = lps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (lps.len() - 1) as f64;
            lps.sort_by(f64::total_cmp);
            PatternStability {
                true_risk: risks[first_row[pat]],
                logit_sd: var.sqrt(),
                lower: invlogit(quantile_sorted(&lps, 0.025)),
                upper: invlogit(quantile_sorted(&lps, 0.975)),
            }
        })
        .collect();
    Ok(EmpiricalStability { patterns, stats, reps_ok: ok.len(), reps_failed: failed })
}

/// Replicate `r` uses the stream `oracle:<r>` under `seed`.
pub fn empirical_stability(
    m: &CoreModel,
    ds: &Dataset,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<EmpiricalStability> {
    empirical_stability_with(m, ds, n, reps, |rep| RngStream::new(seed, format!("oracle:{rep}")))
}

/// Closed-form logit standard errors at size `n` for each pattern.
pub fn closed_form_se(info: &UnitInformation, n: f64, patterns: &Design) -> Result<Vec<f64>> {
    check_n(n)?;
    let inv = info.inverse()?;
    Ok(patterns.rows().map(|x| (inv.leverage(x) / n).sqrt()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub pattern: usize,
    pub count: usize,
    pub true_risk: f64,
    pub empirical_sd: f64,
    pub closed_form_se: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    pub mean_abs_log_ratio: f64,
    pub max_abs_log_ratio: f64,
}

/// Empirical SD over closed-form SE, pattern by pattern.
pub fn compare_to_closed_form(empirical: &EmpiricalStability, closed_se: &[f64]) -> Result<RatioTable> {
    if closed_se.len() != empirical.stats.len() {
        return Err(Error::DimensionMismatch { expected: empirical.stats.len(), got: closed_se.len() });
    }
    let sds: Vec<f64> = empirical.stats.iter().map(|s| s.logit_sd).collect();
    let mut table = ratio_table(&sds, closed_se)?;
    for (r, s) in table.rows.iter_mut().zip(&empirical.stats) {
        r.true_risk = s.true_risk;
    }
    for (r, &c) in table.rows.iter_mut().zip(&empirical.patterns.counts) {
        r.count = c;
    }
    Ok(table)
}

/// Ratio table for two aligned vectors of standard deviations.
pub fn ratio_table(empirical_sd: &[f64], closed_se: &[f64]) -> Result<RatioTable> {
    if empirical_sd.len() != closed_se.len() {
        return Err(Error::DimensionMismatch { expected: empirical_sd.len(), got: closed_se.len() });
    }
    if empirical_sd.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows: Vec<RatioRow> = empirical_sd
        .iter()
        .zip(closed_se)
        .enumerate()
        .map(|(pattern, (&e, &c))| RatioRow {
            pattern,
            count: 0,
            true_risk: f64::NAN,
            empirical_sd: e,
            closed_form_se: c,
            ratio: e / c,
        })
        .collect();
    let logs: Vec<f64> = rows.iter().map(|r| r.ratio.ln().abs()).collect();
    Ok(RatioTable {
        mean_abs_log_ratio: logs.iter().sum::<f64>() / logs.len() as f64,
        max_abs_log_ratio: logs.iter().copied().fold(0.0, f64::max),
        rows,
    })
}

impl RatioTable {
    pub fn write_csv<W: Write>(&self, patterns: &Design, names: &[String], out: W) -> Result<()> {
        if patterns.n != self.rows.len() || names.len() != patterns.p {
            return Err(Error::DimensionMismatch { expected: self.rows.len(), got: patterns.n });
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["pattern".to_string()];
        header.extend(names.iter().cloned());
        header.extend(
            ["count", "true_risk", "empirical_sd", "closed_form_se", "ratio"].map(String::from),
        );
        w.write_record(&header)?;
        for (r, x) in self.rows.iter().zip(patterns.rows()) {
            let mut rec = vec![r.pattern.to_string()];
            rec.extend(x.iter().map(|v| format!("{v}")));
            rec.push(r.count.to_string());
            rec.extend([r.true_risk, r.empirical_sd, r.closed_form_se, r.ratio].map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
