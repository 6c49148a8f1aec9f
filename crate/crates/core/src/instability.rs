//! Classification instability, mean absolute prediction error and
//! per-subgroup summaries of individual-level uncertainty.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{invlogit, logit, normal_cdf, CompensatedSum, RngStream};
use crate::population::Dataset;
use crate::precision::PrecisionRecord;

/// Probability that a draw from `Normal(logit p, v)` lands on the other
/// side of `t` from `p`.
pub fn misclassification_prob(p: f64, v: f64, t: f64) -> Result<f64> {
    for (name, x) in [("risk", p), ("threshold", t)] {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Domain(format!("{name} {x} not in (0, 1)")));
        }
    }
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("variance must be non-negative, got {v}")));
    }
    if p == t {
        return Ok(0.5);
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let d = (logit(p) - logit(t)).abs() / v.sqrt();
    Ok(normal_cdf(-d))
}

/// Monte Carlo mean of `|invlogit(z) − p|` with `z ~ Normal(logit p, v)`.
pub fn mape(p: f64, v: f64, draws: usize, rng: &RngStream) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("risk {p} not in (0, 1)")));
    }
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("variance must be non-negative, got {v}")));
    }
    if draws == 0 {
        return Err(Error::Domain("mape needs at least one draw".into()));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let centre = logit(p);
    let sd = v.sqrt();
    let mut g = rng.generator();
    let mut acc = CompensatedSum::default();
    for _ in 0..draws {
        let z: f64 = g.sample(StandardNormal);
        acc.add((invlogit(centre + sd * z) - p).abs());
    }
    Ok(acc.value() / draws as f64)
}

/// Per-row instability metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstabilityRecord {
    pub row_index: usize,
    pub true_risk: f64,
    pub misclass_prob: Option<f64>,
    pub mape: f64,
}

/// Risk threshold(s) for classification instability: one value for
/// everybody, optionally overridden per level of a grouping variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRule {
    pub default: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_var: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub levels: BTreeMap<String, f64>,
}

impl ThresholdRule {
    pub fn uniform(t: f64) -> Self {
        ThresholdRule { default: t, group_var: None, levels: BTreeMap::new() }
    }

    /// Threshold applying to each row of `ds`.
    pub fn per_row(&self, ds: &Dataset) -> Result<Vec<f64>> {
        for t in std::iter::once(&self.default).chain(self.levels.values()) {
            if !(*t > 0.0 && *t < 1.0) {
                return Err(Error::Domain(format!("threshold {t} not in (0, 1)")));
            }
        }
        let Some(var) = &self.group_var else {
            if !self.levels.is_empty() {
                return Err(Error::Domain("per-level thresholds need a group variable".into()));
            }
            return Ok(vec![self.default; ds.n()]);
        };
        let (levels, idx) = ds.group_levels(var)?;
        if let Some(bad) = self.levels.keys().find(|k| !levels.contains(k)) {
            return Err(Error::UnknownLevel { row: 0, column: var.clone(), value: bad.clone() });
        }
        let by_level: Vec<f64> =
            levels.iter().map(|l| self.levels.get(l).copied().unwrap_or(self.default)).collect();
        Ok(idx.into_iter().map(|i| by_level[i]).collect())
    }
}

/// Misclassification and MAPE for every precision record. Each row's MAPE
/// draws come from its own sub-stream `mape:<row>` of `rng`.
pub fn instability_records(
    precision: &[PrecisionRecord],
    thresholds: Option<&[f64]>,
    draws: usize,
    rng: &RngStream,
) -> Result<Vec<InstabilityRecord>> {
    if let Some(t) = thresholds {
        if t.len() != precision.len() {
            return Err(Error::DimensionMismatch { expected: precision.len(), got: t.len() });
        }
    }
    precision
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let misclass_prob = thresholds
                .map(|t| misclassification_prob(r.true_risk, r.var_logit, t[i]))
                .transpose()?;
            let stream = rng.child(format!("mape:{}", r.row_index));
            Ok(InstabilityRecord {
                row_index: r.row_index,
                true_risk: r.true_risk,
                misclass_prob,
                mape: mape(r.true_risk, r.var_logit, draws, &stream)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Mean, min, median and max. The median of an even count is the lower
/// of the two middle values.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(x) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("cannot summarize non-finite value {x}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().copied().collect::<CompensatedSum>().value() / sorted.len() as f64;
    Ok(Summary {
        mean,
        min: sorted[0],
        median: sorted[(sorted.len() - 1) / 2],
        max: sorted[sorted.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub group_label: String,
    pub group_n: usize,
    pub width: Summary,
    pub mape: Summary,
    pub misclass_prob: Option<Summary>,
}

fn table(label: String, precision: &[&PrecisionRecord], inst: &[&InstabilityRecord]) -> Result<SummaryTable> {
    let widths: Vec<f64> = precision.iter().map(|r| r.width).collect();
    let mapes: Vec<f64> = inst.iter().map(|r| r.mape).collect();
    let misclass: Option<Vec<f64>> = inst.iter().map(|r| r.misclass_prob).collect();
    Ok(SummaryTable {
        group_label: label,
        group_n: precision.len(),
        width: summarize(&widths)?,
        mape: summarize(&mapes)?,
        misclass_prob: misclass.map(|m| summarize(&m)).transpose()?,
    })
}

/// One summary per level of `group_var` (levels with no rows are skipped),
/// followed by an `Overall` row.
pub fn group_summary(
    precision: &[PrecisionRecord],
    instability: &[InstabilityRecord],
    ds: &Dataset,
    group_var: &str,
) -> Result<Vec<SummaryTable>> {
    if precision.len() != ds.n() || instability.len() != ds.n() {
        return Err(Error::DimensionMismatch {
            expected: ds.n(),
            got: precision.len().min(instability.len()),
        });
    }
    let (levels, idx) = ds.group_levels(group_var)?;
    let mut out = Vec::with_capacity(levels.len() + 1);
    for (li, level) in levels.iter().enumerate() {
        let rows: Vec<usize> = (0..ds.n()).filter(|&r| idx[r] == li).collect();
        if rows.is_empty() {
            continue;
        }
        let p: Vec<&PrecisionRecord> = rows.iter().map(|&r| &precision[r]).collect();
        let s: Vec<&InstabilityRecord> = rows.iter().map(|&r| &instability[r]).collect();
        out.push(table(format!("{group_var}={level}"), &p, &s)?);
    }
    out.push(overall_summary(precision, instability)?);
    Ok(out)
}

pub fn overall_summary(precision: &[PrecisionRecord], instability: &[InstabilityRecord]) -> Result<SummaryTable> {
    let p: Vec<&PrecisionRecord> = precision.iter().collect();
    let s: Vec<&InstabilityRecord> = instability.iter().collect();
    table("Overall".into(), &p, &s)
}

const SUMMARY_HEADER: [&str; 14] = [
    "group", "n",
    "width_mean", "width_min", "width_median", "width_max",
    "mape_mean", "mape_min", "mape_median", "mape_max",
    "misclass_mean", "misclass_min", "misclass_median", "misclass_max",
];

fn summary_fields(s: Option<&Summary>) -> [String; 4] {
    match s {
        Some(s) => [s.mean, s.min, s.median, s.max].map(|x| format!("{x}")),
        None => Default::default(),
    }
}

pub fn write_summary_csv<W: Write>(tables: &[SummaryTable], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for t in tables {
        let mut rec = vec![t.group_label.clone(), t.group_n.to_string()];
        rec.extend(summary_fields(Some(&t.width)));
        rec.extend(summary_fields(Some(&t.mape)));
        rec.extend(summary_fields(t.misclass_prob.as_ref()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cell(s: &Summary) -> String {
    format!("{:.3} ({:.3}, {:.3}, {:.3})", s.mean, s.min, s.median, s.max)
}

/// Aligned plain-text table: one row per group, each metric shown as
/// `mean (min, median, max)`.
pub fn summary_text(tables: &[SummaryTable]) -> String {
    let mut rows = vec![vec![
        "Group".to_string(),
        "N".to_string(),
        "Interval width".to_string(),
        "MAPE".to_string(),
        "P(misclassified)".to_string(),
    ]];
    for t in tables {
        rows.push(vec![
            t.group_label.clone(),
            t.group_n.to_string(),
            cell(&t.width),
            cell(&t.mape),
            t.misclass_prob.as_ref().map_or_else(|| "-".to_string(), cell),
        ]);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (x, w))| if c == 1 { format!("{x:>w$}") } else { format!("{x:<w$}") })
            .collect();
        let _ = writeln!(s, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(s, "{}", "-".repeat(total));
        }
    }
    s
}

pub fn write_instability_csv<W: Write>(records: &[InstabilityRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_index", "true_risk", "misclass_prob", "mape"])?;
    for r in records {
        w.write_record(&[
            r.row_index.to_string(),
            format!("{}", r.true_risk),
            r.misclass_prob.map_or_else(String::new, |m| format!("{m}")),
            format!("{}", r.mape),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_instability_csv<R: std::io::Read>(input: R) -> Result<Vec<InstabilityRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::VariableSpec;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn misclassification_edges() {
        assert_eq!(misclassification_prob(0.3, 0.7, 0.3).unwrap(), 0.5);
        assert_eq!(misclassification_prob(0.3, 0.0, 0.2).unwrap(), 0.0);
        assert!(misclassification_prob(0.0, 0.1, 0.2).is_err());
        assert!(misclassification_prob(0.3, 0.1, 1.0).is_err());
        assert!(misclassification_prob(0.3, -0.1, 0.2).is_err());
    }

    #[test]
    fn misclassification_matches_independent_normal() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for &(p, v, t) in &[(0.13, 0.12, 0.06), (0.02, 0.5, 0.1), (0.8, 0.03, 0.75)] {
            let d = (logit(p) - logit(t)) / f64::sqrt(v);
            let want = if p > t { n.cdf(-d) } else { 1.0 - n.cdf(-d) };
            let got = misclassification_prob(p, v, t).unwrap();
            assert!((got - want).abs() < 1e-10, "{p} {v} {t}: {got} vs {want}");
        }
        // 30-digit reference value
        let got = misclassification_prob(0.8, 0.03, 0.75).unwrap();
        assert!((got - 0.048_363_429_769_635_285).abs() < 1e-15);
    }

    #[test]
    fn misclassification_for_history_group() {
        // history-only foot-ulcer pattern at n = 453; leverage 120.804
        let p = invlogit(-3.81 + 1.95);
        let m = misclassification_prob(p, 120.804 / 453.0, 0.06).unwrap();
        assert!((m - 0.05).abs() < 0.01, "{m}");
    }

    #[test]
    fn mape_degenerate_and_deterministic() {
        let rng = RngStream::new(1, "t");
        assert_eq!(mape(0.2, 0.0, 10, &rng).unwrap(), 0.0);
        assert_eq!(mape(0.2, 0.3, 100, &rng).unwrap(), mape(0.2, 0.3, 100, &rng).unwrap());
        assert!(mape(0.2, 0.3, 0, &rng).is_err());
    }

    #[test]
    fn mape_at_half_matches_quadrature() {
        // E|invlogit(Z) − 0.5|, Z ~ N(0, 0.01), trapezoid rule on ±8 sd
        let sd = 0.1;
        let k = 20_000;
        let h = 16.0 / k as f64;
        let mut q = 0.0;
        for i in 0..=k {
            let z = -8.0 + i as f64 * h;
            let w = if i == 0 || i == k { 0.5 } else { 1.0 };
            q += w * (invlogit(sd * z) - 0.5).abs() * (-0.5 * z * z).exp();
        }
        q *= h / (2.0 * std::f64::consts::PI).sqrt();
        let m = mape(0.5, 0.01, 200_000, &RngStream::new(9, "mape")).unwrap();
        assert!((q - 0.019_95).abs() < 1e-4, "{q}");
        assert!((m - q).abs() < 3e-4, "{m} vs {q}");
    }

    #[test]
    fn mape_error_halves_with_four_times_draws() {
        let spread = |draws: usize| {
            let xs: Vec<f64> = (0..60)
                .map(|s| mape(0.3, 0.2, draws, &RngStream::new(s, "conv")).unwrap())
                .collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        };
        let ratio = spread(400) / spread(1600);
        assert!((1.4..2.8).contains(&ratio), "{ratio}");
    }

    #[test]
    fn summarize_conventions() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s, Summary { mean: 2.5, min: 1.0, median: 2.0, max: 4.0 });
        let one = summarize(&[0.7]).unwrap();
        assert_eq!(one, Summary { mean: 0.7, min: 0.7, median: 0.7, max: 0.7 });
        assert!(matches!(summarize(&[]), Err(Error::EmptyInput)));
    }

    fn grouped() -> (Dataset, Vec<PrecisionRecord>, Vec<InstabilityRecord>) {
        let vars = vec![VariableSpec::binary("g"), VariableSpec::binary("h")];
        let values = vec![0., 1., 1., 1., 0., 0., 1., 1., 0., 1.];
        let ds = Dataset::new(vars, values).unwrap();
        let prec: Vec<PrecisionRecord> = (0..5)
            .map(|i| {
                let w = 0.05 * (i + 1) as f64;
                PrecisionRecord { row_index: i, true_risk: 0.2, var_logit: 0.1, lower: 0.1, upper: 0.1 + w, width: w }
            })
            .collect();
        let inst = (0..5)
            .map(|i| InstabilityRecord {
                row_index: i,
                true_risk: 0.2,
                misclass_prob: Some(0.01 * i as f64),
                mape: 0.003 * (i * i) as f64,
            })
            .collect();
        (ds, prec, inst)
    }

    #[test]
    fn group_summary_pools_to_overall() {
        let (ds, p, s) = grouped();
        let tables = group_summary(&p, &s, &ds, "g").unwrap();
        assert_eq!(tables.len(), 3);
        assert_eq!(tables[0].group_label, "g=0");
        assert_eq!(tables[0].group_n, 3);
        let overall = tables.last().unwrap();
        assert_eq!(overall.group_label, "Overall");
        let pooled = |f: fn(&SummaryTable) -> f64| {
            tables[..2].iter().map(|t| f(t) * t.group_n as f64).sum::<f64>() / 5.0
        };
        assert!((pooled(|t| t.width.mean) - overall.width.mean).abs() < 1e-12);
        assert!((pooled(|t| t.mape.mean) - overall.mape.mean).abs() < 1e-12);
        assert!(
            (pooled(|t| t.misclass_prob.unwrap().mean) - overall.misclass_prob.unwrap().mean).abs() < 1e-12
        );
        assert!(group_summary(&p, &s, &ds, "nope").is_err());
    }

    #[test]
    fn single_level_matches_overall() {
        let (_, p, s) = grouped();
        let ds = Dataset::new(vec![VariableSpec::binary("g")], vec![1.0; 5]).unwrap();
        let tables = group_summary(&p, &s, &ds, "g").unwrap();
        assert_eq!(tables.len(), 2);
        assert_eq!(tables[0].width, tables[1].width);
        assert_eq!(tables[0].mape, tables[1].mape);
    }

    #[test]
    fn thresholds_per_level() {
        let (ds, _, _) = grouped();
        let mut rule = ThresholdRule::uniform(0.1);
        assert_eq!(rule.per_row(&ds).unwrap(), vec![0.1; 5]);
        rule.group_var = Some("g".into());
        rule.levels.insert("1".into(), 0.2);
        assert_eq!(rule.per_row(&ds).unwrap(), vec![0.1, 0.2, 0.1, 0.2, 0.1]);
        rule.levels.insert("7".into(), 0.2);
        assert!(rule.per_row(&ds).is_err());
    }

    #[test]
    fn records_reproducible_and_exportable() {
        let (_, p, _) = grouped();
        let rng = RngStream::new(3, "instability");
        let t = vec![0.15; 5];
        let a = instability_records(&p, Some(&t), 200, &rng).unwrap();
        let b = instability_records(&p, Some(&t), 200, &rng).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_instability_csv(&a, &mut buf).unwrap();
        assert_eq!(read_instability_csv(buf.as_slice()).unwrap(), a);
        let none = instability_records(&p, None, 10, &rng).unwrap();
        assert!(none.iter().all(|r| r.misclass_prob.is_none()));
        let mut buf = Vec::new();
        write_instability_csv(&none, &mut buf).unwrap();
        assert_eq!(read_instability_csv(buf.as_slice()).unwrap(), none);
    }

    #[test]
    fn text_report_is_aligned() {
        let (ds, p, s) = grouped();
        let text = summary_text(&group_summary(&p, &s, &ds, "h").unwrap());
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("Group"));
        assert!(lines[1].chars().all(|c| c == '-'));
        assert!(lines.last().unwrap().starts_with("Overall"));
        let col = lines[0].find("Interval").unwrap();
        assert!(lines[2..].iter().all(|l| l[col - 2..col].trim().is_empty()));
    }
}
