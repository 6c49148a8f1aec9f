//! Unit Fisher information of the core model, `I = E[p(1−p)·x̃x̃']` with
//! `x̃ = (1, x)`, taken as a compensated average over the population rows,
//! and the variance quantities that follow from `var(β̂) = I⁻¹ / n`.

use std::io::Write;

use crate::coremodel::CoreModel;
use crate::error::{Error, Result};
use crate::numkit::{invlogit, Cholesky, CompensatedSum, SymMatrix};
use crate::population::{Dataset, Design};

/// Per-observation Fisher information, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitInformation {
    pub matrix: SymMatrix,
    pub n_source: usize,
    pub model_digest: String,
}

/// Lower-triangle accumulator for `Σ w·x̃x̃'`.
#[derive(Debug, Clone)]
pub struct InformationSums {
    dim: usize,
    sums: Vec<CompensatedSum>,
    rows: usize,
}

impl InformationSums {
    pub fn new(p: usize) -> Self {
        let dim = p + 1;
        InformationSums { dim, sums: vec![CompensatedSum::new(); dim * (dim + 1) / 2], rows: 0 }
    }

    #[inline]
    pub fn add(&mut self, weight: f64, x: &[f64]) {
        let mut k = 0;
        for i in 0..self.dim {
            let xi = if i == 0 { 1.0 } else { x[i - 1] };
            for j in 0..=i {
                let xj = if j == 0 { 1.0 } else { x[j - 1] };
                self.sums[k].add(weight * xi * xj);
                k += 1;
            }
        }
        self.rows += 1;
    }

    pub fn merge(&mut self, other: &InformationSums) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        self.rows += other.rows;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Total (unnormalized) information matrix.
    pub fn total(&self) -> SymMatrix {
        let lower: Vec<f64> = self.sums.iter().map(CompensatedSum::value).collect();
        SymMatrix::from_lower_fn(self.dim, |i, j| lower[i * (i + 1) / 2 + j])
    }

    pub fn mean(&self) -> SymMatrix {
        self.total().scale(1.0 / self.rows as f64)
    }
}

/// Accumulates `p(1−p)·x̃x̃'` over rows of a design matrix.
pub fn information_sums(m: &CoreModel, design: &Design) -> InformationSums {
    let mut acc = InformationSums::new(design.p);
    for x in design.rows() {
        let p = invlogit(m.alpha + m.delta * m.score(x));
        acc.add(p * (1.0 - p), x);
    }
    acc
}

/// Unit information of `m` averaged over the rows of `ds`.
pub fn unit_information(m: &CoreModel, ds: &Dataset) -> Result<UnitInformation> {
    if ds.n() == 0 {
        return Err(Error::EmptyInput);
    }
    let design = m.design(ds)?;
    let acc = information_sums(m, &design);
    Ok(UnitInformation { matrix: acc.mean(), n_source: ds.n(), model_digest: m.digest() })
}

impl UnitInformation {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Factorized inverse for repeated `x̃ I⁻¹ x̃'` evaluations.
    pub fn inverse(&self) -> Result<InverseInformation> {
        Ok(InverseInformation { chol: self.matrix.cholesky()? })
    }

    /// Matrix dump with a header row naming the parameters.
    pub fn write_csv<W: Write>(&self, names: &[String], mut out: W) -> Result<()> {
        if names.len() + 1 != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim() - 1, got: names.len() });
        }
        let labels: Vec<&str> =
            std::iter::once("intercept").chain(names.iter().map(String::as_str)).collect();
        writeln!(out, "parameter,{}", labels.join(","))?;
        for (i, label) in labels.iter().enumerate() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{label},{}", row.join(","))?;
        }
        Ok(())
    }

    /// Parses the output of [`write_csv`](Self::write_csv).
    pub fn read_csv(text: &str, n_source: usize, model_digest: String) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .skip(1)
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|_| Error::Parse {
                        row: i,
                        column: "information".into(),
                        message: format!("`{c}` is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(UnitInformation { matrix: SymMatrix::from_rows(&rows)?, n_source, model_digest })
    }
}

/// `I⁻¹` held as a Cholesky factor of `I`.
#[derive(Debug, Clone)]
pub struct InverseInformation {
    chol: Cholesky,
}

impl InverseInformation {
    /// `x̃ I⁻¹ x̃'` for a predictor row `x` (intercept added here).
    pub fn leverage(&self, x: &[f64]) -> f64 {
        let mut xt = Vec::with_capacity(x.len() + 1);
        xt.push(1.0);
        xt.extend_from_slice(x);
        self.chol.inv_quad_form(&xt)
    }

    pub fn matrix(&self) -> SymMatrix {
        self.chol.inverse()
    }
}

/// `var(β̂) = I⁻¹ / n`.
pub fn vcov(info: &UnitInformation, n: f64) -> Result<SymMatrix> {
    check_n(n)?;
    Ok(info.inverse()?.matrix().scale(1.0 / n))
}

/// `var(logit p̂) = x̃ I⁻¹ x̃' / n` for predictor row `x`.
pub fn var_logit(info: &UnitInformation, n: f64, x: &[f64]) -> Result<f64> {
    check_n(n)?;
    if x.len() + 1 != info.dim() {
        return Err(Error::DimensionMismatch { expected: info.dim() - 1, got: x.len() });
    }
    Ok(info.inverse()?.leverage(x) / n)
}

pub(crate) fn check_n(n: f64) -> Result<()> {
    if !(n >= 1.0) || !n.is_finite() {
        return Err(Error::Domain(format!("sample size must be at least 1, got {n}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::VariableSpec;

    fn info(rows: &[Vec<f64>]) -> UnitInformation {
        UnitInformation {
            matrix: SymMatrix::from_rows(rows).unwrap(),
            n_source: 1,
            model_digest: String::new(),
        }
    }

    #[test]
    fn intercept_only_half_risk() {
        // a model with a zero-weight predictor on an all-zero column
        let ds = Dataset::new(vec![VariableSpec::binary("b")], vec![0.0; 6]).unwrap();
        let m = CoreModel::new(0.0, 1.0, vec![], vec![]).unwrap();
        let ui = unit_information(&m, &ds).unwrap();
        assert_eq!(ui.matrix.rows(), vec![vec![0.25]]);
    }

    #[test]
    fn one_binary_predictor_closed_form() {
        // P(x = 1) = q = 0.3, p = 0.5 everywhere
        let xs: Vec<f64> = (0..10).map(|i| if i < 3 { 1.0 } else { 0.0 }).collect();
        let ds = Dataset::new(vec![VariableSpec::binary("x")], xs).unwrap();
        let m = CoreModel::new(0.0, 1.0, vec!["x".into()], vec![0.0]).unwrap();
        let ui = unit_information(&m, &ds).unwrap();
        let want = [[0.25, 0.075], [0.075, 0.075]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((ui.matrix.get(i, j) - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn vcov_examples() {
        let ui = info(&[vec![0.25]]);
        assert!((vcov(&ui, 400.0).unwrap().get(0, 0) - 0.01).abs() < 1e-16);
        assert_eq!(vcov(&info(&[vec![1.0, 0.0], vec![0.0, 1.0]]), 1.0).unwrap(), SymMatrix::identity(2));
        let ui = info(&[vec![0.3, 0.1], vec![0.1, 0.2]]);
        let a = vcov(&ui, 250.0).unwrap();
        let b = vcov(&ui, 500.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.get(i, j) - 2.0 * b.get(i, j)).abs() <= 1e-15 * a.get(i, j).abs());
            }
        }
    }

    #[test]
    fn var_logit_examples() {
        let ui = info(&[vec![0.25]]);
        assert!((var_logit(&ui, 400.0, &[]).unwrap() - 0.01).abs() < 1e-16);
        let ui = info(&[vec![0.3, 0.1], vec![0.1, 0.2]]);
        let v1 = var_logit(&ui, 300.0, &[0.7]).unwrap();
        let v2 = var_logit(&ui, 600.0, &[0.7]).unwrap();
        assert!((v1 - 2.0 * v2).abs() <= 1e-15 * v1);
        assert!(v1 > 0.0);
        assert!(var_logit(&ui, 0.5, &[0.7]).is_err());
        assert!(var_logit(&ui, 10.0, &[0.7, 1.0]).is_err());
    }

    #[test]
    fn csv_dump_round_trips() {
        let ui = info(&[vec![0.3, 0.1], vec![0.1, 0.2]]);
        let mut buf = Vec::new();
        ui.write_csv(&["x".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("parameter,intercept,x\n"));
        let back = UnitInformation::read_csv(&text, 1, String::new()).unwrap();
        assert_eq!(back, ui);
    }
}
