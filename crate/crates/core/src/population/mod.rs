//! Predictor populations: variable metadata, the row-major dataset, joint
//! simulation, CSV ingestion and standardization.

mod csvio;
mod simulate;
mod spec;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::CompensatedSum;

pub use csvio::{load_csv, read_csv, write_csv, write_csv_to};
pub use simulate::{simulate_joint, JointCellTable};
pub use spec::PopulationSpec;

/// Measurement scale of a variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableKind {
    Binary,
    Continuous,
    /// One-hot encoded against `reference`; `levels` includes the reference.
    Categorical { levels: Vec<String>, reference: String },
}

/// Normal marginal of a continuous variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalMarginal {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginal: Option<NormalMarginal>,
}

impl VariableSpec {
    pub fn binary(name: impl Into<String>) -> Self {
        VariableSpec { name: name.into(), kind: VariableKind::Binary, marginal: None }
    }

    /// Continuous variable with an observed (unspecified) distribution.
    pub fn continuous(name: impl Into<String>) -> Self {
        VariableSpec { name: name.into(), kind: VariableKind::Continuous, marginal: None }
    }

    pub fn normal(name: impl Into<String>, mean: f64, sd: f64) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Continuous,
            marginal: Some(NormalMarginal { mean, sd }),
        }
    }

    pub fn categorical(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = impl Into<String>>,
        reference: impl Into<String>,
    ) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
                reference: reference.into(),
            },
            marginal: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Domain("variable name must not be empty".into()));
        }
        match &self.kind {
            VariableKind::Categorical { levels, reference } => {
                if levels.len() < 2 {
                    return Err(Error::Domain(format!("`{}` needs at least two levels", self.name)));
                }
                for (i, l) in levels.iter().enumerate() {
                    if levels[..i].contains(l) {
                        return Err(Error::Domain(format!("`{}` repeats level `{l}`", self.name)));
                    }
                }
                if !levels.contains(reference) {
                    return Err(Error::Domain(format!(
                        "`{}` reference level `{reference}` is not among its levels",
                        self.name
                    )));
                }
            }
            VariableKind::Continuous => {
                if let Some(m) = self.marginal {
                    if !(m.sd > 0.0) || !m.mean.is_finite() || !m.sd.is_finite() {
                        return Err(Error::Domain(format!("`{}` needs a finite sd > 0", self.name)));
                    }
                }
            }
            VariableKind::Binary => {}
        }
        Ok(())
    }

    /// Names of the dataset columns this variable expands to.
    pub fn column_names(&self) -> Vec<String> {
        match &self.kind {
            VariableKind::Binary | VariableKind::Continuous => vec![self.name.clone()],
            VariableKind::Categorical { levels, reference } => levels
                .iter()
                .filter(|l| *l != reference)
                .map(|l| format!("{}:{l}", self.name))
                .collect(),
        }
    }

    /// Level labels, in declaration order, for grouping variables.
    pub fn level_names(&self) -> Option<Vec<String>> {
        match &self.kind {
            VariableKind::Binary => Some(vec!["0".into(), "1".into()]),
            VariableKind::Categorical { levels, .. } => Some(levels.clone()),
            VariableKind::Continuous => None,
        }
    }
}

/// Mean and sd used to standardize a column; `x = mean + sd * z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

/// Complete-case predictor data, one row per individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    variables: Vec<VariableSpec>,
    columns: Vec<String>,
    column_variable: Vec<usize>,
    values: Vec<f64>,
    standardization: BTreeMap<String, Standardization>,
}

impl Dataset {
    /// Builds a dataset from row-major `values` laid out in the column order
    /// implied by `variables`.
    pub fn new(variables: Vec<VariableSpec>, values: Vec<f64>) -> Result<Self> {
        let mut columns = Vec::new();
        let mut column_variable = Vec::new();
        for (vi, v) in variables.iter().enumerate() {
            v.validate()?;
            if variables[..vi].iter().any(|o| o.name == v.name) {
                return Err(Error::Domain(format!("duplicate variable `{}`", v.name)));
            }
            for c in v.column_names() {
                columns.push(c);
                column_variable.push(vi);
            }
        }
        let p = columns.len();
        if p == 0 {
            return Err(Error::Domain("dataset has no columns".into()));
        }
        if !values.len().is_multiple_of(p) {
            return Err(Error::DimensionMismatch { expected: p, got: values.len() % p });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue { row: i / p, column: columns[i % p].clone() });
        }
        let ds = Dataset {
            n: values.len() / p,
            variables,
            columns,
            column_variable,
            values,
            standardization: BTreeMap::new(),
        };
        ds.check_one_hot()?;
        Ok(ds)
    }

    fn check_one_hot(&self) -> Result<()> {
        for (vi, v) in self.variables.iter().enumerate() {
            let cols: Vec<usize> =
                (0..self.columns.len()).filter(|&c| self.column_variable[c] == vi).collect();
            match v.kind {
                VariableKind::Continuous => {}
                VariableKind::Binary | VariableKind::Categorical { .. } => {
                    for r in 0..self.n {
                        let row = self.row(r);
                        let mut s = 0.0;
                        for &c in &cols {
                            if row[c] != 0.0 && row[c] != 1.0 {
                                return Err(Error::Parse {
                                    row: r,
                                    column: self.columns[c].clone(),
                                    message: format!("indicator value {} is not 0/1", row[c]),
                                });
                            }
                            s += row[c];
                        }
                        if s > 1.0 {
                            return Err(Error::Parse {
                                row: r,
                                column: v.name.clone(),
                                message: "one-hot group has more than one active level".into(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.columns.len();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r)[c]).collect()
    }

    pub fn standardization(&self) -> &BTreeMap<String, Standardization> {
        &self.standardization
    }

    pub fn with_standardization(mut self, meta: BTreeMap<String, Standardization>) -> Result<Self> {
        for name in meta.keys() {
            self.continuous_column(name)?;
        }
        self.standardization = meta;
        Ok(self)
    }

    /// Rows `indices` in the given order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let p = self.columns.len();
        let mut values = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset { n: indices.len(), values, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            n: 0,
            variables: self.variables.clone(),
            columns: self.columns.clone(),
            column_variable: self.column_variable.clone(),
            values: Vec::new(),
            standardization: self.standardization.clone(),
        }
    }

    /// Contiguous `n × names.len()` matrix of the named columns.
    pub fn design(&self, names: &[String]) -> Result<Design> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::UnknownVariable(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.n * idx.len());
        for r in 0..self.n {
            let row = self.row(r);
            values.extend(idx.iter().map(|&c| row[c]));
        }
        Ok(Design { n: self.n, p: idx.len(), values })
    }

    /// Level labels and per-row level index of a binary or categorical variable.
    pub fn group_levels(&self, var: &str) -> Result<(Vec<String>, Vec<usize>)> {
        let vi = self
            .variables
            .iter()
            .position(|v| v.name == var)
            .ok_or_else(|| Error::UnknownVariable(var.to_string()))?;
        let v = &self.variables[vi];
        match &v.kind {
            VariableKind::Continuous => Err(Error::Domain(format!(
                "`{var}` is continuous and cannot define groups"
            ))),
            VariableKind::Binary => {
                let c = self.column_index(&v.name).expect("binary column");
                let lv = (0..self.n).map(|r| self.row(r)[c] as usize).collect();
                Ok((v.level_names().unwrap(), lv))
            }
            VariableKind::Categorical { levels, reference } => {
                let ref_idx = levels.iter().position(|l| l == reference).unwrap();
                let cols: Vec<(usize, usize)> = levels
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| *l != reference)
                    .map(|(li, l)| (li, self.column_index(&format!("{}:{l}", v.name)).unwrap()))
                    .collect();
                let lv = (0..self.n)
                    .map(|r| {
                        let row = self.row(r);
                        cols.iter().find(|(_, c)| row[*c] == 1.0).map_or(ref_idx, |(li, _)| *li)
                    })
                    .collect();
                Ok((levels.clone(), lv))
            }
        }
    }

    fn continuous_column(&self, name: &str) -> Result<usize> {
        let v = self.variable(name).ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
        if v.kind != VariableKind::Continuous {
            return Err(Error::Domain(format!("`{name}` is not continuous")));
        }
        Ok(self.column_index(name).expect("continuous column"))
    }
}

/// Row-major matrix of model predictors (no intercept column).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub p: usize,
    pub values: Vec<f64>,
}

impl Design {
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mut s = CompensatedSum::new();
    s.extend(xs.iter().copied());
    let mean = s.value() / n;
    let mut ss = CompensatedSum::new();
    ss.extend(xs.iter().map(|x| (x - mean) * (x - mean)));
    let sd = if xs.len() > 1 { (ss.value() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

/// Replaces each named continuous column by `(x - mean) / sd` using its
/// sample mean and (n − 1) sd, recording the transform.
pub fn standardize(ds: &Dataset, vars: &[String]) -> Result<Dataset> {
    let mut out = ds.clone();
    let p = out.columns.len();
    for name in vars {
        let c = out.continuous_column(name)?;
        let col = out.column(c);
        let (mean, sd) = mean_sd(&col);
        if !(sd > 0.0) {
            return Err(Error::ZeroVariance(name.clone()));
        }
        for r in 0..out.n {
            out.values[r * p + c] = (col[r] - mean) / sd;
        }
        let composed = match out.standardization.get(name) {
            Some(prev) => Standardization { mean: prev.mean + prev.sd * mean, sd: prev.sd * sd },
            None => Standardization { mean, sd },
        };
        out.standardization.insert(name.clone(), composed);
    }
    Ok(out)
}

/// Inverse of [`standardize`] for the named columns.
pub fn unstandardize(ds: &Dataset, vars: &[String]) -> Result<Dataset> {
    let mut out = ds.clone();
    let p = out.columns.len();
    for name in vars {
        let c = out.continuous_column(name)?;
        let meta = out
            .standardization
            .remove(name)
            .ok_or_else(|| Error::Domain(format!("`{name}` is not standardized")))?;
        for r in 0..out.n {
            let z = out.values[r * p + c];
            out.values[r * p + c] = meta.mean + meta.sd * z;
        }
    }
    Ok(out)
}
