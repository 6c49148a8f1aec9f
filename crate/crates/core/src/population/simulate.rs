use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, VariableKind, VariableSpec};
use crate::error::{Error, Result};
use crate::numkit::{Cholesky, RngStream, SymMatrix};

/// Joint distribution of the binary and categorical predictors, given as a
/// table of value combinations and their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCellTable {
    variables: Vec<VariableSpec>,
    cells: Vec<(Vec<String>, f64)>,
}

impl JointCellTable {
    /// Table whose probabilities must already sum to one (within 1e-9).
    pub fn new(variables: Vec<VariableSpec>, cells: Vec<(Vec<String>, f64)>) -> Result<Self> {
        let t = Self::unchecked(variables, cells)?;
        let total: f64 = t.cells.iter().map(|c| c.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidTable(format!("probabilities sum to {total}, not 1")));
        }
        Ok(t)
    }

    /// Table rescaled so its probabilities sum to one, for published
    /// percentages that carry rounding error.
    pub fn normalized(variables: Vec<VariableSpec>, cells: Vec<(Vec<String>, f64)>) -> Result<Self> {
        let mut t = Self::unchecked(variables, cells)?;
        let total: f64 = t.cells.iter().map(|c| c.1).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidTable("probabilities sum to zero".into()));
        }
        for c in &mut t.cells {
            c.1 /= total;
        }
        Ok(t)
    }

    /// A table over no variables: every row falls in the single empty cell.
    pub fn empty() -> Self {
        JointCellTable { variables: Vec::new(), cells: vec![(Vec::new(), 1.0)] }
    }

    fn unchecked(variables: Vec<VariableSpec>, cells: Vec<(Vec<String>, f64)>) -> Result<Self> {
        for v in &variables {
            v.validate()?;
            if v.kind == VariableKind::Continuous {
                return Err(Error::InvalidTable(format!("`{}` is continuous", v.name)));
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidTable("no cells".into()));
        }
        for (i, (combo, p)) in cells.iter().enumerate() {
            if combo.len() != variables.len() {
                return Err(Error::InvalidTable(format!(
                    "cell {i} has {} values for {} variables",
                    combo.len(),
                    variables.len()
                )));
            }
            if !(*p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidTable(format!("cell {i} has probability {p}")));
            }
            for (v, value) in variables.iter().zip(combo) {
                let ok = v.level_names().is_some_and(|ls| ls.contains(value));
                if !ok {
                    return Err(Error::InvalidTable(format!(
                        "cell {i}: `{value}` is not a level of `{}`",
                        v.name
                    )));
                }
            }
            if cells[..i].iter().any(|(c, _)| c == combo) {
                return Err(Error::InvalidTable(format!("cell {combo:?} appears twice")));
            }
        }
        Ok(JointCellTable { variables, cells })
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn cells(&self) -> &[(Vec<String>, f64)] {
        &self.cells
    }

    /// Encoded column values for each cell, in the table's column order.
    fn encoded_cells(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|(combo, _)| {
                let mut out = Vec::new();
                for (v, value) in self.variables.iter().zip(combo) {
                    match &v.kind {
                        VariableKind::Binary => out.push(if value == "1" { 1.0 } else { 0.0 }),
                        VariableKind::Categorical { levels, reference } => {
                            for l in levels.iter().filter(|l| *l != reference) {
                                out.push(if l == value { 1.0 } else { 0.0 });
                            }
                        }
                        VariableKind::Continuous => unreachable!(),
                    }
                }
                out
            })
            .collect()
    }
}

fn check_correlation(corr: &SymMatrix, k: usize) -> Result<Cholesky> {
    if corr.dim() != k {
        return Err(Error::DimensionMismatch { expected: k, got: corr.dim() });
    }
    for i in 0..k {
        if (corr.get(i, i) - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("correlation diagonal entry {i} is not 1")));
        }
        for j in 0..i {
            if corr.get(i, j).abs() > 1.0 {
                return Err(Error::Domain(format!("correlation ({i}, {j}) outside [-1, 1]")));
            }
        }
    }
    corr.cholesky()
}

/// Draws `n` rows: the categorical block i.i.d. from `table`, the continuous
/// block multivariate normal (independent of the categorical block) with the
/// given marginals and correlation (identity when omitted).
pub fn simulate_joint(
    table: &JointCellTable,
    continuous: &[VariableSpec],
    corr: Option<&SymMatrix>,
    n: usize,
    rng: &RngStream,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Domain("population size must be at least 1".into()));
    }
    let marginals = continuous
        .iter()
        .map(|v| {
            v.validate()?;
            match (&v.kind, v.marginal) {
                (VariableKind::Continuous, Some(m)) => Ok(m),
                _ => Err(Error::Domain(format!("`{}` needs a normal marginal", v.name))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let k = marginals.len();
    let lower: Vec<Vec<f64>> = match corr {
        Some(c) => {
            let chol = check_correlation(c, k)?;
            (0..k).map(|i| (0..=i).map(|j| chol.lower(i, j)).collect()).collect()
        }
        None => Vec::new(),
    };

    let mut cumulative = Vec::with_capacity(table.cells.len());
    let mut acc = 0.0;
    for (_, p) in &table.cells {
        acc += p;
        cumulative.push(acc);
    }
    *cumulative.last_mut().unwrap() = f64::INFINITY;
    let encoded = table.encoded_cells();

    let mut variables = table.variables.clone();
    variables.extend(continuous.iter().cloned());
    let width = encoded[0].len() + k;

    let mut g = rng.generator();
    let mut values = Vec::with_capacity(n * width);
    let mut e = vec![0.0; k];
    for _ in 0..n {
        let u: f64 = g.random();
        let cell = cumulative.partition_point(|&c| c <= u);
        values.extend_from_slice(&encoded[cell]);
        for x in e.iter_mut() {
            *x = g.sample(StandardNormal);
        }
        for (j, m) in marginals.iter().enumerate() {
            let z = if lower.is_empty() {
                e[j]
            } else {
                lower[j].iter().zip(&e).map(|(l, x)| l * x).sum()
            };
            values.push(m.mean + m.sd * z);
        }
    }
    Dataset::new(variables, values)
}
