use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::{simulate_joint, Dataset, JointCellTable, NormalMarginal, VariableSpec};
use crate::error::{Error, Result};
use crate::numkit::{RngStream, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalDecl {
    pub levels: Vec<String>,
    pub reference: String,
}

/// JSON description of a synthetic population.
///
/// `cells` maps a value combination such as `"mono=1,pulse=0,history=1"` to
/// its probability. Variables named in `categorical` take the declared
/// levels; every other cell variable is binary with values `0`/`1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    #[serde(default)]
    pub cells: Map<String, serde_json::Value>,
    #[serde(default)]
    pub categorical: Map<String, serde_json::Value>,
    #[serde(default)]
    pub continuous: Map<String, serde_json::Value>,
    #[serde(default)]
    pub corr: Option<Vec<Vec<f64>>>,
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Rescale cell probabilities to sum to one.
    #[serde(default)]
    pub normalize: bool,
}

fn parse_combo(key: &str) -> Result<Vec<(String, String)>> {
    key.split(',')
        .map(|part| {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidTable(format!("cell key `{key}` is not name=value")))?;
            Ok((name.trim().to_string(), value.trim().to_string()))
        })
        .collect()
}

impl PopulationSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Domain(format!("population spec: {e}")))
    }

    pub fn table(&self) -> Result<JointCellTable> {
        if self.cells.is_empty() {
            return Ok(JointCellTable::empty());
        }
        let first = parse_combo(self.cells.keys().next().unwrap())?;
        let names: Vec<String> = first.iter().map(|(n, _)| n.clone()).collect();
        let mut variables = Vec::with_capacity(names.len());
        for name in &names {
            let v = match self.categorical.get(name) {
                Some(decl) => {
                    let decl: CategoricalDecl = serde_json::from_value(decl.clone())
                        .map_err(|e| Error::Domain(format!("categorical `{name}`: {e}")))?;
                    VariableSpec::categorical(name.clone(), decl.levels, decl.reference)
                }
                None => VariableSpec::binary(name.clone()),
            };
            variables.push(v);
        }
        if let Some(extra) = self.categorical.keys().find(|k| !names.contains(k)) {
            return Err(Error::InvalidTable(format!("categorical `{extra}` does not appear in cells")));
        }
        let mut cells = Vec::with_capacity(self.cells.len());
        for (key, p) in &self.cells {
            let combo = parse_combo(key)?;
            let mut values = Vec::with_capacity(names.len());
            for name in &names {
                let value = combo
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| Error::InvalidTable(format!("cell `{key}` lacks `{name}`")))?;
                values.push(value);
            }
            if combo.len() != names.len() {
                return Err(Error::InvalidTable(format!("cell `{key}` names extra variables")));
            }
            let p = p
                .as_f64()
                .ok_or_else(|| Error::InvalidTable(format!("cell `{key}` probability is not a number")))?;
            cells.push((values, p));
        }
        if self.normalize {
            JointCellTable::normalized(variables, cells)
        } else {
            JointCellTable::new(variables, cells)
        }
    }

    pub fn continuous_specs(&self) -> Result<Vec<VariableSpec>> {
        self.continuous
            .iter()
            .map(|(name, m)| {
                let m: NormalMarginal = serde_json::from_value(m.clone())
                    .map_err(|e| Error::Domain(format!("continuous `{name}`: {e}")))?;
                let v = VariableSpec::normal(name.clone(), m.mean, m.sd);
                v.validate()?;
                Ok(v)
            })
            .collect()
    }

    pub fn correlation(&self) -> Result<Option<SymMatrix>> {
        self.corr.as_ref().map(|rows| SymMatrix::from_rows(rows)).transpose()
    }

    /// Simulates the population; `fallback_seed` is used when the spec has none.
    pub fn simulate(&self, fallback_seed: Option<u64>) -> Result<Dataset> {
        let seed = self
            .seed
            .or(fallback_seed)
            .ok_or_else(|| Error::Domain("a seed is required to simulate a population".into()))?;
        let corr = self.correlation()?;
        simulate_joint(
            &self.table()?,
            &self.continuous_specs()?,
            corr.as_ref(),
            self.n,
            &RngStream::new(seed, "simulate"),
        )
    }
}
