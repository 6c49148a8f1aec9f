use std::path::{Path, PathBuf};

use pmstab_core::coremodel::ModelSpec;
use pmstab_core::instability::ThresholdRule;
use pmstab_core::population::{PopulationSpec, VariableSpec};
use pmstab_core::precision::BandTarget;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "PMSTAB_SEED";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub population: PopulationSource,
    /// Continuous columns rescaled to mean 0, sd 1 before modelling.
    #[serde(default)]
    pub standardize: Vec<String>,
    pub core_model: ModelSpec,
    #[serde(default)]
    pub sample_sizes: Vec<u64>,
    #[serde(default)]
    pub bands: Option<BandsConfig>,
    #[serde(default)]
    pub threshold: Option<ThresholdConfig>,
    #[serde(default)]
    pub group_vars: Vec<String>,
    #[serde(default = "default_mape_draws")]
    pub mape_draws: usize,
    #[serde(default)]
    pub minss: Option<MinssConfig>,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    #[serde(default)]
    pub plots: PlotConfig,
}

fn default_run_id() -> String {
    "run".into()
}

fn default_output_dir() -> PathBuf {
    "out".into()
}

fn default_mape_draws() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum PopulationSource {
    Simulate(Box<PopulationSpec>),
    Csv(CsvSource),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub variables: Vec<VariableSpec>,
}

/// Option B targets, either listed or as an evenly spaced risk grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsConfig {
    #[serde(default)]
    pub targets: Vec<BandDecl>,
    #[serde(default)]
    pub grid: Option<BandGrid>,
    /// Rows farther than this from every band are left untargeted.
    #[serde(default)]
    pub max_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandDecl {
    pub risk: f64,
    pub max_width: f64,
}

/// Bands at `step, 2·step, …, 1 − step`; `1/step` must be a whole number.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandGrid {
    pub step: f64,
    pub max_width: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ThresholdConfig {
    Uniform(f64),
    Rule(ThresholdRule),
}

impl ThresholdConfig {
    pub fn rule(&self) -> ThresholdRule {
        match self {
            ThresholdConfig::Uniform(t) => ThresholdRule::uniform(*t),
            ThresholdConfig::Rule(r) => r.clone(),
        }
    }
}

/// Minimum sample-size inputs; missing risk and R² are taken from the core
/// model on the population.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinssConfig {
    pub p_params: u32,
    #[serde(default)]
    pub overall_risk: Option<f64>,
    #[serde(default)]
    pub r2_cs: Option<f64>,
    #[serde(default)]
    pub shrinkage: Option<f64>,
    #[serde(default)]
    pub margin_risk: Option<f64>,
    #[serde(default)]
    pub optimism: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
}

fn default_reps() -> usize {
    500
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Draw smoothed envelope curves on prediction instability plots.
    #[serde(default = "yes")]
    pub curves: bool,
}

fn yes() -> bool {
    true
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { enabled: true, curves: true }
    }
}

/// A parsed config plus what the run needs from around it.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Hex SHA-256 of the config file bytes.
    pub digest: String,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

fn escape_token(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&escape_token(key)),
            Segment::Enum { variant } => out.push_str(&escape_token(variant)),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_slice(bytes);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let pointer = pointer_of(e.path());
            CliError::config(pointer, e.into_inner().to_string())
        })?;
        de.end().map_err(|e| CliError::config("/", e.to_string()))?;
        Ok(cfg)
    }

    /// Checks cross-field rules; `seed` must already include any fallback.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                "/schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.run_id.is_empty() || !self.run_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(CliError::config("/run_id", "run_id must be non-empty and use [A-Za-z0-9._-]"));
        }
        if self.sample_sizes.is_empty() && self.bands.is_none() && self.minss.is_none() {
            return Err(CliError::config(
                "/",
                "no analysis requested: add at least one of `sample_sizes`, `bands`, `minss`",
            ));
        }
        for (i, &n) in self.sample_sizes.iter().enumerate() {
            if n == 0 {
                return Err(CliError::config(format!("/sample_sizes/{i}"), "sample size must be positive"));
            }
        }
        if let Some(b) = &self.bands {
            b.targets()?;
            if let Some(d) = b.max_distance {
                if d.is_nan() || d <= 0.0 {
                    return Err(CliError::config("/bands/max_distance", "must be positive"));
                }
            }
        }
        if self.threshold.is_some() && self.sample_sizes.is_empty() {
            return Err(CliError::config("/threshold", "a threshold needs `sample_sizes` to evaluate"));
        }
        if self.mape_draws == 0 {
            return Err(CliError::config("/mape_draws", "must be positive"));
        }
        if let Some(o) = &self.oracle {
            if o.n == 0 {
                return Err(CliError::config("/oracle/n", "must be positive"));
            }
            if o.reps < 2 {
                return Err(CliError::config("/oracle/reps", "need at least 2 replicates"));
            }
        }
        if self.seed.is_none() {
            let simulates = matches!(&self.population, PopulationSource::Simulate(s) if s.seed.is_none());
            let reason = if simulates {
                Some("simulating the population")
            } else if !self.sample_sizes.is_empty() {
                Some("MAPE draws for `sample_sizes`")
            } else if self.oracle.is_some() {
                Some("the `oracle` replicates")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(CliError::config(
                    "/seed",
                    format!("a seed is required for {reason}; set `seed` or {SEED_ENV}"),
                ));
            }
        }
        Ok(())
    }
}

impl BandsConfig {
    pub fn targets(&self) -> Result<Vec<BandTarget>> {
        let decls: Vec<(String, f64, f64)> = match (&self.grid, self.targets.is_empty()) {
            (Some(_), false) | (None, true) => {
                return Err(CliError::config("/bands", "give exactly one of `targets` or `grid`"));
            }
            (None, false) => self
                .targets
                .iter()
                .enumerate()
                .map(|(i, d)| (format!("/bands/targets/{i}"), d.risk, d.max_width))
                .collect(),
            (Some(g), true) => {
                let steps = (1.0 / g.step).round();
                if !(g.step > 0.0 && g.step < 0.5) || ((1.0 / g.step) - steps).abs() > 1e-9 {
                    return Err(CliError::config("/bands/grid/step", "1/step must be a whole number ≥ 3"));
                }
                let m = steps as u32;
                (1..m).map(|k| ("/bands/grid".to_string(), f64::from(k) / f64::from(m), g.max_width)).collect()
            }
        };
        let mut out = Vec::with_capacity(decls.len());
        for (pointer, risk, width) in decls {
            let t = BandTarget::new(risk, width).map_err(|e| CliError::config(pointer.clone(), e.to_string()))?;
            if out.last().is_some_and(|prev: &BandTarget| prev.risk >= risk) {
                return Err(CliError::config(pointer, "band risks must be strictly increasing"));
            }
            out.push(t);
        }
        Ok(out)
    }
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub run_id: Option<String>,
    pub mape_draws: Option<usize>,
}

/// Reads and validates a config. An override beats the file, which beats
/// the environment.
pub fn load(path: &Path, overrides: &Overrides, env_seed: Option<&str>) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    let mut config = RunConfig::from_slice(&bytes)?;
    if let Some(s) = overrides.seed {
        config.seed = Some(s);
    }
    if let Some(id) = &overrides.run_id {
        config.run_id = id.clone();
    }
    if let Some(d) = overrides.mape_draws {
        config.mape_draws = d;
    }
    if config.seed.is_none() {
        if let Some(text) = env_seed {
            let s = text
                .trim()
                .parse::<u64>()
                .map_err(|e| CliError::config("/seed", format!("{SEED_ENV}=`{text}`: {e}")))?;
            config.seed = Some(s);
        }
    }
    config.validate()?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, digest: sha256_hex(&bytes), base_dir })
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}
