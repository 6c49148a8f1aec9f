//! Workflow stages. Each stage reads what it needs from the output directory
//! and writes its own artifacts there, so running stages one at a time gives
//! the same files as a one-shot run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use pmstab_core::coremodel::{cox_snell_r2, mean_risk, CalibrationTarget, CoreModel};
use pmstab_core::fisherinfo::{unit_information, UnitInformation};
use pmstab_core::instability::{
    group_summary, instability_records, overall_summary, read_instability_csv, summary_text,
    write_instability_csv, write_summary_csv, InstabilityRecord, SummaryTable,
};
use pmstab_core::minss::{pmsampsize, MinSampleResult, MinSampleSpec};
use pmstab_core::numkit::RngStream;
use pmstab_core::oracle::{closed_form_se, compare_to_closed_form, empirical_stability};
use pmstab_core::population::{load_csv, read_csv, standardize, write_csv, Dataset, Standardization, VariableSpec};
use pmstab_core::precision::{read_precision_csv, write_precision_csv, PrecisionBasis, PrecisionRecord, Wald};
use pmstab_core::report::{classification_instability_plot, plot_file_name, prediction_instability_plot, PlotData};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, LoadedConfig, PopulationSource, RunConfig};
use crate::error::{CliError, Context, Result};

pub const MANIFEST: &str = "run.json";
const POPULATION_CSV: &str = "population.csv";
const POPULATION_JSON: &str = "population.json";
const MODEL_JSON: &str = "model.json";
const INFORMATION_CSV: &str = "information.csv";
const INFORMATION_JSON: &str = "information.json";
const PRECISION_SUMMARY_CSV: &str = "precision_summary.csv";
const OPTION_B_JSON: &str = "option_b.json";
const MINSS_JSON: &str = "minss.json";
const ORACLE_CSV: &str = "oracle_ratio.csv";
const ORACLE_JSON: &str = "oracle.json";

pub fn precision_csv(n: u64) -> String {
    format!("precision_n{n}.csv")
}

pub fn instability_csv(n: u64) -> String {
    format!("instability_n{n}.csv")
}

pub fn summary_csv(n: u64) -> String {
    format!("summary_n{n}.csv")
}

pub fn summary_txt(n: u64) -> String {
    format!("summary_n{n}.txt")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Calibrate,
    Precision,
    Instability,
    Report,
    Minss,
    Oracle,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Calibrate => "calibrate",
            Stage::Precision => "precision",
            Stage::Instability => "instability",
            Stage::Report => "report",
            Stage::Minss => "minss",
            Stage::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PopulationMeta {
    n: usize,
    variables: Vec<VariableSpec>,
    standardization: BTreeMap<String, Standardization>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelArtifact {
    alpha: f64,
    delta: f64,
    betas: serde_json::Map<String, serde_json::Value>,
    digest: String,
    achieved_risk: f64,
    achieved_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<CalibrationTarget>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InformationMeta {
    n_source: usize,
    model_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    /// File name to hex SHA-256 for every artifact except the manifest.
    pub outputs: BTreeMap<String, String>,
}

/// A loaded config bound to the directory its artifacts live in.
pub struct Workspace {
    cfg: LoadedConfig,
    out: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

impl Workspace {
    /// `output_dir` replaces the configured directory when given.
    pub fn new(cfg: LoadedConfig, output_dir: Option<PathBuf>) -> Result<Self> {
        let out = output_dir.unwrap_or_else(|| cfg.output_dir());
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        Ok(Workspace { cfg, out })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(io_err(&p))
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> pmstab_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).context(|| format!("writing {name}"))?;
        self.write(name, &buf)
    }

    /// Reads an artifact produced by `stage`.
    fn read(&self, name: &str, stage: Stage) -> Result<Vec<u8>> {
        let p = self.path(name);
        match std::fs::read(&p) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(CliError::StageMissing { path: p, stage: stage.name() })
            }
            Err(source) => Err(CliError::Io { path: p, source }),
        }
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str, stage: Stage) -> Result<T> {
        let bytes = self.read(name, stage)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Io {
            path: self.path(name),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }

    fn seed(&self, what: &str) -> Result<u64> {
        self.config()
            .seed
            .ok_or_else(|| CliError::config("/seed", format!("a seed is required for {what}")))
    }

    pub fn run_stage(&self, stage: Stage, log: &mut dyn Write) -> Result<()> {
        let mut text = String::new();
        match stage {
            Stage::Simulate => self.simulate(&mut text)?,
            Stage::Calibrate => self.calibrate(&mut text)?,
            Stage::Precision => self.precision(&mut text)?,
            Stage::Instability => self.instability(&mut text)?,
            Stage::Report => self.report(&mut text)?,
            Stage::Minss => self.minss(&mut text)?,
            Stage::Oracle => self.oracle(&mut text)?,
        }
        log.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
        self.write_manifest()
    }

    /// Stages implied by the config, in workflow order.
    pub fn planned_stages(&self) -> Vec<Stage> {
        let c = self.config();
        let mut s = vec![Stage::Simulate, Stage::Calibrate];
        if !c.sample_sizes.is_empty() || c.bands.is_some() || c.oracle.is_some() {
            s.push(Stage::Precision);
        }
        if !c.sample_sizes.is_empty() {
            s.push(Stage::Instability);
            if c.plots.enabled {
                s.push(Stage::Report);
            }
        }
        if c.minss.is_some() {
            s.push(Stage::Minss);
        }
        if c.oracle.is_some() {
            s.push(Stage::Oracle);
        }
        s
    }

    pub fn run_pipeline(&self, log: &mut dyn Write) -> Result<()> {
        for stage in self.planned_stages() {
            self.run_stage(stage, log)?;
        }
        Ok(())
    }

    fn simulate(&self, log: &mut String) -> Result<()> {
        let c = self.config();
        let ds = match &c.population {
            PopulationSource::Simulate(spec) => spec.simulate(c.seed).context(|| "simulating population".into())?,
            PopulationSource::Csv(src) => {
                let path = self.cfg.resolve(&src.path);
                load_csv(&path, &src.variables).context(|| format!("reading {}", path.display()))?
            }
        };
        let ds = if c.standardize.is_empty() {
            ds
        } else {
            standardize(&ds, &c.standardize).context(|| "standardizing".into())?
        };
        write_csv(&ds, self.path(POPULATION_CSV)).context(|| format!("writing {POPULATION_CSV}"))?;
        let meta = PopulationMeta {
            n: ds.n(),
            variables: ds.variables().to_vec(),
            standardization: ds.standardization().clone(),
        };
        self.write(POPULATION_JSON, &to_json(&meta))?;
        let _ = writeln!(log, "simulate: {} rows, {} columns", ds.n(), ds.n_columns());
        Ok(())
    }

    fn population(&self) -> Result<Dataset> {
        let meta: PopulationMeta = self.read_json(POPULATION_JSON, Stage::Simulate)?;
        let bytes = self.read(POPULATION_CSV, Stage::Simulate)?;
        let ds = read_csv(bytes.as_slice(), &meta.variables)
            .and_then(|ds| ds.with_standardization(meta.standardization))
            .context(|| format!("reading {POPULATION_CSV}"))?;
        if ds.n() != meta.n {
            return Err(CliError::Core {
                context: format!("reading {POPULATION_CSV}"),
                source: pmstab_core::Error::DimensionMismatch { expected: meta.n, got: ds.n() },
            });
        }
        Ok(ds)
    }

    fn calibrate(&self, log: &mut String) -> Result<()> {
        let ds = self.population()?;
        let spec = &self.config().core_model;
        let cal = spec.resolve(&ds).context(|| "resolving core model".into())?;
        let m = &cal.model;
        let art = ModelArtifact {
            alpha: m.alpha,
            delta: m.delta,
            betas: m.predictor_names.iter().cloned().zip(m.betas.iter().map(|&b| b.into())).collect(),
            digest: m.digest(),
            achieved_risk: cal.achieved_risk,
            achieved_c: cal.achieved_c,
            target: spec.target,
        };
        self.write(MODEL_JSON, &to_json(&art))?;
        let _ = writeln!(
            log,
            "calibrate: alpha = {:.4}, delta = {:.4}, mean risk = {:.4}, C = {:.4}",
            m.alpha, m.delta, cal.achieved_risk, cal.achieved_c
        );
        Ok(())
    }

    fn model(&self) -> Result<CoreModel> {
        let art: ModelArtifact = self.read_json(MODEL_JSON, Stage::Calibrate)?;
        let names: Vec<String> = art.betas.keys().cloned().collect();
        let betas: Vec<f64> = art.betas.values().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect();
        let m = CoreModel::new(art.alpha, art.delta, names, betas).context(|| format!("reading {MODEL_JSON}"))?;
        if m.digest() != art.digest {
            return Err(CliError::Core {
                context: format!("reading {MODEL_JSON}"),
                source: pmstab_core::Error::Domain(format!("digest {} does not match coefficients", art.digest)),
            });
        }
        Ok(m)
    }

    fn information(&self, m: &CoreModel) -> Result<UnitInformation> {
        let meta: InformationMeta = self.read_json(INFORMATION_JSON, Stage::Precision)?;
        if meta.model_digest != m.digest() {
            return Err(CliError::StageMissing { path: self.path(INFORMATION_CSV), stage: Stage::Precision.name() });
        }
        let bytes = self.read(INFORMATION_CSV, Stage::Precision)?;
        let text = String::from_utf8_lossy(&bytes);
        UnitInformation::read_csv(&text, meta.n_source, meta.model_digest).context(|| format!("reading {INFORMATION_CSV}"))
    }

    fn precision(&self, log: &mut String) -> Result<()> {
        let c = self.config();
        let ds = self.population()?;
        let m = self.model()?;
        let info = unit_information(&m, &ds).context(|| "computing unit information".into())?;
        self.write_with(INFORMATION_CSV, |b| info.write_csv(&m.predictor_names, b))?;
        let meta = InformationMeta { n_source: info.n_source, model_digest: info.model_digest.clone() };
        self.write(INFORMATION_JSON, &to_json(&meta))?;
        let _ = writeln!(log, "precision: unit information from {} rows", info.n_source);

        let basis = PrecisionBasis::new(&m, &ds, &info).context(|| "leverages".into())?;
        let wald = Wald::default();
        let mut summary = String::from("n,width_mean,width_min,width_median,width_max\n");
        for &n in &c.sample_sizes {
            let a = basis.option_a(n as f64, &wald).context(|| format!("option A at n = {n}"))?;
            self.write_with(&precision_csv(n), |b| write_precision_csv(&a.records, b))?;
            let s = a.width_summary;
            let _ = writeln!(summary, "{n},{},{},{},{}", s.mean, s.min, s.median, s.max);
            let _ = writeln!(
                log,
                "  n = {n}: interval width {:.3} ({:.3}, {:.3}, {:.3}) mean (min, median, max)",
                s.mean, s.min, s.median, s.max
            );
        }
        if !c.sample_sizes.is_empty() {
            self.write(PRECISION_SUMMARY_CSV, summary.as_bytes())?;
        }

        if let Some(bands) = &c.bands {
            let targets = bands.targets()?;
            let ob = basis
                .option_b_within(&targets, bands.max_distance)
                .context(|| "option B".into())?;
            let per_band: Vec<serde_json::Value> = ob
                .per_band
                .iter()
                .map(|b| {
                    let t = &targets[b.band];
                    serde_json::json!({
                        "risk": t.risk,
                        "max_width": t.max_width,
                        "max_var": t.max_var,
                        "rows": b.rows,
                        "required_n": b.required_n,
                    })
                })
                .collect();
            let untargeted = ob.band_of_row.iter().filter(|b| b.is_none()).count();
            let doc = serde_json::json!({
                "required_n": ob.required_n,
                "max_distance": bands.max_distance,
                "untargeted_rows": untargeted,
                "bands": per_band,
            });
            self.write(OPTION_B_JSON, &to_json(&doc))?;
            let _ = writeln!(
                log,
                "  option B: n = {} over {} bands ({} rows untargeted)",
                ob.required_n,
                ob.per_band.len(),
                untargeted
            );
        }
        Ok(())
    }

    fn precision_records(&self, n: u64) -> Result<Vec<PrecisionRecord>> {
        let bytes = self.read(&precision_csv(n), Stage::Precision)?;
        read_precision_csv(bytes.as_slice()).context(|| format!("reading {}", precision_csv(n)))
    }

    fn instability(&self, log: &mut String) -> Result<()> {
        let c = self.config();
        if c.sample_sizes.is_empty() {
            return Err(CliError::config("/sample_sizes", "instability needs at least one sample size"));
        }
        let seed = self.seed("MAPE draws")?;
        let ds = self.population()?;
        let thresholds = match &c.threshold {
            Some(t) => Some(t.rule().per_row(&ds).context(|| "thresholds".into())?),
            None => None,
        };
        for &n in &c.sample_sizes {
            let prec = self.precision_records(n)?;
            let rng = RngStream::new(seed, format!("instability/n{n}"));
            let recs = instability_records(&prec, thresholds.as_deref(), c.mape_draws, &rng)
                .context(|| format!("instability at n = {n}"))?;
            self.write_with(&instability_csv(n), |b| write_instability_csv(&recs, b))?;
            let tables = summary_tables(&prec, &recs, &ds, &c.group_vars)?;
            self.write_with(&summary_csv(n), |b| write_summary_csv(&tables, b))?;
            let text = summary_text(&tables);
            self.write(&summary_txt(n), text.as_bytes())?;
            let _ = writeln!(log, "instability: n = {n}\n{text}");
        }
        Ok(())
    }

    fn report(&self, log: &mut String) -> Result<()> {
        let c = self.config();
        let threshold = c.threshold.as_ref().map(|t| t.rule().default);
        for &n in &c.sample_sizes {
            let prec = self.precision_records(n)?;
            let title = format!("{}: n = {n}", c.run_id);
            let plot = prediction_instability_plot(&prec, c.plots.curves, &title)
                .context(|| format!("prediction instability plot at n = {n}"))?;
            self.write_plot(&plot, n, log)?;
            if let Some(t) = threshold {
                let bytes = self.read(&instability_csv(n), Stage::Instability)?;
                let recs: Vec<InstabilityRecord> = read_instability_csv(bytes.as_slice())
                    .context(|| format!("reading {}", instability_csv(n)))?;
                let plot = classification_instability_plot(&recs, t, &title)
                    .context(|| format!("classification instability plot at n = {n}"))?;
                self.write_plot(&plot, n, log)?;
            }
        }
        Ok(())
    }

    fn write_plot(&self, plot: &PlotData, n: u64, log: &mut String) -> Result<()> {
        let kind = format!("{}_n{n}", plot.kind.stem());
        let svg = plot_file_name(&self.config().run_id, &kind, "svg");
        let csv = plot_file_name(&self.config().run_id, &kind, "csv");
        self.write(&svg, plot.to_svg().as_bytes())?;
        self.write_with(&csv, |b| plot.write_csv(b))?;
        let _ = writeln!(log, "report: {svg}");
        Ok(())
    }

    fn minss(&self, log: &mut String) -> Result<()> {
        let mc = self
            .config()
            .minss
            .ok_or_else(|| CliError::config("/minss", "no `minss` section in the config"))?;
        let (risk, r2) = match (mc.overall_risk, mc.r2_cs) {
            (Some(r), Some(q)) => (r, q),
            (risk, r2) => {
                let ds = self.population()?;
                let m = self.model()?;
                let risk = match risk {
                    Some(r) => r,
                    None => mean_risk(&m, &ds).context(|| "mean risk".into())?,
                };
                let r2 = match r2 {
                    Some(q) => q,
                    None => cox_snell_r2(&m, &ds).context(|| "Cox-Snell R2".into())?,
                };
                (risk, r2)
            }
        };
        let mut spec = MinSampleSpec::new(mc.p_params, risk, r2);
        if let Some(s) = mc.shrinkage {
            spec.shrinkage = s;
        }
        if let Some(m) = mc.margin_risk {
            spec.margin_risk = m;
        }
        if let Some(o) = mc.optimism {
            spec.optimism = o;
        }
        let res = pmsampsize(&spec).context(|| "minimum sample size".into())?;
        self.write(MINSS_JSON, &to_json(&serde_json::json!({ "inputs": spec, "result": res })))?;
        log.push_str(&minss_table(&spec, &res));
        Ok(())
    }

    fn oracle(&self, log: &mut String) -> Result<()> {
        let oc = self
            .config()
            .oracle
            .ok_or_else(|| CliError::config("/oracle", "no `oracle` section in the config"))?;
        let seed = self.seed("the oracle replicates")?;
        let ds = self.population()?;
        let m = self.model()?;
        let info = self.information(&m)?;
        let emp = empirical_stability(&m, &ds, oc.n, oc.reps, seed).context(|| "oracle replicates".into())?;
        let se = closed_form_se(&info, oc.n as f64, &emp.patterns.design).context(|| "closed-form SE".into())?;
        let table = compare_to_closed_form(&emp, &se).context(|| "oracle comparison".into())?;
        self.write_with(ORACLE_CSV, |b| table.write_csv(&emp.patterns.design, &m.predictor_names, b))?;
        let (lo, hi) = table
            .rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.ratio), hi.max(r.ratio)));
        let doc = serde_json::json!({
            "n": oc.n,
            "reps": oc.reps,
            "reps_ok": emp.reps_ok,
            "reps_failed": emp.reps_failed,
            "patterns": table.rows.len(),
            "min_ratio": lo,
            "max_ratio": hi,
            "mean_abs_log_ratio": table.mean_abs_log_ratio,
            "max_abs_log_ratio": table.max_abs_log_ratio,
        });
        self.write(ORACLE_JSON, &to_json(&doc))?;
        let _ = writeln!(
            log,
            "oracle: n = {}, {} of {} fits ok, {} patterns, SD/SE ratio in [{lo:.3}, {hi:.3}]",
            oc.n,
            emp.reps_ok,
            oc.reps,
            table.rows.len()
        );
        let _ = writeln!(log, "{:>7}  {:>7}  {:>9}  {:>9}  {:>9}  {:>6}", "pattern", "count", "risk", "emp_sd", "cf_se", "ratio");
        for r in &table.rows {
            let _ = writeln!(
                log,
                "{:>7}  {:>7}  {:>9.4}  {:>9.4}  {:>9.4}  {:>6.3}",
                r.pattern, r.count, r.true_risk, r.empirical_sd, r.closed_form_se, r.ratio
            );
        }
        Ok(())
    }

    fn write_manifest(&self) -> Result<()> {
        let m = Manifest {
            schema_version: crate::config::SCHEMA_VERSION,
            run_id: self.config().run_id.clone(),
            config_sha256: self.cfg.digest.clone(),
            seed: self.config().seed,
            outputs: hash_outputs(&self.out)?,
        };
        self.write(MANIFEST, &to_json(&m))
    }
}

/// Per-level tables for each grouping variable, then one overall row.
fn summary_tables(
    prec: &[PrecisionRecord],
    recs: &[InstabilityRecord],
    ds: &Dataset,
    group_vars: &[String],
) -> Result<Vec<SummaryTable>> {
    let mut tables = Vec::new();
    for var in group_vars {
        let mut t = group_summary(prec, recs, ds, var).context(|| format!("summary by `{var}`"))?;
        t.pop();
        tables.extend(t);
    }
    tables.push(overall_summary(prec, recs).context(|| "overall summary".into())?);
    Ok(tables)
}

/// SHA-256 of every regular file in `dir` except the manifest.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST || !entry.path().is_file() {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(io_err(&entry.path()))?;
        out.insert(name, sha256_hex(&bytes));
    }
    Ok(out)
}

/// Files whose hash differs from the manifest, or that are missing or extra.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let p = dir.join(MANIFEST);
    let bytes = std::fs::read(&p).map_err(io_err(&p))?;
    let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| CliError::Io {
        path: p.clone(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    let actual = hash_outputs(dir)?;
    let mut bad: Vec<String> = m
        .outputs
        .iter()
        .filter(|(k, v)| actual.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    bad.extend(actual.keys().filter(|k| !m.outputs.contains_key(*k)).cloned());
    bad.sort();
    Ok(bad)
}

/// Plain-text criteria table with the binding criterion starred.
pub fn minss_table(spec: &MinSampleSpec, r: &MinSampleResult) -> String {
    let rows = [
        (format!("(i) overall risk within {}", spec.margin_risk), r.n1),
        (format!("(ii) shrinkage >= {}", spec.shrinkage), r.n2),
        (format!("(iii) optimism <= {} (S = {:.3})", spec.optimism, r.s_required), r.n3),
    ];
    let mut s = String::new();
    let _ = writeln!(
        s,
        "minimum sample size: P = {}, risk = {}, R2_CS = {} (max {:.4})",
        spec.p_params, spec.overall_risk, spec.r2_cs, r.max_r2
    );
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    for (i, (label, n)) in rows.iter().enumerate() {
        let mark = if i == r.binding() { "  *" } else { "" };
        let _ = writeln!(s, "  {label:<width$}  n{} = {n}{mark}", i + 1);
    }
    let _ = writeln!(s, "  final n = {}, events = {}, EPP = {:.2}", r.n_final, r.events, r.epp);
    s
}
