use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmstab_cli::config::SEED_ENV;
use pmstab_cli::error::Context;
use pmstab_cli::pipeline::minss_table;
use pmstab_cli::{load, CliError, Overrides, Stage, Workspace};
use pmstab_core::decision::{expected_utility, risk_threshold, UtilitySpec};
use pmstab_core::minss::{pmsampsize, MinSampleSpec};

/// Sample size for precise individual-level risk estimates.
#[derive(Parser)]
#[command(name = "pmstab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Write artifacts here instead of the configured `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    mape_draws: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// All stages the config asks for, in order.
    Run(RunArgs),
    /// Build or load the population.
    Simulate(RunArgs),
    /// Resolve or calibrate the core model.
    Calibrate(RunArgs),
    /// Unit information, Option A intervals and Option B sample sizes.
    Precision(RunArgs),
    /// Misclassification probability, MAPE and subgroup summaries.
    Instability(RunArgs),
    /// Instability plots as SVG plus their data as CSV.
    Report(RunArgs),
    /// Replicate-model check of the closed-form standard errors.
    Oracle(RunArgs),
    /// Minimum sample size criteria, from flags or from a config.
    Minss(MinssArgs),
    /// Risk threshold implied by decision utilities.
    Threshold(ThresholdArgs),
}

#[derive(Args)]
struct MinssArgs {
    #[arg(long, conflicts_with = "p")]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Candidate predictor parameters.
    #[arg(long, requires_all = ["risk", "r2"])]
    p: Option<u32>,
    /// Anticipated overall outcome risk.
    #[arg(long)]
    risk: Option<f64>,
    /// Anticipated Cox-Snell R².
    #[arg(long)]
    r2: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    shrinkage: f64,
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    #[arg(long, default_value_t = 0.05)]
    optimism: f64,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Utilities: act & event, act & no event, no act & event, no act & no event.
    #[arg(long, num_args = 4, value_names = ["U1", "U2", "U3", "U4"], allow_negative_numbers = true)]
    u: Vec<f64>,
    /// Also report expected utilities at this risk.
    #[arg(long)]
    p: Option<f64>,
}

fn workspace(a: &RunArgs) -> Result<Workspace, CliError> {
    let overrides = Overrides { seed: a.seed, run_id: a.run_id.clone(), mape_draws: a.mape_draws };
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = load(&a.config, &overrides, env_seed.as_deref())?;
    Workspace::new(cfg, a.output_dir.clone())
}

fn stage(a: &RunArgs, s: Stage, out: &mut dyn Write) -> Result<(), CliError> {
    workspace(a)?.run_stage(s, out)
}

fn minss(a: &MinssArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(config) = &a.config {
        let args = RunArgs {
            config: config.clone(),
            output_dir: a.output_dir.clone(),
            seed: None,
            run_id: None,
            mape_draws: None,
        };
        return stage(&args, Stage::Minss, out);
    }
    let (Some(p), Some(risk), Some(r2)) = (a.p, a.risk, a.r2) else {
        return Err(CliError::config("/minss", "give --config, or all of --p, --risk and --r2"));
    };
    let spec = MinSampleSpec { shrinkage: a.shrinkage, margin_risk: a.margin, optimism: a.optimism, ..MinSampleSpec::new(p, risk, r2) };
    let res = pmsampsize(&spec).context(|| "minimum sample size".into())?;
    write!(out, "{}", minss_table(&spec, &res)).map_err(stdout_err)
}

fn threshold(a: &ThresholdArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let u = UtilitySpec::new(a.u[0], a.u[1], a.u[2], a.u[3]);
    let t = risk_threshold(&u).context(|| "risk threshold".into())?;
    writeln!(out, "risk threshold: {t:.3} ({t})").map_err(stdout_err)?;
    if let Some(p) = a.p {
        let act = expected_utility(p, &u, true).context(|| "expected utility".into())?;
        let wait = expected_utility(p, &u, false).context(|| "expected utility".into())?;
        writeln!(out, "expected utility at p = {p}: act {act:.3}, do not act {wait:.3}").map_err(stdout_err)?;
    }
    Ok(())
}

fn stdout_err(source: std::io::Error) -> CliError {
    CliError::Io { path: "<stdout>".into(), source }
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Run(a) => workspace(a)?.run_pipeline(out),
        Command::Simulate(a) => stage(a, Stage::Simulate, out),
        Command::Calibrate(a) => stage(a, Stage::Calibrate, out),
        Command::Precision(a) => stage(a, Stage::Precision, out),
        Command::Instability(a) => stage(a, Stage::Instability, out),
        Command::Report(a) => stage(a, Stage::Report, out),
        Command::Oracle(a) => stage(a, Stage::Oracle, out),
        Command::Minss(a) => minss(a, out),
        Command::Threshold(a) => threshold(a, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match dispatch(&cli.command, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
