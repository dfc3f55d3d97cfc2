use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use averaged_lorentz::config::{ExperimentKind, Format, ScenarioConfig};
use averaged_lorentz::experiments::{run, RunContext};
use averaged_lorentz::validation::{run_validate, write_validation};
use averaged_lorentz::Error;

#[derive(Parser)]
#[command(version, about = "Lorentz and averaged autoparallel flows of charged bunches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one Lorentz trajectory.
    Simulate(Common),
    /// Compare Lorentz and averaged flows from the bunch centroid.
    Compare(Common),
    /// Sweep α and E and fit gap exponents.
    Scale(Common),
    /// Cold-fluid residual against cell velocity diameter.
    Residual(Common),
    /// Fluid integral curves and distribution gaps.
    Fluid(Common),
    /// Run the invariant suite.
    Validate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides `output.formats`.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl Common {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.ensemble.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.directory = o.clone();
        }
        if let Some(f) = self.format {
            cfg.output.formats = match f {
                FormatArg::Csv => vec![Format::Csv],
                FormatArg::Json => vec![Format::Json],
                FormatArg::Both => vec![Format::Csv, Format::Json],
            };
        }
    }
}

fn execute(cli: Cli) -> averaged_lorentz::Result<bool> {
    let (kind, common) = match &cli.command {
        Command::Simulate(c) => (ExperimentKind::Simulate, c),
        Command::Compare(c) => (ExperimentKind::Compare, c),
        Command::Scale(c) => (ExperimentKind::Scale, c),
        Command::Residual(c) => (ExperimentKind::Residual, c),
        Command::Fluid(c) => (ExperimentKind::Fluid, c),
        Command::Validate(c) => (ExperimentKind::Validate, c),
    };
    if kind == ExperimentKind::Validate && common.config.is_none() {
        let report = run_validate(common.seed.unwrap_or(0), false);
        let ctx = RunContext {
            out: common.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            workers: common.workers,
            csv: !matches!(common.format, Some(FormatArg::Json)),
            json: !matches!(common.format, Some(FormatArg::Csv)),
        };
        write_validation(&report, &ctx)?;
        for c in &report.checks {
            println!("{} {} {:e} (tolerance {:e}) {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance, c.detail);
        }
        return Ok(report.passed);
    }
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ScenarioConfig::load(path)?;
    cfg.experiment.kind = kind;
    common.apply(&mut cfg);
    cfg.validate()?;
    let mut ctx = RunContext::from_config(&cfg);
    ctx.workers = common.workers;
    let manifest = run(&cfg, &ctx)?;
    for f in &manifest.files {
        println!("{}", ctx.out.join(f).display());
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
