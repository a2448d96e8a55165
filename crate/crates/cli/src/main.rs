use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use krrip::bench::{run, ExperimentConfig, ExperimentKind, ModeSelection};
use krrip::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DOWNGRADED: u8 = 3;

#[derive(Parser)]
#[command(name = "krbench", version, about = "Centered Khatri-Rao RIP and recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic against Monte-Carlo kappa(n).
    Kappa(Common),
    /// Empirical restricted isometry constants with the theoretical overlay.
    Rip(Common),
    /// Recovery phase transition, centered against uncentered.
    Phase(Common),
    /// Column-norm concentration frequencies.
    Conc(Common),
    /// Moment and tail curves of the centered marginals.
    Tails(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or JSON when the name ends in .json).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Primary CSV path; other tables and the JSON mirror go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ModeSelection>,
    /// Exit with status 3 when an exact computation was downgraded.
    #[arg(long)]
    strict: bool,
}

fn parse_mode(s: &str) -> Result<ModeSelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Command {
    fn parts(&self) -> (ExperimentKind, &Common) {
        match self {
            Command::Kappa(c) => (ExperimentKind::KappaTable, c),
            Command::Rip(c) => (ExperimentKind::RipSweep, c),
            Command::Phase(c) => (ExperimentKind::PhaseTransition, c),
            Command::Conc(c) => (ExperimentKind::Concentration, c),
            Command::Tails(c) => (ExperimentKind::Tails, c),
        }
    }
}

fn load(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "{} describes a `{}` experiment but the `{}` subcommand was used",
            args.config.display(),
            cfg.experiment.cli_name(),
            kind.cli_name()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = cli.command.parts();

    let cfg = match load(kind, args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = match run(&cfg, args.jobs) {
        Ok(r) => r,
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", kind.cli_name())));
    match report.write_outputs(&out) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    log::info!("{} finished in {:.2}s", kind.cli_name(), report.wall_clock_seconds);
    if report.downgraded && args.strict {
        eprintln!("strict: {} computation(s) downgraded", report.warnings.len());
        return ExitCode::from(EXIT_DOWNGRADED);
    }
    ExitCode::SUCCESS
}
