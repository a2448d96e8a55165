//! Configuration-driven experiments.
//!
//! ```
//! use krrip::bench::{run, ExperimentConfig};
//!
//! let cfg = ExperimentConfig::from_toml_str(r#"
//! experiment = "kappa"
//! families = ["rademacher"]
//! n_list = [4]
//! [kappa]
//! samples = 1000
//! "#).unwrap();
//! let report = run(&cfg, 1).unwrap();
//! let row = &report.primary().rows[0];
//! assert_eq!(row[2].as_f64(), Some(4.0 / 3.0));
//! ```

pub mod config;
pub mod experiments;
pub mod report;

use std::time::Instant;

pub use config::{ExperimentConfig, ExperimentKind, ModeSelection};
pub use experiments::Outcome;
pub use report::{Cell, ExperimentReport, Table};

use crate::error::{Error, Result};

fn assemble(cfg: &ExperimentConfig, outcome: Outcome, start: Instant) -> ExperimentReport {
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    ExperimentReport {
        config: cfg.clone(),
        config_hash: cfg.content_hash(),
        library_version: env!("CARGO_PKG_VERSION").to_owned(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        jobs: rayon::current_num_threads(),
        tables: outcome.tables,
        warnings: outcome.warnings,
        downgraded: outcome.downgraded,
        extra: outcome.extra,
    }
}

fn run_checked(
    cfg: &ExperimentConfig,
    expected: ExperimentKind,
    body: fn(&ExperimentConfig) -> Result<Outcome>,
) -> Result<ExperimentReport> {
    if cfg.experiment != expected {
        return Err(Error::Config(format!(
            "config describes a {:?} experiment, not {expected:?}",
            cfg.experiment
        )));
    }
    cfg.validate()?;
    let start = Instant::now();
    let outcome = body(cfg)?;
    Ok(assemble(cfg, outcome, start))
}

/// Empirical `δ_s` against `s` with the theoretical overlay.
pub fn run_rip_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_checked(cfg, ExperimentKind::RipSweep, experiments::rip_sweep)
}

/// Recovery success rates over `(n, s)` for each mode.
pub fn run_phase_transition(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_checked(cfg, ExperimentKind::PhaseTransition, experiments::phase_transition)
}

/// Column-norm concentration frequencies.
pub fn run_concentration(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_checked(cfg, ExperimentKind::Concentration, experiments::concentration)
}

/// Moment and tail curves of the centered marginals.
pub fn run_tails(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_checked(cfg, ExperimentKind::Tails, experiments::tails)
}

/// Analytic against Monte-Carlo `κ(n)`.
pub fn run_kappa_table(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_checked(cfg, ExperimentKind::KappaTable, experiments::kappa_table)
}

/// Validate `cfg` and run it on a pool of `jobs` threads (`0` means one per
/// available core).
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a pool of {jobs} threads: {e}")))?;
    pool.install(|| match cfg.experiment {
        ExperimentKind::RipSweep => run_rip_sweep(cfg),
        ExperimentKind::PhaseTransition => run_phase_transition(cfg),
        ExperimentKind::Concentration => run_concentration(cfg),
        ExperimentKind::Tails => run_tails(cfg),
        ExperimentKind::KappaTable => run_kappa_table(cfg),
    })
}
