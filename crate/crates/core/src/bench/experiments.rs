//! The five canned experiments.
//!
//! Every runner is a pure function of its config: tasks run on the current
//! rayon pool, results are collected in task order and all reductions are
//! sequential, so the emitted tables do not depend on the thread count.

use rayon::prelude::*;
use serde_json::json;

use crate::ensembles::{fill_column, sample_matrix, DistributionSpec, Family};
use crate::error::Result;
use crate::kr_operator::{kappa, KrOperator, Mode, Representation};
use crate::recovery::{fista_lasso, iht, success, synth_problem, FistaParams, IhtParams};
use crate::rip::{
    binomial, delta_exact_with, delta_greedy_with, delta_monte_carlo_with, sparsity_budget,
    theory_bound, RipEstimate, RipOptions, TheoryBoundParams,
};
use crate::rng::{derive_seed, substream};
use crate::tails::{
    concentration_trial, norm_concentration_experiment, psi_alpha_of, sample_marginals,
    sample_raw_quadratic, side_condition, tail_report, Direction, DirectionKind,
};

use super::config::{ExperimentConfig, RipMethodChoice, SolverKind};
use super::report::{Cell, Table};

/// Tables and diagnostics produced by one runner.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
    pub downgraded: bool,
    pub extra: serde_json::Value,
}

fn spec_of(cfg: &ExperimentConfig) -> DistributionSpec {
    DistributionSpec::new(cfg.family)
}

fn cols(cfg: &ExperimentConfig) -> usize {
    cfg.num_cols.expect("validated")
}

// ---------------------------------------------------------------- kappa

pub const KAPPA_COLUMNS: [&str; 7] =
    ["family", "n", "kappa_analytic", "kappa_mc", "rel_gap", "samples", "seed"];

/// `n² / mean ‖aaᵀ − I‖²_F` over `samples` draws; draw `t` uses substream `t`.
pub fn kappa_monte_carlo(spec: &DistributionSpec, n: usize, samples: usize, seed: u64) -> f64 {
    let norms: Vec<f64> = (0..samples)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |a, t| {
                fill_column(spec.family, &mut substream(seed, t as u64), a);
                let r = a.iter().map(|v| v * v).sum::<f64>();
                // ‖aaᵀ − I‖²_F = ‖a‖⁴ − 2‖a‖² + n
                r * r - 2.0 * r + n as f64
            },
        )
        .collect();
    let mean = norms.iter().sum::<f64>() / samples as f64;
    (n * n) as f64 / mean
}

pub fn kappa_row(family: Family, n: usize, samples: usize, row_seed: u64) -> Result<Vec<Cell>> {
    let spec = DistributionSpec::new(family);
    let analytic = kappa(&spec, n)?;
    let mc = kappa_monte_carlo(&spec, n, samples, row_seed);
    Ok(vec![
        family.name().into(),
        n.into(),
        analytic.into(),
        mc.into(),
        ((mc - analytic).abs() / analytic).into(),
        samples.into(),
        row_seed.into(),
    ])
}

pub fn kappa_row_seed(seed: u64, family: Family, n: usize) -> u64 {
    derive_seed(seed, &[family.tag(), n as u64])
}

pub fn kappa_table(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut table = Table::new("kappa", &KAPPA_COLUMNS);
    for family in cfg.families_or_all() {
        for n in cfg.n_values() {
            let seed = kappa_row_seed(cfg.seed, family, n);
            table.push(kappa_row(family, n, cfg.kappa.samples, seed)?);
        }
    }
    Ok(Outcome {
        tables: vec![table],
        warnings: Vec::new(),
        downgraded: false,
        extra: serde_json::Value::Null,
    })
}

// ---------------------------------------------------------------- rip

pub const RIP_COLUMNS: [&str; 12] = [
    "n",
    "N",
    "family",
    "mode",
    "s",
    "method",
    "delta",
    "theory_bound",
    "sparsity_budget",
    "witness",
    "note",
    "seed",
];

const PSI_TAG: u64 = 0x5053_4931;

/// Bound-overlay constants for dimension `n`, estimating `ψ₁` of the
/// centered marginals when the config leaves it out.
pub fn bound_params(cfg: &ExperimentConfig, n: usize) -> Result<TheoryBoundParams> {
    let b = cfg.bounds.clone().unwrap_or_default();
    let psi = match b.psi {
        Some(psi) => psi,
        None => {
            let seed = derive_seed(cfg.seed, &[PSI_TAG, n as u64]);
            let dir = Direction::random_unit(n, derive_seed(seed, &[0]))?;
            let set = sample_marginals(&spec_of(cfg), n, &dir, b.psi_samples, derive_seed(seed, &[1]))?;
            psi_alpha_of(&set.samples, 1, 8)?
        }
    };
    TheoryBoundParams::from_components(b.c, psi, b.k, b.k_prime, b.theta_prime, b.c_xi_delta)
}

pub fn rip_source_seed(seed: u64, n: usize) -> u64 {
    derive_seed(seed, &[n as u64])
}

/// One row of the RIP sweep plus whether exact enumeration was downgraded.
pub fn rip_row(
    cfg: &ExperimentConfig,
    n: usize,
    mode: Mode,
    s: usize,
    params: &TheoryBoundParams,
    row_seed: u64,
) -> Result<(Vec<Cell>, bool)> {
    let num_cols = cols(cfg);
    let source = sample_matrix(&spec_of(cfg), n, num_cols, row_seed)?;
    let op = KrOperator::build(source, mode, Representation::MatrixFree)?;
    let opts = RipOptions {
        enumeration_budget: cfg.rip.enumeration_budget,
        eig_crossover: cfg.rip.eig_crossover,
    };
    let search_seed = derive_seed(row_seed, &[s as u64]);
    let greedy = || delta_greedy_with(&op, s, cfg.rip.restarts, search_seed, &opts);
    let (est, note): (RipEstimate, String) = match cfg.rip.method {
        RipMethodChoice::Auto | RipMethodChoice::Exact => {
            if cfg.exact_feasible(s) {
                (delta_exact_with(&op, s, &opts)?, String::new())
            } else {
                let count = binomial(num_cols, s).map_or("overflow".to_owned(), |c| c.to_string());
                (
                    greedy()?,
                    format!(
                        "downgraded: C(N,s) = {count} exceeds enumeration budget {}; greedy lower bound",
                        cfg.rip.enumeration_budget
                    ),
                )
            }
        }
        RipMethodChoice::Greedy => (greedy()?, String::new()),
        RipMethodChoice::MonteCarlo => (
            delta_monte_carlo_with(&op, s, cfg.rip.mc_trials, search_seed, &opts)?,
            String::new(),
        ),
    };
    let m = n * n;
    let bound = if s <= m.min(num_cols) {
        Some(theory_bound(s, m, num_cols, params)?)
    } else {
        None
    };
    let budget = sparsity_budget(n, num_cols, params.c_xi_delta)?;
    let witness = est
        .witness
        .indices()
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(";");
    let downgraded = !note.is_empty();
    Ok((
        vec![
            n.into(),
            num_cols.into(),
            cfg.family.name().into(),
            mode.name().into(),
            s.into(),
            est.method.name().into(),
            est.delta.into(),
            bound.into(),
            budget.into(),
            witness.into(),
            note.into(),
            row_seed.into(),
        ],
        downgraded,
    ))
}

pub fn rip_sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut table = Table::new("rip", &RIP_COLUMNS);
    let mut warnings = Vec::new();
    let mut downgraded = false;
    let mut psi = Vec::new();
    for n in cfg.n_values() {
        let params = bound_params(cfg, n)?;
        psi.push(json!({"n": n, "xi": params.xi}));
        let row_seed = rip_source_seed(cfg.seed, n);
        for mode in cfg.mode.modes() {
            for &s in &cfg.s_list {
                let (row, down) = rip_row(cfg, n, mode, s, &params, row_seed)?;
                if down {
                    downgraded = true;
                    warnings.push(format!(
                        "n = {n}, mode = {mode}, s = {s}: exact enumeration infeasible, downgraded to greedy"
                    ));
                }
                table.push(row);
            }
        }
    }
    Ok(Outcome {
        tables: vec![table],
        warnings,
        downgraded,
        extra: json!({ "bound_xi": psi }),
    })
}

// ---------------------------------------------------------------- phase

pub const PHASE_COLUMNS: [&str; 10] =
    ["n", "N", "family", "mode", "solver", "s", "trials", "successes", "success_rate", "seed"];
pub const PHASE_TRIAL_COLUMNS: [&str; 12] = [
    "n",
    "N",
    "family",
    "mode",
    "solver",
    "noise_sigma",
    "s",
    "trial",
    "success",
    "iterations",
    "residual_norm",
    "seed",
];
pub const SEPARATION_COLUMNS: [&str; 5] = ["n", "s_star", "centered_rate", "uncentered_rate", "gap"];

const PROBLEM_TAG: u64 = 0x5052_4f42;

/// Outcome of one recovery trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub success: bool,
    pub iterations: usize,
    pub residual_norm: f64,
}

pub fn phase_point_seed(seed: u64, n: usize, s: usize) -> u64 {
    derive_seed(seed, &[n as u64, s as u64])
}

pub fn phase_trial_seed(point_seed: u64, trial: usize) -> u64 {
    derive_seed(point_seed, &[trial as u64])
}

/// One recovery trial. Both modes of a trial share the matrix `A` and the
/// ground truth, so the comparison between them is paired.
pub fn phase_trial(cfg: &ExperimentConfig, n: usize, mode: Mode, s: usize, trial_seed: u64) -> Result<TrialOutcome> {
    let sv = &cfg.solver;
    let source = sample_matrix(&spec_of(cfg), n, cols(cfg), trial_seed)?;
    let fits = n * n * cols(cfg) <= sv.memory_budget;
    let rep = if fits { Representation::Explicit } else { Representation::MatrixFree };
    let op = KrOperator::build_with_budget(source, mode, rep, sv.memory_budget)?;
    let problem = synth_problem(&op, s, sv.amplitude, sv.noise_sigma, derive_seed(trial_seed, &[PROBLEM_TAG]))?;
    let result = match sv.kind {
        SolverKind::Iht => iht(
            &problem,
            s,
            &IhtParams {
                max_iters: sv.max_iters,
                tol: sv.tol,
                step: sv.step,
            },
        )?,
        SolverKind::Fista => fista_lasso(
            &problem,
            &FistaParams {
                lambda: sv.lambda,
                max_iters: sv.max_iters,
                tol: sv.tol,
                continuation: sv.continuation,
                debias: true,
            },
        )?,
    };
    Ok(TrialOutcome {
        success: success(&result, &problem, sv.rel_tol),
        iterations: result.iterations,
        residual_norm: result.residual_norm,
    })
}

/// Success count of one `(n, mode, s)` point, regenerated from its seed.
pub fn phase_point(cfg: &ExperimentConfig, n: usize, mode: Mode, s: usize, point_seed: u64) -> Result<usize> {
    let outcomes = (0..cfg.trials)
        .into_par_iter()
        .map(|t| phase_trial(cfg, n, mode, s, phase_trial_seed(point_seed, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(outcomes.iter().filter(|o| o.success).count())
}

/// Sparsity with the largest centered-minus-uncentered success gap, ties to
/// the smaller `s`. `rates` holds `(s, centered, uncentered)`.
pub fn separation_sparsity(rates: &[(usize, f64, f64)]) -> Option<(usize, f64, f64)> {
    rates
        .iter()
        .copied()
        .fold(None, |best: Option<(usize, f64, f64)>, cur| match best {
            Some(b) if b.1 - b.2 >= cur.1 - cur.2 => Some(b),
            _ => Some(cur),
        })
}

/// Solver in use and how its free parameters were chosen.
pub fn solver_metadata(cfg: &ExperimentConfig) -> serde_json::Value {
    let sv = &cfg.solver;
    match sv.kind {
        SolverKind::Iht => json!({
            "kind": "iht",
            "step": sv.step.map_or("0.9 / ||op||^2 (power iteration, 100 steps)".to_owned(), |v| v.to_string()),
            "max_iters": sv.max_iters,
        }),
        SolverKind::Fista => json!({
            "kind": "fista",
            "lambda": sv.lambda.map_or("0.1 * max|adjoint(y)|".to_owned(), |v| v.to_string()),
            "continuation": sv.continuation,
            "debias": true,
            "max_iters": sv.max_iters,
        }),
    }
}

pub fn phase_transition(cfg: &ExperimentConfig) -> Result<Outcome> {
    let modes = cfg.mode.modes();
    let mut tasks = Vec::new();
    for n in cfg.n_values() {
        for &s in &cfg.s_list {
            let point = phase_point_seed(cfg.seed, n, s);
            for &mode in &modes {
                for t in 0..cfg.trials {
                    tasks.push((n, s, mode, t, phase_trial_seed(point, t)));
                }
            }
        }
    }
    let outcomes = tasks
        .par_iter()
        .map(|&(n, s, mode, _, seed)| phase_trial(cfg, n, mode, s, seed))
        .collect::<Result<Vec<_>>>()?;

    let solver = cfg.solver.kind.name();
    let family = cfg.family.name();
    let num_cols = cols(cfg);
    let mut trials = Table::new("trials", &PHASE_TRIAL_COLUMNS);
    for (&(n, s, mode, t, seed), o) in tasks.iter().zip(&outcomes) {
        trials.push(vec![
            n.into(),
            num_cols.into(),
            family.into(),
            mode.name().into(),
            solver.into(),
            cfg.solver.noise_sigma.into(),
            s.into(),
            t.into(),
            o.success.into(),
            o.iterations.into(),
            o.residual_norm.into(),
            seed.into(),
        ]);
    }

    let mut summary = Table::new("phase", &PHASE_COLUMNS);
    let mut separation = Table::new("separation", &SEPARATION_COLUMNS);
    let mut s_star = Vec::new();
    let mut chunks = outcomes.chunks(cfg.trials);
    for n in cfg.n_values() {
        let mut rates = Vec::new();
        for &s in &cfg.s_list {
            let point = phase_point_seed(cfg.seed, n, s);
            let mut by_mode = [None, None];
            for &mode in &modes {
                let hits = chunks.next().expect("one chunk per point").iter().filter(|o| o.success).count();
                let rate = hits as f64 / cfg.trials as f64;
                by_mode[mode.tag() as usize] = Some(rate);
                summary.push(vec![
                    n.into(),
                    num_cols.into(),
                    family.into(),
                    mode.name().into(),
                    solver.into(),
                    s.into(),
                    cfg.trials.into(),
                    hits.into(),
                    rate.into(),
                    point.into(),
                ]);
            }
            if let [Some(c), Some(u)] = by_mode {
                rates.push((s, c, u));
            }
        }
        if let Some((s, c, u)) = separation_sparsity(&rates) {
            separation.push(vec![n.into(), s.into(), c.into(), u.into(), (c - u).into()]);
            s_star.push(json!({"n": n, "s_star": s, "centered_rate": c, "uncentered_rate": u}));
        }
    }
    let mut warnings = Vec::new();
    if cfg.trials < 20 {
        warnings.push(format!("only {} trials per point; at least 20 are recommended", cfg.trials));
    }
    let mut tables = vec![summary, trials];
    if !separation.rows.is_empty() {
        tables.push(separation);
    }
    Ok(Outcome {
        tables,
        warnings,
        downgraded: false,
        extra: json!({ "separation": s_star, "solver": solver_metadata(cfg) }),
    })
}

// ---------------------------------------------------------------- conc

pub const CONC_COLUMNS: [&str; 7] = ["family", "n", "t", "frequency", "trials", "side_condition_ok", "seed"];
pub const DECOMPOSITION_COLUMNS: [&str; 5] = ["n", "columns", "max_identity_error", "min_a", "min_c"];

/// Frequency row for one `(n, t)` regenerated from the row seed.
pub fn concentration_row(cfg: &ExperimentConfig, n: usize, t: f64, row_seed: u64) -> Result<Vec<Cell>> {
    let spec = spec_of(cfg);
    let devs = (0..cfg.trials)
        .into_par_iter()
        .map(|k| concentration_trial(&spec, n, cols(cfg), derive_seed(row_seed, &[k as u64])).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let hits = devs.iter().filter(|&&d| d >= t).count();
    Ok(vec![
        cfg.family.name().into(),
        n.into(),
        t.into(),
        (hits as f64 / cfg.trials as f64).into(),
        cfg.trials.into(),
        side_condition(&spec, n, t)?.into(),
        row_seed.into(),
    ])
}

pub fn concentration(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = spec_of(cfg);
    let result = norm_concentration_experiment(
        &spec,
        &cfg.n_values(),
        cols(cfg),
        cfg.trials,
        &cfg.concentration.t_grid,
        cfg.seed,
    )?;
    let mut table = Table::new("conc", &CONC_COLUMNS);
    let mut warnings = Vec::new();
    for r in &result.rows {
        if !r.side_condition_ok {
            warnings.push(format!("n = {}, t = {}: side condition n ≥ 1 + (E a⁴ − 1)(3/t − 1) fails", r.n, r.t));
        }
        table.push(vec![
            r.family.name().into(),
            r.n.into(),
            r.t.into(),
            r.frequency.into(),
            r.trials.into(),
            r.side_condition_ok.into(),
            r.seed.into(),
        ]);
    }
    let mut checks = Table::new("decomposition", &DECOMPOSITION_COLUMNS);
    for c in &result.checks {
        checks.push(vec![
            c.n.into(),
            c.columns.into(),
            c.max_identity_error.into(),
            c.min_a.into(),
            c.min_c.into(),
        ]);
    }
    Ok(Outcome {
        tables: vec![table, checks],
        warnings,
        downgraded: false,
        extra: json!({ "max_deviations": result.max_deviations }),
    })
}

// ---------------------------------------------------------------- tails

pub const TAILS_COLUMNS: [&str; 12] = [
    "n",
    "direction",
    "raw_direction",
    "samples",
    "alpha",
    "p_max",
    "psi_alpha",
    "raw_second_moment",
    "psi_alpha_raw_dir",
    "raw_second_moment_raw_dir",
    "raw_psi_alpha_raw_dir",
    "seed",
];
pub const CURVE_COLUMNS: [&str; 6] = ["n", "curve", "x", "value", "exceedances", "unreliable"];

fn kind_name(kind: DirectionKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn second_moment(samples: &[f64]) -> f64 {
    samples.iter().map(|q| q * q).sum::<f64>() / samples.len() as f64
}

/// Summary row and curve rows for one `n`, regenerated from the row seed.
pub fn tails_rows(cfg: &ExperimentConfig, n: usize, row_seed: u64) -> Result<(Vec<Cell>, Vec<Vec<Cell>>, serde_json::Value)> {
    let spec = spec_of(cfg);
    let t = &cfg.tails;
    let dir = Direction::of_kind(t.direction, n, derive_seed(row_seed, &[0]))?;
    let raw_dir = Direction::of_kind(t.raw_direction, n, derive_seed(row_seed, &[3]))?;
    let draw_seed = derive_seed(row_seed, &[1]);
    let raw_seed = derive_seed(row_seed, &[2]);

    let set = sample_marginals(&spec, n, &dir, t.samples, draw_seed)?;
    let report = tail_report(&set, t.alpha, t.p_max, &t.grid())?;
    let raw = sample_raw_quadratic(&spec, n, &dir, t.samples, draw_seed)?;
    let set_rd = sample_marginals(&spec, n, &raw_dir, t.samples, raw_seed)?;
    let raw_rd = sample_raw_quadratic(&spec, n, &raw_dir, t.samples, raw_seed)?;

    let summary = vec![
        n.into(),
        kind_name(t.direction).into(),
        kind_name(t.raw_direction).into(),
        t.samples.into(),
        (t.alpha as usize).into(),
        (t.p_max as usize).into(),
        report.psi_alpha_estimate.into(),
        second_moment(&raw).into(),
        psi_alpha_of(&set_rd.samples, t.alpha, t.p_max)?.into(),
        second_moment(&raw_rd).into(),
        psi_alpha_of(&raw_rd, t.alpha, t.p_max)?.into(),
        row_seed.into(),
    ];
    let mut curves = Vec::new();
    for &(p, v) in &report.moment_curve {
        curves.push(vec![
            n.into(),
            "moment".into(),
            (p as f64).into(),
            v.into(),
            Cell::from(""),
            false.into(),
        ]);
    }
    for pt in &report.tail_curve {
        curves.push(vec![
            n.into(),
            "log_survival".into(),
            pt.t.into(),
            pt.log_survival.into(),
            pt.exceedances.into(),
            pt.unreliable.into(),
        ]);
    }
    let extra = json!({"n": n, "report": report});
    Ok((summary, curves, extra))
}

pub fn tails_row_seed(seed: u64, n: usize) -> u64 {
    derive_seed(seed, &[n as u64])
}

pub fn tails(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut summary = Table::new("tails", &TAILS_COLUMNS);
    let mut curves = Table::new("curves", &CURVE_COLUMNS);
    let mut extra = Vec::new();
    for n in cfg.n_values() {
        let (row, curve_rows, e) = tails_rows(cfg, n, tails_row_seed(cfg.seed, n))?;
        summary.push(row);
        for r in curve_rows {
            curves.push(r);
        }
        extra.push(e);
    }
    Ok(Outcome {
        tables: vec![summary, curves],
        warnings: Vec::new(),
        downgraded: false,
        extra: json!({ "reports": extra }),
    })
}
