//! Sparse recovery through a [`KrOperator`].
//!
//! Two solvers: iterative hard thresholding and monotone FISTA on the lasso
//! objective followed by least squares on the detected support. Both touch
//! the operator only through `apply` and `adjoint`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kr_operator::KrOperator;
use crate::rip::random_support;
use crate::rng::substream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeModel {
    /// Nonzeros are ±1.
    UnitSigns,
    /// Nonzeros are standard normal.
    GaussianAmps,
}

/// An `s`-sparse ground truth and its (possibly noisy) measurements.
#[derive(Clone, Debug)]
pub struct RecoveryProblem<'a> {
    pub op: &'a KrOperator,
    pub x_true: DVector<f64>,
    pub y: DVector<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl RecoveryProblem<'_> {
    /// Support of `x_true`, ascending.
    pub fn support(&self) -> Vec<usize> {
        nonzero_indices(&self.x_true)
    }

    pub fn sparsity(&self) -> usize {
        self.support().len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub x_hat: DVector<f64>,
    pub iterations: usize,
    /// `‖apply(x_hat) − y‖₂`.
    pub residual_norm: f64,
    pub converged: bool,
    /// Top-`s` support of `x_hat` equals the true support.
    pub support_recovered: bool,
}

fn nonzero_indices(x: &DVector<f64>) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Indices of the `s` largest magnitudes (ties to the lower index), ascending.
pub fn top_s_support(x: &[f64], s: usize) -> Vec<usize> {
    let s = s.min(x.len());
    let mut order: Vec<usize> = (0..x.len()).collect();
    let cmp = |a: &usize, b: &usize| x[*b].abs().total_cmp(&x[*a].abs()).then(a.cmp(b));
    if s < order.len() && s > 0 {
        order.select_nth_unstable_by(s - 1, cmp);
    }
    order.truncate(s);
    order.sort_unstable();
    order
}

/// Keep the `s` largest-magnitude entries, zero the rest.
pub fn hard_threshold(x: &mut DVector<f64>, s: usize) {
    let keep = top_s_support(x.as_slice(), s);
    let mut k = 0;
    for (i, v) in x.iter_mut().enumerate() {
        if k < keep.len() && keep[k] == i {
            k += 1;
        } else {
            *v = 0.0;
        }
    }
}

/// Draw a uniformly supported `s`-sparse vector and measure it.
pub fn synth_problem<'a>(
    op: &'a KrOperator,
    s: usize,
    amplitudes: AmplitudeModel,
    noise_sigma: f64,
    seed: u64,
) -> Result<RecoveryProblem<'a>> {
    let num_cols = op.num_cols();
    if s == 0 || s > num_cols {
        return Err(invalid(format!("sparsity s = {s} must satisfy 1 ≤ s ≤ N = {num_cols}")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(invalid("noise sigma must be non-negative"));
    }
    let support = random_support(num_cols, s, seed, 0);
    let mut rng = substream(seed, 1);
    let mut x_true = DVector::zeros(num_cols);
    for &i in support.indices() {
        x_true[i] = match amplitudes {
            AmplitudeModel::UnitSigns => {
                if rand::Rng::random::<bool>(&mut rng) {
                    1.0
                } else {
                    -1.0
                }
            }
            AmplitudeModel::GaussianAmps => loop {
                // A zero draw would shrink the support.
                let v: f64 = StandardNormal.sample(&mut rng);
                if v != 0.0 {
                    break v;
                }
            },
        };
    }
    let mut y = op.apply(x_true.as_slice())?;
    if noise_sigma > 0.0 {
        let mut noise_rng = substream(seed, 2);
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut noise_rng);
            *v += noise_sigma * e;
        }
    }
    Ok(RecoveryProblem {
        op,
        x_true,
        y,
        noise_sigma,
        seed,
    })
}

/// Power-iteration estimate of the spectral norm of the scaled operator.
pub fn operator_norm(op: &KrOperator, iters: usize, seed: u64) -> Result<f64> {
    if iters == 0 {
        return Err(invalid("operator_norm needs at least one iteration"));
    }
    let mut rng = substream(seed, 0);
    let mut v = DVector::from_fn(op.num_cols(), |_, _| StandardNormal.sample(&mut rng));
    let mut estimate = 0.0;
    for _ in 0..iters {
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v /= norm;
        let av = op.apply(v.as_slice())?;
        estimate = av.norm();
        v = op.adjoint(av.as_slice())?;
    }
    Ok(estimate)
}

/// Iteration controls for [`iht`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IhtParams {
    pub max_iters: usize,
    pub tol: f64,
    /// Fixed step; defaults to `0.9 / ‖op‖²`.
    pub step: Option<f64>,
}

impl Default for IhtParams {
    fn default() -> Self {
        IhtParams {
            max_iters: 2000,
            tol: 1e-10,
            step: None,
        }
    }
}

const NORM_ITERS: usize = 100;

fn default_step(op: &KrOperator, seed: u64) -> Result<f64> {
    let norm = operator_norm(op, NORM_ITERS, seed)?;
    if norm == 0.0 {
        return Ok(1.0);
    }
    Ok(0.9 / (norm * norm))
}

fn residual(op: &KrOperator, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(op.apply(x.as_slice())? - y)
}

fn finish(problem: &RecoveryProblem<'_>, x_hat: DVector<f64>, iterations: usize, converged: bool) -> Result<RecoveryResult> {
    let residual_norm = residual(problem.op, &x_hat, &problem.y)?.norm();
    let truth = problem.support();
    let support_recovered = top_s_support(x_hat.as_slice(), truth.len()) == truth;
    Ok(RecoveryResult {
        x_hat,
        iterations,
        residual_norm,
        converged,
        support_recovered,
    })
}

/// Iterative hard thresholding, `x ← H_s(x + μ·adjoint(y − apply(x)))`.
pub fn iht(problem: &RecoveryProblem<'_>, s: usize, params: &IhtParams) -> Result<RecoveryResult> {
    if s == 0 {
        return Err(invalid("iht needs s ≥ 1"));
    }
    let op = problem.op;
    let step = match params.step {
        Some(step) if step > 0.0 => step,
        Some(step) => return Err(invalid(format!("step must be positive, got {step}"))),
        None => default_step(op, problem.seed)?,
    };
    let blowup = 1e6 * problem.y.norm();
    let mut x = DVector::zeros(op.num_cols());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iters {
        iterations += 1;
        let r = &problem.y - op.apply(x.as_slice())?;
        let mut next = &x + op.adjoint(r.as_slice())? * step;
        hard_threshold(&mut next, s);
        let change = (&next - &x).norm();
        let size = next.norm();
        x = next;
        if size > blowup && size > 0.0 {
            break;
        }
        if change <= params.tol * size {
            converged = true;
            break;
        }
    }
    finish(problem, x, iterations, converged)
}

/// Controls for [`fista_lasso`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FistaParams {
    /// Penalty; defaults to `0.1 · ‖adjoint(y)‖_∞`.
    pub lambda: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    /// Solve at `8λ, 4λ, 2λ` first, warm starting each stage.
    pub continuation: bool,
    /// Least squares on the detected support after the lasso solve.
    pub debias: bool,
}

impl Default for FistaParams {
    fn default() -> Self {
        FistaParams {
            lambda: None,
            max_iters: 5000,
            tol: 1e-10,
            continuation: false,
            debias: true,
        }
    }
}

/// `½‖apply(x) − y‖² + λ‖x‖₁`.
pub fn lasso_objective(op: &KrOperator, x: &DVector<f64>, y: &DVector<f64>, lambda: f64) -> Result<f64> {
    let r = residual(op, x, y)?;
    Ok(0.5 * r.norm_squared() + lambda * x.lp_norm(1))
}

fn soft_threshold(v: &mut DVector<f64>, t: f64) {
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - t).max(0.0);
    }
}

struct LassoRun {
    x: DVector<f64>,
    iterations: usize,
    converged: bool,
}

// Monotone FISTA: the accepted iterate never increases the objective, and
// momentum restarts whenever the proximal step fails to decrease it.
fn mfista(
    op: &KrOperator,
    y: &DVector<f64>,
    lambda: f64,
    lipschitz: f64,
    start: DVector<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<LassoRun> {
    let step = 1.0 / lipschitz;
    let mut x = start;
    let mut f_x = lasso_objective(op, &x, y, lambda)?;
    let mut z = x.clone();
    let mut t = 1.0f64;
    for it in 1..=max_iters {
        let grad = op.adjoint(residual(op, &z, y)?.as_slice())?;
        let mut cand = &z - grad * step;
        soft_threshold(&mut cand, lambda * step);
        let f_cand = lasso_objective(op, &cand, y, lambda)?;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let x_prev = x.clone();
        if f_cand <= f_x {
            x = cand.clone();
            f_x = f_cand;
            z = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
            t = t_next;
        } else {
            z = x.clone();
            t = 1.0;
        }
        let change = (&x - &x_prev).norm();
        if f_cand <= f_x && change <= tol * x.norm().max(f64::MIN_POSITIVE) {
            return Ok(LassoRun {
                x,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(LassoRun {
        x,
        iterations: max_iters,
        converged: false,
    })
}

fn least_squares_on_support(
    op: &KrOperator,
    y: &DVector<f64>,
    support: &[usize],
) -> Option<DVector<f64>> {
    if support.is_empty() || support.len() > op.rows() {
        return None;
    }
    let cols: Vec<DVector<f64>> = support.iter().map(|&i| op.scaled_column(i)).collect();
    let a = DMatrix::from_columns(&cols);
    let coef = a.svd(true, true).solve(y, 1e-12).ok()?;
    let mut x = DVector::zeros(op.num_cols());
    for (k, &i) in support.iter().enumerate() {
        x[i] = coef[k];
    }
    Some(x)
}

/// Lasso via monotone FISTA, then least squares on the detected support.
///
/// The debiased vector replaces the lasso solution only if it does not raise
/// the lasso objective above its value at `x = 0`.
pub fn fista_lasso(problem: &RecoveryProblem<'_>, params: &FistaParams) -> Result<RecoveryResult> {
    let op = problem.op;
    let y = &problem.y;
    let aty_inf = op.adjoint(y.as_slice())?.amax();
    let lambda = match params.lambda {
        Some(l) if l > 0.0 => l,
        Some(l) => return Err(invalid(format!("lambda must be positive, got {l}"))),
        None => 0.1 * aty_inf,
    };
    if lambda == 0.0 || aty_inf <= lambda {
        // Zero is optimal: the soft threshold kills every gradient step from 0.
        return finish(problem, DVector::zeros(op.num_cols()), 0, true);
    }
    let norm = operator_norm(op, NORM_ITERS, problem.seed)?;
    // Small margin over the power-iteration estimate, which is a lower bound.
    let lipschitz = 1.01 * norm * norm;
    let stages: Vec<f64> = if params.continuation {
        vec![8.0 * lambda, 4.0 * lambda, 2.0 * lambda, lambda]
    } else {
        vec![lambda]
    };
    let mut x = DVector::zeros(op.num_cols());
    let mut iterations = 0;
    let mut converged = false;
    for &lam in &stages {
        let run = mfista(op, y, lam, lipschitz, x, params.max_iters, params.tol)?;
        x = run.x;
        iterations += run.iterations;
        converged = run.converged;
    }
    if params.debias {
        let detected = nonzero_indices(&x);
        if let Some(xd) = least_squares_on_support(op, y, &detected) {
            let f_zero = 0.5 * y.norm_squared();
            if lasso_objective(op, &xd, y, lambda)? <= f_zero {
                x = xd;
            }
        }
    }
    finish(problem, x, iterations, converged)
}

/// Exact support recovery and `‖x_hat − x_true‖ ≤ rel_tol · ‖x_true‖`.
pub fn success(result: &RecoveryResult, problem: &RecoveryProblem<'_>, rel_tol: f64) -> bool {
    let truth = problem.support();
    let support_ok = top_s_support(result.x_hat.as_slice(), truth.len()) == truth;
    let err = (&result.x_hat - &problem.x_true).norm();
    support_ok && err <= rel_tol * problem.x_true.norm()
}
