//! Restricted isometry constants of a [`KrOperator`].
//!
//! For a support `S`, let `G_S` be the Gram matrix of the scaled columns on
//! `S`. The deviation of `S` is `max(λ_max(G_S) − 1, 1 − λ_min(G_S))` and
//! `δ_s` is the maximum deviation over all supports of size `s`. We compute
//! it exactly by enumeration when affordable; otherwise random sampling and
//! greedy swap search give lower bounds.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kr_operator::KrOperator;
use crate::rng::substream;

/// Default cap on the number of supports `delta_exact` will enumerate.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 2_000_000;
/// Default support size above which only eigenvalues are computed.
pub const DEFAULT_EIG_CROSSOVER: usize = 64;

// Above this many columns the full N×N Gram is not cached.
const FULL_GRAM_LIMIT: usize = 4096;

/// Sorted set of distinct column indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupportSet(Vec<usize>);

impl SupportSet {
    /// Build from arbitrary-order indices; rejects duplicates, empty input and
    /// indices `≥ num_cols`.
    pub fn new(mut indices: Vec<usize>, num_cols: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("support must contain at least one index"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("support contains duplicate indices"));
        }
        if let Some(&last) = indices.last() {
            if last >= num_cols {
                return Err(invalid(format!(
                    "support index {last} out of range for N = {num_cols}"
                )));
            }
        }
        Ok(SupportSet(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
    Greedy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::MonteCarlo => "monte_carlo",
            Method::Greedy => "greedy",
        }
    }
}

/// A value of `δ_s` (or a lower bound on it) with the support achieving it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub s: usize,
    pub delta: f64,
    pub method: Method,
    pub witness: SupportSet,
    /// Supports inspected (exact, Monte-Carlo) or restarts (greedy).
    pub trials: u64,
    pub seed: u64,
}

/// Knobs for the RIP estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RipOptions {
    pub enumeration_budget: u64,
    pub eig_crossover: usize,
}

impl Default for RipOptions {
    fn default() -> Self {
        RipOptions {
            enumeration_budget: DEFAULT_ENUMERATION_BUDGET,
            eig_crossover: DEFAULT_EIG_CROSSOVER,
        }
    }
}

/// Constants of the heavy-tailed-column RIP bound. The universal constant
/// `C` is unknown, so all of these are fit parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryBoundParams {
    #[serde(rename = "C")]
    pub c: f64,
    /// `ξ = ψ·K + K′`.
    pub xi: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "Kprime")]
    pub k_prime: f64,
    pub theta_prime: f64,
    pub c_xi_delta: f64,
}

impl Default for TheoryBoundParams {
    fn default() -> Self {
        TheoryBoundParams {
            c: 1.0,
            xi: 1.0,
            k: 1.0,
            k_prime: 1.0,
            theta_prime: 0.0,
            c_xi_delta: 1.0,
        }
    }
}

impl TheoryBoundParams {
    /// Assemble from the column ψ₁ norm `psi`, setting `ξ = ψ·K + K′`.
    pub fn from_components(
        c: f64,
        psi: f64,
        k: f64,
        k_prime: f64,
        theta_prime: f64,
        c_xi_delta: f64,
    ) -> Result<Self> {
        let p = TheoryBoundParams {
            c,
            xi: psi * k + k_prime,
            k,
            k_prime,
            theta_prime,
            c_xi_delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(invalid("bound constant C must be positive"));
        }
        if !(self.xi > 0.0) || !self.xi.is_finite() {
            return Err(invalid("xi must be positive"));
        }
        if !(self.k >= 1.0) || !(self.k_prime >= 1.0) {
            return Err(invalid("K and K' must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.theta_prime) {
            return Err(invalid("theta' must lie in [0, 1)"));
        }
        if !(self.c_xi_delta > 0.0 && self.c_xi_delta <= 1.0) {
            return Err(invalid("c_xi_delta must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Gram matrix of the scaled columns on `support`.
pub fn gram_submatrix(op: &KrOperator, support: &SupportSet) -> Result<DMatrix<f64>> {
    if support.indices().iter().any(|&i| i >= op.num_cols()) {
        return Err(invalid("support index out of range"));
    }
    let cols: Vec<_> = support.indices().iter().map(|&i| op.scaled_column(i)).collect();
    let s = cols.len();
    let mut g = DMatrix::zeros(s, s);
    for p in 0..s {
        for q in p..s {
            let v = cols[p].dot(&cols[q]);
            g[(p, q)] = v;
            g[(q, p)] = v;
        }
    }
    Ok(g)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn extreme_eigs(g: &DMatrix<f64>) -> Result<(f64, f64)> {
    extreme_eigs_with(g, DEFAULT_EIG_CROSSOVER)
}

pub fn extreme_eigs_with(g: &DMatrix<f64>, crossover: usize) -> Result<(f64, f64)> {
    if !g.is_square() || g.nrows() == 0 {
        return Err(invalid("eigenvalue input must be a non-empty square matrix"));
    }
    let asym = (g - g.transpose()).amax();
    if asym > 1e-10 {
        return Err(invalid(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    if g.nrows() == 1 {
        return Ok((g[(0, 0)], g[(0, 0)]));
    }
    let eigs = if g.nrows() <= crossover {
        SymmetricEigen::new(g.clone()).eigenvalues
    } else {
        g.clone().symmetric_eigenvalues()
    };
    let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

fn deviation_of(lo: f64, hi: f64) -> f64 {
    (hi - 1.0).max(1.0 - lo)
}

/// Evaluates support deviations, caching the full Gram when it is small.
struct GramOracle {
    cols: DMatrix<f64>,
    full: Option<DMatrix<f64>>,
    crossover: usize,
}

impl GramOracle {
    fn new(op: &KrOperator, crossover: usize) -> Self {
        let cols = op.to_matrix();
        let full = (cols.ncols() <= FULL_GRAM_LIMIT).then(|| cols.tr_mul(&cols));
        GramOracle {
            cols,
            full,
            crossover,
        }
    }

    fn num_cols(&self) -> usize {
        self.cols.ncols()
    }

    fn sub(&self, idx: &[usize]) -> DMatrix<f64> {
        let s = idx.len();
        match &self.full {
            Some(full) => DMatrix::from_fn(s, s, |p, q| full[(idx[p], idx[q])]),
            None => {
                let mut g = DMatrix::zeros(s, s);
                for p in 0..s {
                    for q in p..s {
                        let v = self.cols.column(idx[p]).dot(&self.cols.column(idx[q]));
                        g[(p, q)] = v;
                        g[(q, p)] = v;
                    }
                }
                g
            }
        }
    }

    fn deviation(&self, idx: &[usize]) -> f64 {
        let g = self.sub(idx);
        let (lo, hi) = extreme_eigs_with(&g, self.crossover).expect("Gram is symmetric");
        deviation_of(lo, hi)
    }
}

/// Deviation `max(λ_max − 1, 1 − λ_min)` of the Gram on `support`.
pub fn support_deviation(op: &KrOperator, support: &SupportSet) -> Result<f64> {
    let (lo, hi) = extreme_eigs(&gram_submatrix(op, support)?)?;
    Ok(deviation_of(lo, hi))
}

fn check_sparsity(op: &KrOperator, s: usize) -> Result<()> {
    if s == 0 || s > op.num_cols() {
        return Err(invalid(format!(
            "sparsity s = {s} must satisfy 1 ≤ s ≤ N = {}",
            op.num_cols()
        )));
    }
    Ok(())
}

/// Advance `idx` to the next combination (same length) of values below `hi`,
/// in lexicographic order.
fn next_combination(idx: &mut [usize], hi: usize) -> bool {
    let k = idx.len();
    for pos in (0..k).rev() {
        if idx[pos] < hi - (k - pos) {
            idx[pos] += 1;
            for q in pos + 1..k {
                idx[q] = idx[q - 1] + 1;
            }
            return true;
        }
    }
    false
}

// Keep the larger deviation; on ties keep the earlier (lexicographically
// smaller) support so reductions are order independent.
fn better(a: (f64, Vec<usize>), b: (f64, Vec<usize>)) -> (f64, Vec<usize>) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

fn enumerate_all(oracle: &GramOracle, s: usize) -> (f64, Vec<usize>) {
    let n = oracle.num_cols();
    (0..=n - s)
        .into_par_iter()
        .map(|first| {
            let mut idx: Vec<usize> = (first..first + s).collect();
            let mut best = (oracle.deviation(&idx), idx.clone());
            if s > 1 {
                while next_combination(&mut idx[1..], n) {
                    let d = oracle.deviation(&idx);
                    if d > best.0 {
                        best = (d, idx.clone());
                    }
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(better)
        .expect("at least one support")
}

/// `δ_s` by enumerating every support of size `s`.
pub fn delta_exact(op: &KrOperator, s: usize) -> Result<RipEstimate> {
    delta_exact_with(op, s, &RipOptions::default())
}

pub fn delta_exact_with(op: &KrOperator, s: usize, opts: &RipOptions) -> Result<RipEstimate> {
    check_sparsity(op, s)?;
    let count = binomial(op.num_cols(), s).filter(|&c| c <= opts.enumeration_budget);
    let Some(count) = count else {
        return Err(Error::EnumerationBudget {
            num_cols: op.num_cols(),
            s,
            budget: opts.enumeration_budget,
        });
    };
    let oracle = GramOracle::new(op, opts.eig_crossover);
    let (delta, witness) = enumerate_all(&oracle, s);
    Ok(RipEstimate {
        s,
        delta,
        method: Method::Exact,
        witness: SupportSet(witness),
        trials: count,
        seed: op.source().seed(),
    })
}

/// The support inspected by trial `t` of a seeded sampler.
pub fn random_support(num_cols: usize, s: usize, seed: u64, t: u64) -> SupportSet {
    let mut rng = substream(seed, t);
    let mut idx = rand::seq::index::sample(&mut rng, num_cols, s).into_vec();
    idx.sort_unstable();
    SupportSet(idx)
}

/// Lower bound on `δ_s` from `trials` uniformly random supports. When
/// `trials ≥ C(N, s)` every support is inspected instead.
pub fn delta_monte_carlo(op: &KrOperator, s: usize, trials: u64, seed: u64) -> Result<RipEstimate> {
    delta_monte_carlo_with(op, s, trials, seed, &RipOptions::default())
}

pub fn delta_monte_carlo_with(
    op: &KrOperator,
    s: usize,
    trials: u64,
    seed: u64,
    opts: &RipOptions,
) -> Result<RipEstimate> {
    check_sparsity(op, s)?;
    if trials == 0 {
        return Err(invalid("monte-carlo estimate needs at least one trial"));
    }
    let oracle = GramOracle::new(op, opts.eig_crossover);
    let total = binomial(op.num_cols(), s);
    let (delta, witness, inspected) = match total {
        Some(total) if trials >= total => {
            let (d, w) = enumerate_all(&oracle, s);
            (d, w, total)
        }
        _ => {
            let (d, w) = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let sup = random_support(op.num_cols(), s, seed, t).0;
                    (oracle.deviation(&sup), sup)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .reduce(better)
                .expect("trials ≥ 1");
            (d, w, trials)
        }
    };
    Ok(RipEstimate {
        s,
        delta,
        method: Method::MonteCarlo,
        witness: SupportSet(witness),
        trials: inspected,
        seed,
    })
}

fn greedy_climb(oracle: &GramOracle, start: Vec<usize>) -> (f64, Vec<usize>) {
    let n = oracle.num_cols();
    let mut cur = start;
    let mut cur_dev = oracle.deviation(&cur);
    loop {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for pos in 0..cur.len() {
            for cand in 0..n {
                if cur.binary_search(&cand).is_ok() {
                    continue;
                }
                let mut trial = cur.clone();
                trial[pos] = cand;
                trial.sort_unstable();
                let d = oracle.deviation(&trial);
                best = Some(match best {
                    None => (d, trial),
                    Some(b) => better(b, (d, trial)),
                });
            }
        }
        match best {
            Some((d, sup)) if d > cur_dev => {
                cur_dev = d;
                cur = sup;
            }
            _ => return (cur_dev, cur),
        }
    }
}

/// Lower bound on `δ_s` by best-improvement swap search.
///
/// Restart `r` starts from [`random_support`]`(N, s, seed, r)`, the same
/// support Monte-Carlo trial `r` inspects, so the result dominates
/// `delta_monte_carlo(op, s, restarts, seed)` whenever that call samples.
pub fn delta_greedy(op: &KrOperator, s: usize, restarts: u64, seed: u64) -> Result<RipEstimate> {
    delta_greedy_with(op, s, restarts, seed, &RipOptions::default())
}

pub fn delta_greedy_with(
    op: &KrOperator,
    s: usize,
    restarts: u64,
    seed: u64,
    opts: &RipOptions,
) -> Result<RipEstimate> {
    check_sparsity(op, s)?;
    if restarts == 0 {
        return Err(invalid("greedy search needs at least one restart"));
    }
    let oracle = GramOracle::new(op, opts.eig_crossover);
    let (delta, witness) = (0..restarts)
        .into_par_iter()
        .map(|r| greedy_climb(&oracle, random_support(op.num_cols(), s, seed, r).0))
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(better)
        .expect("restarts ≥ 1");
    Ok(RipEstimate {
        s,
        delta,
        method: Method::Greedy,
        witness: SupportSet(witness),
        trials: restarts,
        seed,
    })
}

/// `max_i |‖scaled column i‖² − 1|`.
pub fn column_norm_deviation(op: &KrOperator) -> f64 {
    (0..op.num_cols())
        .map(|i| (op.scaled_column_norm_sq(i) - 1.0).abs())
        .fold(0.0, f64::max)
}

/// `C ξ² √(s/m) · log(eN / (s √(s/m))) + θ′`.
pub fn theory_bound(s: usize, m: usize, num_cols: usize, params: &TheoryBoundParams) -> Result<f64> {
    if s == 0 || s > num_cols.min(m) {
        return Err(invalid(format!(
            "theory bound needs 1 ≤ s ≤ min(N, m); got s = {s}, m = {m}, N = {num_cols}"
        )));
    }
    let ratio = (s as f64 / m as f64).sqrt();
    let log_term = (std::f64::consts::E * num_cols as f64 / (s as f64 * ratio)).ln();
    Ok(params.c * params.xi * params.xi * ratio * log_term + params.theta_prime)
}

/// `max(1, ⌊c n² / log²(eN / (c n²))⌋)`.
pub fn sparsity_budget(n: usize, num_cols: usize, c: f64) -> Result<usize> {
    let m = n * n;
    if num_cols < m {
        return Err(invalid(format!(
            "sparsity budget assumes n² ≤ N (got n² = {m}, N = {num_cols})"
        )));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(invalid(format!("c must lie in (0, 1], got {c}")));
    }
    let cm = c * m as f64;
    let log_term = (std::f64::consts::E * num_cols as f64 / cm).ln();
    let budget = (cm / (log_term * log_term)).floor();
    Ok((budget as usize).max(1))
}
