//! Empirical tail behaviour of centered Khatri-Rao columns.
//!
//! A marginal of a centered column along a unit direction `y ∈ ℝ^{n²}` is
//! `Z = √κ · (aᵀ Y a − tr Y)` with `Y` the row-major reshape of `y`. These
//! are centered quadratic forms, hence sub-exponential with a ψ₁ norm that
//! should not grow with `n`. This module samples such marginals, estimates
//! ψ_α norms by the moment route `sup_p ‖Z‖_p / p^{1/α}`, tabulates
//! empirical survival functions, and runs the column-norm concentration
//! experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{fill_column, fourth_moment, sample_matrix, DistributionSpec, Family};
use crate::error::{invalid, Result};
use crate::kr_operator::{center_column, kappa};
use crate::rng::{derive_seed, substream};

/// How a marginal direction was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    /// Uniform on the unit sphere of `ℝ^{n²}`.
    RandomUnit,
    /// `vec(Iₙ)/√n`, the direction the uncentered columns lean towards.
    VecIdentity,
    /// `vec(e₁e₁ᵀ − e₂e₂ᵀ)/√2`, traceless and orthogonal to `vec(Iₙ)`.
    VecIdentityComplement,
    /// A standard basis vector of `ℝ^{n²}`.
    Basis,
    Custom,
}

/// A unit vector in `ℝ^{n²}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub kind: DirectionKind,
    pub y: Vec<f64>,
}

impl Direction {
    fn checked(kind: DirectionKind, y: Vec<f64>, n: usize) -> Result<Self> {
        if y.len() != n * n {
            return Err(invalid(format!(
                "direction must have length n² = {}, got {}",
                n * n,
                y.len()
            )));
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("direction must have unit norm, got {norm}")));
        }
        Ok(Direction { kind, y })
    }

    pub fn custom(y: Vec<f64>, n: usize) -> Result<Self> {
        Self::checked(DirectionKind::Custom, y, n)
    }

    pub fn random_unit(n: usize, seed: u64) -> Result<Self> {
        let g = sample_matrix(&DistributionSpec::spherical(), n * n, 1, seed)?;
        let scale = 1.0 / (n as f64);
        let y = g.entries().iter().map(|v| v * scale).collect();
        Self::checked(DirectionKind::RandomUnit, y, n)
    }

    pub fn vec_identity(n: usize) -> Result<Self> {
        let mut y = vec![0.0; n * n];
        let v = 1.0 / (n as f64).sqrt();
        for d in 0..n {
            y[d * n + d] = v;
        }
        Self::checked(DirectionKind::VecIdentity, y, n)
    }

    pub fn vec_identity_complement(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("identity complement direction needs n ≥ 2"));
        }
        let mut y = vec![0.0; n * n];
        let v = std::f64::consts::FRAC_1_SQRT_2;
        y[0] = v;
        y[n + 1] = -v;
        Self::checked(DirectionKind::VecIdentityComplement, y, n)
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        if index >= n * n {
            return Err(invalid("basis index out of range"));
        }
        let mut y = vec![0.0; n * n];
        y[index] = 1.0;
        Self::checked(DirectionKind::Basis, y, n)
    }

    /// Build a direction of the given kind; `seed` is used by `RandomUnit`
    /// and `Basis` ignores it and takes index 0.
    pub fn of_kind(kind: DirectionKind, n: usize, seed: u64) -> Result<Self> {
        match kind {
            DirectionKind::RandomUnit => Self::random_unit(n, seed),
            DirectionKind::VecIdentity => Self::vec_identity(n),
            DirectionKind::VecIdentityComplement => Self::vec_identity_complement(n),
            DirectionKind::Basis => Self::basis(n, 0),
            DirectionKind::Custom => Err(invalid("custom directions need explicit values")),
        }
    }

    fn trace(&self, n: usize) -> f64 {
        (0..n).map(|d| self.y[d * n + d]).sum()
    }
}

/// Draws of a centered-column marginal `⟨𝒜ᵢ, y⟩` (before the `1/n` scale).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalSampleSet {
    pub samples: Vec<f64>,
    pub spec: DistributionSpec,
    pub n: usize,
    pub direction: DirectionKind,
}

fn quadratic_form(a: &[f64], y: &[f64]) -> f64 {
    let n = a.len();
    a.iter()
        .enumerate()
        .map(|(r, &ar)| ar * y[r * n..(r + 1) * n].iter().zip(a).map(|(yv, ac)| yv * ac).sum::<f64>())
        .sum()
}

fn sample_forms(
    spec: &DistributionSpec,
    n: usize,
    direction: &Direction,
    trials: usize,
    seed: u64,
    map: impl Fn(f64) -> f64 + Sync,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let direction = Direction::checked(direction.kind, direction.y.clone(), n)?;
    Ok((0..trials)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |a, t| {
                fill_column(spec.family, &mut substream(seed, t as u64), a);
                map(quadratic_form(a, &direction.y))
            },
        )
        .collect())
}

/// `trials` independent draws of `√κ (aᵀYa − tr Y)`; draw `t` uses substream `t`.
pub fn sample_marginals(
    spec: &DistributionSpec,
    n: usize,
    direction: &Direction,
    trials: usize,
    seed: u64,
) -> Result<MarginalSampleSet> {
    let k = kappa(spec, n)?.sqrt();
    let direction = Direction::checked(direction.kind, direction.y.clone(), n)?;
    // E aᵀYa = tr Y for isotropic a.
    let tr = direction.trace(n);
    let samples = sample_forms(spec, n, &direction, trials, seed, |q| k * (q - tr))?;
    Ok(MarginalSampleSet {
        samples,
        spec: *spec,
        n,
        direction: direction.kind,
    })
}

/// Draws of the raw quadratic form `aᵀYa = ⟨vec(aaᵀ), y⟩`, neither centered
/// nor normalized.
pub fn sample_raw_quadratic(
    spec: &DistributionSpec,
    n: usize,
    direction: &Direction,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    sample_forms(spec, n, direction, trials, seed, |q| q)
}

/// `(p, (mean |Z|^p)^{1/p})` for `p = 1..=p_max`.
pub fn moment_curve(samples: &[f64], p_max: u32) -> Result<Vec<(u32, f64)>> {
    if samples.is_empty() {
        return Err(invalid("empty sample set"));
    }
    let len = samples.len() as f64;
    Ok((1..=p_max)
        .map(|p| {
            let m = samples.iter().map(|z| z.abs().powi(p as i32)).sum::<f64>() / len;
            (p, m.powf(1.0 / p as f64))
        })
        .collect())
}

/// `max_{1≤p≤p_max} (mean |Z|^p)^{1/p} / p^{1/α}`.
pub fn psi_alpha_estimate(set: &MarginalSampleSet, alpha: u32, p_max: u32) -> Result<f64> {
    psi_alpha_of(&set.samples, alpha, p_max)
}

/// [`psi_alpha_estimate`] on a bare sample slice.
pub fn psi_alpha_of(samples: &[f64], alpha: u32, p_max: u32) -> Result<f64> {
    if alpha != 1 && alpha != 2 {
        return Err(invalid(format!("alpha must be 1 or 2, got {alpha}")));
    }
    if p_max < 1 {
        return Err(invalid("p_max must be at least 1"));
    }
    Ok(moment_curve(samples, p_max)?
        .into_iter()
        .map(|(p, m)| m / (p as f64).powf(1.0 / alpha as f64))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// One point of an empirical survival curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub t: f64,
    /// `log P̂(|Z| > t)`, `-∞` when nothing exceeds `t`.
    pub log_survival: f64,
    pub exceedances: usize,
    /// Fewer than [`MIN_RELIABLE_EXCEEDANCES`] samples exceed `t`.
    pub unreliable: bool,
}

pub const MIN_RELIABLE_EXCEEDANCES: usize = 10;

/// Empirical log-survival of `|Z|` on an increasing positive grid.
pub fn tail_curve(set: &MarginalSampleSet, t_grid: &[f64]) -> Result<Vec<TailPoint>> {
    tail_curve_of(&set.samples, t_grid)
}

pub fn tail_curve_of(samples: &[f64], t_grid: &[f64]) -> Result<Vec<TailPoint>> {
    if samples.is_empty() {
        return Err(invalid("empty sample set"));
    }
    if t_grid.iter().any(|&t| !(t > 0.0)) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("t grid must be positive and strictly increasing"));
    }
    let mut mags: Vec<f64> = samples.iter().map(|z| z.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let len = mags.len();
    Ok(t_grid
        .iter()
        .map(|&t| {
            let below = mags.partition_point(|&m| m <= t);
            let exceedances = len - below;
            let log_survival = if exceedances == 0 {
                f64::NEG_INFINITY
            } else {
                (exceedances as f64 / len as f64).ln()
            };
            TailPoint {
                t,
                log_survival,
                exceedances,
                unreliable: exceedances < MIN_RELIABLE_EXCEEDANCES,
            }
        })
        .collect())
}

/// Summary of a marginal sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub psi_alpha_estimate: f64,
    pub alpha: u32,
    pub p_max: u32,
    pub samples: usize,
    pub moment_curve: Vec<(u32, f64)>,
    pub tail_curve: Vec<TailPoint>,
}

pub fn tail_report(set: &MarginalSampleSet, alpha: u32, p_max: u32, t_grid: &[f64]) -> Result<TailReport> {
    Ok(TailReport {
        psi_alpha_estimate: psi_alpha_estimate(set, alpha, p_max)?,
        alpha,
        p_max,
        samples: set.samples.len(),
        moment_curve: moment_curve(&set.samples, p_max)?,
        tail_curve: tail_curve(set, t_grid)?,
    })
}

/// Split of `‖𝒜ᵢ‖²/n² − 1` for an entry-family column.
///
/// With `S = ‖a‖²` and `m₄ = E a⁴`:
/// `a = κ(S−n)²/n²`, `b = 2κ(n−1)(S−n)/n²`, `c = (m₄−1)/(n−2+m₄)` and
/// `‖𝒜ᵢ‖²/n² − 1 = a + b − c`. Both `a` and `c` are non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormDecomposition {
    pub direct: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NormDecomposition {
    pub fn recombined(&self) -> f64 {
        self.a + self.b - self.c
    }

    pub fn identity_error(&self) -> f64 {
        (self.direct - self.recombined()).abs()
    }
}

/// Decompose the normalized squared norm of the centered column built from `a`.
pub fn decompose_column_norm(a: &[f64], spec: &DistributionSpec) -> Result<NormDecomposition> {
    let n = a.len();
    let k = kappa(spec, n)?;
    let nf = n as f64;
    let n2 = nf * nf;
    let col = center_column(a, k)?;
    let direct = col.iter().map(|v| v * v).sum::<f64>() / n2 - 1.0;
    let s = a.iter().map(|v| v * v).sum::<f64>();
    let (c, a_term, b_term) = match spec.family {
        Family::Spherical => (0.0, k * (s - nf).powi(2) / n2, 2.0 * k * (nf - 1.0) * (s - nf) / n2),
        _ => {
            let m4 = fourth_moment(spec)?;
            (
                (m4 - 1.0) / (nf - 2.0 + m4),
                k * (s - nf).powi(2) / n2,
                2.0 * k * (nf - 1.0) * (s - nf) / n2,
            )
        }
    };
    Ok(NormDecomposition {
        direct,
        a: a_term,
        b: b_term,
        c,
    })
}

/// `n ≥ 1 + (E a⁴ − 1)(3/t − 1)`; always true for the spherical family,
/// whose columns are exactly normalized.
pub fn side_condition(spec: &DistributionSpec, n: usize, t: f64) -> Result<bool> {
    if spec.family == Family::Spherical {
        return Ok(true);
    }
    let m4 = fourth_moment(spec)?;
    Ok(n as f64 >= 1.0 + (m4 - 1.0) * (3.0 / t - 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub family: Family,
    pub n: usize,
    pub t: f64,
    /// Fraction of trials with `max_i |‖𝒜ᵢ‖²/n² − 1| ≥ t`.
    pub frequency: f64,
    pub trials: usize,
    pub side_condition_ok: bool,
    /// Seed regenerating every trial of this `n`.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    pub n: usize,
    pub columns: usize,
    pub max_identity_error: f64,
    pub min_a: f64,
    pub min_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationTable {
    pub rows: Vec<ConcentrationRow>,
    pub checks: Vec<DecompositionCheck>,
    /// Per `n`, the max column deviation of every trial, in trial order.
    pub max_deviations: Vec<(usize, Vec<f64>)>,
}

/// Trial `t` of the concentration experiment for one `n`:
/// the max column deviation plus decomposition diagnostics.
pub fn concentration_trial(
    spec: &DistributionSpec,
    n: usize,
    num_cols: usize,
    seed: u64,
) -> Result<(f64, DecompositionCheck)> {
    let m = sample_matrix(spec, n, num_cols, seed)?;
    let mut max_dev = 0.0f64;
    let mut check = DecompositionCheck {
        n,
        columns: num_cols,
        max_identity_error: 0.0,
        min_a: f64::INFINITY,
        min_c: f64::INFINITY,
    };
    for i in 0..num_cols {
        let d = decompose_column_norm(m.column(i).as_slice(), spec)?;
        max_dev = max_dev.max(d.direct.abs());
        check.max_identity_error = check.max_identity_error.max(d.identity_error());
        check.min_a = check.min_a.min(d.a);
        check.min_c = check.min_c.min(d.c);
    }
    Ok((max_dev, check))
}

/// For every `n` and `t`, the fraction of `trials` random matrices whose
/// worst column satisfies `|‖𝒜ᵢ‖²/n² − 1| ≥ t`. Rows are flagged where the
/// side condition `n ≥ 1 + (E a⁴ − 1)(3/t − 1)` fails.
pub fn norm_concentration_experiment(
    spec: &DistributionSpec,
    n_list: &[usize],
    num_cols: usize,
    trials: usize,
    t_grid: &[f64],
    seed: u64,
) -> Result<ConcentrationTable> {
    if trials == 0 || num_cols == 0 {
        return Err(invalid("need at least one trial and one column"));
    }
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(invalid("t grid must be non-empty and positive"));
    }
    let mut table = ConcentrationTable {
        rows: Vec::new(),
        checks: Vec::new(),
        max_deviations: Vec::new(),
    };
    for &n in n_list {
        let row_seed = derive_seed(seed, &[n as u64]);
        let results = (0..trials)
            .into_par_iter()
            .map(|t| concentration_trial(spec, n, num_cols, derive_seed(row_seed, &[t as u64])))
            .collect::<Result<Vec<_>>>()?;
        let devs: Vec<f64> = results.iter().map(|r| r.0).collect();
        let check = results.iter().map(|r| r.1.clone()).fold(
            DecompositionCheck {
                n,
                columns: 0,
                max_identity_error: 0.0,
                min_a: f64::INFINITY,
                min_c: f64::INFINITY,
            },
            |acc, c| DecompositionCheck {
                n,
                columns: acc.columns + c.columns,
                max_identity_error: acc.max_identity_error.max(c.max_identity_error),
                min_a: acc.min_a.min(c.min_a),
                min_c: acc.min_c.min(c.min_c),
            },
        );
        for &t in t_grid {
            let hits = devs.iter().filter(|&&d| d >= t).count();
            table.rows.push(ConcentrationRow {
                family: spec.family,
                n,
                t,
                frequency: hits as f64 / trials as f64,
                trials,
                side_condition_ok: side_condition(spec, n, t)?,
                seed: row_seed,
            });
        }
        table.checks.push(check);
        table.max_deviations.push((n, devs));
    }
    Ok(table)
}
