//! Random column ensembles feeding the Khatri-Rao construction.
//!
//! Each column `a ∈ ℝⁿ` is isotropic (`E a aᵀ = Iₙ`) and normalized so that
//! `E ‖a‖² = n`. Entry families draw iid entries with `E a = 0`, `E a² = 1`;
//! the spherical family draws the column uniformly from the sphere of radius
//! `√n`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVectorView};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::substream;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Column ensemble family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// Standard normal entries.
    #[serde(rename = "gaussian")]
    Gaussian,
    /// Entries uniform on `{-1, +1}`.
    #[serde(rename = "rademacher")]
    Rademacher,
    /// Entries uniform on `[-√3, √3]`.
    #[serde(rename = "uniform")]
    BoundedUniform,
    /// Column uniform on the sphere of radius `√n`.
    #[serde(rename = "spherical")]
    Spherical,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Gaussian,
        Family::Rademacher,
        Family::BoundedUniform,
        Family::Spherical,
    ];

    /// Name used in configs and CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Rademacher => "rademacher",
            Family::BoundedUniform => "uniform",
            Family::Spherical => "spherical",
        }
    }

    pub fn is_entry_family(self) -> bool {
        self != Family::Spherical
    }

    /// Whether every column has `‖a‖² = n` exactly.
    pub fn is_exactly_normalized(self) -> bool {
        matches!(self, Family::Rademacher | Family::Spherical)
    }

    /// Stable integer tag, used when deriving seeds.
    pub(crate) fn tag(self) -> u64 {
        match self {
            Family::Gaussian => 0,
            Family::Rademacher => 1,
            Family::BoundedUniform => 2,
            Family::Spherical => 3,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "rademacher" => Ok(Family::Rademacher),
            "uniform" => Ok(Family::BoundedUniform),
            "spherical" => Ok(Family::Spherical),
            other => Err(invalid(format!(
                "unknown family {other:?} (expected gaussian, rademacher, uniform or spherical)"
            ))),
        }
    }
}

/// A column ensemble together with its nominal sub-Gaussian constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub family: Family,
    /// Nominal ψ₂ bound `B` of a single entry (or of the column marginals
    /// for the spherical family). Informational only.
    pub psi2_bound: f64,
}

impl DistributionSpec {
    pub fn new(family: Family) -> Self {
        // ψ₂ = inf{K : E exp(Y²/K²) ≤ 2} for each entry law; the spherical
        // label reuses the Gaussian value.
        let psi2_bound = match family {
            Family::Gaussian | Family::Spherical => (8.0f64 / 3.0).sqrt(),
            Family::Rademacher => 1.0 / std::f64::consts::LN_2.sqrt(),
            Family::BoundedUniform => 1.338_369_155_431_135_7,
        };
        DistributionSpec { family, psi2_bound }
    }

    pub fn gaussian() -> Self {
        Self::new(Family::Gaussian)
    }

    pub fn rademacher() -> Self {
        Self::new(Family::Rademacher)
    }

    pub fn uniform() -> Self {
        Self::new(Family::BoundedUniform)
    }

    pub fn spherical() -> Self {
        Self::new(Family::Spherical)
    }

    pub fn with_psi2_bound(mut self, bound: f64) -> Self {
        self.psi2_bound = bound;
        self
    }
}

impl From<Family> for DistributionSpec {
    fn from(family: Family) -> Self {
        DistributionSpec::new(family)
    }
}

/// Draw one column of length `n` into `out`.
pub(crate) fn fill_column<R: Rng + ?Sized>(family: Family, rng: &mut R, out: &mut [f64]) {
    match family {
        Family::Gaussian => out
            .iter_mut()
            .for_each(|v| *v = StandardNormal.sample(rng)),
        Family::Rademacher => out
            .iter_mut()
            .for_each(|v| *v = if rng.random::<bool>() { 1.0 } else { -1.0 }),
        Family::BoundedUniform => {
            let dist = Uniform::new_inclusive(-SQRT_3, SQRT_3).expect("finite bounds");
            out.iter_mut().for_each(|v| *v = dist.sample(rng));
        }
        Family::Spherical => {
            let n = out.len() as f64;
            loop {
                out.iter_mut()
                    .for_each(|v| *v = StandardNormal.sample(rng));
                let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let k = n.sqrt() / norm;
                    out.iter_mut().for_each(|v| *v *= k);
                    break;
                }
            }
        }
    }
}

/// Draw one column of length `n` from `spec`.
pub fn sample_column<R: Rng + ?Sized>(
    spec: &DistributionSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("column dimension n must be at least 1"));
    }
    let mut out = vec![0.0; n];
    fill_column(spec.family, rng, &mut out);
    Ok(out)
}

/// An `n × N` matrix of independent columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMatrix {
    entries: DMatrix<f64>,
    spec: DistributionSpec,
    seed: u64,
}

impl ColumnMatrix {
    /// Wrap existing entries, e.g. hand-built fixtures.
    pub fn from_entries(entries: DMatrix<f64>, spec: DistributionSpec, seed: u64) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(invalid("column matrix must have n ≥ 1 and N ≥ 1"));
        }
        Ok(ColumnMatrix {
            entries,
            spec,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn num_cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn column(&self, i: usize) -> DVectorView<'_, f64> {
        self.entries.column(i)
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draw an `n × N` matrix. Column `i` comes from substream `i` of `seed`, so
/// it can be regenerated on its own with [`sample_matrix_column`].
pub fn sample_matrix(
    spec: &DistributionSpec,
    n: usize,
    num_cols: usize,
    seed: u64,
) -> Result<ColumnMatrix> {
    if n == 0 || num_cols == 0 {
        return Err(invalid("matrix dimensions n and N must be at least 1"));
    }
    let mut data = vec![0.0; n * num_cols];
    let fill = |(i, col): (usize, &mut [f64])| {
        fill_column(spec.family, &mut substream(seed, i as u64), col);
    };
    if n * num_cols >= 1 << 14 {
        data.par_chunks_mut(n).enumerate().for_each(fill);
    } else {
        data.chunks_mut(n).enumerate().for_each(fill);
    }
    Ok(ColumnMatrix {
        entries: DMatrix::from_vec(n, num_cols, data),
        spec: *spec,
        seed,
    })
}

/// Column `i` of `sample_matrix(spec, n, _, seed)`.
pub fn sample_matrix_column(
    spec: &DistributionSpec,
    n: usize,
    seed: u64,
    i: usize,
) -> Result<Vec<f64>> {
    sample_column(spec, n, &mut substream(seed, i as u64))
}

/// `E a⁴` of a single entry.
pub fn fourth_moment(spec: &DistributionSpec) -> Result<f64> {
    match spec.family {
        Family::Gaussian => Ok(3.0),
        Family::Rademacher => Ok(1.0),
        // (1/(2√3)) ∫_{-√3}^{√3} x⁴ dx = 9/5
        Family::BoundedUniform => Ok(9.0 / 5.0),
        Family::Spherical => Err(Error::Undefined(
            "fourth moment of entries undefined for spherical ensemble; use kappa directly".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
        let h = (b - a) / intervals as f64;
        let mut acc = f(a) + f(b);
        for k in 1..intervals {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn rademacher_entries_are_signs() {
        let col = sample_column(&DistributionSpec::rademacher(), 3, &mut substream(1, 0)).unwrap();
        assert!(col.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn spherical_column_has_squared_norm_n() {
        let col = sample_column(&DistributionSpec::spherical(), 5, &mut substream(2, 0)).unwrap();
        let sq: f64 = col.iter().map(|v| v * v).sum();
        assert!((sq - 5.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_column_is_deterministic() {
        let a = sample_column(&DistributionSpec::gaussian(), 2, &mut substream(9, 0)).unwrap();
        let b = sample_column(&DistributionSpec::gaussian(), 2, &mut substream(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(sample_column(&DistributionSpec::gaussian(), 0, &mut substream(0, 0)).is_err());
        assert!(sample_matrix(&DistributionSpec::gaussian(), 0, 3, 0).is_err());
        assert!(sample_matrix(&DistributionSpec::gaussian(), 3, 0, 0).is_err());
    }

    #[test]
    fn rademacher_matrix_small() {
        let m = sample_matrix(&DistributionSpec::rademacher(), 2, 4, 7).unwrap();
        assert_eq!((m.n(), m.num_cols()), (2, 4));
        assert!(m.entries().iter().all(|&v| v.abs() == 1.0));
        let again = sample_matrix(&DistributionSpec::rademacher(), 2, 4, 7).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn spherical_matrix_columns_have_norm_sqrt_n() {
        let m = sample_matrix(&DistributionSpec::spherical(), 8, 16, 3).unwrap();
        for i in 0..16 {
            let norm = m.column(i).norm();
            assert!((norm - 8f64.sqrt()).abs() / 8f64.sqrt() < 1e-12);
        }
    }

    #[test]
    fn columns_regenerate_in_isolation() {
        let spec = DistributionSpec::uniform();
        let m = sample_matrix(&spec, 6, 300, 11).unwrap();
        for i in [0, 17, 299] {
            let col = sample_matrix_column(&spec, 6, 11, i).unwrap();
            assert_eq!(m.column(i).as_slice(), col.as_slice());
        }
    }

    #[test]
    fn parallel_and_serial_generation_agree() {
        // 16 × 1024 crosses the parallel threshold; the columns must still be
        // the per-index substreams.
        let spec = DistributionSpec::gaussian();
        let m = sample_matrix(&spec, 16, 1024, 5).unwrap();
        let col = sample_matrix_column(&spec, 16, 5, 1000).unwrap();
        assert_eq!(m.column(1000).as_slice(), col.as_slice());
    }

    #[test]
    fn fourth_moments() {
        assert_eq!(fourth_moment(&DistributionSpec::rademacher()).unwrap(), 1.0);

        let density = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let gauss = simpson(|x| x.powi(4) * density(x), -14.0, 14.0, 20_000);
        assert!((fourth_moment(&DistributionSpec::gaussian()).unwrap() - gauss).abs() < 1e-10);

        let r3 = 3f64.sqrt();
        let unif = simpson(|x| x.powi(4) / (2.0 * r3), -r3, r3, 2_000);
        let analytic = fourth_moment(&DistributionSpec::uniform()).unwrap();
        assert!((analytic - unif).abs() < 1e-10);
        assert!((analytic - 1.8).abs() < 1e-15);

        let mut rng = substream(21, 0);
        let mc = (0..200_000)
            .map(|_| sample_column(&DistributionSpec::uniform(), 1, &mut rng).unwrap()[0].powi(4))
            .sum::<f64>()
            / 200_000.0;
        assert!((mc - analytic).abs() < 0.02, "mc {mc}");
    }

    #[test]
    fn spherical_fourth_moment_is_an_error() {
        let err = fourth_moment(&DistributionSpec::spherical()).unwrap_err();
        assert!(err.to_string().contains("use kappa directly"));
    }

    #[test]
    fn entry_families_are_centered_and_unit_variance() {
        let samples = 1_000_000;
        for family in [Family::Gaussian, Family::Rademacher, Family::BoundedUniform] {
            let m = sample_matrix(&family.into(), 1, samples, 100 + family.tag()).unwrap();
            let mean = m.entries().iter().sum::<f64>() / samples as f64;
            let second = m.entries().iter().map(|v| v * v).sum::<f64>() / samples as f64;
            assert!(mean.abs() <= 4.0 / (samples as f64).sqrt(), "{family}: mean {mean}");
            assert!((second - 1.0).abs() <= 0.01, "{family}: second moment {second}");
        }
    }

    #[test]
    fn spherical_columns_are_isotropic() {
        let n = 6;
        let cols = 100_000;
        let m = sample_matrix(&DistributionSpec::spherical(), n, cols, 8).unwrap();
        let cov = m.entries() * m.entries().transpose() / cols as f64;
        for r in 0..n {
            for c in 0..n {
                let target = if r == c { 1.0 } else { 0.0 };
                assert!((cov[(r, c)] - target).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("cauchy".parse::<Family>().is_err());
    }

    proptest! {
        #[test]
        fn identical_inputs_identical_matrices(seed in any::<u64>(), n in 1usize..6, cols in 1usize..6, f in 0usize..4) {
            let spec = DistributionSpec::new(Family::ALL[f]);
            prop_assert_eq!(sample_matrix(&spec, n, cols, seed).unwrap(), sample_matrix(&spec, n, cols, seed).unwrap());
        }
    }
}
