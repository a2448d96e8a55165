//! The self Khatri-Rao measurement operator.
//!
//! Column `i` of the centered operator is `√κ(n) · vec(aᵢaᵢᵀ − Iₙ)`, with
//! `κ(n) = n² / E‖vec(aaᵀ − I)‖²` chosen so that `E‖column‖² = n²`. The
//! uncentered baseline uses `vec(aᵢaᵢᵀ)`. Both are scaled by `1/n`, so the
//! object whose RIP constants we study has unit-norm columns in expectation.
//!
//! Vectorization is row-major: `vec(B)[r·n + c] = B[r, c]`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensembles::{fourth_moment, ColumnMatrix, DistributionSpec, Family};
use crate::error::{invalid, Error, Result};

/// Default cap on `n² · N` for the explicit representation.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Centered,
    Uncentered,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Centered => "centered",
            Mode::Uncentered => "uncentered",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Mode::Centered => 0,
            Mode::Uncentered => 1,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Explicit,
    MatrixFree,
}

/// `κ(n)` for the given ensemble.
pub fn kappa(spec: &DistributionSpec, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Undefined(format!("kappa undefined for n = {n} (need n ≥ 2)")));
    }
    let nf = n as f64;
    match spec.family {
        Family::Spherical => Ok(nf / (nf - 1.0)),
        _ => {
            let m4 = fourth_moment(spec)?;
            let denom = nf * (nf - 2.0 + m4);
            if denom <= 0.0 {
                return Err(Error::Undefined("kappa undefined: n - 2 + E a⁴ ≤ 0".into()));
            }
            Ok(nf * nf / denom)
        }
    }
}

/// `√κ · vec(a aᵀ − I)`, row-major.
pub fn center_column(a: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if !(kappa > 0.0) {
        return Err(invalid(format!("kappa must be positive, got {kappa}")));
    }
    let n = a.len();
    let f = kappa.sqrt();
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let id = if r == c { 1.0 } else { 0.0 };
            out.push(f * (a[r] * a[c] - id));
        }
    }
    Ok(out)
}

/// `vec(a aᵀ)`, row-major.
pub fn uncentered_column(a: &[f64]) -> Vec<f64> {
    a.iter()
        .flat_map(|&ar| a.iter().map(move |&ac| ar * ac))
        .collect()
}

/// Header describing an operator, written next to exported data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorHeader {
    pub n: usize,
    #[serde(rename = "N")]
    pub num_cols: usize,
    pub mode: Mode,
    pub kappa: f64,
    pub scale: f64,
    pub seed: u64,
    pub family: Family,
}

/// The `n² × N` (scaled) self Khatri-Rao operator.
#[derive(Clone, Debug)]
pub struct KrOperator {
    source: ColumnMatrix,
    mode: Mode,
    kappa: f64,
    scale: f64,
    // Unscaled columns (factor applied, `scale` not applied).
    explicit: Option<DMatrix<f64>>,
}

impl KrOperator {
    pub fn build(source: ColumnMatrix, mode: Mode, representation: Representation) -> Result<Self> {
        Self::build_with_budget(source, mode, representation, DEFAULT_MEMORY_BUDGET)
    }

    pub fn build_with_budget(
        source: ColumnMatrix,
        mode: Mode,
        representation: Representation,
        memory_budget: usize,
    ) -> Result<Self> {
        let n = source.n();
        let kappa = match mode {
            Mode::Centered => kappa(source.spec(), n)?,
            Mode::Uncentered => 1.0,
        };
        let mut op = KrOperator {
            scale: 1.0 / n as f64,
            source,
            mode,
            kappa,
            explicit: None,
        };
        if representation == Representation::Explicit {
            let required = n
                .checked_mul(n)
                .and_then(|m| m.checked_mul(op.num_cols()))
                .unwrap_or(usize::MAX);
            if required > memory_budget {
                return Err(Error::MemoryBudget {
                    required,
                    budget: memory_budget,
                });
            }
            op.explicit = Some(op.materialize());
        }
        Ok(op)
    }

    fn materialize(&self) -> DMatrix<f64> {
        let m = self.rows();
        let mut out = DMatrix::zeros(m, self.num_cols());
        for i in 0..self.num_cols() {
            out.column_mut(i).copy_from_slice(&self.raw_column(i));
        }
        out
    }

    /// Column `i` without the `1/n` scale.
    fn raw_column(&self, i: usize) -> Vec<f64> {
        let a = self.source.column(i);
        match self.mode {
            Mode::Centered => {
                center_column(a.as_slice(), self.kappa).expect("kappa validated at build")
            }
            Mode::Uncentered => uncentered_column(a.as_slice()),
        }
    }

    pub fn source(&self) -> &ColumnMatrix {
        &self.source
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn representation(&self) -> Representation {
        if self.explicit.is_some() {
            Representation::Explicit
        } else {
            Representation::MatrixFree
        }
    }

    pub fn n(&self) -> usize {
        self.source.n()
    }

    /// Number of measurements, `n²`.
    pub fn rows(&self) -> usize {
        self.n() * self.n()
    }

    pub fn num_cols(&self) -> usize {
        self.source.num_cols()
    }

    /// Multiplier in front of `vec(·)`: `√κ` centered, `1` uncentered.
    pub fn column_factor(&self) -> f64 {
        match self.mode {
            Mode::Centered => self.kappa.sqrt(),
            Mode::Uncentered => 1.0,
        }
    }

    /// Same operator with every column multiplied by `t`.
    pub fn rescaled(&self, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(invalid(format!("rescale factor must be positive, got {t}")));
        }
        let mut op = self.clone();
        op.scale *= t;
        Ok(op)
    }

    /// Column `i` including the scale, i.e. a column of the operator under test.
    pub fn scaled_column(&self, i: usize) -> DVector<f64> {
        match &self.explicit {
            Some(m) => m.column(i) * self.scale,
            None => DVector::from_vec(self.raw_column(i)) * self.scale,
        }
    }

    /// `‖scaled column i‖²`, computed in closed form from `S = ‖aᵢ‖²`.
    pub fn scaled_column_norm_sq(&self, i: usize) -> f64 {
        let a = self.source.column(i);
        let s = a.norm_squared();
        let n = self.n() as f64;
        let raw = match self.mode {
            Mode::Centered => self.kappa * (s * s - 2.0 * s + n),
            Mode::Uncentered => s * s,
        };
        raw * self.scale * self.scale
    }

    fn check_len(expected: usize, got: usize) -> Result<()> {
        if expected != got {
            return Err(Error::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    /// `scale · Σᵢ xᵢ · columnᵢ`.
    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        Self::check_len(self.num_cols(), x.len())?;
        if let Some(m) = &self.explicit {
            return Ok(m * DVector::from_column_slice(x) * self.scale);
        }
        let n = self.n();
        let mut acc = DMatrix::<f64>::zeros(n, n);
        let mut sum_x = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            sum_x += xi;
            let a = self.source.column(i);
            acc.ger(xi, &a, &a, 1.0);
        }
        if self.mode == Mode::Centered {
            for d in 0..n {
                acc[(d, d)] -= sum_x;
            }
        }
        let f = self.column_factor() * self.scale;
        // acc is symmetric, so column-major storage equals row-major vec.
        Ok(DVector::from_iterator(n * n, acc.iter().map(|v| v * f)))
    }

    /// Adjoint map; entry `i` is `scale · factor · (aᵢᵀ Y aᵢ − [centered] tr Y)`
    /// with `Y` the row-major reshape of `y`.
    pub fn adjoint(&self, y: &[f64]) -> Result<DVector<f64>> {
        Self::check_len(self.rows(), y.len())?;
        if let Some(m) = &self.explicit {
            return Ok(m.tr_mul(&DVector::from_column_slice(y)) * self.scale);
        }
        let n = self.n();
        let ymat = DMatrix::from_row_slice(n, n, y);
        let a = self.source.entries();
        let ya = &ymat * a;
        let trace = match self.mode {
            Mode::Centered => ymat.trace(),
            Mode::Uncentered => 0.0,
        };
        let f = self.column_factor() * self.scale;
        Ok(DVector::from_iterator(
            self.num_cols(),
            (0..self.num_cols()).map(|i| f * (a.column(i).dot(&ya.column(i)) - trace)),
        ))
    }

    /// The full scaled `n² × N` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match &self.explicit {
            Some(m) => m * self.scale,
            None => self.materialize() * self.scale,
        }
    }

    pub fn header(&self) -> OperatorHeader {
        OperatorHeader {
            n: self.n(),
            num_cols: self.num_cols(),
            mode: self.mode,
            kappa: self.kappa,
            scale: self.scale,
            seed: self.source.seed(),
            family: self.source.spec().family,
        }
    }

    /// Write the scaled matrix as CSV, one row per measurement, no header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.to_matrix();
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for r in 0..m.nrows() {
            w.write_record(m.row(r).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::sample_matrix;
    use proptest::prelude::*;

    fn fixed(cols: &[&[f64]], family: Family) -> ColumnMatrix {
        let n = cols[0].len();
        let data: Vec<f64> = cols.iter().flat_map(|c| c.iter().copied()).collect();
        ColumnMatrix::from_entries(DMatrix::from_vec(n, cols.len(), data), family.into(), 0).unwrap()
    }

    #[test]
    fn kappa_examples() {
        assert!((kappa(&DistributionSpec::rademacher(), 4).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!((kappa(&DistributionSpec::spherical(), 10).unwrap() - 10.0 / 9.0).abs() < 1e-15);
        // 25 / (5 · (5 − 2 + 3))
        assert!((kappa(&DistributionSpec::gaussian(), 5).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!(kappa(&DistributionSpec::gaussian(), 1).is_err());
        assert!(kappa(&DistributionSpec::spherical(), 1)
            .unwrap_err()
            .to_string()
            .contains("kappa undefined"));
    }

    #[test]
    fn center_column_examples() {
        let col = center_column(&[1.0, -1.0], 2.0).unwrap();
        let r2 = 2f64.sqrt();
        assert_eq!(col, vec![0.0, -r2, -r2, 0.0]);
        let sq: f64 = col.iter().map(|v| v * v).sum();
        assert!((sq - 4.0).abs() < 1e-14);

        assert_eq!(center_column(&[0.0, 0.0, 0.0], 1.0).unwrap(), vec![
            -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0
        ]);
        assert!(center_column(&[1.0], 0.0).is_err());
    }

    #[test]
    fn spherical_centered_columns_are_traceless_and_symmetric() {
        let m = sample_matrix(&DistributionSpec::spherical(), 7, 5, 1).unwrap();
        let k = kappa(m.spec(), 7).unwrap();
        for i in 0..5 {
            let col = center_column(m.column(i).as_slice(), k).unwrap();
            let trace: f64 = (0..7).map(|d| col[d * 7 + d]).sum();
            assert!(trace.abs() < 1e-12);
            for r in 0..7 {
                for c in 0..7 {
                    assert_eq!(col[r * 7 + c], col[c * 7 + r]);
                }
            }
        }
    }

    #[test]
    fn build_small_examples() {
        let src = fixed(&[&[1.0, 1.0]], Family::Rademacher);
        let op = KrOperator::build(src.clone(), Mode::Centered, Representation::Explicit).unwrap();
        let r2 = 2f64.sqrt();
        let col: Vec<f64> = op.scaled_column(0).iter().map(|v| v / op.scale()).collect();
        let expect = [0.0, r2, r2, 0.0];
        for (a, b) in col.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(op.scale(), 0.5);

        let un = KrOperator::build(src, Mode::Uncentered, Representation::Explicit).unwrap();
        assert_eq!(un.kappa(), 1.0);
        let col: Vec<f64> = un.scaled_column(0).iter().map(|v| v / un.scale()).collect();
        assert_eq!(col, vec![1.0; 4]);
    }

    #[test]
    fn explicit_refused_over_budget() {
        let src = sample_matrix(&DistributionSpec::gaussian(), 4, 10, 0).unwrap();
        let err =
            KrOperator::build_with_budget(src.clone(), Mode::Centered, Representation::Explicit, 159)
                .unwrap_err();
        assert!(matches!(err, Error::MemoryBudget { required: 160, .. }));
        assert!(
            KrOperator::build_with_budget(src, Mode::Centered, Representation::Explicit, 160).is_ok()
        );
    }

    #[test]
    fn apply_basics() {
        let src = sample_matrix(&DistributionSpec::gaussian(), 3, 6, 4).unwrap();
        for repr in [Representation::Explicit, Representation::MatrixFree] {
            let op = KrOperator::build(src.clone(), Mode::Centered, repr).unwrap();
            assert!(op.apply(&[0.0; 6]).unwrap().iter().all(|&v| v == 0.0));
            let mut e = vec![0.0; 6];
            e[2] = 1.0;
            let got = op.apply(&e).unwrap();
            assert!((got - op.scaled_column(2)).amax() < 1e-14);
            assert!(matches!(
                op.apply(&[1.0; 5]),
                Err(Error::DimensionMismatch { expected: 6, got: 5 })
            ));
            assert!(op.adjoint(&[1.0; 8]).is_err());
        }
    }

    #[test]
    fn adjoint_of_identity_vanishes_on_spherical() {
        let src = sample_matrix(&DistributionSpec::spherical(), 5, 9, 2).unwrap();
        let op = KrOperator::build(src, Mode::Centered, Representation::MatrixFree).unwrap();
        let mut id = vec![0.0; 25];
        for d in 0..5 {
            id[d * 5 + d] = 1.0;
        }
        assert!(op.adjoint(&id).unwrap().amax() < 1e-12);
        assert!(op.adjoint(&[0.0; 25]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_column_norms_for_constant_amplitude() {
        for family in [Family::Rademacher, Family::Spherical] {
            let src = sample_matrix(&family.into(), 6, 20, 3).unwrap();
            let op = KrOperator::build(src, Mode::Centered, Representation::Explicit).unwrap();
            for i in 0..20 {
                assert!((op.scaled_column(i).norm_squared() - 1.0).abs() < 1e-10);
                assert!((op.scaled_column_norm_sq(i) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn closed_form_column_norm_matches_direct() {
        let src = sample_matrix(&DistributionSpec::gaussian(), 5, 30, 3).unwrap();
        for mode in [Mode::Centered, Mode::Uncentered] {
            let op = KrOperator::build(src.clone(), mode, Representation::MatrixFree).unwrap();
            for i in 0..30 {
                let direct = op.scaled_column(i).norm_squared();
                assert!((direct - op.scaled_column_norm_sq(i)).abs() < 1e-12 * direct.max(1.0));
            }
        }
    }

    #[test]
    fn empirical_centering() {
        let n = 8;
        let draws = 10_000;
        let src = sample_matrix(&DistributionSpec::gaussian(), n, draws, 17).unwrap();
        let op = KrOperator::build(src, Mode::Centered, Representation::MatrixFree).unwrap();
        // Mean column = apply(1/draws · ones) / scale.
        let mean = op.apply(&vec![1.0 / draws as f64; draws]).unwrap() / op.scale();
        assert!(mean.amax() <= 5.0 / (draws as f64).sqrt(), "max {}", mean.amax());
    }

    #[test]
    fn distinct_columns_are_uncorrelated_on_average() {
        let n = 6;
        let pairs = 10_000;
        let src = sample_matrix(&DistributionSpec::gaussian(), n, 2 * pairs, 5).unwrap();
        let op = KrOperator::build(src, Mode::Centered, Representation::MatrixFree).unwrap();
        let ips: Vec<f64> = (0..pairs)
            .map(|p| op.scaled_column(2 * p).dot(&op.scaled_column(2 * p + 1)))
            .collect();
        let mean = ips.iter().sum::<f64>() / pairs as f64;
        let var = ips.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (pairs - 1) as f64;
        let se = (var / pairs as f64).sqrt();
        assert!(mean.abs() <= 5.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn header_serializes() {
        let src = sample_matrix(&DistributionSpec::rademacher(), 3, 4, 9).unwrap();
        let op = KrOperator::build(src, Mode::Centered, Representation::MatrixFree).unwrap();
        let json = serde_json::to_string(&op.header()).unwrap();
        assert!(json.contains("\"N\":4"));
        assert!(json.contains("\"mode\":\"centered\""));
        assert!(json.contains("\"family\":\"rademacher\""));
        let back: OperatorHeader = serde_json::from_str(&json).unwrap();
        assert_eq!(back, op.header());
    }

    #[test]
    fn csv_export_shape() {
        let src = sample_matrix(&DistributionSpec::rademacher(), 2, 3, 9).unwrap();
        let op = KrOperator::build(src, Mode::Uncentered, Representation::MatrixFree).unwrap();
        let mut buf = Vec::new();
        op.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn adjoint_identity(n in 2usize..=8, cols in 1usize..12, seed in any::<u64>(), centered in any::<bool>()) {
            let mode = if centered { Mode::Centered } else { Mode::Uncentered };
            let src = sample_matrix(&DistributionSpec::gaussian(), n, cols, seed).unwrap();
            let op = KrOperator::build(src, mode, Representation::MatrixFree).unwrap();
            let x = sample_matrix(&DistributionSpec::gaussian(), cols, 1, seed ^ 1).unwrap();
            let y = sample_matrix(&DistributionSpec::gaussian(), n * n, 1, seed ^ 2).unwrap();
            let ax = op.apply(x.entries().as_slice()).unwrap();
            let aty = op.adjoint(y.entries().as_slice()).unwrap();
            let lhs = ax.dot(&y.column(0));
            let rhs = aty.dot(&x.column(0));
            let scale = ax.norm() * y.column(0).norm() + aty.norm() * x.column(0).norm();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1e-300));
        }

        #[test]
        fn centered_columns_symmetric(n in 1usize..7, seed in any::<u64>()) {
            let a = sample_matrix(&DistributionSpec::uniform(), n, 1, seed).unwrap();
            let col = center_column(a.column(0).as_slice(), 0.7).unwrap();
            for r in 0..n {
                for c in 0..n {
                    prop_assert_eq!(col[r * n + c], col[c * n + r]);
                }
            }
        }
    }
}
