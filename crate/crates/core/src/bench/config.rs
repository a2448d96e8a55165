//! Experiment configuration.
//!
//! Configs are TOML files (JSON is accepted when the file ends in `.json`).
//! The schema is documented in the book's "Experiment harness" chapter.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensembles::Family;
use crate::error::{Error, Result};
use crate::kr_operator::{Mode, DEFAULT_MEMORY_BUDGET};
use crate::recovery::AmplitudeModel;
use crate::rip::{binomial, DEFAULT_EIG_CROSSOVER, DEFAULT_ENUMERATION_BUDGET};
use crate::tails::DirectionKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[serde(alias = "rip")]
    RipSweep,
    #[serde(alias = "phase")]
    PhaseTransition,
    #[serde(alias = "conc")]
    Concentration,
    Tails,
    #[serde(alias = "kappa")]
    KappaTable,
}

impl ExperimentKind {
    pub fn cli_name(self) -> &'static str {
        match self {
            ExperimentKind::RipSweep => "rip",
            ExperimentKind::PhaseTransition => "phase",
            ExperimentKind::Concentration => "conc",
            ExperimentKind::Tails => "tails",
            ExperimentKind::KappaTable => "kappa",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Centered,
    Uncentered,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeSelection::Centered => vec![Mode::Centered],
            ModeSelection::Uncentered => vec![Mode::Uncentered],
            ModeSelection::Both => vec![Mode::Centered, Mode::Uncentered],
        }
    }
}

impl std::str::FromStr for ModeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(ModeSelection::Centered),
            "uncentered" => Ok(ModeSelection::Uncentered),
            "both" => Ok(ModeSelection::Both),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected centered, uncentered or both)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RipMethodChoice {
    /// Exact when `C(N, s)` fits the enumeration budget, else greedy.
    #[default]
    Auto,
    Exact,
    Greedy,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RipSection {
    pub method: RipMethodChoice,
    pub restarts: u64,
    pub mc_trials: u64,
    pub enumeration_budget: u64,
    pub eig_crossover: usize,
}

impl Default for RipSection {
    fn default() -> Self {
        RipSection {
            method: RipMethodChoice::Auto,
            restarts: 20,
            mc_trials: 200,
            enumeration_budget: DEFAULT_ENUMERATION_BUDGET,
            eig_crossover: DEFAULT_EIG_CROSSOVER,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Iht,
    Fista,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Iht => "iht",
            SolverKind::Fista => "fista",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverKind,
    pub max_iters: usize,
    pub tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub continuation: bool,
    pub rel_tol: f64,
    pub noise_sigma: f64,
    pub amplitude: AmplitudeModel,
    pub memory_budget: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            kind: SolverKind::Iht,
            max_iters: 2000,
            tol: 1e-10,
            step: None,
            lambda: None,
            continuation: false,
            rel_tol: 1e-3,
            noise_sigma: 0.0,
            amplitude: AmplitudeModel::UnitSigns,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// Overlay constants for the theoretical RIP bound. When `psi` is absent it
/// is estimated from centered-column marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "Kprime")]
    pub k_prime: f64,
    pub theta_prime: f64,
    pub c_xi_delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    pub psi_samples: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            c: 1.0,
            k: 1.0,
            k_prime: 1.0,
            theta_prime: 0.0,
            c_xi_delta: 1.0,
            psi: None,
            psi_samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailsSection {
    pub alpha: u32,
    pub p_max: u32,
    pub samples: usize,
    pub direction: DirectionKind,
    /// Direction for the uncentered comparison.
    pub raw_direction: DirectionKind,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub t_grid: Vec<f64>,
}

impl Default for TailsSection {
    fn default() -> Self {
        TailsSection {
            alpha: 1,
            p_max: 8,
            samples: 100_000,
            direction: DirectionKind::RandomUnit,
            raw_direction: DirectionKind::VecIdentity,
            t_grid: Vec::new(),
        }
    }
}

impl TailsSection {
    pub fn grid(&self) -> Vec<f64> {
        if self.t_grid.is_empty() {
            (1..=24).map(|k| 0.5 * k as f64).collect()
        } else {
            self.t_grid.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationSection {
    pub t_grid: Vec<f64>,
}

impl Default for ConcentrationSection {
    fn default() -> Self {
        ConcentrationSection {
            t_grid: vec![0.25, 0.5, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KappaSection {
    pub samples: usize,
}

impl Default for KappaSection {
    fn default() -> Self {
        KappaSection { samples: 100_000 }
    }
}

fn default_family() -> Family {
    Family::Spherical
}

fn default_trials() -> usize {
    50
}

/// A declarative experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_family")]
    pub family: Family,
    /// Families for the kappa table; defaults to all four.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub families: Vec<Family>,
    #[serde(default)]
    pub mode: ModeSelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_list: Vec<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub num_cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub s_list: Vec<usize>,
    /// Trials per point (phase) or random matrices per `n` (conc).
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub rip: RipSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(default)]
    pub tails: TailsSection,
    #[serde(default)]
    pub concentration: ConcentrationSection,
    #[serde(default)]
    pub kappa: KappaSection,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    /// Minimal config for `kind`; remaining fields take their defaults.
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment: kind,
            seed: 0,
            out: None,
            family: default_family(),
            families: Vec::new(),
            mode: ModeSelection::Both,
            n: None,
            n_list: Vec::new(),
            num_cols: None,
            s_list: Vec::new(),
            trials: default_trials(),
            rip: RipSection::default(),
            solver: SolverSection::default(),
            bounds: None,
            tails: TailsSection::default(),
            concentration: ConcentrationSection::default(),
            kappa: KappaSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// `n_list`, or `[n]` when only `n` is given.
    pub fn n_values(&self) -> Vec<usize> {
        if !self.n_list.is_empty() {
            self.n_list.clone()
        } else {
            self.n.into_iter().collect()
        }
    }

    pub fn families_or_all(&self) -> Vec<Family> {
        if self.families.is_empty() {
            Family::ALL.to_vec()
        } else {
            self.families.clone()
        }
    }

    fn require_cols(&self) -> Result<usize> {
        match self.num_cols {
            Some(0) | None => Err(cfg_err("N (number of columns) must be given and positive")),
            Some(c) => Ok(c),
        }
    }

    fn require_n_values(&self) -> Result<Vec<usize>> {
        let ns = self.n_values();
        if ns.is_empty() {
            return Err(cfg_err("n or n_list must be given"));
        }
        if let Some(bad) = ns.iter().find(|&&n| n < 2) {
            return Err(cfg_err(format!("every n must be at least 2 (kappa undefined), got {bad}")));
        }
        Ok(ns)
    }

    /// Check every parameter the selected experiment touches.
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = &self.bounds {
            self.validate_bounds(b)?;
        }
        match self.experiment {
            ExperimentKind::KappaTable => {
                self.require_n_values()?;
                if self.kappa.samples == 0 {
                    return Err(cfg_err("kappa.samples must be positive"));
                }
            }
            ExperimentKind::RipSweep => {
                let ns = self.require_n_values()?;
                let cols = self.require_cols()?;
                self.validate_s_list(cols)?;
                for n in ns {
                    if cols < n * n {
                        return Err(cfg_err(format!(
                            "N = {cols} < n² = {} : the sparsity budget assumes n² ≤ N",
                            n * n
                        )));
                    }
                }
                if self.rip.restarts == 0 || self.rip.mc_trials == 0 {
                    return Err(cfg_err("rip.restarts and rip.mc_trials must be positive"));
                }
            }
            ExperimentKind::PhaseTransition => {
                self.require_n_values()?;
                let cols = self.require_cols()?;
                self.validate_s_list(cols)?;
                if self.trials == 0 {
                    return Err(cfg_err("trials must be positive"));
                }
                let s = &self.solver;
                if s.max_iters == 0 || !(s.tol > 0.0) || !(s.rel_tol > 0.0) {
                    return Err(cfg_err("solver max_iters, tol and rel_tol must be positive"));
                }
                if !(s.noise_sigma >= 0.0) {
                    return Err(cfg_err("solver.noise_sigma must be non-negative"));
                }
                if matches!(s.step, Some(v) if !(v > 0.0)) || matches!(s.lambda, Some(v) if !(v > 0.0)) {
                    return Err(cfg_err("solver step and lambda must be positive when given"));
                }
            }
            ExperimentKind::Concentration => {
                self.require_n_values()?;
                self.require_cols()?;
                if self.trials == 0 {
                    return Err(cfg_err("trials must be positive"));
                }
                let g = &self.concentration.t_grid;
                if g.is_empty() || g.iter().any(|&t| !(t > 0.0)) {
                    return Err(cfg_err("concentration.t_grid must be non-empty and positive"));
                }
            }
            ExperimentKind::Tails => {
                self.require_n_values()?;
                let t = &self.tails;
                if t.alpha != 1 && t.alpha != 2 {
                    return Err(cfg_err("tails.alpha must be 1 or 2"));
                }
                if t.p_max < 2 {
                    return Err(cfg_err("tails.p_max must be at least 2"));
                }
                if t.samples == 0 {
                    return Err(cfg_err("tails.samples must be positive"));
                }
                if t.direction == DirectionKind::Custom || t.raw_direction == DirectionKind::Custom {
                    return Err(cfg_err("custom directions cannot be given in a config"));
                }
                let g = t.grid();
                if g.iter().any(|&v| !(v > 0.0)) || g.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(cfg_err("tails.t_grid must be positive and strictly increasing"));
                }
            }
        }
        Ok(())
    }

    fn validate_s_list(&self, cols: usize) -> Result<()> {
        if self.s_list.is_empty() {
            return Err(cfg_err("s_list must be non-empty"));
        }
        if let Some(bad) = self.s_list.iter().find(|&&s| s == 0 || s > cols) {
            return Err(cfg_err(format!("sparsity {bad} outside 1..=N")));
        }
        Ok(())
    }

    fn validate_bounds(&self, b: &BoundsSection) -> Result<()> {
        let psi = b.psi.unwrap_or(1.0);
        crate::rip::TheoryBoundParams::from_components(b.c, psi, b.k, b.k_prime, b.theta_prime, b.c_xi_delta)
            .map_err(|e| cfg_err(format!("bounds: {e}")))?;
        if b.psi.is_none() && b.psi_samples == 0 {
            return Err(cfg_err("bounds.psi_samples must be positive when psi is estimated"));
        }
        Ok(())
    }

    /// Whether exact enumeration of `C(N, s)` fits the budget.
    pub fn exact_feasible(&self, s: usize) -> bool {
        self.num_cols
            .and_then(|c| binomial(c, s))
            .is_some_and(|c| c <= self.rip.enumeration_budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RIP: &str = r#"
experiment = "rip"
seed = 3
family = "gaussian"
mode = "both"
n = 4
N = 20
s_list = [1, 2, 3]

[rip]
restarts = 5

[bounds]
C = 2.0
psi = 1.5
"#;

    #[test]
    fn parses_toml_with_aliases() {
        let c = ExperimentConfig::from_toml_str(RIP).unwrap();
        assert_eq!(c.experiment, ExperimentKind::RipSweep);
        assert_eq!(c.num_cols, Some(20));
        assert_eq!(c.rip.restarts, 5);
        assert_eq!(c.rip.mc_trials, 200);
        assert_eq!(c.bounds.as_ref().unwrap().c, 2.0);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("experiment = \"rip\"\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::from_toml_str(RIP).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.content_hash(), back.content_hash());
    }

    #[test]
    fn json_is_accepted() {
        let c = ExperimentConfig::from_toml_str(RIP).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&json).unwrap(), c);
    }

    #[test]
    fn rip_requires_n_squared_le_n_cols() {
        let mut c = ExperimentConfig::from_toml_str(RIP).unwrap();
        c.num_cols = Some(15);
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("n² ≤ N"), "{msg}");
    }

    #[test]
    fn validation_catches_missing_fields() {
        let c = ExperimentConfig::new(ExperimentKind::PhaseTransition);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(ExperimentKind::KappaTable);
        c.n_list = vec![1, 4];
        assert!(c.validate().is_err());
        c.n_list = vec![4];
        c.validate().unwrap();
        let mut t = ExperimentConfig::new(ExperimentKind::Tails);
        t.n = Some(4);
        t.tails.p_max = 1;
        assert!(t.validate().is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::from_toml_str(RIP).unwrap();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary(seed in any::<u64>(), n in 2usize..20, extra in 0usize..100, trials in 1usize..500, fam in 0usize..4) {
            let mut c = ExperimentConfig::new(ExperimentKind::PhaseTransition);
            c.seed = seed;
            c.n_list = vec![n, n + 1];
            c.num_cols = Some(n * n + extra);
            c.s_list = vec![1, 2];
            c.trials = trials;
            c.family = Family::ALL[fam];
            c.solver.lambda = Some(0.25);
            let text = c.to_toml_string().unwrap();
            prop_assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
        }
    }
}
