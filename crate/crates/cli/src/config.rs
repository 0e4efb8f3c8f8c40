//! Experiment files: strict JSON with one section per estimator.

use std::path::Path;

use dynwalk::environment::{Backend, EnvModel};
use dynwalk::estimators::clt::{CfParams, PathParams};
use dynwalk::estimators::drift::DriftParams;
use dynwalk::estimators::ldp::LdpParams;
use dynwalk::estimators::quenched::QuenchedParams;
use dynwalk::estimators::two_walk::{CrossParams, CrossingParams, EncounterParams, ExcursionParams};
use dynwalk::estimators::variance::{EmpiricalParams, GreenKuboParams};
use dynwalk::experiment::Experiment;
use dynwalk::gambler::RuinProblem;
use dynwalk::kernel::{Kernel, KernelSpec};
use dynwalk::lattice::{LatticePoint, MAX_DIM};
use dynwalk::map::{MapSpec, PiecewiseExpandingMap};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid config: {0}")]
    Model(#[from] dynwalk::Error),
}

fn default_dimension() -> usize {
    1
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: MapSpec,
    /// Omitted: the simple random walk on ±e_i with the default potential.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub backend: Option<Backend>,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub estimators: EstimatorSet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimatorSet {
    pub spectrum: Option<SpectrumConfig>,
    pub drift: Option<DriftParams>,
    pub variance: Option<VarianceConfig>,
    pub clt_annealed: Option<CfParams>,
    pub clt_quenched: Option<QuenchedParams>,
    pub ldp: Option<LdpParams>,
    pub encounters: Option<EncounterParams>,
    pub excursions: Option<ExcursionParams>,
    pub crossings: Option<CrossingParams>,
    pub gambler: Option<GamblerConfig>,
    pub ellipticity_check: Option<EllipticityConfig>,
    pub path: Option<PathParams>,
    pub decorrelation: Option<CrossParams>,
}

/// Section names in run order.
pub const ESTIMATORS: &[&str] = &[
    "spectrum",
    "drift",
    "variance",
    "clt-annealed",
    "clt-quenched",
    "ldp",
    "encounters",
    "excursions",
    "crossings",
    "gambler",
    "ellipticity-check",
    "path",
    "decorrelation",
];

/// Sections that need no walk.
const WALK_FREE: &[&str] = &["spectrum", "gambler"];

impl EstimatorSet {
    pub fn is_present(&self, name: &str) -> bool {
        match name {
            "spectrum" => self.spectrum.is_some(),
            "drift" => self.drift.is_some(),
            "variance" => self.variance.is_some(),
            "clt-annealed" => self.clt_annealed.is_some(),
            "clt-quenched" => self.clt_quenched.is_some(),
            "ldp" => self.ldp.is_some(),
            "encounters" => self.encounters.is_some(),
            "excursions" => self.excursions.is_some(),
            "crossings" => self.crossings.is_some(),
            "gambler" => self.gambler.is_some(),
            "ellipticity-check" => self.ellipticity_check.is_some(),
            "path" => self.path.is_some(),
            "decorrelation" => self.decorrelation.is_some(),
            _ => false,
        }
    }

    pub fn present(&self) -> Vec<&'static str> {
        ESTIMATORS.iter().copied().filter(|n| self.is_present(n)).collect()
    }
}

fn default_bins() -> usize {
    400
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    /// Lags of the correlation decay of the indicator of [0, 1/2).
    #[serde(default)]
    pub decay_lags: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    #[serde(default)]
    pub green_kubo: Option<GreenKuboParams>,
    #[serde(default)]
    pub empirical: Option<EmpiricalParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GamblerConfig {
    pub p: f64,
    pub alpha1: i64,
    pub alpha: i64,
    pub alpha2: i64,
    #[serde(default)]
    pub paths: Option<usize>,
    #[serde(default)]
    pub domination: Option<DominationConfig>,
}

/// Coupling check with q_n = floor + lift when the current level is odd,
/// floor otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominationConfig {
    pub floor: f64,
    pub lift: f64,
    pub paths: usize,
    pub steps: usize,
}

impl GamblerConfig {
    pub fn problem(&self) -> Result<RuinProblem, ConfigError> {
        Ok(RuinProblem::new(self.p, self.alpha1, self.alpha, self.alpha2)?)
    }
}

fn default_samples() -> usize {
    10_000
}

fn default_torus() -> usize {
    16
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticityConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_torus")]
    pub torus_grid: usize,
    #[serde(default)]
    pub l_set: Option<Vec<Vec<i32>>>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(ConfigError::Invalid(format!("epsilon must be ≥ 0, got {}", self.epsilon)));
        }
        if let Some(e) = self.kernel.as_ref().and_then(|k| k.epsilon) {
            if !(e.is_finite() && e >= 0.0) {
                return Err(ConfigError::Invalid(format!("epsilon must be ≥ 0, got {e}")));
            }
        }
        if self.dimension == 0 || self.dimension > MAX_DIM {
            return Err(ConfigError::Invalid(format!("dimension must be in 1..={MAX_DIM}, got {}", self.dimension)));
        }
        if self.estimators.present().is_empty() {
            return Err(ConfigError::Invalid(format!(
                "no estimator selected; valid names are {}",
                ESTIMATORS.join(", ")
            )));
        }
        let map = self.build_map()?;
        let expansion = map.check_expansion()?;
        if self.estimators.present().iter().any(|n| !WALK_FREE.contains(n)) {
            if !expansion.ok {
                return Err(ConfigError::Invalid(format!(
                    "environment map must expand by more than 2, got minimum slope {}",
                    expansion.lambda_min
                )));
            }
            self.build_experiment(self.seed)?;
        }
        if let Some(g) = &self.estimators.gambler {
            g.problem()?;
        }
        Ok(())
    }

    pub fn build_map(&self) -> Result<PiecewiseExpandingMap, ConfigError> {
        Ok(self.map.build()?)
    }

    pub fn effective_epsilon(&self) -> f64 {
        self.kernel.as_ref().and_then(|k| k.epsilon).unwrap_or(self.epsilon)
    }

    pub fn build_kernel(&self) -> Result<Kernel, ConfigError> {
        let eps = self.effective_epsilon();
        let kernel = match &self.kernel {
            Some(spec) => spec.build(self.dimension, eps)?,
            None => {
                let d = self.dimension;
                let support: Vec<LatticePoint> =
                    (0..d).flat_map(|i| [LatticePoint::axis(i, 1), LatticePoint::axis(i, -1)]).collect();
                let base = vec![1.0 / (2 * d) as f64; 2 * d];
                Kernel::with_default_potential(d, support, base, eps)?
            }
        };
        Ok(kernel)
    }

    pub fn build_experiment(&self, seed: u64) -> Result<Experiment, ConfigError> {
        let map = self.build_map()?;
        let env = match self.backend {
            Some(b) => EnvModel::new(map, self.dimension, b)?,
            None => EnvModel::preferred(map, self.dimension)?,
        };
        Ok(Experiment::new(env, self.build_kernel()?, seed)?)
    }

    /// SHA-256 of the canonical serialization of the parsed config.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"map": "tripling", "estimators": {"drift": {"n": 10, "replicates": 4}}}"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.dimension, 1);
        assert_eq!(c.epsilon, DEFAULT_EPSILON);
        assert_eq!(c.estimators.present(), vec!["drift"]);
        assert_eq!(c.config_hash(), ExperimentConfig::from_json(MINIMAL).unwrap().config_hash());
    }

    #[test]
    fn negative_epsilon_is_rejected() {
        let text = MINIMAL.replace(r#""map""#, r#""epsilon": -0.1, "map""#);
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("epsilon must be ≥ 0"), "{err}");
    }

    #[test]
    fn unknown_estimator_lists_valid_names() {
        let text = r#"{"map": "tripling", "estimators": {"drfit": {"n": 10, "replicates": 4}}}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err().to_string();
        for name in ESTIMATORS {
            assert!(err.contains(name), "{err} lacks {name}");
        }
    }

    #[test]
    fn unknown_keys_and_missing_keys() {
        let text = MINIMAL.replace(r#""map""#, r#""colour": 1, "map""#);
        assert!(ExperimentConfig::from_json(&text).is_err());
        let err = ExperimentConfig::from_json(r#"{"map": "tripling", "estimators": {"drift": {"n": 10}}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("replicates"), "{err}");
        assert!(ExperimentConfig::from_json(r#"{"map": "tripling", "estimators": {}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"map": "nope", "estimators": {"spectrum": {}}}"#).is_err());
    }

    #[test]
    fn gambler_section() {
        let text = r#"{"map": "tripling", "estimators": {"gambler": {"p": 0.6, "alpha1": 0, "alpha": 1, "alpha2": 3}}}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.estimators.gambler.unwrap().problem().unwrap().p, 0.6);
    }
}
