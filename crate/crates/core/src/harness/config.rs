//! Experiment configuration: JSON file plus command-line overrides.

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::fbm::MAX_FINE_LEVEL;
use crate::model::{CoefficientModel, ModelSpec};
use crate::schemes::{model_admissible_level, CnPolicy, RunOptions, SchemeKind, DEFAULT_EPSILON};
use crate::variations::WeightMeasure;
use crate::{Error, Result};

/// SHA-256 (hex) of the compact JSON form of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("value serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Function `f` weighting the Hermite variations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariationWeight {
    /// `f ≡ 1`.
    #[default]
    One,
    /// `f = σ`.
    Sigma,
    /// `f = σ'`.
    DSigma,
}

impl VariationWeight {
    pub fn eval(self, model: &CoefficientModel, x: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Sigma => model.sigma(x),
            Self::DSigma => model.dsigma(x),
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: SchemeKind,
    pub model: ModelSpec,
    pub hurst: f64,
    /// Level range of rate and decay experiments.
    pub m_min: u32,
    pub m_max: u32,
    /// Level of single-level experiments.
    pub m: u32,
    pub n_paths: usize,
    pub seed: u64,
    pub xi: f64,
    pub epsilon: f64,
    /// The reference grid has `2^{fine_offset}` cells per scheme cell.
    pub fine_offset: u32,
    /// Run the implicit scheme below its admissible level.
    pub force: bool,
    pub cn_policy: CnPolicy,
    /// Hermite order of variation experiments.
    pub q: usize,
    pub weight: WeightMeasure,
    pub variation_weight: VariationWeight,
    /// Exponent `r` of the trapezoid-variation decay curve.
    pub decay_rate: f64,
    /// Output directory; not part of the configuration hash.
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::Euler,
            model: ModelSpec::new("sinh", json!({"drift": "neg-x"})),
            hurst: 0.75,
            m_min: 6,
            m_max: 12,
            m: 10,
            n_paths: 64,
            seed: 1,
            xi: 0.5,
            epsilon: DEFAULT_EPSILON,
            fine_offset: 4,
            force: false,
            cn_policy: CnPolicy::default(),
            q: 2,
            weight: WeightMeasure::Left,
            variation_weight: VariationWeight::One,
            decay_rate: 0.6,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        hash_json(&canonical)
    }

    pub fn build_model(&self) -> Result<CoefficientModel> {
        self.model.build()
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions { epsilon: self.epsilon, force: self.force, cn_policy: self.cn_policy }
    }

    fn check_common(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::Config(format!("hurst must lie in (0, 1), got {}", self.hurst)));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if !self.xi.is_finite() {
            return Err(Error::Config("xi must be finite".into()));
        }
        Ok(())
    }

    fn check_levels(&self, lo: u32, hi: u32) -> Result<()> {
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid level range {lo}..={hi}")));
        }
        if hi + self.fine_offset > MAX_FINE_LEVEL {
            return Err(Error::Config(format!(
                "level {hi} plus fine offset {} exceeds the sampler limit {MAX_FINE_LEVEL}",
                self.fine_offset
            )));
        }
        if self.scheme == SchemeKind::CrankNicolson && !self.force {
            let m_star = model_admissible_level(&self.build_model()?, self.hurst, self.epsilon)?;
            if lo < m_star {
                return Err(Error::Config(format!(
                    "level {lo} is below the admissible level {m_star} of the implicit scheme; set force to run anyway"
                )));
            }
        }
        Ok(())
    }

    /// Checks for experiments over `m_min..=m_max`.
    pub fn validate_range(&self) -> Result<()> {
        self.check_common()?;
        if self.m_max < self.m_min + 3 {
            return Err(Error::Config(format!(
                "slope fits need at least four levels, got {}..={}",
                self.m_min, self.m_max
            )));
        }
        self.check_levels(self.m_min, self.m_max)
    }

    /// Checks for experiments at the single level `m`.
    pub fn validate_single(&self) -> Result<()> {
        self.check_common()?;
        self.check_levels(self.m, self.m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_hash() {
        let cfg = ExperimentConfig { scheme: SchemeKind::CrankNicolson, hurst: 0.5, ..Default::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        let moved = ExperimentConfig { out: Some("elsewhere".into()), ..cfg.clone() };
        assert_eq!(cfg.hash(), moved.hash());
        let reseeded = ExperimentConfig { seed: 2, ..cfg.clone() };
        assert_ne!(cfg.hash(), reseeded.hash());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"hurst": 0.4, "scheme": "milstein"}"#).unwrap();
        assert_eq!(cfg.scheme, SchemeKind::Milstein);
        assert_eq!(cfg.n_paths, 64);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"hurts": 0.4}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::default().validate_range().is_ok());
        assert!(ExperimentConfig { n_paths: 0, ..Default::default() }.validate_range().is_err());
        assert!(ExperimentConfig { m_min: 6, m_max: 8, ..Default::default() }.validate_range().is_err());
        assert!(ExperimentConfig { m_max: 20, ..Default::default() }.validate_range().is_err());
        let cn = ExperimentConfig {
            scheme: SchemeKind::CrankNicolson,
            hurst: 0.5,
            m_min: 1,
            m_max: 6,
            ..Default::default()
        };
        assert!(cn.validate_range().is_err());
        assert!(ExperimentConfig { force: true, ..cn }.validate_range().is_ok());
    }
}
