//! TOML experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use geocal_core::model::{BandThresholds, Sampler};
use geocal_core::synth::MixtureSpec;
use geocal_core::{AugmentPlan, CovarianceMode, PartitionKind, PartitionSpec, ScaleMode, TailPolicy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{GeocalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FedSingleDomain,
    FedMultiDomain,
    Longtail,
    Analysis,
}

impl Mode {
    pub fn is_fed(self) -> bool {
        matches!(self, Mode::FedSingleDomain | Mode::FedMultiDomain)
    }
}

/// Input containers. Paths are resolved relative to the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    #[serde(default)]
    pub l2_normalize: bool,
}

/// Generated inputs, used instead of `[data]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub mixture: MixtureSpec,
    /// Rows per class and domain in the training pool.
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Rows per class of the knowledge-base set (longtail / analysis).
    pub kb_per_class: usize,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self { mixture: MixtureSpec::default(), train_per_class: 200, test_per_class: 100, kb_per_class: 500 }
    }
}

/// Classifier head and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Hidden units; 0 trains a linear softmax head.
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Local epochs per round in fed modes, total epochs otherwise.
    pub epochs: usize,
    /// Defaults to uniform in fed modes and inverse-frequency in longtail.
    pub sampler: Option<Sampler>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { hidden_dim: 512, learning_rate: t.learning_rate, batch_size: t.batch_size, epochs: 1, sampler: None }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64, default_sampler: Sampler) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            sampler: self.sampler.unwrap_or(default_sampler),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub target_count_per_class: usize,
    pub per_prototype_count: usize,
    pub scale_mode: ScaleMode,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let p = AugmentPlan::single_domain(0);
        Self {
            target_count_per_class: p.target_count_per_class,
            per_prototype_count: p.per_prototype_count,
            scale_mode: p.scale_mode,
        }
    }
}

impl AugmentSection {
    pub fn plan(&self, seed: u64) -> AugmentPlan {
        AugmentPlan {
            target_count_per_class: self.target_count_per_class,
            per_prototype_count: self.per_prototype_count,
            scale_mode: self.scale_mode,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub sizes: Vec<usize>,
    pub trials: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { sizes: vec![5, 10, 20, 30, 50], trials: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub mode: Mode,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub covariance_mode: CovarianceMode,
    /// Skip the baseline (no augmentation / no layer) arm.
    #[serde(default)]
    pub skip_baseline: bool,
    #[serde(default)]
    pub data: DataPaths,
    pub synthetic: Option<SyntheticData>,
    #[serde(default = "default_partition")]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub tail: TailPolicy,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: BandThresholds,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

fn default_rounds() -> usize {
    20
}

fn default_m() -> usize {
    geocal_core::DEFAULT_M
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_partition() -> PartitionSpec {
    PartitionSpec::dirichlet(0.1, 4, 0)
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GeocalError::config(e.to_string()))
    }

    /// Parses and validates a config file; relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GeocalError::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.train, &mut self.data.test, &mut self.data.kb].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Full validation, run before any computation.
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(GeocalError::config(m));
        if self.mode.is_fed() && self.rounds == 0 {
            return err("rounds must be >= 1 for fed modes");
        }
        if self.m == 0 {
            return err("m must be >= 1");
        }
        if self.seeds.is_empty() {
            return err("seeds must not be empty");
        }
        self.partition.validate().map_err(|e| GeocalError::config(format!("partition: {e}")))?;
        self.tail.validate().map_err(|e| GeocalError::config(format!("tail: {e}")))?;
        self.train.config(0, Sampler::Uniform).validate().map_err(|e| GeocalError::config(format!("train: {e}")))?;
        match (self.mode, self.partition.kind) {
            (Mode::FedSingleDomain, PartitionKind::DirichletLabelSkew)
            | (Mode::FedMultiDomain, PartitionKind::FixedAssignment)
            | (Mode::Longtail | Mode::Analysis, _) => {}
            (Mode::FedSingleDomain, _) => return err("fed_single_domain needs partition.kind = dirichlet_label_skew"),
            (Mode::FedMultiDomain, _) => return err("fed_multi_domain needs partition.kind = fixed_assignment"),
        }
        if self.mode == Mode::Analysis && (self.analysis.trials == 0 || self.analysis.sizes.contains(&0)) {
            return err("analysis.trials and analysis.sizes must be >= 1");
        }
        if let Some(s) = &self.synthetic {
            s.mixture.validate().map_err(|e| GeocalError::config(format!("synthetic.mixture: {e}")))?;
            if s.train_per_class == 0 || s.test_per_class == 0 {
                return err("synthetic.train_per_class and test_per_class must be >= 1");
            }
            if matches!(self.mode, Mode::Longtail | Mode::Analysis) && s.kb_per_class == 0 {
                return err("synthetic.kb_per_class must be >= 1");
            }
            if self.m > s.mixture.dim {
                return err(&format!("m = {} exceeds synthetic.mixture.dim = {}", self.m, s.mixture.dim));
            }
            return Ok(());
        }
        let need = |p: &Option<PathBuf>, name: &str| -> Result<()> {
            match p {
                None => Err(GeocalError::config(format!("data.{name} is required"))),
                Some(p) if !p.is_file() => Err(GeocalError::config(format!("data.{name}: {} not found", p.display()))),
                Some(_) => Ok(()),
            }
        };
        need(&self.data.train, "train")?;
        if self.mode != Mode::Analysis {
            need(&self.data.test, "test")?;
        }
        if matches!(self.mode, Mode::Longtail | Mode::Analysis) {
            need(&self.data.kb, "kb")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_synthetic_config() {
        let cfg = SimConfig::from_toml("mode = \"fed_single_domain\"\n[synthetic]\n").unwrap();
        assert_eq!(cfg.rounds, 20);
        assert_eq!(cfg.partition.num_clients, 4);
        cfg.validate().unwrap();
        let again = SimConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn missing_kb_is_config_error() {
        let cfg = SimConfig::from_toml("mode = \"longtail\"\n[data]\ntrain = \"/nonexistent/a.geob\"\n").unwrap();
        let e = cfg.validate().unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn zero_rounds_rejected() {
        let cfg = SimConfig::from_toml("mode = \"fed_single_domain\"\nrounds = 0\n[synthetic]\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(SimConfig::from_toml("mode = \"analysis\"\nroundz = 3\n").is_err());
    }
}
