//! Experiment configuration: one TOML file that fully determines a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mpsauth::dataset::synth::SynthConfig;
use mpsauth::dataset::{AugmentConfig, Source};
use mpsauth::detector::{Architecture, TrainConfig, WindowConfig};
use mpsauth::evalbench::{SplitConfig, SweepConfig};
use mpsauth::he::{BackendKind, HeParams};
use mpsauth::protocol::{ProtocolConfig, TriggerPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub he: HeConfig,
    #[serde(default)]
    pub windows: WindowsConfig,
    #[serde(default)]
    pub model: Architecture,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub trigger: TriggerPolicy,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn d_seed() -> u64 {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// JSON-lines dataset to ingest. When absent, `generate` writes a
    /// synthetic one into the run directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Users with fewer points are dropped on ingestion.
    #[serde(default)]
    pub min_points: usize,
    #[serde(default)]
    pub synthetic: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeConfig {
    #[serde(default = "d_backend")]
    pub backend: BackendKind,
    #[serde(default = "d_ring")]
    pub ring_dimension: usize,
    #[serde(default = "d_depth")]
    pub max_mul_depth: usize,
    #[serde(default = "d_log_scale")]
    pub log_scale: u32,
}

fn d_backend() -> BackendKind {
    BackendKind::Mock
}
fn d_ring() -> usize {
    4096
}
fn d_depth() -> usize {
    2
}
fn d_log_scale() -> u32 {
    40
}

impl Default for HeConfig {
    fn default() -> Self {
        HeConfig { backend: d_backend(), ring_dimension: d_ring(), max_mul_depth: d_depth(), log_scale: d_log_scale() }
    }
}

impl HeConfig {
    pub fn params(&self) -> anyhow::Result<HeParams> {
        HeParams::generate(self.ring_dimension, self.max_mul_depth, self.log_scale).context("invalid [he] section")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSizes {
    pub h_size: usize,
    pub o_size: usize,
}

/// Window sizes shared by all chains, with optional per-source overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowsConfig {
    #[serde(default = "d_h")]
    pub h_size: usize,
    #[serde(default = "d_o")]
    pub o_size: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_source: BTreeMap<Source, WindowSizes>,
}

fn d_h() -> usize {
    30
}
fn d_o() -> usize {
    7
}

impl Default for WindowsConfig {
    fn default() -> Self {
        WindowsConfig { h_size: d_h(), o_size: d_o(), per_source: BTreeMap::new() }
    }
}

impl WindowsConfig {
    pub fn for_source(&self, source: Source) -> anyhow::Result<WindowConfig> {
        let sizes = self.per_source.get(&source).copied().unwrap_or(WindowSizes { h_size: self.h_size, o_size: self.o_size });
        WindowConfig::new(source, sizes.h_size, sizes.o_size).with_context(|| format!("invalid window sizes for {source}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default)]
    pub grid: SweepConfig,
    #[serde(default = "d_entry_points")]
    pub entry_points: Vec<f64>,
    /// Slices re-run on the RLWE backend and compared with the mock risk.
    #[serde(default = "d_spot")]
    pub rlwe_spot_checks: usize,
}

fn d_entry_points() -> Vec<f64> {
    vec![0.0, 0.33, 0.66]
}
fn d_spot() -> usize {
    2
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { grid: SweepConfig::default(), entry_points: d_entry_points(), rlwe_spot_checks: d_spot() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Label written into the performance report.
    #[serde(default = "d_platform")]
    pub platform: String,
    /// Test slices timed per backend.
    #[serde(default = "d_slices")]
    pub slices: usize,
}

fn d_platform() -> String {
    "desktop".into()
}
fn d_slices() -> usize {
    4
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { platform: d_platform(), slices: d_slices() }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        ExperimentConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.he.params()?;
        for src in Source::ALL {
            self.windows.for_source(src)?;
        }
        let p = &self.protocol;
        if !(p.mask_range > 0.0 && p.mask_range.is_finite()) {
            bail!("protocol.mask_range must be positive");
        }
        if !(0.0..=1.0).contains(&p.budget_fraction) {
            bail!("protocol.budget_fraction must lie in [0, 1]");
        }
        if !(0.0 < self.split.train_fraction && self.split.train_fraction < 1.0) {
            bail!("split.train_fraction must lie in (0, 1)");
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            bail!("training.epochs and training.batch_size must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hex digest naming the run directory. The backend choice is left out so
    /// that every command of one experiment shares a directory.
    pub fn hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.he.backend = BackendKind::Mock;
        let digest = Sha256::digest(normalized.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Training settings with the run seed mixed in.
    pub fn train_config(&self, source: Source) -> TrainConfig {
        TrainConfig { seed: self.training.seed.wrapping_add(self.seed).wrapping_add(source.index() as u64), ..self.training.clone() }
    }
}
