//! Detector chains: window preprocessing, the CNN, training and encrypted inference.

pub mod circuit;
pub mod cnn;
pub mod pipeline;
pub mod train;
pub mod window;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use circuit::{compile_he, depth_report, HeCircuit, LayerDepth, CIRCUIT_DEPTH};
pub use cnn::{Architecture, CnnModel};
pub use pipeline::{history_pools, slice_windows, train_chain};
pub use train::{sigmoid, train, TrainConfig, TrainReport, TrainingSet};
pub use window::{build_windows, HistoryPool, InvestigationWindow, Preprocessor, WindowConfig};

use crate::dataset::Source;
use crate::features::FeatureError;
use crate::he::HeError;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("invalid window configuration: {0}")]
    Window(String),
    #[error("insufficient {src} history: {have} rows, need {need}")]
    InsufficientHistory { src: Source, have: usize, need: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("loss became {loss} at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("circuit needs depth {CIRCUIT_DEPTH}, {available} available; per layer: {}", fmt_report(.report))]
    DepthBudget { available: usize, report: Vec<LayerDepth> },
    #[error("packing mismatch: {0}")]
    Packing(String),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    He(#[from] HeError),
}

fn fmt_report(report: &[LayerDepth]) -> String {
    report.iter().map(|l| format!("{}={}", l.layer, l.depth)).collect::<Vec<_>>().join(", ")
}

pub type Result<T> = std::result::Result<T, DetectorError>;

/// Preprocessor, window shape and trained model for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorChain {
    pub window: WindowConfig,
    pub prep: Preprocessor,
    pub model: CnnModel,
    pub report: TrainReport,
}

impl DetectorChain {
    pub fn source(&self) -> Source {
        self.window.source
    }

    pub fn infer_plain(&self, w: &InvestigationWindow) -> Result<f64> {
        self.model.infer(&w.flatten())
    }
}

/// Versioned set of trained chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub seed: u64,
    pub chains: Vec<DetectorChain>,
}

impl ModelBundle {
    pub fn new(seed: u64, chains: Vec<DetectorChain>) -> ModelBundle {
        ModelBundle { version: BUNDLE_VERSION, seed, chains }
    }

    pub fn chain(&self, source: Source) -> Option<&DetectorChain> {
        self.chains.iter().find(|c| c.source() == source)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<ModelBundle> {
        let b: ModelBundle = serde_json::from_str(text).map_err(|e| DetectorError::Bundle(e.to_string()))?;
        if b.version != BUNDLE_VERSION {
            return Err(DetectorError::Bundle(format!("unsupported version {}", b.version)));
        }
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        let text = std::fs::read_to_string(path).map_err(|e| DetectorError::Bundle(format!("{}: {e}", path.display())))?;
        ModelBundle::from_json(&text)
    }
}
