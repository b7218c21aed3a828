//! Evaluation harness: EER, window sweeps, slice tables and performance.

pub mod eer;
pub mod perf;
pub mod report;
pub mod slices;
pub mod split;
pub mod stats;
pub mod sweep;

use thiserror::Error;

pub use eer::{compute_eer, EerResult, ScoreSet, Scored, SweepPoint};
pub use perf::{measure_performance, PerfReport, REFERENCE_EXPANSION, REFERENCE_OVERHEAD};
pub use report::{write_grid, write_perf, write_slice_table};
pub use slices::{evaluate_slices, score_slices, subset_risk, SliceRow, SliceScores, SliceTable, SubsetResult};
pub use split::{prepare, Experiment, SplitConfig};
pub use stats::{ks_two_sample, summarize, Summary};
pub use sweep::{sweep_windows, GridCell, SweepConfig};

use crate::dataset::DatasetError;
use crate::detector::DetectorError;
use crate::protocol::ProtocolError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("EER needs both classes, got {legitimate} legitimate and {attacked} attacked scores")]
    SingleClass { legitimate: usize, attacked: usize },
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
