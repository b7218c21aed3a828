//! EER of single window inferences over a grid of window sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_eer, EvalError, Experiment, Result, Scored};
use crate::dataset::Source;
use crate::detector::{
    history_pools, slice_windows, train_chain, Architecture, DetectorError, TrainConfig, WindowConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "d_sources")]
    pub sources: Vec<Source>,
    #[serde(default = "d_h")]
    pub h_sizes: Vec<usize>,
    #[serde(default = "d_o")]
    pub o_sizes: Vec<usize>,
}

fn d_sources() -> Vec<Source> {
    Source::ALL.to_vec()
}
fn d_h() -> Vec<usize> {
    vec![10, 20, 30, 40, 50]
}
fn d_o() -> Vec<usize> {
    vec![3, 5, 7, 10]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { sources: d_sources(), h_sizes: d_h(), o_sizes: d_o() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub source: Source,
    pub h: usize,
    pub o: usize,
    /// Absent when the cell has no trainable windows or a single test class.
    pub eer: Option<f64>,
    pub test_windows: usize,
}

fn cell(ex: &Experiment, fit: &[crate::dataset::Slice], window: WindowConfig, arch: Architecture, tcfg: &TrainConfig) -> Result<GridCell> {
    let absent = |n| GridCell { source: window.source, h: window.h_size, o: window.o_size, eer: None, test_windows: n };
    let chain = match train_chain(window, arch, tcfg, fit, &ex.history, &ex.train) {
        Ok(c) => c,
        Err(DetectorError::EmptyTrainingSet) => return Ok(absent(0)),
        Err(e) => return Err(e.into()),
    };
    let pools = history_pools(&ex.history, &chain.prep);
    let windows = slice_windows(&pools, &ex.test, &chain.prep, &window)?;
    let mut scores = Vec::new();
    for w in windows.iter().flatten().flatten() {
        scores.push(Scored { score: chain.infer_plain(w)?, label: w.label });
    }
    match compute_eer(&scores) {
        Ok(r) => Ok(GridCell { eer: Some(r.eer), ..absent(scores.len()) }),
        Err(EvalError::SingleClass { .. }) => Ok(absent(scores.len())),
        Err(e) => Err(e),
    }
}

/// Train one model per (source, h, o) on training users and compute the
/// window-level EER on test users. Cells run in parallel.
pub fn sweep_windows(ex: &Experiment, cfg: &SweepConfig, arch: Architecture, tcfg: &TrainConfig) -> Result<Vec<GridCell>> {
    let fit = ex.fit_slices();
    let mut windows = Vec::new();
    for &s in &cfg.sources {
        for &h in &cfg.h_sizes {
            for &o in &cfg.o_sizes {
                windows.push(WindowConfig::new(s, h, o)?);
            }
        }
    }
    windows.into_par_iter().map(|w| cell(ex, &fit, w, arch, tcfg)).collect()
}
