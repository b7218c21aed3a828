//! Dataset slices to trained detector chains.

use std::collections::BTreeMap;

use super::{
    build_windows, train, Architecture, DetectorChain, DetectorError, HistoryPool, InvestigationWindow, Preprocessor,
    Result, TrainConfig, TrainingSet, WindowConfig,
};
use crate::dataset::Slice;

/// Per-user history pools for one preprocessor.
pub fn history_pools(history: &[Slice], prep: &Preprocessor) -> BTreeMap<String, HistoryPool> {
    let mut by_user: BTreeMap<String, Vec<&Slice>> = BTreeMap::new();
    for s in history {
        by_user.entry(s.user_id.clone()).or_default().push(s);
    }
    by_user.into_iter().map(|(u, slices)| (u, HistoryPool::from_slices(slices, prep))).collect()
}

/// Windows of every slice, grouped per slice in input order. Slices whose
/// user lacks history yield `None`.
pub fn slice_windows(
    pools: &BTreeMap<String, HistoryPool>,
    slices: &[Slice],
    prep: &Preprocessor,
    cfg: &WindowConfig,
) -> Result<Vec<Option<Vec<InvestigationWindow>>>> {
    let empty = HistoryPool::default();
    slices
        .iter()
        .map(|s| {
            let pool = pools.get(&s.user_id).unwrap_or(&empty);
            match build_windows(pool, s, prep, cfg) {
                Ok(w) => Ok(Some(w)),
                Err(DetectorError::InsufficientHistory { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Fit the preprocessor on `fit` slices and train a model on the windows of `train_slices`.
pub fn train_chain(
    window: WindowConfig,
    arch: Architecture,
    cfg: &TrainConfig,
    fit: &[Slice],
    history: &[Slice],
    train_slices: &[Slice],
) -> Result<DetectorChain> {
    let prep = Preprocessor::fit(window.source, fit)?;
    let pools = history_pools(history, &prep);
    let windows = slice_windows(&pools, train_slices, &prep, &window)?;
    let set = TrainingSet::from_windows(windows.iter().flatten().flatten());
    let (model, report) = train(arch, window.rows(), prep.dim(), &set, cfg)?;
    Ok(DetectorChain { window, prep, model, report })
}
