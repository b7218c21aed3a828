use serde::{Deserialize, Serialize};

use super::{DetectorError, Result};
use crate::dataset::{Label, Slice, Source};
use crate::features::{slice_rows, FeatureVector, Scaler, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub source: Source,
    pub h_size: usize,
    pub o_size: usize,
}

impl WindowConfig {
    pub fn new(source: Source, h_size: usize, o_size: usize) -> Result<WindowConfig> {
        if h_size == 0 || o_size == 0 {
            return Err(DetectorError::Window("h_size and o_size must be at least 1".into()));
        }
        Ok(WindowConfig { source, h_size, o_size })
    }

    pub fn rows(&self) -> usize {
        self.h_size + self.o_size
    }
}

/// History rows followed by observation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InvestigationWindow {
    pub rows: Vec<Vec<f64>>,
    pub slice: String,
    pub label: Label,
}

impl InvestigationWindow {
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.concat()
    }
}

/// Feature extraction and scaling for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub source: Source,
    pub vocab: Vocab,
    pub scaler: Scaler,
}

impl Preprocessor {
    /// Fit the request vocabulary and the scaler on training slices.
    pub fn fit(source: Source, slices: &[Slice]) -> Result<Preprocessor> {
        let vocab = if source == Source::Request {
            Vocab::fit(slices.iter().flat_map(|s| s.source(Source::Request)))
        } else {
            Vocab::default()
        };
        let rows: Vec<FeatureVector> = slices.iter().flat_map(|s| slice_rows(s, source, &vocab)).collect();
        let scaler = Scaler::fit(rows.iter().map(|r| r.values.as_slice()))?;
        Ok(Preprocessor { source, vocab, scaler })
    }

    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    /// Scaled feature rows of a slice in time order.
    pub fn rows(&self, slice: &Slice) -> Vec<FeatureVector> {
        slice_rows(slice, self.source, &self.vocab)
            .into_iter()
            .map(|mut r| {
                r.values = self.scaler.apply(&r.values).expect("extractor output matches scaler dimension");
                r
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PooledSession {
    session_id: String,
    start: i64,
    rows: Vec<Vec<f64>>,
}

/// One user's enrolled feature rows for one source, grouped by session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryPool {
    sessions: Vec<PooledSession>,
}

impl HistoryPool {
    /// Pool the rows of a user's clean slices.
    pub fn from_slices<'a>(slices: impl IntoIterator<Item = &'a Slice>, prep: &Preprocessor) -> HistoryPool {
        let mut pool = HistoryPool::default();
        for s in slices {
            let rows = prep.rows(s).into_iter().map(|r| r.values);
            pool.push(&s.session_id, s.session_start(), rows);
        }
        pool
    }

    pub fn push(&mut self, session_id: &str, start: i64, rows: impl IntoIterator<Item = Vec<f64>>) {
        let pos = match self.sessions.iter().position(|s| s.session_id == session_id) {
            Some(p) => p,
            None => {
                let at = self.sessions.partition_point(|s| s.start <= start);
                self.sessions.insert(at, PooledSession { session_id: session_id.into(), start, rows: Vec::new() });
                at
            }
        };
        self.sessions[pos].rows.extend(rows);
    }

    /// Number of rows from sessions starting before `session_start`.
    pub fn available(&self, session_start: i64) -> usize {
        self.sessions.iter().filter(|s| s.start < session_start).map(|s| s.rows.len()).sum()
    }

    /// The `h` most recent rows of sessions that started before `session_start`, oldest first.
    pub fn recent(&self, session_start: i64, h: usize, source: Source) -> Result<Vec<Vec<f64>>> {
        let have = self.available(session_start);
        if have < h {
            return Err(DetectorError::InsufficientHistory { src: source, have, need: h });
        }
        let mut out: Vec<Vec<f64>> = self
            .sessions
            .iter()
            .rev()
            .filter(|s| s.start < session_start)
            .flat_map(|s| s.rows.iter().rev())
            .take(h)
            .cloned()
            .collect();
        out.reverse();
        Ok(out)
    }
}

/// Window label: attacked when most observation rows come from someone else.
pub fn window_label(owner: &str, observation: &[FeatureVector]) -> Label {
    let foreign = observation.iter().filter(|r| r.origin.user_id != owner).count();
    if 2 * foreign > observation.len() {
        Label::Attacked
    } else {
        Label::Legitimate
    }
}

/// Split `rows` into consecutive groups of `o_size` (remainder dropped) and
/// prepend the same history to each.
pub fn windows_from_rows(
    history: &[Vec<f64>],
    rows: &[FeatureVector],
    owner: &str,
    slice_key: &str,
    cfg: &WindowConfig,
) -> Result<Vec<InvestigationWindow>> {
    if history.len() != cfg.h_size {
        return Err(DetectorError::InsufficientHistory { src: cfg.source, have: history.len(), need: cfg.h_size });
    }
    Ok(rows
        .chunks_exact(cfg.o_size)
        .map(|obs| InvestigationWindow {
            rows: history.iter().cloned().chain(obs.iter().map(|r| r.values.clone())).collect(),
            slice: slice_key.to_string(),
            label: window_label(owner, obs),
        })
        .collect())
}

/// Investigation windows of one slice for one chain.
pub fn build_windows(
    pool: &HistoryPool,
    slice: &Slice,
    prep: &Preprocessor,
    cfg: &WindowConfig,
) -> Result<Vec<InvestigationWindow>> {
    let history = pool.recent(slice.session_start(), cfg.h_size, cfg.source)?;
    windows_from_rows(&history, &prep.rows(slice), &slice.user_id, &slice.key(), cfg)
}
