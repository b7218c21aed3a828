//! Per-source feature extraction and dataset-level scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{chunk_sensors, DataPoint, Payload, SensorChunk, SensorSample, Slice, Source, TouchPoint, CHUNK_LEN};

pub const SWIPE_DIM: usize = 8;
pub const SENSOR_DIM: usize = 3 * CHUNK_LEN;
/// Default clipping bound after standardization.
pub const CLIP_BOUND: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("swipe has {0} points; at least 2 are required")]
    TooFewPoints(usize),
    #[error("swipe has zero duration")]
    ZeroDuration,
    #[error("sensor chunk has {0} samples, expected {CHUNK_LEN}")]
    WrongSampleCount(usize),
    #[error("expected a {expected} record, got {found}")]
    WrongSource { expected: Source, found: Source },
    #[error("dimension mismatch: scaler has {expected}, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least 2 vectors to fit a scaler, got {0}")]
    TooFewVectors(usize),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub user_id: String,
    pub session_id: String,
    pub timestamp: i64,
}

impl Origin {
    fn of(p: &DataPoint) -> Origin {
        Origin { user_id: p.user_id.clone(), session_id: p.session_id.clone(), timestamp: p.timestamp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub source: Source,
    pub values: Vec<f64>,
    pub origin: Origin,
}

fn dist(a: &TouchPoint, b: &TouchPoint) -> f64 {
    (b.x - a.x).hypot(b.y - a.y)
}

/// Shape and dynamics of one swipe trace:
/// `[mean speed, mean |acceleration|, path length, displacement, max deviation
/// from the chord, bounding-box area, total turning angle, duration]`, with
/// lengths in pixels and times in seconds.
pub fn swipe_features(trace: &[TouchPoint]) -> Result<[f64; SWIPE_DIM]> {
    if trace.len() < 2 {
        return Err(FeatureError::TooFewPoints(trace.len()));
    }
    let (first, last) = (&trace[0], &trace[trace.len() - 1]);
    let duration = (last.t - first.t) as f64 / 1000.0;
    if duration <= 0.0 {
        return Err(FeatureError::ZeroDuration);
    }
    let path: f64 = trace.windows(2).map(|w| dist(&w[0], &w[1])).sum();
    let displacement = dist(first, last);

    let velocities: Vec<(f64, f64)> = trace
        .windows(2)
        .filter(|w| w[1].t > w[0].t)
        .map(|w| (dist(&w[0], &w[1]) / ((w[1].t - w[0].t) as f64 / 1000.0), (w[0].t + w[1].t) as f64 / 2000.0))
        .collect();
    let accels: Vec<f64> = velocities
        .windows(2)
        .filter(|w| w[1].1 > w[0].1)
        .map(|w| ((w[1].0 - w[0].0) / (w[1].1 - w[0].1)).abs())
        .collect();
    let mean_accel = if accels.is_empty() { 0.0 } else { accels.iter().sum::<f64>() / accels.len() as f64 };

    let (cx, cy) = (last.x - first.x, last.y - first.y);
    let deviation = trace
        .iter()
        .map(|p| {
            let (px, py) = (p.x - first.x, p.y - first.y);
            if displacement > 0.0 {
                (cx * py - cy * px).abs() / displacement
            } else {
                px.hypot(py)
            }
        })
        .fold(0.0, f64::max);

    let (mut min_x, mut max_x, mut min_y, mut max_y) = (first.x, first.x, first.y, first.y);
    for p in trace {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let area = (max_x - min_x) * (max_y - min_y);

    let headings: Vec<f64> = trace
        .windows(2)
        .filter(|w| dist(&w[0], &w[1]) > 0.0)
        .map(|w| (w[1].y - w[0].y).atan2(w[1].x - w[0].x))
        .collect();
    let turning: f64 = headings
        .windows(2)
        .map(|h| {
            let mut d = h[1] - h[0];
            while d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
            }
            while d < -std::f64::consts::PI {
                d += std::f64::consts::TAU;
            }
            d.abs()
        })
        .sum();

    Ok([path / duration, mean_accel, path, displacement, deviation, area, turning, duration])
}

pub fn extract_swipe(point: &DataPoint) -> Result<FeatureVector> {
    let Payload::Swipe(s) = &point.payload else {
        return Err(FeatureError::WrongSource { expected: Source::Swipe, found: point.source() });
    };
    Ok(FeatureVector { source: Source::Swipe, values: swipe_features(&s.points)?.to_vec(), origin: Origin::of(point) })
}

/// Raw x, y, z of each sample in time order.
pub fn sensor_features(samples: &[SensorSample]) -> Result<Vec<f64>> {
    if samples.len() != CHUNK_LEN {
        return Err(FeatureError::WrongSampleCount(samples.len()));
    }
    Ok(samples.iter().flat_map(|s| [s.x, s.y, s.z]).collect())
}

pub fn extract_sensor(chunk: &SensorChunk, session_id: &str) -> Result<FeatureVector> {
    Ok(FeatureVector {
        source: chunk.source,
        values: sensor_features(&chunk.samples)?,
        origin: Origin {
            user_id: chunk.origin_user.clone(),
            session_id: session_id.to_string(),
            timestamp: chunk.timestamp,
        },
    })
}

/// Page and operating-system vocabularies for one-hot encoding. Each group
/// gets a trailing "other" slot for unseen values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub pages: Vec<String>,
    pub oses: Vec<String>,
}

impl Vocab {
    pub fn fit<'a>(requests: impl IntoIterator<Item = &'a DataPoint>) -> Vocab {
        let mut pages = std::collections::BTreeSet::new();
        let mut oses = std::collections::BTreeSet::new();
        for p in requests {
            if let Payload::Request(r) = &p.payload {
                pages.insert(r.page.clone());
                oses.insert(r.user_agent.clone());
            }
        }
        Vocab { pages: pages.into_iter().collect(), oses: oses.into_iter().collect() }
    }

    pub fn dim(&self) -> usize {
        self.pages.len() + 1 + self.oses.len() + 1 + 2
    }
}

fn one_hot(vocab: &[String], value: &str, out: &mut Vec<f64>) {
    let hit = vocab.iter().position(|v| v == value).unwrap_or(vocab.len());
    out.extend((0..=vocab.len()).map(|i| if i == hit { 1.0 } else { 0.0 }));
}

/// `one-hot(page) ++ one-hot(os) ++ [finished_game, score]`.
pub fn extract_request(point: &DataPoint, vocab: &Vocab) -> Result<FeatureVector> {
    let Payload::Request(r) = &point.payload else {
        return Err(FeatureError::WrongSource { expected: Source::Request, found: point.source() });
    };
    let mut values = Vec::with_capacity(vocab.dim());
    one_hot(&vocab.pages, &r.page, &mut values);
    one_hot(&vocab.oses, &r.user_agent, &mut values);
    values.push(if r.finished_game { 1.0 } else { 0.0 });
    values.push(r.score.unwrap_or(0.0));
    Ok(FeatureVector { source: Source::Request, values, origin: Origin::of(point) })
}

pub fn feature_dim(source: Source, vocab: &Vocab) -> usize {
    match source {
        Source::Swipe => SWIPE_DIM,
        Source::Request => vocab.dim(),
        _ => SENSOR_DIM,
    }
}

/// All feature rows of one source in a slice, in time order. Taps and
/// degenerate swipes are skipped.
pub fn slice_rows(slice: &Slice, source: Source, vocab: &Vocab) -> Vec<FeatureVector> {
    match source {
        Source::Swipe => slice.source(source).iter().filter_map(|p| extract_swipe(p).ok()).collect(),
        Source::Request => slice.source(source).iter().filter_map(|p| extract_request(p, vocab).ok()).collect(),
        _ => chunk_sensors(slice)
            .into_iter()
            .find(|(s, _)| *s == source)
            .map(|(_, chunks)| {
                chunks.iter().filter_map(|c| extract_sensor(c, &slice.session_id).ok()).collect()
            })
            .unwrap_or_default(),
    }
}

/// Per-dimension standardization with clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub offset: Vec<f64>,
    pub gain: Vec<f64>,
    pub bound: f64,
}

impl Scaler {
    /// Mean and population standard deviation per dimension. Constant
    /// dimensions get offset 0 and gain 1.
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Scaler> {
        let vectors: Vec<&[f64]> = vectors.into_iter().collect();
        if vectors.len() < 2 {
            return Err(FeatureError::TooFewVectors(vectors.len()));
        }
        let dim = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(FeatureError::DimensionMismatch { expected: dim, found: v.len() });
        }
        let n = vectors.len() as f64;
        let mut offset = vec![0.0; dim];
        let mut gain = vec![1.0; dim];
        for d in 0..dim {
            let mean = vectors.iter().map(|v| v[d]).sum::<f64>() / n;
            let var = vectors.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 1e-12 * mean.abs().max(1.0) {
                offset[d] = mean;
                gain[d] = 1.0 / std;
            }
        }
        Ok(Scaler { offset, gain, bound: CLIP_BOUND })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        Ok(v
            .iter()
            .zip(self.offset.iter().zip(&self.gain))
            .map(|(x, (o, g))| ((x - o) * g).clamp(-self.bound, self.bound))
            .collect())
    }
}
