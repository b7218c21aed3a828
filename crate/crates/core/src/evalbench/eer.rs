//! Equal error rate from a threshold sweep.
//!
//! Scores are risks: a sample is rejected when its score is at or above the
//! threshold. FAR is the share of attacked samples accepted, FRR the share of
//! legitimate samples rejected.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::Label;

/// One scored sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub label: Label,
}

pub type ScoreSet = Vec<Scored>;

/// One point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub curve: Vec<SweepPoint>,
}

/// Thresholds are the sorted unique scores followed by one point above the
/// maximum. The EER is read where FAR - FRR changes sign, linearly
/// interpolated between the adjacent sweep points.
pub fn compute_eer(scores: &[Scored]) -> Result<EerResult, EvalError> {
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(EvalError::NonFinite(s.score));
    }
    let n_att = scores.iter().filter(|s| s.label == Label::Attacked).count();
    let n_leg = scores.len() - n_att;
    if n_att == 0 || n_leg == 0 {
        return Err(EvalError::SingleClass { legitimate: n_leg, attacked: n_att });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    // Below the first threshold nothing is accepted.
    let (mut att_below, mut leg_below) = (0usize, 0usize);
    let mut curve = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        curve.push(SweepPoint {
            threshold: t,
            far: att_below as f64 / n_att as f64,
            frr: (n_leg - leg_below) as f64 / n_leg as f64,
        });
        while i < sorted.len() && sorted[i].score == t {
            match sorted[i].label {
                Label::Attacked => att_below += 1,
                Label::Legitimate => leg_below += 1,
            }
            i += 1;
        }
    }
    let top = sorted[sorted.len() - 1].score;
    curve.push(SweepPoint { threshold: top + top.abs().max(1.0), far: 1.0, frr: 0.0 });

    let k = curve.iter().position(|p| p.far - p.frr >= 0.0).expect("last point has far - frr = 1");
    let (eer, threshold) = if k == 0 || curve[k].far == curve[k].frr {
        (curve[k].far, curve[k].threshold)
    } else {
        let (a, b) = (curve[k - 1], curve[k]);
        let (d0, d1) = (a.far - a.frr, b.far - b.frr);
        let lambda = -d0 / (d1 - d0);
        (a.far + lambda * (b.far - a.far), a.threshold + lambda * (b.threshold - a.threshold))
    };
    Ok(EerResult { eer, threshold, curve })
}
