//! Slice-level EER by number of combined detector chains and entry point.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_eer, EvalError, Experiment, Result, Scored};
use crate::dataset::{Label, Slice, Source};
use crate::detector::DetectorChain;
use crate::he::HeBackend;
use crate::protocol::{compute_risk, domain_of, run_session, GenuineMode, ProtocolConfig, Role, Simulator, TriggerPolicy};

/// Protocol output for one test slice, with every chain decrypted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScores {
    pub key: String,
    pub label: Label,
    pub entry_point: Option<f64>,
    pub chain_scores: Vec<(Source, f64)>,
    pub r_final: f64,
    pub cheat_detected: bool,
}

/// Run the protocol over every test user's slices. Users run in parallel,
/// each with its own entities.
pub fn score_slices(
    backend: Arc<dyn HeBackend>,
    chains: &[DetectorChain],
    ex: &Experiment,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<Vec<SliceScores>> {
    let cfg = ProtocolConfig { genuine: GenuineMode::PerChain, ..cfg.clone() };
    let per_user: Vec<Result<Vec<SliceScores>>> = ex
        .test_users
        .par_iter()
        .enumerate()
        .map(|(i, user)| {
            let of_user = |s: &[Slice]| s.iter().filter(|s| s.user_id == *user).cloned().collect::<Vec<_>>();
            let history = of_user(&ex.history);
            let mut slices = of_user(&ex.test);
            slices.sort_by_key(|s| (s.session_start(), s.index));
            let mut sim = Simulator::new(backend.clone(), chains, cfg.clone(), seed.wrapping_add(i as u64))?;
            let reports = run_session(&mut sim, &history, &slices, &TriggerPolicy::Interval);
            Ok(reports
                .into_iter()
                .zip(&slices)
                .map(|(r, s)| SliceScores {
                    key: s.key(),
                    label: s.label,
                    entry_point: s.entry_point,
                    chain_scores: r.chain_scores,
                    r_final: r.r_final,
                    cheat_detected: r.cheat_detected,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_user {
        out.extend(r?);
    }
    Ok(out)
}

/// Final risk as the protocol would compute it with only `subset` deployed.
pub fn subset_risk(scores: &SliceScores, subset: &[Source], weights: Option<(f64, f64)>) -> f64 {
    if scores.cheat_detected {
        return 1.0;
    }
    let domain = |role: Role| {
        let v: Vec<f64> = scores
            .chain_scores
            .iter()
            .filter(|(s, _)| subset.contains(s) && domain_of(*s) == role)
            .map(|(_, r)| *r)
            .collect();
        ((!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64), v.len() as f64)
    };
    let (rf, nf) = domain(Role::Frontend);
    let (rb, nb) = domain(Role::Backend);
    compute_risk(rf, rb, weights.unwrap_or((nf, nb)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub sources: Vec<Source>,
    /// EER over legitimate slices and attacked slices of one entry point.
    pub by_entry_point: Vec<(f64, Option<f64>)>,
    /// EER over all slices pooled.
    pub overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub cardinality: usize,
    pub ep: f64,
    pub eer: Option<f64>,
    pub overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTable {
    pub subsets: Vec<SubsetResult>,
    pub rows: Vec<SliceRow>,
}

impl SliceTable {
    pub fn row(&self, cardinality: usize, ep: f64) -> Option<&SliceRow> {
        self.rows.iter().find(|r| r.cardinality == cardinality && (r.ep - ep).abs() < 1e-9)
    }
}

fn eer_of(items: impl Iterator<Item = Scored>) -> Result<Option<f64>> {
    let set: Vec<Scored> = items.collect();
    match compute_eer(&set) {
        Ok(r) => Ok(Some(r.eer)),
        Err(EvalError::SingleClass { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// EER for every non-empty subset of `sources`, averaged by subset size.
pub fn evaluate_slices(
    scores: &[SliceScores],
    sources: &[Source],
    entry_points: &[f64],
    weights: Option<(f64, f64)>,
) -> Result<SliceTable> {
    let legitimate = scores.iter().filter(|s| s.label == Label::Legitimate).count();
    if legitimate == 0 || legitimate == scores.len() {
        return Err(EvalError::SingleClass { legitimate, attacked: scores.len() - legitimate });
    }
    let mut subsets = Vec::new();
    for mask in 1u32..(1 << sources.len()) {
        let subset: Vec<Source> =
            sources.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, s)| *s).collect();
        let risks: Vec<(Scored, Option<f64>)> = scores
            .iter()
            .map(|s| (Scored { score: subset_risk(s, &subset, weights), label: s.label }, s.entry_point))
            .collect();
        let overall = eer_of(risks.iter().map(|(r, _)| *r))?;
        let mut by_entry_point = Vec::new();
        for &ep in entry_points {
            let eer = eer_of(
                risks
                    .iter()
                    .filter(|(r, e)| r.label == Label::Legitimate || e.is_some_and(|e| (e - ep).abs() < 1e-9))
                    .map(|(r, _)| *r),
            )?;
            by_entry_point.push((ep, eer));
        }
        subsets.push(SubsetResult { sources: subset, by_entry_point, overall });
    }
    let mut rows = Vec::new();
    for k in 1..=sources.len() {
        let group: Vec<&SubsetResult> = subsets.iter().filter(|s| s.sources.len() == k).collect();
        let overall = mean(group.iter().map(|s| s.overall));
        for (i, &ep) in entry_points.iter().enumerate() {
            rows.push(SliceRow { cardinality: k, ep, eer: mean(group.iter().map(|s| s.by_entry_point[i].1)), overall });
        }
    }
    Ok(SliceTable { subsets, rows })
}
