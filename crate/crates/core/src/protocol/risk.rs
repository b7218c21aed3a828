use serde::{Deserialize, Serialize};

use crate::dataset::Source;
use crate::detector::sigmoid;

/// Risk used when no detector produced a result.
pub const FALLBACK_RISK: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub user: String,
    pub session: u32,
    pub slice: u32,
    /// Mean-of-means logit of the frontend chains.
    pub r_frontend: Option<f64>,
    pub r_backend: Option<f64>,
    pub r_final: f64,
    /// Per-chain mean logits, present when chains are decrypted one by one.
    pub chain_scores: Vec<(Source, f64)>,
    pub window_counts: Vec<(Source, usize)>,
    pub cheat_detected: bool,
    pub integrity_failure: bool,
    pub insufficient_history: Vec<Source>,
    /// No domain result was available and `r_final` is the fallback.
    pub fallback: bool,
    /// Scalars the server obtained through decryption in this authentication.
    pub decrypted_scalars: usize,
    /// Behavioral values (rows times feature dimension) that fed the windows.
    pub values_involved: usize,
    pub errors: Vec<String>,
}

/// Combines per-domain logits into a final risk in `[0, 1]`.
pub trait RiskStrategy {
    /// `domains` holds `(logit, weight)` for each available domain.
    fn combine(&self, domains: &[(f64, f64)]) -> Option<f64>;
}

/// Sigmoid of the weighted mean of domain logits.
#[derive(Debug, Clone, Copy, Default)]
pub struct WeightedSigmoid;

impl RiskStrategy for WeightedSigmoid {
    fn combine(&self, domains: &[(f64, f64)]) -> Option<f64> {
        let total: f64 = domains.iter().map(|(_, w)| w).sum();
        if domains.is_empty() || total <= 0.0 {
            return None;
        }
        let mean = domains.iter().map(|(r, w)| r * w).sum::<f64>() / total;
        Some(sigmoid(mean).clamp(0.0, 1.0))
    }
}

/// Final risk from the two domain logits. Missing domains are dropped and
/// the remaining weights renormalized; nothing available gives the fallback.
pub fn compute_risk(r_frontend: Option<f64>, r_backend: Option<f64>, weights: (f64, f64)) -> f64 {
    compute_risk_with(&WeightedSigmoid, r_frontend, r_backend, weights)
}

pub fn compute_risk_with(
    strategy: &dyn RiskStrategy,
    r_frontend: Option<f64>,
    r_backend: Option<f64>,
    weights: (f64, f64),
) -> f64 {
    let domains: Vec<(f64, f64)> =
        [(r_frontend, weights.0), (r_backend, weights.1)].into_iter().filter_map(|(r, w)| r.map(|r| (r, w))).collect();
    strategy.combine(&domains).unwrap_or(FALLBACK_RISK)
}
