//! Encryption time, traffic expansion and inference overhead of a protocol run.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{summarize, Result, Summary};
use crate::dataset::Slice;
use crate::detector::DetectorChain;
use crate::he::HeBackend;
use crate::protocol::{reference_report, run_session, Phase, ProtocolConfig, RiskReport, Simulator, TrafficStats, TriggerPolicy};

/// Ciphertext-to-plaintext size ratio reported for the original deployment.
pub const REFERENCE_EXPANSION: f64 = 20.83;
/// Encrypted-to-plaintext inference time ratio reported for the original deployment.
pub const REFERENCE_OVERHEAD: f64 = 21.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub backend: String,
    pub platform: String,
    pub slices: usize,
    /// Per-slice feature extraction and encryption time of both clients.
    pub encrypt_ms: Summary,
    /// Behavioral values sent, as 8-byte floats.
    pub raw_bytes: u64,
    /// Collect frames as sent.
    pub encrypted_bytes: u64,
    pub expansion: f64,
    /// Per-slice plaintext window construction and inference.
    pub plain_ms: Summary,
    /// Per-slice encrypted window assembly and inference.
    pub encrypted_ms: Summary,
    pub overhead: f64,
    pub traffic: TrafficStats,
}

impl PerfReport {
    /// `(metric, stat, value)` rows.
    pub fn rows(&self) -> Vec<(&'static str, &'static str, f64)> {
        let mut rows = Vec::new();
        for (metric, s) in
            [("encrypt_ms", &self.encrypt_ms), ("plain_infer_ms", &self.plain_ms), ("enc_infer_ms", &self.encrypted_ms)]
        {
            rows.extend([
                (metric, "q1", s.q1),
                (metric, "median", s.median),
                (metric, "q3", s.q3),
                (metric, "mean", s.mean),
                (metric, "std", s.std),
            ]);
        }
        rows.push(("raw_bytes", "total", self.raw_bytes as f64));
        rows.push(("encrypted_bytes", "total", self.encrypted_bytes as f64));
        rows.push(("expansion", "ratio", self.expansion));
        rows.push(("overhead", "ratio", self.overhead));
        for phase in Phase::ALL {
            rows.push((phase.name(), "bytes", self.traffic.bytes(phase) as f64));
        }
        rows
    }

    /// Human-readable summary with reference points from the original deployment.
    pub fn summary(&self) -> String {
        let line = |name: &str, s: &Summary| {
            format!(
                "{name:<22} q1 {:>10.3}  median {:>10.3}  q3 {:>10.3}  mean {:>10.3}  std {:>10.3}\n",
                s.q1, s.median, s.q3, s.mean, s.std
            )
        };
        let mut out = format!("backend {} on {} ({} slices)\n", self.backend, self.platform, self.slices);
        out += &line("encryption ms", &self.encrypt_ms);
        out += &line("plaintext inference ms", &self.plain_ms);
        out += &line("encrypted inference ms", &self.encrypted_ms);
        out += &format!(
            "traffic: {} raw bytes, {} encrypted bytes, expansion {:.2}x\n",
            self.raw_bytes, self.encrypted_bytes, self.expansion
        );
        out += &format!("inference overhead {:.2}x\n", self.overhead);
        out += &format!(
            "reference points (not asserted): expansion {REFERENCE_EXPANSION}x, overhead {REFERENCE_OVERHEAD}x in the original deployment\n"
        );
        out
    }
}

/// Run the protocol over `slices` (grouped per user, history enrolled first)
/// and time the authenticated ones against the plaintext pipeline.
pub fn measure_performance(
    backend: Arc<dyn HeBackend>,
    chains: &[DetectorChain],
    history: &[Slice],
    slices: &[Slice],
    cfg: &ProtocolConfig,
    trigger: &TriggerPolicy,
    platform: &str,
    seed: u64,
) -> Result<(PerfReport, Vec<RiskReport>)> {
    let kind = backend.kind();
    let mut sim = Simulator::new(backend, chains, cfg.clone(), seed)?;
    let mut users: Vec<&str> = slices.iter().map(|s| s.user_id.as_str()).collect();
    users.sort_unstable();
    users.dedup();
    let mut reports = Vec::new();
    let mut plain_ms = Vec::new();
    for user in users {
        let own = |s: &[Slice]| s.iter().filter(|s| s.user_id == user).cloned().collect::<Vec<_>>();
        let user_history = own(history);
        let mut user_slices = own(slices);
        user_slices.sort_by_key(|s| (s.session_start(), s.index));
        reports.extend(run_session(&mut sim, &user_history, &user_slices, trigger));
        for s in user_slices.iter().filter(|s| trigger.fires(s)) {
            let start = Instant::now();
            reference_report(chains, &user_history, s, cfg.domain_weights)?;
            plain_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    let encrypt: Vec<f64> = sim.timings.iter().map(|t| t.encrypt_ms).collect();
    let encrypted: Vec<f64> = sim.timings.iter().map(|t| t.infer_ms).collect();
    let raw_bytes = 8 * (sim.frontend.values_sent + sim.backend.values_sent) as u64;
    let encrypted_bytes = sim.stats().bytes(Phase::Collect);
    let (plain, enc) = (summarize(&plain_ms), summarize(&encrypted));
    let report = PerfReport {
        backend: kind.to_string(),
        platform: platform.to_string(),
        slices: reports.len(),
        encrypt_ms: summarize(&encrypt),
        raw_bytes,
        encrypted_bytes,
        expansion: encrypted_bytes as f64 / raw_bytes.max(1) as f64,
        plain_ms: plain,
        encrypted_ms: enc,
        overhead: enc.mean / plain.mean,
        traffic: sim.stats().clone(),
    };
    Ok((report, reports))
}
