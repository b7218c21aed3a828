//! In-process message bus with byte accounting and injectable faults.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::wire::{Frame, Phase, FRAME_HEADER};
use super::{ProtocolError, Result, Role};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultKind {
    Drop,
    /// Flip one random bit of the frame.
    Tamper,
    Delay { ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    /// Restrict to one phase; all phases when absent.
    #[serde(default)]
    pub phase: Option<Phase>,
    #[serde(default)]
    pub sender: Option<Role>,
    pub kind: FaultKind,
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTraffic {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrafficStats {
    pub per_phase: BTreeMap<Phase, PhaseTraffic>,
    pub dropped: u64,
    pub tampered: u64,
    pub timed_out: u64,
    /// Simulated transit time, including injected delays.
    pub elapsed_ms: u64,
}

impl TrafficStats {
    pub fn bytes(&self, phase: Phase) -> u64 {
        self.per_phase.get(&phase).map_or(0, |p| p.bytes)
    }

    pub fn total_bytes(&self) -> u64 {
        self.per_phase.values().map(|p| p.bytes).sum()
    }
}

pub struct Transport {
    faults: Vec<FaultSpec>,
    timeout_ms: u64,
    rng: ChaCha20Rng,
    pub stats: TrafficStats,
}

impl Transport {
    pub fn new(faults: Vec<FaultSpec>, timeout_ms: u64, seed: u64) -> Transport {
        Transport { faults, timeout_ms, rng: ChaCha20Rng::seed_from_u64(seed), stats: TrafficStats::default() }
    }

    /// Carry an encoded frame to its receiver and decode it there.
    pub fn deliver(&mut self, mut bytes: Vec<u8>) -> Result<Frame> {
        let phase_code = bytes.first().copied().unwrap_or(u8::MAX);
        let phase = Phase::ALL.get(phase_code as usize).copied().unwrap_or(Phase::Collect);
        let sender = match bytes.get(1) {
            Some(0) => Some(Role::Frontend),
            Some(1) => Some(Role::Backend),
            Some(2) => Some(Role::AuthServer),
            _ => None,
        };
        let traffic = self.stats.per_phase.entry(phase).or_default();
        traffic.messages += 1;
        traffic.bytes += bytes.len() as u64;
        let mut delay = 0;
        for f in &self.faults {
            if f.phase.is_some_and(|p| p != phase) || f.sender.is_some_and(|s| Some(s) != sender) {
                continue;
            }
            if !self.rng.random_bool(f.probability.clamp(0.0, 1.0)) {
                continue;
            }
            match f.kind {
                FaultKind::Drop => {
                    self.stats.dropped += 1;
                    return Err(ProtocolError::Dropped(phase));
                }
                FaultKind::Tamper => {
                    self.stats.tampered += 1;
                    let i = self.rng.random_range(FRAME_HEADER.min(bytes.len())..bytes.len().max(1));
                    if let Some(b) = bytes.get_mut(i) {
                        *b ^= 1 << self.rng.random_range(0..8);
                    }
                }
                FaultKind::Delay { ms } => delay += ms,
            }
        }
        self.stats.elapsed_ms += delay.min(self.timeout_ms);
        if delay > self.timeout_ms {
            self.stats.timed_out += 1;
            return Err(ProtocolError::Timeout(phase));
        }
        Frame::decode(&bytes)
    }
}
