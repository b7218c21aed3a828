//! The three-party authentication protocol: frontend and application backend
//! encrypt behavioral rows under their own keys, the authentication server
//! runs the detector circuits on ciphertexts and learns only masked,
//! challenge-verified aggregates.

pub mod entities;
pub mod risk;
pub mod session;
pub mod transport;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use entities::{AuthServer, Client};
pub use risk::{compute_risk, RiskReport, RiskStrategy, WeightedSigmoid, FALLBACK_RISK};
pub use session::{reference_report, run_session, Simulator, Timing, TriggerPolicy};
pub use transport::{FaultKind, FaultSpec, TrafficStats, Transport};
pub use wire::{Body, Frame, Phase};

use crate::detector::DetectorError;
use crate::he::HeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Frontend,
    Backend,
    AuthServer,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("{0:?} has no registered key")]
    Unregistered(Role),
    #[error("ciphertext under an unexpected key")]
    WrongKey,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("frame integrity check failed")]
    Integrity,
    #[error("{} message dropped", .0.name())]
    Dropped(Phase),
    #[error("{} message timed out", .0.name())]
    Timeout(Phase),
    #[error("expected {expected} responses, got {found}")]
    ResponseCount { expected: usize, found: usize },
    #[error("decryption refused: {0}")]
    Refused(String),
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error("server audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    He(#[from] HeError),
    #[error("detector: {0}")]
    Detector(String),
}

impl From<DetectorError> for ProtocolError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::He(h) => ProtocolError::He(h),
            other => ProtocolError::Detector(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// Behavior of a decrypting client.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientPolicy {
    #[default]
    Honest,
    /// Honest but keeps every decrypted value it sees.
    Passive,
    /// Adds `delta` to every decryption response.
    PerturbAll { delta: f64 },
    /// Adds `delta` to one uniformly chosen response per request.
    PerturbOne { delta: f64 },
    /// Flips a bit in every frame it sends.
    Tamper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerPolicy {
    #[default]
    Honest,
    /// Also asks for decryption of every stored row ciphertext.
    Curious,
}

/// What the server sends as genuine challenge items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenuineMode {
    /// One masked aggregate per domain.
    #[default]
    Aggregate,
    /// One masked mean per chain.
    PerChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Masks are uniform on `[0, mask_range]`.
    #[serde(default = "d_mask")]
    pub mask_range: f64,
    #[serde(default = "d_decoys")]
    pub decoys: usize,
    #[serde(default)]
    pub genuine: GenuineMode,
    #[serde(default = "d_tol")]
    pub tol_he: f64,
    /// Maximum decrypted scalars per authentication as a fraction of the
    /// behavioral values involved.
    #[serde(default = "d_budget")]
    pub budget_fraction: f64,
    /// Fixed (frontend, backend) weights; chain counts when absent.
    #[serde(default)]
    pub domain_weights: Option<(f64, f64)>,
    #[serde(default = "d_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub frontend_policy: ClientPolicy,
    #[serde(default)]
    pub backend_policy: ClientPolicy,
    #[serde(default)]
    pub server_policy: ServerPolicy,
}

fn d_mask() -> f64 {
    1000.0
}
fn d_decoys() -> usize {
    4
}
fn d_tol() -> f64 {
    1e-2
}
fn d_budget() -> f64 {
    0.01
}
fn d_timeout() -> u64 {
    1000
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            mask_range: d_mask(),
            decoys: d_decoys(),
            genuine: GenuineMode::default(),
            tol_he: d_tol(),
            budget_fraction: d_budget(),
            domain_weights: None,
            timeout_ms: d_timeout(),
            faults: Vec::new(),
            frontend_policy: ClientPolicy::default(),
            backend_policy: ClientPolicy::default(),
            server_policy: ServerPolicy::default(),
        }
    }
}

/// Key domain of a source: the request log belongs to the application backend.
pub fn domain_of(source: crate::dataset::Source) -> Role {
    if source.is_frontend() {
        Role::Frontend
    } else {
        Role::Backend
    }
}

#[cfg(test)]
mod tests;
