//! Simulation driver: wires the three entities over the transport and runs
//! authentications, plus a ciphertext-free reference pipeline.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::entities::{AuthServer, Client, DecryptBudget, DomainOutcome};
use super::risk::{compute_risk, RiskReport, FALLBACK_RISK};
use super::transport::{TrafficStats, Transport};
use super::wire::{Body, Frame};
use super::{domain_of, ProtocolConfig, ProtocolError, Result, Role};
use crate::dataset::{Slice, Source};
use crate::detector::{build_windows, DetectorChain, DetectorError, HistoryPool};
use crate::he::HeBackend;

/// When authentications run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerPolicy {
    /// After every slice.
    #[default]
    Interval,
    /// Only for the listed slice keys.
    OnEvent { events: Vec<String> },
}

impl TriggerPolicy {
    pub fn fires(&self, slice: &Slice) -> bool {
        match self {
            TriggerPolicy::Interval => true,
            TriggerPolicy::OnEvent { events } => events.contains(&slice.key()),
        }
    }
}

/// Wall-clock cost of one authentication.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    /// Feature extraction and encryption of the slice, both clients.
    pub encrypt_ms: f64,
    /// Window assembly and encrypted inference at the server.
    pub infer_ms: f64,
}

pub struct Simulator {
    pub frontend: Client,
    pub backend: Client,
    pub server: AuthServer,
    pub transport: Transport,
    cfg: ProtocolConfig,
    /// Reports as received by the application backend.
    pub delivered: Vec<RiskReport>,
    pub timings: Vec<Timing>,
}

impl Simulator {
    /// Create the entities and register the client keys at the server.
    pub fn new(
        backend: Arc<dyn HeBackend>,
        chains: &[DetectorChain],
        cfg: ProtocolConfig,
        seed: u64,
    ) -> Result<Simulator> {
        let budget = DecryptBudget::shared(cfg.budget_fraction);
        let frontend = Client::new(Role::Frontend, backend.clone(), chains, &cfg, budget.clone(), seed ^ 0x11)?;
        let app = Client::new(Role::Backend, backend.clone(), chains, &cfg, budget, seed ^ 0x22)?;
        let mut server = AuthServer::new(backend, chains, cfg.clone(), seed ^ 0x33)?;
        server.register(Role::Frontend, frontend.public_key().clone(), frontend.eval_key().clone());
        server.register(Role::Backend, app.public_key().clone(), app.eval_key().clone());
        Ok(Simulator {
            frontend,
            backend: app,
            server,
            transport: Transport::new(cfg.faults.clone(), cfg.timeout_ms, seed ^ 0x44),
            cfg,
            delivered: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn stats(&self) -> &TrafficStats {
        &self.transport.stats
    }

    fn client(&mut self, role: Role) -> &mut Client {
        match role {
            Role::Frontend => &mut self.frontend,
            _ => &mut self.backend,
        }
    }

    fn send(&mut self, sender: Role, receiver: Role, body: Body) -> Result<Body> {
        let mut bytes = Frame { sender, receiver, body }.encode();
        if sender != Role::AuthServer && self.client(sender).tampers() {
            let last = bytes.len() - 1;
            bytes[last / 2] ^= 0x04;
        }
        let frame = self.transport.deliver(bytes)?;
        if frame.sender != sender || frame.receiver != receiver {
            return Err(ProtocolError::Malformed("misrouted frame".into()));
        }
        Ok(frame.body)
    }

    fn collect(&mut self, slice: &Slice, enroll: bool) -> (Vec<ProtocolError>, f64) {
        let mut errors = Vec::new();
        let mut encrypt_ms = 0.0;
        for role in [Role::Frontend, Role::Backend] {
            let start = Instant::now();
            let body = self.client(role).collect(slice, enroll);
            encrypt_ms += start.elapsed().as_secs_f64() * 1e3;
            let sent = body
                .and_then(|body| self.send(role, Role::AuthServer, body))
                .and_then(|body| self.server.receive_collect(role, body));
            if let Err(e) = sent {
                errors.push(e);
            }
        }
        (errors, encrypt_ms)
    }

    /// Store a slice as history. Returns the per-client errors, if any.
    pub fn enroll(&mut self, slice: &Slice) -> Vec<ProtocolError> {
        self.collect(slice, true).0
    }

    /// Collect a slice without authenticating it.
    pub fn observe(&mut self, slice: &Slice) -> Vec<ProtocolError> {
        self.collect(slice, false).0
    }

    fn decrypt_domain(&mut self, outcome: &mut Vec<(Role, DomainOutcome)>, agg: super::entities::DomainAggregate, user: &str) {
        let role = agg.role;
        let result = (|| {
            let (request, challenge) = self.server.challenge(&agg, user)?;
            let request = self.send(Role::AuthServer, role, request)?;
            let Body::DecryptRequest { auth_id, ciphertexts } = request else {
                return Err(ProtocolError::Unexpected("expected decrypt request".into()));
            };
            let response = self.client(role).decrypt_request(auth_id, &ciphertexts);
            let response = self.send(role, Role::AuthServer, response)?;
            Ok(self.server.verify(&challenge, response))
        })();
        outcome.push((role, result.unwrap_or_else(|e| DomainOutcome { error: Some(e), ..DomainOutcome::default() })));
    }

    /// Collect a slice and run the inference, decryption and risk phases.
    pub fn authenticate(&mut self, slice: &Slice) -> RiskReport {
        let mut report = RiskReport {
            user: slice.user_id.clone(),
            session: 0,
            slice: slice.index as u32,
            r_final: FALLBACK_RISK,
            ..RiskReport::default()
        };
        let (mut errors, encrypt_ms) = self.collect(slice, false);
        let mut timing = Timing { encrypt_ms, infer_ms: 0.0 };
        self.audit_into(&mut errors);

        let session = match self.backend.collect_ordinal(&slice.session_id) {
            Some(s) => s,
            None => {
                self.timings.push(timing);
                return self.finish(report, errors);
            }
        };
        report.session = session;
        let request = Body::InferRequest { user: slice.user_id.clone(), session, slice: slice.index as u32 };
        let inference = self.send(Role::Backend, Role::AuthServer, request).and_then(|_| {
            let start = Instant::now();
            let out = self.server.infer(&slice.user_id, session, slice.index as u32);
            timing.infer_ms = start.elapsed().as_secs_f64() * 1e3;
            out
        });
        self.timings.push(timing);
        self.audit_into(&mut errors);
        let inference = match inference {
            Ok(i) => i,
            Err(e) => {
                errors.push(e);
                return self.finish(report, errors);
            }
        };
        report.window_counts = inference.window_counts;
        report.insufficient_history = inference.insufficient_history;
        report.values_involved = inference.values_involved;

        let chain_counts: Vec<(Role, usize)> = inference.domains.iter().map(|d| (d.role, d.chains)).collect();
        let mut outcomes = Vec::new();
        for agg in inference.domains {
            self.decrypt_domain(&mut outcomes, agg, &slice.user_id);
        }
        self.audit_into(&mut errors);

        let count = |role| chain_counts.iter().find(|(r, _)| *r == role).map_or(0, |(_, n)| *n);
        for (role, outcome) in outcomes {
            report.cheat_detected |= outcome.cheat;
            report.decrypted_scalars += outcome.decrypted;
            report.chain_scores.extend(outcome.chain_scores);
            if let Some(e) = outcome.error {
                errors.push(e);
                continue;
            }
            match role {
                Role::Frontend => report.r_frontend = outcome.value,
                _ => report.r_backend = outcome.value,
            }
        }
        report.chain_scores.sort_by_key(|(s, _)| *s);
        let weights = self.server.weights(count(Role::Frontend), count(Role::Backend));
        report.fallback = report.r_frontend.is_none() && report.r_backend.is_none();
        report.r_final = compute_risk(report.r_frontend, report.r_backend, weights);
        self.finish(report, errors)
    }

    fn audit_into(&self, errors: &mut Vec<ProtocolError>) {
        if let Err(e) = self.server.audit() {
            if !errors.contains(&e) {
                errors.push(e);
            }
        }
    }

    /// Apply flags and deliver the report to the application backend.
    fn finish(&mut self, mut report: RiskReport, errors: Vec<ProtocolError>) -> RiskReport {
        report.integrity_failure = errors.iter().any(|e| *e == ProtocolError::Integrity);
        if report.cheat_detected {
            report.r_final = 1.0;
        }
        report.errors = errors.iter().map(ToString::to_string).collect();
        match self.send(Role::AuthServer, Role::Backend, Body::RiskReport(Box::new(report.clone()))) {
            Ok(Body::RiskReport(r)) => self.delivered.push(*r),
            Ok(_) => report.errors.push("unexpected body for risk report".into()),
            Err(e) => report.errors.push(e.to_string()),
        }
        report
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }
}

/// Chronological order used for enrollment and authentication.
fn chronological(slices: &[Slice]) -> Vec<&Slice> {
    let mut sorted: Vec<&Slice> = slices.iter().collect();
    sorted.sort_by_key(|s| (s.session_start(), s.index));
    sorted
}

/// Enroll `history`, then collect every slice and authenticate the ones the
/// trigger selects. Errors are recorded in the reports.
pub fn run_session(sim: &mut Simulator, history: &[Slice], slices: &[Slice], trigger: &TriggerPolicy) -> Vec<RiskReport> {
    for s in chronological(history) {
        sim.enroll(s);
    }
    let mut reports = Vec::new();
    for s in chronological(slices) {
        if trigger.fires(s) {
            reports.push(sim.authenticate(s));
        } else {
            sim.observe(s);
        }
    }
    reports
}

/// The same decision computed directly on plaintext windows with the
/// unfolded network.
pub fn reference_report(
    chains: &[DetectorChain],
    history: &[Slice],
    slice: &Slice,
    weights: Option<(f64, f64)>,
) -> std::result::Result<RiskReport, DetectorError> {
    let mut report = RiskReport { user: slice.user_id.clone(), slice: slice.index as u32, ..RiskReport::default() };
    let mut means: Vec<(Source, f64)> = Vec::new();
    for chain in chains {
        let pool = HistoryPool::from_slices(history.iter().filter(|h| h.user_id == slice.user_id), &chain.prep);
        let windows = match build_windows(&pool, slice, &chain.prep, &chain.window) {
            Ok(w) => w,
            Err(DetectorError::InsufficientHistory { src, .. }) => {
                report.insufficient_history.push(src);
                report.window_counts.push((src, 0));
                continue;
            }
            Err(e) => return Err(e),
        };
        report.window_counts.push((chain.source(), windows.len()));
        if windows.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for w in &windows {
            sum += chain.infer_plain(w)?;
        }
        means.push((chain.source(), sum / windows.len() as f64));
    }
    let domain = |role: Role| {
        let m: Vec<f64> = means.iter().filter(|(s, _)| domain_of(*s) == role).map(|(_, v)| *v).collect();
        let value = (!m.is_empty()).then(|| m.iter().sum::<f64>() / m.len() as f64);
        (value, m.len())
    };
    let (rf, nf) = domain(Role::Frontend);
    let (rb, nb) = domain(Role::Backend);
    report.r_frontend = rf;
    report.r_backend = rb;
    report.chain_scores = means;
    report.chain_scores.sort_by_key(|(s, _)| *s);
    report.fallback = rf.is_none() && rb.is_none();
    report.r_final = compute_risk(rf, rb, weights.unwrap_or((nf as f64, nb as f64)));
    Ok(report)
}
