use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::wire::{Body, RowCiphertext};
use super::{
    domain_of, ClientPolicy, GenuineMode, ProtocolConfig, ProtocolError, Result, Role, ServerPolicy,
};
use crate::dataset::{Slice, Source};
use crate::detector::{compile_he, DetectorChain, HeCircuit, Preprocessor, WindowConfig};
use crate::he::{Ciphertext, EvalKey, HeBackend, KeyId, KeyPair, PublicKey};

/// Grid onto which masks and decoy values are quantized.
pub const MASK_QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;

fn draw_mask(rng: &mut impl Rng, range: f64) -> f64 {
    (rng.random_range(0.0..=range) / MASK_QUANTUM).round() * MASK_QUANTUM
}

/// Decryption allowance of one authentication, shared by the two clients:
/// a fraction of the behavioral values both of them fed into its windows.
#[derive(Debug, Default)]
pub struct DecryptBudget {
    fraction: f64,
    slice: Option<(String, u32, u32)>,
    values: usize,
    spent: usize,
}

impl DecryptBudget {
    pub fn shared(fraction: f64) -> Arc<Mutex<DecryptBudget>> {
        Arc::new(Mutex::new(DecryptBudget { fraction, ..DecryptBudget::default() }))
    }

    /// Start or extend the accounting of the slice being collected.
    fn record(&mut self, slice: (String, u32, u32), values: usize) {
        if self.slice.as_ref() != Some(&slice) {
            self.slice = Some(slice);
            self.values = 0;
            self.spent = 0;
        }
        self.values += values;
    }

    pub fn remaining(&self) -> usize {
        ((self.fraction * self.values as f64).floor() as usize).saturating_sub(self.spent)
    }

    /// Replace the allowance with exactly `scalars`.
    pub fn grant(&mut self, scalars: usize) {
        self.slice = None;
        self.fraction = 1.0;
        self.values = scalars;
        self.spent = 0;
    }
}

/// Frontend or application backend: owns a key pair and the preprocessors
/// of its sources, encrypts rows and answers decryption requests.
pub struct Client {
    pub role: Role,
    backend: Arc<dyn HeBackend>,
    keys: KeyPair,
    chains: Vec<(WindowConfig, Preprocessor)>,
    policy: ClientPolicy,
    budget: Arc<Mutex<DecryptBudget>>,
    /// Largest request an honest server sends: genuine items plus decoys.
    max_request: usize,
    rng: ChaCha20Rng,
    sessions: Vec<String>,
    /// Values this client decrypted, kept by passive attackers.
    pub seen: Vec<f64>,
    /// Behavioral values sent so far.
    pub values_sent: usize,
}

impl Client {
    pub fn new(
        role: Role,
        backend: Arc<dyn HeBackend>,
        chains: &[DetectorChain],
        cfg: &ProtocolConfig,
        budget: Arc<Mutex<DecryptBudget>>,
        seed: u64,
    ) -> Result<Client> {
        let keys = backend.keygen(match role {
            Role::Frontend => "frontend",
            _ => "backend",
        })?;
        let chains: Vec<_> = chains
            .iter()
            .filter(|c| domain_of(c.source()) == role)
            .map(|c| (c.window, c.prep.clone()))
            .collect();
        let genuine = match cfg.genuine {
            GenuineMode::Aggregate => 1,
            GenuineMode::PerChain => chains.len(),
        };
        let policy = if role == Role::Frontend { cfg.frontend_policy } else { cfg.backend_policy };
        Ok(Client {
            max_request: genuine + cfg.decoys,
            role,
            backend,
            keys,
            chains,
            policy,
            budget,
            rng: ChaCha20Rng::seed_from_u64(seed),
            sessions: Vec::new(),
            seen: Vec::new(),
            values_sent: 0,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keys.public_key
    }

    pub fn eval_key(&self) -> &EvalKey {
        &self.keys.eval_key
    }

    pub fn key_id(&self) -> KeyId {
        self.keys.key_id
    }

    pub fn tampers(&self) -> bool {
        self.policy == ClientPolicy::Tamper
    }

    /// Sessions are numbered in the order they are first seen.
    fn ordinal(&mut self, session_id: &str) -> u32 {
        match self.sessions.iter().position(|s| s == session_id) {
            Some(i) => i as u32,
            None => {
                self.sessions.push(session_id.to_string());
                (self.sessions.len() - 1) as u32
            }
        }
    }

    /// Scalars the clients will still decrypt in the current authentication.
    pub fn allowance(&self) -> usize {
        self.budget.lock().expect("budget lock").remaining()
    }

    /// Override the allowance and request cap, for driving challenges outside a session.
    pub fn allow(&mut self, scalars: usize) {
        self.max_request = scalars;
        self.budget.lock().expect("budget lock").grant(scalars);
    }

    /// Ordinal of an already collected session.
    pub fn collect_ordinal(&self, session_id: &str) -> Option<u32> {
        self.sessions.iter().position(|s| s == session_id).map(|i| i as u32)
    }

    /// Encrypt every feature row of the slice, one ciphertext per row.
    pub fn collect(&mut self, slice: &Slice, enroll: bool) -> Result<Body> {
        let session = self.ordinal(&slice.session_id);
        let mut rows = Vec::new();
        let mut involved = 0;
        for (cfg, prep) in &self.chains {
            let features = prep.rows(slice);
            involved += features.len() / cfg.o_size * cfg.rows() * prep.dim();
            for (seq, r) in features.iter().enumerate() {
                let ct = self.backend.encrypt(&r.values, &self.keys.public_key)?;
                rows.push(RowCiphertext { source: cfg.source, seq: seq as u32, bytes: self.backend.serialize(&ct) });
                self.values_sent += r.values.len();
            }
        }
        if !enroll {
            let key = (slice.user_id.clone(), session, slice.index as u32);
            self.budget.lock().expect("budget lock").record(key, involved);
        }
        Ok(Body::Collect { user: slice.user_id.clone(), session, slice: slice.index as u32, enroll, rows })
    }

    /// Decrypt slot 0 of each ciphertext, within the per-authentication budget.
    pub fn decrypt_request(&mut self, auth_id: u64, ciphertexts: &[Vec<u8>]) -> Body {
        let refuse = |reason: String| Body::DecryptResponse { auth_id, values: Vec::new(), refused: Some(reason) };
        if ciphertexts.len() > self.max_request {
            return refuse(format!("{} scalars requested, at most {} expected", ciphertexts.len(), self.max_request));
        }
        {
            let mut budget = self.budget.lock().expect("budget lock");
            let allowed = budget.remaining();
            if ciphertexts.len() > allowed {
                return refuse(format!("{} scalars requested, {allowed} allowed", ciphertexts.len()));
            }
            budget.spent += ciphertexts.len();
        }
        let mut values = Vec::with_capacity(ciphertexts.len());
        for bytes in ciphertexts {
            let v = self
                .backend
                .deserialize(bytes)
                .and_then(|ct| self.backend.decrypt(&ct, &self.keys.secret_key))
                .map(|v| v.first().copied().unwrap_or(0.0));
            match v {
                Ok(v) => values.push(v),
                Err(e) => return refuse(e.to_string()),
            }
        }
        if self.policy == ClientPolicy::Passive {
            self.seen.extend(&values);
        }
        match self.policy {
            ClientPolicy::PerturbAll { delta } => values.iter_mut().for_each(|v| *v += delta),
            ClientPolicy::PerturbOne { delta } if !values.is_empty() => {
                let i = self.rng.random_range(0..values.len());
                values[i] += delta;
            }
            _ => {}
        }
        Body::DecryptResponse { auth_id, values, refused: None }
    }
}

pub struct ServerChain {
    pub window: WindowConfig,
    pub dim: usize,
    pub circuit: HeCircuit,
}

struct Registration {
    public_key: PublicKey,
    eval_key: EvalKey,
}

#[derive(Clone)]
struct StoredRow {
    session: u32,
    slice: u32,
    seq: u32,
    ct: Ciphertext,
}

/// Encrypted per-domain results of one authentication.
pub struct DomainAggregate {
    pub role: Role,
    /// One ciphertext per domain, or one per chain tagged with its source.
    pub parts: Vec<(Option<Source>, Ciphertext)>,
    pub chains: usize,
}

pub struct Inference {
    pub domains: Vec<DomainAggregate>,
    pub window_counts: Vec<(Source, usize)>,
    pub insufficient_history: Vec<Source>,
    pub values_involved: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Entry {
    Genuine { mask: f64, chain: Option<Source> },
    Decoy { value: f64 },
    /// A stored row sent by a curious server.
    Probe,
}

pub struct Challenge {
    pub role: Role,
    pub auth_id: u64,
    entries: Vec<Entry>,
    chains: usize,
}

impl Challenge {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn genuine(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, Entry::Genuine { .. })).count()
    }

    pub fn decoys(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, Entry::Decoy { .. })).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainOutcome {
    /// Unmasked domain logit.
    pub value: Option<f64>,
    pub chain_scores: Vec<(Source, f64)>,
    pub cheat: bool,
    pub decrypted: usize,
    pub error: Option<ProtocolError>,
}

/// Holds only public keys, ciphertexts, their metadata and its own masks.
pub struct AuthServer {
    backend: Arc<dyn HeBackend>,
    cfg: ProtocolConfig,
    chains: Vec<ServerChain>,
    registry: BTreeMap<Role, Registration>,
    history: BTreeMap<(String, Source), Vec<StoredRow>>,
    observations: BTreeMap<(String, u32, u32, Source), Vec<StoredRow>>,
    rng: ChaCha20Rng,
    next_auth: u64,
    /// Responses accepted for ciphertexts the server did not create itself.
    probe_answers: usize,
}

impl AuthServer {
    pub fn new(backend: Arc<dyn HeBackend>, chains: &[DetectorChain], cfg: ProtocolConfig, seed: u64) -> Result<AuthServer> {
        let chains = chains
            .iter()
            .map(|c| {
                Ok(ServerChain {
                    window: c.window,
                    dim: c.prep.dim(),
                    circuit: compile_he(&c.model, backend.params())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AuthServer {
            backend,
            cfg,
            chains,
            registry: BTreeMap::new(),
            history: BTreeMap::new(),
            observations: BTreeMap::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            next_auth: 0,
            probe_answers: 0,
        })
    }

    pub fn register(&mut self, role: Role, public_key: PublicKey, eval_key: EvalKey) {
        self.registry.insert(role, Registration { public_key, eval_key });
    }

    fn registration(&self, role: Role) -> Result<&Registration> {
        self.registry.get(&role).ok_or(ProtocolError::Unregistered(role))
    }

    pub fn chains(&self) -> &[ServerChain] {
        &self.chains
    }

    /// Store the rows of a collect message. The whole message is rejected if
    /// any row is malformed or under the wrong key.
    pub fn receive_collect(&mut self, sender: Role, body: Body) -> Result<usize> {
        let Body::Collect { user, session, slice, enroll, rows } = body else {
            return Err(ProtocolError::Unexpected("expected collect".into()));
        };
        let key = self.registration(sender)?.public_key.key_id;
        let mut parsed = Vec::with_capacity(rows.len());
        for r in rows {
            if domain_of(r.source) != sender {
                return Err(ProtocolError::WrongKey);
            }
            let ct = self.backend.deserialize(&r.bytes)?;
            if ct.key_id() != key {
                return Err(ProtocolError::WrongKey);
            }
            parsed.push((r.source, StoredRow { session, slice, seq: r.seq, ct }));
        }
        let n = parsed.len();
        for (source, row) in parsed {
            if enroll {
                self.history.entry((user.clone(), source)).or_default().push(row);
            } else {
                self.observations.entry((user.clone(), session, slice, source)).or_default().push(row);
            }
        }
        if enroll {
            for chain in &self.chains {
                if let Some(rows) = self.history.get_mut(&(user.clone(), chain.window.source)) {
                    rows.sort_by_key(|r| (r.session, r.slice, r.seq));
                    let excess = rows.len().saturating_sub(chain.window.h_size);
                    rows.drain(..excess);
                }
            }
        }
        Ok(n)
    }

    /// Shift a row ciphertext so its values start at slot `pos * dim`.
    fn place(&self, ct: &Ciphertext, pos: usize, dim: usize, evk: &EvalKey) -> Result<Ciphertext> {
        let wide = self.backend.widen(ct);
        if pos == 0 {
            return Ok(wide);
        }
        let slots = self.backend.params().slot_count();
        Ok(self.backend.rotate(&wide, slots - pos * dim, evk)?)
    }

    fn sum(&self, cts: Vec<Ciphertext>) -> Result<Option<Ciphertext>> {
        let mut acc: Option<Ciphertext> = None;
        for ct in cts {
            acc = Some(match acc {
                None => ct,
                Some(a) => self.backend.add(&a, &ct)?,
            });
        }
        Ok(acc)
    }

    /// Build windows from stored rows and run every chain's circuit. Each
    /// window result is scaled so the domain sum is the mean over chains of
    /// the per-chain window means.
    pub fn infer(&mut self, user: &str, session: u32, slice: u32) -> Result<Inference> {
        struct Ready<'a> {
            chain: &'a ServerChain,
            history: Vec<&'a StoredRow>,
            obs: Vec<&'a StoredRow>,
            windows: usize,
        }
        let mut ready = Vec::new();
        let mut window_counts = Vec::new();
        let mut insufficient = Vec::new();
        for chain in &self.chains {
            let cfg = chain.window;
            let history: Vec<&StoredRow> = self
                .history
                .get(&(user.to_string(), cfg.source))
                .map(|rows| rows.iter().filter(|r| r.session < session).collect())
                .unwrap_or_default();
            if history.len() < cfg.h_size {
                insufficient.push(cfg.source);
                window_counts.push((cfg.source, 0));
                continue;
            }
            let history = history[history.len() - cfg.h_size..].to_vec();
            let mut obs: Vec<&StoredRow> = self
                .observations
                .get(&(user.to_string(), session, slice, cfg.source))
                .map(|rows| rows.iter().collect())
                .unwrap_or_default();
            obs.sort_by_key(|r| r.seq);
            let windows = obs.len() / cfg.o_size;
            window_counts.push((cfg.source, windows));
            if windows > 0 {
                ready.push(Ready { chain, history, obs, windows });
            }
        }
        let mut domains = Vec::new();
        let mut values_involved = 0;
        for role in [Role::Frontend, Role::Backend] {
            let members: Vec<&Ready> = ready.iter().filter(|r| domain_of(r.chain.window.source) == role).collect();
            if members.is_empty() {
                continue;
            }
            let evk = &self.registration(role)?.eval_key;
            let m = members.len();
            let mut parts = Vec::new();
            for r in &members {
                let (cfg, dim) = (r.chain.window, r.chain.dim);
                values_involved += r.windows * cfg.rows() * dim;
                let placed: Vec<Ciphertext> = r
                    .history
                    .iter()
                    .enumerate()
                    .map(|(i, row)| self.place(&row.ct, i, dim, evk))
                    .collect::<Result<_>>()?;
                let history_ct = self.sum(placed)?.expect("h_size >= 1");
                let alpha = 1.0 / (m * r.windows) as f64;
                let outputs: Vec<Ciphertext> = (0..r.windows)
                    .into_par_iter()
                    .map(|w| {
                        let mut ct = history_ct.clone();
                        for (i, row) in r.obs[w * cfg.o_size..(w + 1) * cfg.o_size].iter().enumerate() {
                            let placed = self.place(&row.ct, cfg.h_size + i, dim, evk)?;
                            ct = self.backend.add(&ct, &placed)?;
                        }
                        Ok(r.chain.circuit.infer_encrypted(self.backend.as_ref(), &ct, evk, alpha)?)
                    })
                    .collect::<Result<_>>()?;
                parts.push((Some(cfg.source), self.sum(outputs)?.expect("windows >= 1")));
            }
            if self.cfg.genuine == GenuineMode::Aggregate {
                let total = self.sum(parts.into_iter().map(|(_, ct)| ct).collect())?.expect("non-empty");
                parts = vec![(None, total)];
            }
            domains.push(DomainAggregate { role, parts, chains: m });
        }
        self.observations.retain(|k, _| !(k.0 == user && k.1 == session && k.2 == slice));
        Ok(Inference { domains, window_counts, insufficient_history: insufficient, values_involved })
    }

    /// Mask each genuine item, mix in decoys and shuffle.
    pub fn challenge(&mut self, agg: &DomainAggregate, user: &str) -> Result<(Body, Challenge)> {
        let public_key = self.registration(agg.role)?.public_key.clone();
        let slots = self.backend.params().slot_count();
        let c = self.cfg.mask_range;
        let mut items: Vec<(Entry, Ciphertext)> = Vec::new();
        for (source, ct) in &agg.parts {
            let masks: Vec<f64> = (0..slots).map(|_| draw_mask(&mut self.rng, c)).collect();
            let masked = self.backend.add_plain(ct, &masks[..ct.slot_len()])?;
            items.push((Entry::Genuine { mask: masks[0], chain: *source }, masked));
        }
        let template = items[0].1.clone();
        for _ in 0..self.cfg.decoys {
            let values: Vec<f64> = (0..template.slot_len()).map(|_| draw_mask(&mut self.rng, c)).collect();
            let ct = self.backend.encrypt_matching(&values, &public_key, &template)?;
            items.push((Entry::Decoy { value: values[0] }, ct));
        }
        if self.cfg.server_policy == ServerPolicy::Curious {
            for ((u, _, _, source), rows) in &self.observations {
                if u == user && domain_of(*source) == agg.role {
                    items.extend(rows.iter().map(|r| (Entry::Probe, r.ct.clone())));
                }
            }
            for ((u, source), rows) in &self.history {
                if u == user && domain_of(*source) == agg.role {
                    items.extend(rows.iter().map(|r| (Entry::Probe, r.ct.clone())));
                }
            }
        }
        items.shuffle(&mut self.rng);
        let auth_id = self.next_auth;
        self.next_auth += 1;
        let body = Body::DecryptRequest {
            auth_id,
            ciphertexts: items.iter().map(|(_, ct)| self.backend.serialize(ct)).collect(),
        };
        let challenge = Challenge {
            role: agg.role,
            auth_id,
            entries: items.into_iter().map(|(e, _)| e).collect(),
            chains: agg.chains,
        };
        Ok((body, challenge))
    }

    /// Check decoys and unmask genuine responses.
    pub fn verify(&mut self, ch: &Challenge, response: Body) -> DomainOutcome {
        let fail = |e: ProtocolError| DomainOutcome { error: Some(e), ..DomainOutcome::default() };
        let Body::DecryptResponse { auth_id, values, refused } = response else {
            return fail(ProtocolError::Unexpected("expected decrypt response".into()));
        };
        if let Some(reason) = refused {
            return fail(ProtocolError::Refused(reason));
        }
        if auth_id != ch.auth_id {
            return fail(ProtocolError::Unexpected(format!("response to {auth_id}, expected {}", ch.auth_id)));
        }
        if values.len() != ch.entries.len() {
            return fail(ProtocolError::ResponseCount { expected: ch.entries.len(), found: values.len() });
        }
        let mut out = DomainOutcome { decrypted: values.len(), ..DomainOutcome::default() };
        let mut total = 0.0;
        for (entry, v) in ch.entries.iter().zip(&values) {
            match entry {
                Entry::Decoy { value } => {
                    if (v - value).abs() > self.cfg.tol_he || !v.is_finite() {
                        out.cheat = true;
                    }
                }
                Entry::Genuine { mask, chain } => {
                    let r = v - mask;
                    total += r;
                    if let Some(source) = chain {
                        out.chain_scores.push((*source, r * ch.chains as f64));
                    }
                }
                Entry::Probe => self.probe_answers += 1,
            }
        }
        out.chain_scores.sort_by_key(|(s, _)| *s);
        out.value = Some(total);
        out
    }

    /// The server may hold ciphertexts only under client keys of the right
    /// domain, and plaintext only for items it created itself.
    pub fn audit(&self) -> Result<()> {
        let stored = self
            .history
            .iter()
            .map(|((_, s), rows)| (*s, rows))
            .chain(self.observations.iter().map(|((_, _, _, s), rows)| (*s, rows)));
        for (source, rows) in stored {
            let key = self.registration(domain_of(source))?.public_key.key_id;
            if let Some(r) = rows.iter().find(|r| r.ct.key_id() != key) {
                return Err(ProtocolError::Audit(format!(
                    "{source} row {}/{}/{} under foreign key {}",
                    r.session,
                    r.slice,
                    r.seq,
                    r.ct.key_id()
                )));
            }
        }
        if self.probe_answers > 0 {
            return Err(ProtocolError::Audit(format!("{} behavioral ciphertexts were decrypted", self.probe_answers)));
        }
        Ok(())
    }

    /// Domain weights for risk aggregation.
    pub fn weights(&self, frontend_chains: usize, backend_chains: usize) -> (f64, f64) {
        self.cfg.domain_weights.unwrap_or((frontend_chains as f64, backend_chains as f64))
    }
}
