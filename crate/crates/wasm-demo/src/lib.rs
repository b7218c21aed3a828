//! Browser demo: encrypt a vector under the RLWE backend, compute an EER
//! from pasted scores and simulate forged decryptions against decoy
//! challenges. Every export returns a JSON string; failures come back as
//! `{"error": "..."}`.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use mpsauth::dataset::{Label, Source};
use mpsauth::evalbench::{compute_eer, Scored};
use mpsauth::he::{HeBackend, HeParams, MockBackend, RlweBackend};
use mpsauth::protocol::entities::DomainAggregate;
use mpsauth::protocol::{Body, ClientPolicy, GenuineMode, ProtocolConfig, Role, Simulator};

/// Ring dimension of the demo backend; small enough for a quick keygen.
const DEMO_RING: usize = 1024;

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("demo results serialize"),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Roundtrip {
    pub values: Vec<f64>,
    pub decrypted: Vec<f64>,
    pub squared: Vec<f64>,
    pub sum: f64,
    pub max_error: f64,
    pub raw_bytes: usize,
    pub ciphertext_bytes: usize,
    pub expansion: f64,
}

/// Encrypt `values`, decrypt them back, square them and sum them under encryption.
pub fn roundtrip(values: &str, seed: u64) -> Result<Roundtrip, String> {
    let values = parse_numbers(values)?;
    if values.is_empty() {
        return Err("enter at least one number".into());
    }
    let params = HeParams::generate(DEMO_RING, 2, 40).map_err(|e| e.to_string())?;
    let backend = RlweBackend::new(params, seed).map_err(|e| e.to_string())?;
    let keys = backend.keygen("demo").map_err(|e| e.to_string())?;
    let ct = backend.encrypt(&values, &keys.public_key).map_err(|e| e.to_string())?;
    let decrypt = |c| backend.decrypt(c, &keys.secret_key).map_err(|e| e.to_string());
    let decrypted = decrypt(&ct)?;
    let sq = backend.mul(&ct, &ct, &keys.eval_key).map_err(|e| e.to_string())?;
    let summed = backend.rotate_sum(&ct, values.len(), &keys.eval_key).map_err(|e| e.to_string())?;
    let max_error = values.iter().zip(&decrypted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ciphertext_bytes = backend.serialized_size(&ct);
    let raw_bytes = 8 * values.len();
    Ok(Roundtrip {
        squared: decrypt(&sq)?,
        sum: decrypt(&summed)?[0],
        values,
        decrypted,
        max_error,
        raw_bytes,
        ciphertext_bytes,
        expansion: ciphertext_bytes as f64 / raw_bytes as f64,
    })
}

#[derive(Debug, Serialize)]
pub struct EerSummary {
    pub eer: f64,
    pub threshold: f64,
    pub legitimate: usize,
    pub attacked: usize,
}

/// EER of `score,label` lines, label `L`/`A` or `0`/`1` (1 = attacked).
pub fn eer(text: &str) -> Result<EerSummary, String> {
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut parts = line.split(',').map(str::trim);
        let (Some(score), Some(label)) = (parts.next(), parts.next()) else {
            return Err(format!("line {}: expected `score,label`", i + 1));
        };
        let score = score.parse::<f64>().map_err(|_| format!("line {}: bad score `{score}`", i + 1))?;
        let label = match label {
            "A" | "a" | "1" => Label::Attacked,
            "L" | "l" | "0" => Label::Legitimate,
            other => return Err(format!("line {}: bad label `{other}`", i + 1)),
        };
        scores.push(Scored { score, label });
    }
    let r = compute_eer(&scores).map_err(|e| e.to_string())?;
    let attacked = scores.iter().filter(|s| s.label == Label::Attacked).count();
    Ok(EerSummary { eer: r.eer, threshold: r.threshold, legitimate: scores.len() - attacked, attacked })
}

#[derive(Debug, Serialize)]
pub struct Detection {
    pub genuine: usize,
    pub decoys: usize,
    pub trials: usize,
    pub detected: usize,
    pub rate: f64,
    pub expected: f64,
}

/// A client forges one uniformly chosen response per request; how often do
/// the decoys catch it?
pub fn detection(genuine: usize, decoys: usize, trials: usize, seed: u64) -> Result<Detection, String> {
    if !(1..=16).contains(&genuine) || decoys > 64 || !(1..=100_000).contains(&trials) {
        return Err("need 1-16 genuine items, at most 64 decoys and 1-100000 trials".into());
    }
    let backend: Arc<dyn HeBackend> =
        Arc::new(MockBackend::new(HeParams::mock_only(64, 2), seed).map_err(|e| e.to_string())?);
    let cfg = ProtocolConfig {
        genuine: GenuineMode::PerChain,
        decoys,
        frontend_policy: ClientPolicy::PerturbOne { delta: 1.0 },
        ..ProtocolConfig::default()
    };
    let mut sim = Simulator::new(backend.clone(), &[], cfg, seed).map_err(|e| e.to_string())?;
    let parts = (0..genuine)
        .map(|i| {
            let ct = backend.encrypt(&[i as f64 * 0.25 - 1.0], sim.frontend.public_key()).map_err(|e| e.to_string())?;
            Ok((Some(Source::Swipe), ct))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let agg = DomainAggregate { role: Role::Frontend, parts, chains: genuine };
    let mut detected = 0;
    for _ in 0..trials {
        let (request, challenge) = sim.server.challenge(&agg, "demo").map_err(|e| e.to_string())?;
        let Body::DecryptRequest { auth_id, ciphertexts } = request else {
            return Err("unexpected challenge body".into());
        };
        sim.frontend.allow(ciphertexts.len());
        let response = sim.frontend.decrypt_request(auth_id, &ciphertexts);
        detected += sim.server.verify(&challenge, response).cheat as usize;
    }
    Ok(Detection {
        genuine,
        decoys,
        trials,
        detected,
        rate: detected as f64 / trials as f64,
        expected: decoys as f64 / (genuine + decoys) as f64,
    })
}

#[wasm_bindgen]
pub fn demo_roundtrip(values: &str, seed: u32) -> String {
    to_json(roundtrip(values, seed as u64))
}

#[wasm_bindgen]
pub fn demo_eer(text: &str) -> String {
    to_json(eer(text))
}

#[wasm_bindgen]
pub fn demo_detection(genuine: u32, decoys: u32, trials: u32, seed: u32) -> String {
    to_json(detection(genuine as usize, decoys as usize, trials as usize, seed as u64))
}
