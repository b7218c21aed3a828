//! Homomorphic-encryption contract shared by the detectors and the protocol.
//!
//! Two interchangeable backends implement [`HeBackend`]:
//!
//! * [`MockBackend`] carries plaintext inside a sealed payload and performs exact
//!   `f64` arithmetic. It enforces the same key, length and depth rules as the
//!   real scheme and is used as an exact oracle.
//! * [`RlweBackend`] is a leveled CKKS-style scheme over `Z_Q[X]/(X^N + 1)` with an
//!   RNS modulus chain, rescaling after every multiplication and hybrid key
//!   switching for relinearisation and power-of-two slot rotations.
//!
//! Ciphertexts produced by one backend are rejected by the other.

mod mock;
mod params;
pub mod rlwe;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use mock::MockBackend;
pub use params::HeParams;
pub use rlwe::{eps_mul, eps_mul_plain, eps_rotate_sum, RlweBackend, EPS_ADD, EPS_FRESH};

pub(crate) use mock::MockKeys;
pub(crate) use rlwe::{RlweCiphertext, RlweEval, RlwePublic, RlweSecret};

/// Serialization format version written into every ciphertext header.
pub const WIRE_VERSION: u8 = 1;
/// Fixed ciphertext header: version, backend tag, depth, reserved, slot_len (u32), key id (u64).
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("vector of length {len} exceeds slot capacity {capacity}")]
    VectorTooLong { len: usize, capacity: usize },
    #[error("value {value} at index {index} exceeds bound {bound}")]
    ValueOutOfBound { index: usize, value: f64, bound: f64 },
    #[error("key mismatch: operand under {expected}, got {found}")]
    KeyMismatch { expected: KeyId, found: KeyId },
    #[error("slot length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("multiplicative depth exhausted")]
    DepthExhausted,
    #[error("span {span} out of range for {slot_len} slots")]
    SpanOutOfRange { span: usize, slot_len: usize },
    #[error("ciphertext or key belongs to a different backend")]
    BackendMismatch,
    #[error("scale mismatch: {0} vs {1}")]
    ScaleMismatch(f64, f64),
    #[error("malformed ciphertext: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, HeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub u64);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "key:{:016x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Rlwe,
}

impl BackendKind {
    fn tag(self) -> u8 {
        match self {
            BackendKind::Mock => 0,
            BackendKind::Rlwe => 1,
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Mock => "mock",
            BackendKind::Rlwe => "rlwe",
        })
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "rlwe" => Ok(BackendKind::Rlwe),
            other => Err(format!("unknown backend `{other}` (expected mock or rlwe)")),
        }
    }
}

/// Encryption material. Safe to hand to any party.
#[derive(Clone)]
pub struct PublicKey {
    pub key_id: KeyId,
    pub label: String,
    pub(crate) inner: PublicInner,
}

#[derive(Clone)]
pub(crate) enum PublicInner {
    Mock,
    Rlwe(Arc<RlwePublic>),
}

/// Decryption material. Deliberately neither `Clone` nor serializable.
pub struct SecretKey {
    pub key_id: KeyId,
    pub(crate) inner: SecretInner,
}

pub(crate) enum SecretInner {
    Mock(MockKeys),
    Rlwe(Arc<RlweSecret>),
}

/// Relinearisation and rotation material; public.
#[derive(Clone)]
pub struct EvalKey {
    pub key_id: KeyId,
    pub(crate) inner: EvalInner,
}

#[derive(Clone)]
pub(crate) enum EvalInner {
    Mock,
    Rlwe(Arc<RlweEval>),
}

pub struct KeyPair {
    pub key_id: KeyId,
    pub public_key: PublicKey,
    pub secret_key: SecretKey,
    pub eval_key: EvalKey,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}, {})", self.key_id, self.label)
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({}, <redacted>)", self.key_id)
    }
}

impl fmt::Debug for EvalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EvalKey({})", self.key_id)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("key_id", &self.key_id)
            .field("public_key", &self.public_key)
            .finish_non_exhaustive()
    }
}

/// Opaque encrypted vector.
#[derive(Clone)]
pub struct Ciphertext {
    key_id: KeyId,
    remaining_depth: usize,
    slot_len: usize,
    payload: Payload,
}

#[derive(Clone)]
pub(crate) enum Payload {
    /// Sealed plaintext; logically zero-padded up to the slot count.
    Mock(Vec<f64>),
    Rlwe(RlweCiphertext),
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ciphertext")
            .field("key_id", &self.key_id)
            .field("remaining_depth", &self.remaining_depth)
            .field("slot_len", &self.slot_len)
            .field("backend", &self.backend())
            .finish_non_exhaustive()
    }
}

impl Ciphertext {
    pub(crate) fn new(key_id: KeyId, remaining_depth: usize, slot_len: usize, payload: Payload) -> Self {
        Ciphertext { key_id, remaining_depth, slot_len, payload }
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn remaining_depth(&self) -> usize {
        self.remaining_depth
    }

    pub fn slot_len(&self) -> usize {
        self.slot_len
    }

    pub fn backend(&self) -> BackendKind {
        match self.payload {
            Payload::Mock(_) => BackendKind::Mock,
            Payload::Rlwe(_) => BackendKind::Rlwe,
        }
    }

    pub(crate) fn payload(&self) -> &Payload {
        &self.payload
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = WIRE_VERSION;
        h[1] = self.backend().tag();
        h[2] = self.remaining_depth as u8;
        h[4..8].copy_from_slice(&(self.slot_len as u32).to_le_bytes());
        h[8..16].copy_from_slice(&self.key_id.0.to_le_bytes());
        h
    }
}

pub(crate) struct Header {
    pub backend: u8,
    pub depth: usize,
    pub slot_len: usize,
    pub key_id: KeyId,
}

pub(crate) fn parse_header(bytes: &[u8], params: &HeParams) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(HeError::Malformed(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[0] != WIRE_VERSION {
        return Err(HeError::Malformed(format!("unsupported version {}", bytes[0])));
    }
    let depth = bytes[2] as usize;
    if depth > params.max_mul_depth {
        return Err(HeError::Malformed(format!("depth {depth} exceeds max {}", params.max_mul_depth)));
    }
    let slot_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if slot_len > params.slot_count() {
        return Err(HeError::Malformed(format!("slot_len {slot_len} exceeds slot count")));
    }
    Ok(Header {
        backend: bytes[1],
        depth,
        slot_len,
        key_id: KeyId(u64::from_le_bytes(bytes[8..16].try_into().unwrap())),
    })
}

pub(crate) fn check_same_key(a: &Ciphertext, b_key: KeyId) -> Result<()> {
    if a.key_id != b_key {
        return Err(HeError::KeyMismatch { expected: a.key_id, found: b_key });
    }
    Ok(())
}

pub(crate) fn check_encryptable(v: &[f64], params: &HeParams) -> Result<()> {
    if v.len() > params.slot_count() {
        return Err(HeError::VectorTooLong { len: v.len(), capacity: params.slot_count() });
    }
    if let Some((index, &value)) =
        v.iter().enumerate().find(|(_, x)| !x.is_finite() || x.abs() > params.value_bound)
    {
        return Err(HeError::ValueOutOfBound { index, value, bound: params.value_bound });
    }
    Ok(())
}

/// The operations every backend provides.
///
/// Rotations shift slots cyclically to the left over the full slot count and
/// return full-width ciphertexts (`slot_len == slot_count`).
pub trait HeBackend: Send + Sync {
    fn params(&self) -> &HeParams;
    fn kind(&self) -> BackendKind;

    fn keygen(&self, entity_label: &str) -> Result<KeyPair>;
    fn encrypt(&self, v: &[f64], pk: &PublicKey) -> Result<Ciphertext>;
    /// Fresh encryption indistinguishable in shape from `template`
    /// (same depth and scale). Used for decoy challenges.
    fn encrypt_matching(&self, v: &[f64], pk: &PublicKey, template: &Ciphertext) -> Result<Ciphertext>;
    fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Vec<f64>>;

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext>;
    fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext>;
    fn add_plain(&self, a: &Ciphertext, p: &[f64]) -> Result<Ciphertext>;
    fn mul_plain(&self, a: &Ciphertext, p: &[f64]) -> Result<Ciphertext>;
    fn mul(&self, a: &Ciphertext, b: &Ciphertext, eval_key: &EvalKey) -> Result<Ciphertext>;
    fn rotate(&self, a: &Ciphertext, steps: usize, eval_key: &EvalKey) -> Result<Ciphertext>;
    /// Lower the remaining depth without changing the encrypted values.
    fn drop_to_depth(&self, a: &Ciphertext, depth: usize) -> Result<Ciphertext>;

    fn serialize(&self, ct: &Ciphertext) -> Vec<u8>;
    fn deserialize(&self, bytes: &[u8]) -> Result<Ciphertext>;
    fn serialized_size(&self, ct: &Ciphertext) -> usize;

    /// Full-width view of `a`: slots past `slot_len` become addressable.
    fn widen(&self, a: &Ciphertext) -> Ciphertext {
        let mut out = a.clone();
        out.slot_len = self.params().slot_count();
        out
    }

    /// Slot 0 of the result holds the sum of slots `0..span` of `a`.
    fn rotate_sum(&self, a: &Ciphertext, span: usize, eval_key: &EvalKey) -> Result<Ciphertext> {
        if span == 0 || span > a.slot_len {
            return Err(HeError::SpanOutOfRange { span, slot_len: a.slot_len });
        }
        self.rotate_sum_strided(a, 1, span, eval_key)
    }

    /// Slot `i` of the result holds `sum_{r < count} a[i + r * stride]`
    /// (indices cyclic). Uses `O(log count)` rotations.
    fn rotate_sum_strided(
        &self,
        a: &Ciphertext,
        stride: usize,
        count: usize,
        eval_key: &EvalKey,
    ) -> Result<Ciphertext> {
        let slots = self.params().slot_count();
        if count == 0 || stride == 0 || stride * (count - 1) >= slots {
            return Err(HeError::SpanOutOfRange { span: stride * count, slot_len: slots });
        }
        let mut acc = self.widen(a);
        let mut result: Option<Ciphertext> = None;
        let mut window = 1usize;
        let mut shift = 0usize;
        let mut remaining = count;
        loop {
            if remaining & 1 == 1 {
                let part = self.rotate(&acc, shift * stride, eval_key)?;
                result = Some(match result {
                    None => part,
                    Some(r) => self.add(&r, &part)?,
                });
                shift += window;
            }
            remaining >>= 1;
            if remaining == 0 {
                break;
            }
            let rotated = self.rotate(&acc, window * stride, eval_key)?;
            acc = self.add(&acc, &rotated)?;
            window *= 2;
        }
        Ok(result.expect("count > 0 sets at least one bit"))
    }
}

/// Construct the backend named by `kind`.
pub fn make_backend(kind: BackendKind, params: HeParams, seed: u64) -> Result<Arc<dyn HeBackend>> {
    Ok(match kind {
        BackendKind::Mock => Arc::new(MockBackend::new(params, seed)?),
        BackendKind::Rlwe => Arc::new(RlweBackend::new(params, seed)?),
    })
}

#[cfg(test)]
mod tests;
