use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    check_encryptable, check_same_key, parse_header, BackendKind, Ciphertext, EvalInner, EvalKey,
    HeBackend, HeError, HeParams, KeyId, KeyPair, Payload, PublicInner, PublicKey, Result,
    SecretInner, SecretKey, HEADER_LEN,
};

/// Marker held by mock secret keys; possession of the matching `SecretKey` is the access check.
pub(crate) struct MockKeys;

/// Exact backend: plaintext sealed inside the ciphertext, opened only by the matching secret key.
pub struct MockBackend {
    params: HeParams,
    rng: Mutex<ChaCha20Rng>,
}

impl MockBackend {
    pub fn new(params: HeParams, seed: u64) -> Result<Self> {
        params.validate_shape()?;
        Ok(MockBackend { params, rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)) })
    }

    fn values<'a>(&self, ct: &'a Ciphertext) -> Result<&'a [f64]> {
        match ct.payload() {
            Payload::Mock(v) => Ok(v),
            Payload::Rlwe(_) => Err(HeError::BackendMismatch),
        }
    }

    fn padded(&self, ct: &Ciphertext) -> Result<Vec<f64>> {
        let mut v = self.values(ct)?.to_vec();
        v.resize(self.params.slot_count(), 0.0);
        Ok(v)
    }

    fn binary(&self, a: &Ciphertext, b: &Ciphertext, f: impl Fn(f64, f64) -> f64) -> Result<Ciphertext> {
        check_same_key(a, b.key_id())?;
        if a.slot_len() != b.slot_len() {
            return Err(HeError::LengthMismatch { left: a.slot_len(), right: b.slot_len() });
        }
        let (x, y) = (self.values(a)?, self.values(b)?);
        let n = x.len().max(y.len());
        let out = (0..n)
            .map(|i| f(x.get(i).copied().unwrap_or(0.0), y.get(i).copied().unwrap_or(0.0)))
            .collect();
        Ok(Ciphertext::new(
            a.key_id(),
            a.remaining_depth().min(b.remaining_depth()),
            a.slot_len(),
            Payload::Mock(out),
        ))
    }

    fn check_eval(&self, a: &Ciphertext, evk: &EvalKey) -> Result<()> {
        check_same_key(a, evk.key_id)?;
        match evk.inner {
            EvalInner::Mock => Ok(()),
            EvalInner::Rlwe(_) => Err(HeError::BackendMismatch),
        }
    }

    fn plain_op(&self, a: &Ciphertext, p: &[f64], f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if p.len() != a.slot_len() {
            return Err(HeError::LengthMismatch { left: a.slot_len(), right: p.len() });
        }
        let x = self.values(a)?;
        let n = x.len().max(p.len());
        Ok((0..n)
            .map(|i| f(x.get(i).copied().unwrap_or(0.0), p.get(i).copied().unwrap_or(0.0)))
            .collect())
    }
}

impl HeBackend for MockBackend {
    fn params(&self) -> &HeParams {
        &self.params
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn keygen(&self, entity_label: &str) -> Result<KeyPair> {
        self.params.validate_shape()?;
        let key_id = KeyId(self.rng.lock().unwrap().random());
        Ok(KeyPair {
            key_id,
            public_key: PublicKey { key_id, label: entity_label.to_string(), inner: PublicInner::Mock },
            secret_key: SecretKey { key_id, inner: SecretInner::Mock(MockKeys) },
            eval_key: EvalKey { key_id, inner: EvalInner::Mock },
        })
    }

    fn encrypt(&self, v: &[f64], pk: &PublicKey) -> Result<Ciphertext> {
        if !matches!(pk.inner, PublicInner::Mock) {
            return Err(HeError::BackendMismatch);
        }
        check_encryptable(v, &self.params)?;
        Ok(Ciphertext::new(pk.key_id, self.params.max_mul_depth, v.len(), Payload::Mock(v.to_vec())))
    }

    fn encrypt_matching(&self, v: &[f64], pk: &PublicKey, template: &Ciphertext) -> Result<Ciphertext> {
        let ct = self.encrypt(v, pk)?;
        self.drop_to_depth(&ct, template.remaining_depth())
    }

    fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Vec<f64>> {
        check_same_key(ct, sk.key_id)?;
        if !matches!(sk.inner, SecretInner::Mock(_)) {
            return Err(HeError::BackendMismatch);
        }
        let mut v = self.values(ct)?.to_vec();
        v.resize(ct.slot_len(), 0.0);
        Ok(v)
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.binary(a, b, |x, y| x + y)
    }

    fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.binary(a, b, |x, y| x - y)
    }

    fn add_plain(&self, a: &Ciphertext, p: &[f64]) -> Result<Ciphertext> {
        let out = self.plain_op(a, p, |x, y| x + y)?;
        Ok(Ciphertext::new(a.key_id(), a.remaining_depth(), a.slot_len(), Payload::Mock(out)))
    }

    fn mul_plain(&self, a: &Ciphertext, p: &[f64]) -> Result<Ciphertext> {
        if a.remaining_depth() == 0 {
            return Err(HeError::DepthExhausted);
        }
        let out = self.plain_op(a, p, |x, y| x * y)?;
        Ok(Ciphertext::new(a.key_id(), a.remaining_depth() - 1, a.slot_len(), Payload::Mock(out)))
    }

    fn mul(&self, a: &Ciphertext, b: &Ciphertext, eval_key: &EvalKey) -> Result<Ciphertext> {
        self.check_eval(a, eval_key)?;
        if a.remaining_depth() == 0 || b.remaining_depth() == 0 {
            check_same_key(a, b.key_id())?;
            return Err(HeError::DepthExhausted);
        }
        let mut out = self.binary(a, b, |x, y| x * y)?;
        out.remaining_depth -= 1;
        Ok(out)
    }

    fn rotate(&self, a: &Ciphertext, steps: usize, eval_key: &EvalKey) -> Result<Ciphertext> {
        self.check_eval(a, eval_key)?;
        let v = self.padded(a)?;
        let n = v.len();
        let k = steps % n;
        let out: Vec<f64> = (0..n).map(|i| v[(i + k) % n]).collect();
        Ok(Ciphertext::new(a.key_id(), a.remaining_depth(), n, Payload::Mock(out)))
    }

    fn drop_to_depth(&self, a: &Ciphertext, depth: usize) -> Result<Ciphertext> {
        self.values(a)?;
        if depth > a.remaining_depth() {
            return Err(HeError::InvalidParams(format!(
                "cannot raise depth {} to {depth}",
                a.remaining_depth()
            )));
        }
        let mut out = a.clone();
        out.remaining_depth = depth;
        Ok(out)
    }

    fn serialize(&self, ct: &Ciphertext) -> Vec<u8> {
        let mut out = ct.header().to_vec();
        let v = match ct.payload() {
            Payload::Mock(v) => v,
            Payload::Rlwe(_) => panic!("RLWE ciphertext passed to the mock backend"),
        };
        for i in 0..ct.slot_len() {
            out.extend_from_slice(&v.get(i).copied().unwrap_or(0.0).to_le_bytes());
        }
        out
    }

    fn deserialize(&self, bytes: &[u8]) -> Result<Ciphertext> {
        let h = parse_header(bytes, &self.params)?;
        if h.backend != BackendKind::Mock.tag() {
            return Err(HeError::BackendMismatch);
        }
        let body = &bytes[HEADER_LEN..];
        if body.len() != h.slot_len * 8 {
            return Err(HeError::Malformed(format!(
                "expected {} payload bytes, got {}",
                h.slot_len * 8,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HeError::Malformed("non-finite slot value".into()));
        }
        Ok(Ciphertext::new(h.key_id, h.depth, h.slot_len, Payload::Mock(values)))
    }

    fn serialized_size(&self, ct: &Ciphertext) -> usize {
        HEADER_LEN + 8 * ct.slot_len()
    }
}
