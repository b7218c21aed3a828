//! Leveled CKKS-style scheme over an RNS modulus chain.
//!
//! Ciphertexts are kept in coefficient form between operations; products go
//! through the NTT. Key switching uses one RNS digit per active chain prime
//! and a single special prime `P`, dropped again by rounding division.

pub mod arith;
mod encoding;
mod ntt;

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use self::arith::{add_mod, center, inv_mod, mul_mod, mul_shoup, neg_mod, reduce_centered, reduce_i128, shoup, sub_mod};
use self::encoding::Encoder;
use self::ntt::NttTable;
use super::{
    check_encryptable, check_same_key, parse_header, BackendKind, Ciphertext, EvalInner, EvalKey,
    HeBackend, HeError, HeParams, KeyId, KeyPair, Payload, PublicInner, PublicKey, Result,
    SecretInner, SecretKey, HEADER_LEN,
};

/// Published error bounds for the default parameters (N = 4096, scale 2^40),
/// as max-abs slot error against exact arithmetic on fresh inputs.
pub const EPS_FRESH: f64 = 1e-6;
pub const EPS_ADD: f64 = 2.0 * EPS_FRESH;

/// Bound for `mul(E(x), E(y))` with `|x| <= x_max`, `|y| <= y_max`.
pub fn eps_mul(x_max: f64, y_max: f64) -> f64 {
    2.0 * EPS_FRESH * (1.0 + x_max.abs() + y_max.abs())
}

/// Bound for `mul_plain(E(x), p)` with `|p| <= p_max`.
pub fn eps_mul_plain(p_max: f64) -> f64 {
    2.0 * EPS_FRESH * (1.0 + p_max.abs())
}

/// Bound for slot 0 of `rotate_sum(E(x), span)`.
pub fn eps_rotate_sum(span: usize) -> f64 {
    4.0 * EPS_FRESH * (span as f64).sqrt()
}

type Rns = Vec<Vec<u64>>;

#[derive(Clone)]
pub(crate) struct RlweCiphertext {
    c0: Rns,
    c1: Rns,
    scale: f64,
}

impl RlweCiphertext {
    fn level(&self) -> usize {
        self.c0.len() - 1
    }
}

pub(crate) struct RlweSecret {
    /// NTT form for every chain prime followed by the special prime.
    s_ntt: Rns,
}

pub(crate) struct RlwePublic {
    b_ntt: Rns,
    a_ntt: Rns,
}

/// `digits[i] = (b_i, a_i)` over all chain primes plus the special prime, NTT form.
struct SwitchKey {
    digits: Vec<(Rns, Rns)>,
}

pub(crate) struct RlweEval {
    relin: SwitchKey,
    /// Key for a left rotation by `2^k` slots at index `k`.
    rotations: Vec<SwitchKey>,
}

struct Context {
    n: usize,
    /// Chain primes followed by the special prime.
    moduli: Vec<u64>,
    tables: Vec<NttTable>,
    encoder: Encoder,
    /// `inv_q[l][j] = q_l^{-1} mod q_j` for `j < l`.
    inv_q: Vec<Vec<u64>>,
    /// `P mod q_j` and `P^{-1} mod q_j`.
    p_mod: Vec<u64>,
    p_inv: Vec<u64>,
}

impl Context {
    fn new(params: &HeParams) -> Self {
        let n = params.ring_dimension;
        let moduli: Vec<u64> = params.modulus_chain.iter().copied().chain([params.special_modulus]).collect();
        let tables = moduli.iter().map(|&q| NttTable::new(q, n)).collect();
        let chain = &params.modulus_chain;
        let inv_q = (0..chain.len())
            .map(|l| (0..l).map(|j| inv_mod(chain[l] % chain[j], chain[j])).collect())
            .collect();
        let p = params.special_modulus;
        Context {
            n,
            tables,
            encoder: Encoder::new(n),
            inv_q,
            p_mod: chain.iter().map(|&q| p % q).collect(),
            p_inv: chain.iter().map(|&q| inv_mod(p % q, q)).collect(),
            moduli,
        }
    }

    fn special_index(&self) -> usize {
        self.moduli.len() - 1
    }

    fn to_ntt(&self, idx: usize, mut v: Vec<u64>) -> Vec<u64> {
        self.tables[idx].forward(&mut v);
        v
    }

    fn residues_signed(&self, coeffs: &[i128], indices: impl Iterator<Item = usize>) -> Rns {
        indices
            .map(|i| coeffs.iter().map(|&c| reduce_i128(c, self.moduli[i])).collect())
            .collect()
    }

    /// `out = sigma_g(a)` on a coefficient-form residue vector.
    fn automorphism(&self, a: &[u64], g: usize, q: u64) -> Vec<u64> {
        let n = self.n;
        let mut out = vec![0u64; n];
        for (i, &c) in a.iter().enumerate() {
            let k = (i * g) & (2 * n - 1);
            if k < n {
                out[k] = c;
            } else {
                out[k - n] = neg_mod(c, q);
            }
        }
        out
    }

    fn automorphism_signed(&self, a: &[i64], g: usize) -> Vec<i64> {
        let n = self.n;
        let mut out = vec![0i64; n];
        for (i, &c) in a.iter().enumerate() {
            let k = (i * g) & (2 * n - 1);
            if k < n {
                out[k] = c;
            } else {
                out[k - n] = -c;
            }
        }
        out
    }

    /// Switch `d` (coefficient form, primes `0..=level`) to the key encoded in `key`.
    fn key_switch(&self, d: &Rns, key: &SwitchKey) -> (Rns, Rns) {
        let level = d.len() - 1;
        let sp = self.special_index();
        let targets: Vec<usize> = (0..=level).chain([sp]).collect();
        let mut acc0: Rns = vec![vec![0u64; self.n]; targets.len()];
        let mut acc1: Rns = vec![vec![0u64; self.n]; targets.len()];
        for (i, digit) in d.iter().enumerate() {
            let (kb, ka) = &key.digits[i];
            for (ti, &t) in targets.iter().enumerate() {
                let q = self.moduli[t];
                let x: Vec<u64> = if t == i { digit.clone() } else { digit.iter().map(|&c| c % q).collect() };
                let x = self.to_ntt(t, x);
                self.tables[t].mul_acc(&mut acc0[ti], &x, &kb[t]);
                self.tables[t].mul_acc(&mut acc1[ti], &x, &ka[t]);
            }
        }
        for (ti, &t) in targets.iter().enumerate() {
            self.tables[t].inverse(&mut acc0[ti]);
            self.tables[t].inverse(&mut acc1[ti]);
        }
        (self.mod_down(acc0, level), self.mod_down(acc1, level))
    }

    /// Divide by the special prime with rounding; input has `level + 2` residues.
    fn mod_down(&self, mut acc: Rns, level: usize) -> Rns {
        let p = self.moduli[self.special_index()];
        let special = acc.pop().expect("special residue present");
        for (j, res) in acc.iter_mut().enumerate() {
            let q = self.moduli[j];
            let (pinv, pinv_shoup, p_mod) = (self.p_inv[j], shoup(self.p_inv[j], q), self.p_mod[j]);
            for (c, &r) in res.iter_mut().zip(&special) {
                let rc = reduce_centered(r, p, p_mod, q);
                *c = mul_shoup(sub_mod(*c, rc, q), pinv, pinv_shoup, q);
            }
        }
        debug_assert_eq!(acc.len(), level + 1);
        acc
    }

    /// Drop the top prime, dividing by it with rounding.
    fn rescale(&self, ct: &mut RlweCiphertext) {
        let l = ct.level();
        let ql = self.moduli[l];
        for poly in [&mut ct.c0, &mut ct.c1] {
            let top = poly.pop().expect("level >= 1");
            for (j, res) in poly.iter_mut().enumerate() {
                let q = self.moduli[j];
                let (inv, inv_shoup, ql_mod) = (self.inv_q[l][j], shoup(self.inv_q[l][j], q), ql % q);
                for (c, &t) in res.iter_mut().zip(&top) {
                    let tc = reduce_centered(t, ql, ql_mod, q);
                    *c = mul_shoup(sub_mod(*c, tc, q), inv, inv_shoup, q);
                }
            }
        }
        ct.scale /= ql as f64;
    }

    fn rotate_pow2(&self, ct: &RlweCiphertext, k: usize, evk: &RlweEval) -> RlweCiphertext {
        let g = self.encoder.galois_element(1 << k);
        let level = ct.level();
        let c0: Rns = (0..=level).map(|j| self.automorphism(&ct.c0[j], g, self.moduli[j])).collect();
        let c1: Rns = (0..=level).map(|j| self.automorphism(&ct.c1[j], g, self.moduli[j])).collect();
        let (k0, k1) = self.key_switch(&c1, &evk.rotations[k]);
        let c0 = add_rns(&c0, &k0, &self.moduli);
        RlweCiphertext { c0, c1: k1, scale: ct.scale }
    }
}

fn add_rns(a: &Rns, b: &Rns, moduli: &[u64]) -> Rns {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(j, (x, y))| x.iter().zip(y).map(|(&u, &v)| add_mod(u, v, moduli[j])).collect())
        .collect()
}

fn sub_rns(a: &Rns, b: &Rns, moduli: &[u64]) -> Rns {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(j, (x, y))| x.iter().zip(y).map(|(&u, &v)| sub_mod(u, v, moduli[j])).collect())
        .collect()
}

/// Leveled approximate-arithmetic RLWE backend.
pub struct RlweBackend {
    params: HeParams,
    ctx: Arc<Context>,
    rng: Mutex<ChaCha20Rng>,
}

impl RlweBackend {
    pub fn new(params: HeParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let ctx = Arc::new(Context::new(&params));
        Ok(RlweBackend { params, ctx, rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)) })
    }

    fn top_level(&self) -> usize {
        self.params.max_mul_depth
    }

    fn sample_ternary(rng: &mut ChaCha20Rng, n: usize) -> Vec<i64> {
        (0..n).map(|_| rng.random_range(-1i64..=1)).collect()
    }

    fn sample_error(&self, rng: &mut ChaCha20Rng) -> Vec<i64> {
        let normal = Normal::new(0.0, self.params.error_std).expect("positive std");
        let bound = 6.0 * self.params.error_std;
        (0..self.ctx.n)
            .map(|_| normal.sample(rng).clamp(-bound, bound).round() as i64)
            .collect()
    }

    fn signed_ntt(&self, coeffs: &[i64], idx: usize) -> Vec<u64> {
        let q = self.ctx.moduli[idx];
        let v = coeffs.iter().map(|&c| reduce_i128(c as i128, q)).collect();
        self.ctx.to_ntt(idx, v)
    }

    fn uniform(&self, rng: &mut ChaCha20Rng, idx: usize) -> Vec<u64> {
        let q = self.ctx.moduli[idx];
        (0..self.ctx.n).map(|_| rng.random_range(0..q)).collect()
    }

    /// Switching key from `s_prime` (NTT form over the chain primes) to `s`.
    fn switch_key(&self, rng: &mut ChaCha20Rng, s: &RlweSecret, s_prime_ntt: &Rns) -> SwitchKey {
        let chain = self.params.modulus_chain.len();
        let all = self.ctx.moduli.len();
        let digits = (0..chain)
            .map(|i| {
                let e = self.sample_error(rng);
                let mut b = Vec::with_capacity(all);
                let mut a = Vec::with_capacity(all);
                for t in 0..all {
                    let q = self.ctx.moduli[t];
                    let at = self.uniform(rng, t);
                    let et = self.signed_ntt(&e, t);
                    let mut bt: Vec<u64> = at
                        .iter()
                        .zip(&s.s_ntt[t])
                        .zip(&et)
                        .map(|((&x, &sv), &ev)| sub_mod(ev, mul_mod(x, sv, q), q))
                        .collect();
                    if t == i {
                        let pm = self.ctx.p_mod[i];
                        for (c, &sp) in bt.iter_mut().zip(&s_prime_ntt[i]) {
                            *c = add_mod(*c, mul_mod(pm, sp, q), q);
                        }
                    }
                    b.push(bt);
                    a.push(at);
                }
                (b, a)
            })
            .collect();
        SwitchKey { digits }
    }

    fn unwrap_ct<'a>(&self, ct: &'a Ciphertext) -> Result<&'a RlweCiphertext> {
        match ct.payload() {
            Payload::Rlwe(c) => Ok(c),
            Payload::Mock(_) => Err(HeError::BackendMismatch),
        }
    }

    fn unwrap_eval<'a>(&self, ct: &Ciphertext, evk: &'a EvalKey) -> Result<&'a RlweEval> {
        check_same_key(ct, evk.key_id)?;
        match &evk.inner {
            EvalInner::Rlwe(e) => Ok(e),
            EvalInner::Mock => Err(HeError::BackendMismatch),
        }
    }

    fn wrap(&self, key_id: KeyId, slot_len: usize, ct: RlweCiphertext) -> Ciphertext {
        Ciphertext::new(key_id, ct.level(), slot_len, Payload::Rlwe(ct))
    }

    fn truncate(ct: &RlweCiphertext, level: usize) -> RlweCiphertext {
        RlweCiphertext {
            c0: ct.c0[..=level].to_vec(),
            c1: ct.c1[..=level].to_vec(),
            scale: ct.scale,
        }
    }

    /// Bring two operands to a common level and check their scales agree.
    fn align(&self, a: &Ciphertext, b: &Ciphertext) -> Result<(RlweCiphertext, RlweCiphertext)> {
        check_same_key(a, b.key_id())?;
        if a.slot_len() != b.slot_len() {
            return Err(HeError::LengthMismatch { left: a.slot_len(), right: b.slot_len() });
        }
        let (x, y) = (self.unwrap_ct(a)?, self.unwrap_ct(b)?);
        if ((x.scale / y.scale) - 1.0).abs() > 1e-9 {
            return Err(HeError::ScaleMismatch(x.scale, y.scale));
        }
        let level = x.level().min(y.level());
        Ok((Self::truncate(x, level), Self::truncate(y, level)))
    }

    fn encode_at(&self, p: &[f64], scale: f64, level: usize) -> Rns {
        let coeffs = self.ctx.encoder.encode(p, scale);
        self.ctx.residues_signed(&coeffs, 0..=level)
    }

    fn encrypt_at(&self, v: &[f64], pk: &PublicKey, scale: f64, level: usize) -> Result<Ciphertext> {
        let public = match &pk.inner {
            PublicInner::Rlwe(p) => p,
            PublicInner::Mock => return Err(HeError::BackendMismatch),
        };
        check_encryptable(v, &self.params)?;
        let top = self.top_level();
        let m = self.encode_at(v, scale, top);
        let (u, e0, e1) = {
            let mut rng = self.rng.lock().unwrap();
            let u = Self::sample_ternary(&mut rng, self.ctx.n);
            (u, self.sample_error(&mut rng), self.sample_error(&mut rng))
        };
        let mut c0 = Vec::with_capacity(top + 1);
        let mut c1 = Vec::with_capacity(top + 1);
        for j in 0..=top {
            let q = self.ctx.moduli[j];
            let table = &self.ctx.tables[j];
            let u_ntt = self.signed_ntt(&u, j);
            let mut x0 = vec![0u64; self.ctx.n];
            let mut x1 = vec![0u64; self.ctx.n];
            table.mul_into(&mut x0, &u_ntt, &public.b_ntt[j]);
            table.mul_into(&mut x1, &u_ntt, &public.a_ntt[j]);
            table.inverse(&mut x0);
            table.inverse(&mut x1);
            for k in 0..self.ctx.n {
                x0[k] = add_mod(add_mod(x0[k], reduce_i128(e0[k] as i128, q), q), m[j][k], q);
                x1[k] = add_mod(x1[k], reduce_i128(e1[k] as i128, q), q);
            }
            c0.push(x0);
            c1.push(x1);
        }
        let ct = RlweCiphertext { c0, c1, scale };
        Ok(self.wrap(pk.key_id, v.len(), Self::truncate(&ct, level)))
    }

    /// Size in bytes of a serialized ciphertext at `depth`.
    pub fn ciphertext_bytes(&self, depth: usize) -> usize {
        HEADER_LEN + 8 + 2 * (depth + 1) * (4 + 8 * self.ctx.n)
    }
}

impl HeBackend for RlweBackend {
    fn params(&self) -> &HeParams {
        &self.params
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Rlwe
    }

    fn keygen(&self, entity_label: &str) -> Result<KeyPair> {
        self.params.validate()?;
        let mut rng = self.rng.lock().unwrap();
        let key_id = KeyId(rng.random());
        let all = self.ctx.moduli.len();
        let chain = self.params.modulus_chain.len();
        let s = Self::sample_ternary(&mut rng, self.ctx.n);
        let secret = RlweSecret { s_ntt: (0..all).map(|t| self.signed_ntt(&s, t)).collect() };

        let mut b_ntt = Vec::with_capacity(chain);
        let mut a_ntt = Vec::with_capacity(chain);
        let e = self.sample_error(&mut rng);
        for j in 0..chain {
            let q = self.ctx.moduli[j];
            let a = self.uniform(&mut rng, j);
            let ej = self.signed_ntt(&e, j);
            let b = a
                .iter()
                .zip(&secret.s_ntt[j])
                .zip(&ej)
                .map(|((&x, &sv), &ev)| sub_mod(ev, mul_mod(x, sv, q), q))
                .collect();
            b_ntt.push(b);
            a_ntt.push(a);
        }

        let s_sq: Rns = (0..chain)
            .map(|j| {
                let q = self.ctx.moduli[j];
                secret.s_ntt[j].iter().map(|&x| mul_mod(x, x, q)).collect()
            })
            .collect();
        let relin = self.switch_key(&mut rng, &secret, &s_sq);
        let slots = self.params.slot_count();
        let rotations = (0..slots.trailing_zeros())
            .map(|k| {
                let g = self.ctx.encoder.galois_element(1 << k);
                let s_rot = self.ctx.automorphism_signed(&s, g);
                let s_rot_ntt: Rns = (0..chain).map(|j| self.signed_ntt(&s_rot, j)).collect();
                self.switch_key(&mut rng, &secret, &s_rot_ntt)
            })
            .collect();
        drop(rng);

        Ok(KeyPair {
            key_id,
            public_key: PublicKey {
                key_id,
                label: entity_label.to_string(),
                inner: PublicInner::Rlwe(Arc::new(RlwePublic { b_ntt, a_ntt })),
            },
            secret_key: SecretKey { key_id, inner: SecretInner::Rlwe(Arc::new(secret)) },
            eval_key: EvalKey { key_id, inner: EvalInner::Rlwe(Arc::new(RlweEval { relin, rotations })) },
        })
    }

    fn encrypt(&self, v: &[f64], pk: &PublicKey) -> Result<Ciphertext> {
        self.encrypt_at(v, pk, self.params.scale, self.top_level())
    }

    fn encrypt_matching(&self, v: &[f64], pk: &PublicKey, template: &Ciphertext) -> Result<Ciphertext> {
        let t = self.unwrap_ct(template)?;
        let ct = self.encrypt_at(v, pk, t.scale, t.level())?;
        Ok(Ciphertext::new(ct.key_id(), ct.remaining_depth(), template.slot_len(), ct.payload().clone()))
    }

    fn decrypt(&self, ct: &Ciphertext, sk: &SecretKey) -> Result<Vec<f64>> {
        check_same_key(ct, sk.key_id)?;
        let secret = match &sk.inner {
            SecretInner::Rlwe(s) => s,
            SecretInner::Mock(_) => return Err(HeError::BackendMismatch),
        };
        let c = self.unwrap_ct(ct)?;
        let q = self.ctx.moduli[0];
        let table = &self.ctx.tables[0];
        let mut x = c.c1[0].clone();
        table.forward(&mut x);
        let mut prod = vec![0u64; self.ctx.n];
        table.mul_into(&mut prod, &x, &secret.s_ntt[0]);
        table.inverse(&mut prod);
        let coeffs: Vec<f64> = prod
            .iter()
            .zip(&c.c0[0])
            .map(|(&p, &c0)| center(add_mod(p, c0, q), q) as f64)
            .collect();
        let mut slots = self.ctx.encoder.decode(&coeffs, c.scale);
        slots.truncate(ct.slot_len());
        Ok(slots)
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let (x, y) = self.align(a, b)?;
        let ct = RlweCiphertext {
            c0: add_rns(&x.c0, &y.c0, &self.ctx.moduli),
            c1: add_rns(&x.c1, &y.c1, &self.ctx.moduli),
            scale: x.scale,
        };
        Ok(self.wrap(a.key_id(), a.slot_len(), ct))
    }

    fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let (x, y) = self.align(a, b)?;
        let ct = RlweCiphertext {
            c0: sub_rns(&x.c0, &y.c0, &self.ctx.moduli),
            c1: sub_rns(&x.c1, &y.c1, &self.ctx.moduli),
            scale: x.scale,
        };
        Ok(self.wrap(a.key_id(), a.slot_len(), ct))
    }

    fn add_plain(&self, a: &Ciphertext, p: &[f64]) -> Result<Ciphertext> {
        if p.len() != a.slot_len() {
            return Err(HeError::LengthMismatch { left: a.slot_len(), right: p.len() });
        }
        let c = self.unwrap_ct(a)?;
        let m = self.encode_at(p, c.scale, c.level());
        let ct = RlweCiphertext { c0: add_rns(&c.c0, &m, &self.ctx.moduli), c1: c.c1.clone(), scale: c.scale };
        Ok(self.wrap(a.key_id(), a.slot_len(), ct))
    }

    fn mul_plain(&self, a: &Ciphertext, p: &[f64]) -> Result<Ciphertext> {
        if p.len() != a.slot_len() {
            return Err(HeError::LengthMismatch { left: a.slot_len(), right: p.len() });
        }
        let c = self.unwrap_ct(a)?;
        let l = c.level();
        if l == 0 {
            return Err(HeError::DepthExhausted);
        }
        // Encoding at the top prime makes the following rescale restore the scale exactly.
        let m = self.encode_at(p, self.ctx.moduli[l] as f64, l);
        let mut c0 = Vec::with_capacity(l + 1);
        let mut c1 = Vec::with_capacity(l + 1);
        for j in 0..=l {
            let table = &self.ctx.tables[j];
            let pm = self.ctx.to_ntt(j, m[j].clone());
            let mut x0 = self.ctx.to_ntt(j, c.c0[j].clone());
            let mut x1 = self.ctx.to_ntt(j, c.c1[j].clone());
            let (y0, y1) = (x0.clone(), x1.clone());
            table.mul_into(&mut x0, &y0, &pm);
            table.mul_into(&mut x1, &y1, &pm);
            table.inverse(&mut x0);
            table.inverse(&mut x1);
            c0.push(x0);
            c1.push(x1);
        }
        let mut ct = RlweCiphertext { c0, c1, scale: c.scale * self.ctx.moduli[l] as f64 };
        self.ctx.rescale(&mut ct);
        ct.scale = c.scale;
        Ok(self.wrap(a.key_id(), a.slot_len(), ct))
    }

    fn mul(&self, a: &Ciphertext, b: &Ciphertext, eval_key: &EvalKey) -> Result<Ciphertext> {
        let evk = self.unwrap_eval(a, eval_key)?;
        let (x, y) = self.align(a, b)?;
        let l = x.level();
        if l == 0 {
            return Err(HeError::DepthExhausted);
        }
        let n = self.ctx.n;
        let mut d0 = Vec::with_capacity(l + 1);
        let mut d1 = Vec::with_capacity(l + 1);
        let mut d2 = Vec::with_capacity(l + 1);
        for j in 0..=l {
            let table = &self.ctx.tables[j];
            let q = self.ctx.moduli[j];
            let a0 = self.ctx.to_ntt(j, x.c0[j].clone());
            let a1 = self.ctx.to_ntt(j, x.c1[j].clone());
            let b0 = self.ctx.to_ntt(j, y.c0[j].clone());
            let b1 = self.ctx.to_ntt(j, y.c1[j].clone());
            let mut e0 = vec![0u64; n];
            let mut e1 = vec![0u64; n];
            let mut e2 = vec![0u64; n];
            for k in 0..n {
                e0[k] = mul_mod(a0[k], b0[k], q);
                e1[k] = add_mod(mul_mod(a0[k], b1[k], q), mul_mod(a1[k], b0[k], q), q);
                e2[k] = mul_mod(a1[k], b1[k], q);
            }
            table.inverse(&mut e0);
            table.inverse(&mut e1);
            table.inverse(&mut e2);
            d0.push(e0);
            d1.push(e1);
            d2.push(e2);
        }
        let (k0, k1) = self.ctx.key_switch(&d2, &evk.relin);
        let mut ct = RlweCiphertext {
            c0: add_rns(&d0, &k0, &self.ctx.moduli),
            c1: add_rns(&d1, &k1, &self.ctx.moduli),
            scale: x.scale * y.scale,
        };
        self.ctx.rescale(&mut ct);
        Ok(self.wrap(a.key_id(), a.slot_len(), ct))
    }

    fn rotate(&self, a: &Ciphertext, steps: usize, eval_key: &EvalKey) -> Result<Ciphertext> {
        let evk = self.unwrap_eval(a, eval_key)?;
        let slots = self.params.slot_count();
        let mut ct = self.unwrap_ct(a)?.clone();
        let steps = steps % slots;
        for k in 0..slots.trailing_zeros() as usize {
            if steps >> k & 1 == 1 {
                ct = self.ctx.rotate_pow2(&ct, k, evk);
            }
        }
        Ok(self.wrap(a.key_id(), slots, ct))
    }

    fn drop_to_depth(&self, a: &Ciphertext, depth: usize) -> Result<Ciphertext> {
        let c = self.unwrap_ct(a)?;
        if depth > c.level() {
            return Err(HeError::InvalidParams(format!("cannot raise depth {} to {depth}", c.level())));
        }
        Ok(self.wrap(a.key_id(), a.slot_len(), Self::truncate(c, depth)))
    }

    fn serialize(&self, ct: &Ciphertext) -> Vec<u8> {
        let c = match ct.payload() {
            Payload::Rlwe(c) => c,
            Payload::Mock(_) => panic!("mock ciphertext passed to the RLWE backend"),
        };
        let mut out = Vec::with_capacity(self.ciphertext_bytes(c.level()));
        out.extend_from_slice(&ct.header());
        out.extend_from_slice(&c.scale.to_le_bytes());
        for poly in [&c.c0, &c.c1] {
            for res in poly {
                out.extend_from_slice(&(res.len() as u32).to_le_bytes());
                for &x in res {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    fn deserialize(&self, bytes: &[u8]) -> Result<Ciphertext> {
        let h = parse_header(bytes, &self.params)?;
        if h.backend != BackendKind::Rlwe.tag() {
            return Err(HeError::BackendMismatch);
        }
        let expected = self.ciphertext_bytes(h.depth);
        if bytes.len() != expected {
            return Err(HeError::Malformed(format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let scale = f64::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 8].try_into().unwrap());
        if !scale.is_finite() || scale < 1.0 {
            return Err(HeError::Malformed(format!("invalid scale {scale}")));
        }
        let mut pos = HEADER_LEN + 8;
        let n = self.ctx.n;
        let mut read_poly = || -> Result<Rns> {
            let mut poly = Vec::with_capacity(h.depth + 1);
            for j in 0..=h.depth {
                let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
                pos += 4;
                if len != n {
                    return Err(HeError::Malformed(format!("coefficient array of length {len}")));
                }
                let q = self.ctx.moduli[j];
                let mut res = Vec::with_capacity(n);
                for chunk in bytes[pos..pos + 8 * n].chunks_exact(8) {
                    let x = u64::from_le_bytes(chunk.try_into().unwrap());
                    if x >= q {
                        return Err(HeError::Malformed(format!("coefficient {x} not reduced mod {q}")));
                    }
                    res.push(x);
                }
                pos += 8 * n;
                poly.push(res);
            }
            Ok(poly)
        };
        let c0 = read_poly()?;
        let c1 = read_poly()?;
        Ok(self.wrap(h.key_id, h.slot_len, RlweCiphertext { c0, c1, scale }))
    }

    fn serialized_size(&self, ct: &Ciphertext) -> usize {
        self.ciphertext_bytes(ct.remaining_depth())
    }
}
