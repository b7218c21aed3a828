use std::sync::OnceLock;

use proptest::prelude::*;

use super::*;

struct Fixture {
    backend: Box<dyn HeBackend>,
    keys: KeyPair,
    other: KeyPair,
}

fn rlwe() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let backend = RlweBackend::new(HeParams::default(), 7).unwrap();
        let keys = backend.keygen("frontend").unwrap();
        let other = backend.keygen("backend").unwrap();
        Fixture { backend: Box::new(backend), keys, other }
    })
}

fn mock() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let backend = MockBackend::new(HeParams::default(), 7).unwrap();
        let keys = backend.keygen("frontend").unwrap();
        let other = backend.keygen("backend").unwrap();
        Fixture { backend: Box::new(backend), keys, other }
    })
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl Fixture {
    fn enc(&self, v: &[f64]) -> Ciphertext {
        self.backend.encrypt(v, &self.keys.public_key).unwrap()
    }
    fn dec(&self, ct: &Ciphertext) -> Vec<f64> {
        self.backend.decrypt(ct, &self.keys.secret_key).unwrap()
    }
}

#[test]
fn keygen_gives_full_depth_and_distinct_ids() {
    for f in [rlwe(), mock()] {
        assert_ne!(f.keys.key_id, f.other.key_id);
        let ct = f.enc(&[1.0]);
        assert_eq!(ct.remaining_depth(), 2);
        assert_eq!(f.keys.public_key.label, "frontend");
    }
}

#[test]
fn invalid_ring_dimension_rejected() {
    let mut p = HeParams::default();
    p.ring_dimension = 100;
    assert!(matches!(RlweBackend::new(p.clone(), 0), Err(HeError::InvalidParams(_))));
    assert!(matches!(MockBackend::new(p, 0), Err(HeError::InvalidParams(_))));
    assert!(HeParams::generate(100, 2, 40).is_err());
    let mut empty = HeParams::mock_only(64, 0);
    empty.modulus_chain.clear();
    assert!(MockBackend::new(empty, 0).is_err());
}

#[test]
fn default_params_are_valid() {
    let p = HeParams::default();
    p.validate().unwrap();
    assert_eq!(p.ring_dimension, 4096);
    assert_eq!(p.slot_count(), 2048);
    assert_eq!(p.modulus_chain.len(), 3);
    assert_eq!(p.scale, (1u64 << 40) as f64);
}

#[test]
fn zero_vector_roundtrip() {
    assert_eq!(mock().dec(&mock().enc(&[0.0; 3])), vec![0.0; 3]);
    let f = rlwe();
    assert!(max_err(&f.dec(&f.enc(&[0.0; 3])), &[0.0; 3]) <= EPS_FRESH);
}

#[test]
fn small_vector_roundtrip_within_spec_bound() {
    let v = [0.5, -1.25];
    assert_eq!(mock().dec(&mock().enc(&v)), v.to_vec());
    let f = rlwe();
    let out = f.dec(&f.enc(&v));
    assert_eq!(out.len(), 2);
    assert!(max_err(&out, &v) <= 2f64.powi(-10));
    assert!(max_err(&out, &v) <= EPS_FRESH);
}

#[test]
fn encrypt_rejects_long_and_out_of_bound_vectors() {
    for f in [rlwe(), mock()] {
        let long = vec![0.0; f.backend.params().slot_count() + 1];
        assert!(matches!(
            f.backend.encrypt(&long, &f.keys.public_key),
            Err(HeError::VectorTooLong { len: 2049, capacity: 2048 })
        ));
        assert!(matches!(
            f.backend.encrypt(&[1.0, 1025.0], &f.keys.public_key),
            Err(HeError::ValueOutOfBound { index: 1, .. })
        ));
        assert!(f.backend.encrypt(&[f64::NAN], &f.keys.public_key).is_err());
    }
}

#[test]
fn wrong_key_decrypt_fails() {
    for f in [rlwe(), mock()] {
        let ct = f.enc(&[3.0]);
        assert!(matches!(
            f.backend.decrypt(&ct, &f.other.secret_key),
            Err(HeError::KeyMismatch { .. })
        ));
    }
}

#[test]
fn two_plain_multiplies_stay_within_four_eps() {
    let v = [1.5, -2.0, 3.25];
    let p = [0.5, 2.0, -1.0];
    let want: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a * b * b).collect();
    let m = mock();
    let ct = m.backend.mul_plain(&m.enc(&v), &p).unwrap();
    let ct = m.backend.mul_plain(&ct, &p).unwrap();
    assert_eq!(m.dec(&ct), want);
    let f = rlwe();
    let ct = f.backend.mul_plain(&f.enc(&v), &p).unwrap();
    let ct = f.backend.mul_plain(&ct, &p).unwrap();
    assert_eq!(ct.remaining_depth(), 0);
    assert!(max_err(&f.dec(&ct), &want) <= 4.0 * EPS_FRESH);
}

#[test]
fn add_examples() {
    for f in [rlwe(), mock()] {
        let x = [1.0, 2.0];
        let s = f.backend.add(&f.enc(&x), &f.enc(&[0.0, 0.0])).unwrap();
        assert!(max_err(&f.dec(&s), &x) <= EPS_ADD);
        let s = f.backend.add(&f.enc(&[1.0, 2.0]), &f.enc(&[3.0, 4.0])).unwrap();
        assert!(max_err(&f.dec(&s), &[4.0, 6.0]) <= EPS_ADD);
        let foreign = f.backend.encrypt(&[1.0, 2.0], &f.other.public_key).unwrap();
        assert!(matches!(f.backend.add(&f.enc(&x), &foreign), Err(HeError::KeyMismatch { .. })));
        assert!(matches!(
            f.backend.sub(&f.enc(&x), &f.enc(&[1.0])),
            Err(HeError::LengthMismatch { left: 2, right: 1 })
        ));
    }
    let m = mock();
    assert_eq!(m.dec(&m.backend.add(&m.enc(&[1.0, 2.0]), &m.enc(&[3.0, 4.0])).unwrap()), vec![4.0, 6.0]);
}

#[test]
fn add_result_depth_is_minimum() {
    for f in [rlwe(), mock()] {
        let a = f.enc(&[1.0]);
        let b = f.backend.drop_to_depth(&f.enc(&[2.0]), 1).unwrap();
        let s = f.backend.add(&a, &b).unwrap();
        assert_eq!(s.remaining_depth(), 1);
        assert!(max_err(&f.dec(&s), &[3.0]) <= EPS_ADD);
    }
}

#[test]
fn add_plain_examples() {
    for f in [rlwe(), mock()] {
        let r = [0.75];
        let ct = f.backend.add_plain(&f.enc(&r), &[412.5]).unwrap();
        assert_eq!(ct.remaining_depth(), 2);
        assert!(max_err(&f.dec(&ct), &[413.25]) <= EPS_FRESH);
        let x = [1.0, -3.0];
        assert!(max_err(&f.dec(&f.backend.add_plain(&f.enc(&x), &[0.0, 0.0]).unwrap()), &x) <= EPS_FRESH);
        assert!(matches!(
            f.backend.add_plain(&f.enc(&x), &[1.0]),
            Err(HeError::LengthMismatch { .. })
        ));
    }
}

#[test]
fn mul_plain_examples() {
    for f in [rlwe(), mock()] {
        let x = [2.0, 3.0];
        let ct = f.backend.mul_plain(&f.enc(&x), &[1.0, 1.0]).unwrap();
        assert_eq!(ct.remaining_depth(), 1);
        assert!(max_err(&f.dec(&ct), &x) <= eps_mul_plain(1.0));
        let ct = f.backend.mul_plain(&f.enc(&x), &[0.5, 2.0]).unwrap();
        assert!(max_err(&f.dec(&ct), &[1.0, 6.0]) <= eps_mul_plain(2.0));
        let flat = f.backend.drop_to_depth(&f.enc(&x), 0).unwrap();
        assert_eq!(f.backend.mul_plain(&flat, &[1.0, 1.0]).unwrap_err(), HeError::DepthExhausted);
    }
}

#[test]
fn mul_examples() {
    for f in [rlwe(), mock()] {
        let x = [1.5, -7.0, 30.0];
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let ct = f.backend.mul(&f.enc(&x), &f.enc(&x), &f.keys.eval_key).unwrap();
        assert_eq!(ct.remaining_depth(), 1);
        for (i, (got, want)) in f.dec(&ct).iter().zip(&sq).enumerate() {
            assert!((got - want).abs() <= EPS_FRESH * (1.0 + x[i].abs()).powi(2));
            assert!((got - want).abs() <= eps_mul(x[i], x[i]));
        }
        let ct = f.backend.mul(&f.enc(&x), &f.enc(&[1.0; 3]), &f.keys.eval_key).unwrap();
        assert!(max_err(&f.dec(&ct), &x) <= eps_mul(30.0, 1.0));
        let c1 = f.backend.mul(&f.enc(&x), &f.enc(&x), &f.keys.eval_key).unwrap();
        let c2 = f.backend.mul(&c1, &c1, &f.keys.eval_key).unwrap();
        assert_eq!(c2.remaining_depth(), 0);
        assert_eq!(f.backend.mul(&c2, &c2, &f.keys.eval_key).unwrap_err(), HeError::DepthExhausted);
        let foreign = f.backend.encrypt(&x, &f.other.public_key).unwrap();
        assert!(matches!(
            f.backend.mul(&f.enc(&x), &foreign, &f.keys.eval_key),
            Err(HeError::KeyMismatch { .. })
        ));
        assert!(matches!(
            f.backend.mul(&f.enc(&x), &f.enc(&x), &f.other.eval_key),
            Err(HeError::KeyMismatch { .. })
        ));
    }
}

#[test]
fn rotate_sum_examples() {
    for f in [rlwe(), mock()] {
        let ct = f.backend.rotate_sum(&f.enc(&[1.0, 2.0, 3.0, 4.0]), 4, &f.keys.eval_key).unwrap();
        assert_eq!(ct.remaining_depth(), 2);
        assert!((f.dec(&ct)[0] - 10.0).abs() <= eps_rotate_sum(4));
        let ct = f.backend.rotate_sum(&f.enc(&[-6.5, 2.0]), 1, &f.keys.eval_key).unwrap();
        assert!((f.dec(&ct)[0] + 6.5).abs() <= eps_rotate_sum(1));
        assert!(matches!(
            f.backend.rotate_sum(&f.enc(&[1.0]), 0, &f.keys.eval_key),
            Err(HeError::SpanOutOfRange { span: 0, .. })
        ));
        assert!(matches!(
            f.backend.rotate_sum(&f.enc(&[1.0, 2.0]), 3, &f.keys.eval_key),
            Err(HeError::SpanOutOfRange { span: 3, .. })
        ));
    }
}

#[test]
fn strided_sum_matches_oracle() {
    let stride = 5;
    let count = 7;
    let v: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).cos() * 10.0).collect();
    for f in [rlwe(), mock()] {
        let out = f.dec(&f.backend.rotate_sum_strided(&f.enc(&v), stride, count, &f.keys.eval_key).unwrap());
        for i in 0..stride {
            let want: f64 = (0..count).map(|r| v.get(i + r * stride).copied().unwrap_or(0.0)).sum();
            assert!((out[i] - want).abs() <= eps_rotate_sum(count), "slot {i}");
        }
    }
}

#[test]
fn rotation_is_cyclic_over_all_slots() {
    for f in [rlwe(), mock()] {
        let slots = f.backend.params().slot_count();
        let v: Vec<f64> = (0..slots).map(|i| (i % 13) as f64).collect();
        for steps in [1, 6, 1000, slots - 1] {
            let out = f.dec(&f.backend.rotate(&f.enc(&v), steps, &f.keys.eval_key).unwrap());
            let want: Vec<f64> = (0..slots).map(|i| v[(i + steps) % slots]).collect();
            assert!(max_err(&out, &want) <= EPS_FRESH, "steps {steps}");
        }
    }
}

#[test]
fn serialized_sizes() {
    let m = mock();
    for n in [0, 1, 5, 2048] {
        let ct = m.enc(&vec![1.0; n]);
        assert_eq!(m.backend.serialized_size(&ct), n * 8 + HEADER_LEN);
        assert_eq!(m.backend.serialize(&ct).len(), n * 8 + HEADER_LEN);
    }
    let f = rlwe();
    let a = f.enc(&[1.0]);
    let b = f.enc(&vec![1.0; 2048]);
    assert_eq!(f.backend.serialized_size(&a), f.backend.serialized_size(&b));
    assert_eq!(f.backend.serialize(&a).len(), f.backend.serialized_size(&a));
    let lower = f.backend.drop_to_depth(&a, 1).unwrap();
    assert!(f.backend.serialized_size(&lower) < f.backend.serialized_size(&a));
    assert!(f.backend.serialized_size(&b) as f64 / (2048.0 * 8.0) > 1.0);
}

#[test]
fn serialization_roundtrip_and_rejection() {
    for f in [rlwe(), mock()] {
        let ct = f.backend.mul_plain(&f.enc(&[1.0, -2.0, 3.5]), &[2.0, 2.0, 2.0]).unwrap();
        let bytes = f.backend.serialize(&ct);
        assert_eq!(bytes[0], WIRE_VERSION);
        let back = f.backend.deserialize(&bytes).unwrap();
        assert_eq!(back.key_id(), ct.key_id());
        assert_eq!(back.remaining_depth(), 1);
        assert_eq!(back.slot_len(), 3);
        assert_eq!(f.dec(&back), f.dec(&ct));
        assert!(f.backend.deserialize(&bytes[..bytes.len() - 1]).is_err());
        assert!(f.backend.deserialize(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 9;
        assert!(f.backend.deserialize(&bad).is_err());
    }
    let m_bytes = mock().backend.serialize(&mock().enc(&[1.0]));
    assert_eq!(rlwe().backend.deserialize(&m_bytes).unwrap_err(), HeError::BackendMismatch);
}

#[test]
fn backends_reject_each_others_material() {
    let (m, r) = (mock(), rlwe());
    assert_eq!(r.backend.encrypt(&[1.0], &m.keys.public_key).unwrap_err(), HeError::BackendMismatch);
    assert_eq!(m.backend.encrypt(&[1.0], &r.keys.public_key).unwrap_err(), HeError::BackendMismatch);
}

#[test]
fn encrypt_matching_copies_shape() {
    for f in [rlwe(), mock()] {
        let genuine = f.backend.mul_plain(&f.enc(&[4.0]), &[0.25]).unwrap();
        let decoy = f.backend.encrypt_matching(&[9.0], &f.keys.public_key, &genuine).unwrap();
        assert_eq!(decoy.remaining_depth(), genuine.remaining_depth());
        assert_eq!(decoy.slot_len(), genuine.slot_len());
        assert_eq!(f.backend.serialized_size(&decoy), f.backend.serialized_size(&genuine));
        assert!((f.dec(&decoy)[0] - 9.0).abs() <= EPS_FRESH);
        assert!((f.dec(&genuine)[0] - 1.0).abs() <= eps_mul_plain(1.0));
    }
}

#[test]
fn secret_key_debug_is_redacted() {
    let s = format!("{:?}", rlwe().keys);
    assert!(!s.contains("secret"));
    assert!(format!("{:?}", rlwe().keys.secret_key).contains("redacted"));
}

/// Same straight-line circuit on both backends; the mock result is the exact oracle.
fn circuit(f: &Fixture, x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let b = &f.backend;
    let ex = f.enc(x);
    let ey = f.enc(y);
    let t = b.add(&ex, &ey).unwrap();
    let t = b.mul_plain(&t, w).unwrap();
    let u = b.mul_plain(&ex, &vec![1.0; x.len()]).unwrap();
    let t = b.mul(&t, &u, &f.keys.eval_key).unwrap();
    let t = b.add_plain(&t, &vec![0.5; x.len()]).unwrap();
    let t = b.rotate_sum(&t, x.len(), &f.keys.eval_key).unwrap();
    f.dec(&t)[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn homomorphism_add_mul(
        (x, y) in (1usize..64).prop_flat_map(|n| (
            prop::collection::vec(-1024.0f64..1024.0, n),
            prop::collection::vec(-1024.0f64..1024.0, n),
        )),
    ) {
        let f = rlwe();
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let prod: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let s = f.dec(&f.backend.add(&f.enc(&x), &f.enc(&y)).unwrap());
        prop_assert!(max_err(&s, &sum) <= EPS_ADD);
        let p = f.dec(&f.backend.mul(&f.enc(&x), &f.enc(&y), &f.keys.eval_key).unwrap());
        for i in 0..x.len() {
            prop_assert!((p[i] - prod[i]).abs() <= eps_mul(x[i], y[i]));
        }
        let m = mock();
        prop_assert_eq!(m.dec(&m.backend.add(&m.enc(&x), &m.enc(&y)).unwrap()), sum);
        prop_assert_eq!(m.dec(&m.backend.mul(&m.enc(&x), &m.enc(&y), &m.keys.eval_key).unwrap()), prod);
    }

    #[test]
    fn mock_and_rlwe_agree_on_circuits(
        x in prop::collection::vec(-4.0f64..4.0, 1..32),
        shift in -3.0f64..3.0,
        w in -2.0f64..2.0,
    ) {
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + shift).collect();
        let ws = vec![w; x.len()];
        let exact = circuit(mock(), &x, &y, &ws);
        let approx = circuit(rlwe(), &x, &y, &ws);
        prop_assert!((exact - approx).abs() <= eps_rotate_sum(x.len()) * 100.0,
            "{} vs {}", exact, approx);
    }

    #[test]
    fn depth_decreases_by_one_per_multiply(steps in prop::collection::vec(0u8..3, 0..6)) {
        for f in [mock(), rlwe()] {
            let mut ct = f.enc(&[1.0, 2.0]);
            for &op in &steps {
                let before = ct.remaining_depth();
                let next = match op {
                    0 => f.backend.mul_plain(&ct, &[1.0, 1.0]),
                    1 => f.backend.mul(&ct, &ct, &f.keys.eval_key),
                    _ => f.backend.add(&ct, &ct),
                };
                match next {
                    Ok(c) => {
                        let expect = if op == 2 { before } else { before - 1 };
                        prop_assert_eq!(c.remaining_depth(), expect);
                        ct = c;
                    }
                    Err(e) => {
                        prop_assert_eq!(before, 0);
                        prop_assert_eq!(e, HeError::DepthExhausted);
                    }
                }
            }
        }
    }
}
