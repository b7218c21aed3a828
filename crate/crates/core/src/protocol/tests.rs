use std::sync::{Arc, OnceLock};

use super::entities::DomainAggregate;
use super::*;
use crate::dataset::synth::{generate, SynthConfig};
use crate::dataset::{AugmentConfig, Label, Slice, Source};
use crate::detector::{train_chain, Architecture, DetectorChain, TrainConfig, WindowConfig};
use crate::evalbench::{ks_two_sample, prepare, Experiment, SplitConfig};
use crate::he::{HeBackend, HeError, HeParams, MockBackend};

struct Fixture {
    ex: Experiment,
    chains: Vec<DetectorChain>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = SynthConfig { users: 6, sessions_per_user: 3, ..SynthConfig::default() };
        let ds = generate(&cfg, 11).with_requests();
        let ex = prepare(&ds, &SplitConfig::default(), &AugmentConfig::default(), 11).unwrap();
        let fit = ex.fit_slices();
        let tcfg = TrainConfig { epochs: 6, ..TrainConfig::default() };
        let chains = Source::ALL
            .iter()
            .map(|&s| {
                let w = WindowConfig::new(s, 10, 5).unwrap();
                train_chain(w, Architecture::default(), &tcfg, &fit, &ex.history, &ex.train).unwrap()
            })
            .collect();
        Fixture { ex, chains }
    })
}

fn mock() -> Arc<dyn HeBackend> {
    Arc::new(MockBackend::new(HeParams::default(), 3).unwrap())
}

fn user_slices<'a>(slices: &'a [Slice], user: &str) -> Vec<Slice> {
    slices.iter().filter(|s| s.user_id == user).cloned().collect()
}

fn simulator(cfg: ProtocolConfig) -> Simulator {
    Simulator::new(mock(), &fixture().chains, cfg, 5).unwrap()
}

/// Authenticate every test slice of the first test user.
fn run_first_user(sim: &mut Simulator) -> Vec<RiskReport> {
    let f = fixture();
    let user = &f.ex.test_users[0];
    run_session(sim, &user_slices(&f.ex.history, user), &user_slices(&f.ex.test, user), &TriggerPolicy::Interval)
}

#[test]
fn collect_stores_one_row_per_feature_vector() {
    let f = fixture();
    let mut sim = simulator(ProtocolConfig::default());
    let mut slice = f.ex.test[0].clone();
    let swipe = slice.source(Source::Swipe)[0].clone();
    let accel: Vec<_> = slice.source(Source::Accelerometer)[..20].to_vec();
    slice.points = Default::default();
    slice.points[Source::Swipe.index()] = vec![swipe];
    slice.points[Source::Accelerometer.index()] = accel;
    let mut stored = 0;
    for role in [Role::Frontend, Role::Backend] {
        let client = if role == Role::Frontend { &mut sim.frontend } else { &mut sim.backend };
        let body = client.collect(&slice, false).unwrap();
        stored += sim.server.receive_collect(role, body).unwrap();
    }
    assert_eq!(stored, 3);

    slice.points = Default::default();
    let body = sim.frontend.collect(&slice, false).unwrap();
    assert_eq!(sim.server.receive_collect(Role::Frontend, body).unwrap(), 0);
}

#[test]
fn collect_rejects_foreign_keys_and_unregistered_senders() {
    let f = fixture();
    let mut sim = simulator(ProtocolConfig::default());
    let body = sim.frontend.collect(&f.ex.test[0], false).unwrap();
    assert_eq!(sim.server.receive_collect(Role::Backend, body.clone()), Err(ProtocolError::WrongKey));

    let mut server = AuthServer::new(mock(), &f.chains, ProtocolConfig::default(), 0).unwrap();
    assert_eq!(server.receive_collect(Role::Frontend, body), Err(ProtocolError::Unregistered(Role::Frontend)));
}

#[test]
fn malformed_ciphertext_is_rejected() {
    let f = fixture();
    let mut sim = simulator(ProtocolConfig::default());
    let Body::Collect { user, session, slice, enroll, mut rows } = sim.frontend.collect(&f.ex.test[0], false).unwrap()
    else {
        unreachable!()
    };
    rows[0].bytes.truncate(5);
    let body = Body::Collect { user, session, slice, enroll, rows };
    assert!(matches!(sim.server.receive_collect(Role::Frontend, body), Err(ProtocolError::He(_))));
}

#[test]
fn domains_are_never_combined() {
    let sim = simulator(ProtocolConfig::default());
    let backend = mock();
    let a = backend.encrypt(&[1.0], sim.frontend.public_key()).unwrap();
    let b = backend.encrypt(&[1.0], sim.backend.public_key()).unwrap();
    assert_ne!(sim.frontend.key_id(), sim.backend.key_id());
    assert!(matches!(backend.add(&a, &b), Err(HeError::KeyMismatch { .. })));
}

#[test]
fn mock_run_matches_the_plaintext_reference() {
    let f = fixture();
    let mut compared = 0;
    for user in &f.ex.test_users {
        let mut sim = simulator(ProtocolConfig::default());
        let history = user_slices(&f.ex.history, user);
        let slices = user_slices(&f.ex.test, user);
        let reports = run_session(&mut sim, &history, &slices, &TriggerPolicy::Interval);
        assert_eq!(reports.len(), slices.len());
        let mut ordered = slices.clone();
        ordered.sort_by_key(|s| (s.session_start(), s.index));
        for (report, slice) in reports.iter().zip(&ordered) {
            let reference = reference_report(&f.chains, &history, slice, None).unwrap();
            assert!(report.errors.is_empty(), "{:?}", report.errors);
            assert_eq!(report.window_counts, reference.window_counts);
            assert_eq!(report.fallback, reference.fallback);
            assert!((report.r_final - reference.r_final).abs() <= 1e-9, "{} vs {}", report.r_final, reference.r_final);
            for (a, b) in [(report.r_frontend, reference.r_frontend), (report.r_backend, reference.r_backend)] {
                assert_eq!(a.is_some(), b.is_some());
                if let (Some(a), Some(b)) = (a, b) {
                    assert!((a - b).abs() <= 1e-9);
                }
            }
            compared += !report.fallback as usize;
        }
        assert_eq!(sim.delivered, reports);
    }
    assert!(compared > 0);
}

#[test]
fn per_chain_scores_match_the_reference() {
    let f = fixture();
    let cfg = ProtocolConfig { genuine: GenuineMode::PerChain, budget_fraction: 0.05, ..ProtocolConfig::default() };
    let mut sim = simulator(cfg);
    let user = &f.ex.test_users[0];
    let history = user_slices(&f.ex.history, user);
    let mut slices = user_slices(&f.ex.test, user);
    slices.sort_by_key(|s| (s.session_start(), s.index));
    let reports = run_session(&mut sim, &history, &slices, &TriggerPolicy::Interval);
    for (report, slice) in reports.iter().zip(&slices) {
        let reference = reference_report(&f.chains, &history, slice, None).unwrap();
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        assert_eq!(report.chain_scores.len(), reference.chain_scores.len());
        for ((sa, a), (sb, b)) in report.chain_scores.iter().zip(&reference.chain_scores) {
            assert_eq!(sa, sb);
            assert!((a - b).abs() <= 1e-9);
        }
        assert!((report.r_final - reference.r_final).abs() <= 1e-9);
    }
}

#[test]
fn four_plus_one_sources_give_two_aggregates_under_distinct_keys() {
    let f = fixture();
    let mut sim = simulator(ProtocolConfig::default());
    let user = &f.ex.test_users[0];
    for s in user_slices(&f.ex.history, user) {
        assert!(sim.enroll(&s).is_empty());
    }
    let slice = f.ex.test.iter().find(|s| s.user_id == *user && s.source(Source::Request).len() >= 5).unwrap();
    sim.observe(slice);
    let session = sim.backend.collect_ordinal(&slice.session_id).unwrap();
    let inference = sim.server.infer(user, session, slice.index as u32).unwrap();
    assert_eq!(inference.domains.len(), 2);
    let keys: Vec<_> = inference.domains.iter().map(|d| d.parts[0].1.key_id()).collect();
    assert_eq!(keys, vec![sim.frontend.key_id(), sim.backend.key_id()]);
    let chains: Vec<_> = inference.domains.iter().map(|d| d.chains).collect();
    assert_eq!(chains.iter().sum::<usize>(), inference.window_counts.iter().filter(|(_, n)| *n > 0).count());
    assert_eq!(chains[1], 1);
}

#[test]
fn single_window_aggregate_is_that_logit() {
    let f = fixture();
    let chains = vec![f.chains[0].clone()];
    let mut sim = Simulator::new(mock(), &chains, ProtocolConfig { budget_fraction: 1.0, ..Default::default() }, 1).unwrap();
    let user = &f.ex.test_users[0];
    let history = user_slices(&f.ex.history, user);
    let o = chains[0].window.o_size;
    let mut slice = f.ex.test.iter().find(|s| s.user_id == *user && s.source(Source::Swipe).len() >= o).unwrap().clone();
    slice.points = Default::default();
    slice.points[Source::Swipe.index()] = f.ex.test.iter().find(|s| s.user_id == *user).unwrap().source(Source::Swipe)
        [..o]
        .to_vec();
    slice.points[Source::Swipe.index()].iter_mut().for_each(|p| p.session_id = slice.session_id.clone());
    let reports = run_session(&mut sim, &history, std::slice::from_ref(&slice), &TriggerPolicy::Interval);
    let reference = reference_report(&chains, &history, &slice, None).unwrap();
    assert_eq!(reports[0].window_counts, vec![(Source::Swipe, 1)]);
    assert!((reports[0].r_frontend.unwrap() - reference.chain_scores[0].1).abs() <= 1e-9);
    assert_eq!(reports[0].r_backend, None);
}

#[test]
fn honest_session_has_clear_flags() {
    let mut sim = simulator(ProtocolConfig::default());
    let reports = run_first_user(&mut sim);
    assert!(reports.len() >= 3);
    for r in &reports {
        assert!(!r.cheat_detected && !r.integrity_failure && r.insufficient_history.is_empty());
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        assert!((0.0..=1.0).contains(&r.r_final));
    }
}

#[test]
fn without_history_the_risk_falls_back() {
    let f = fixture();
    let mut sim = simulator(ProtocolConfig::default());
    let user = &f.ex.test_users[0];
    let reports = run_session(&mut sim, &[], &user_slices(&f.ex.test, user)[..1], &TriggerPolicy::Interval);
    assert!(reports[0].fallback);
    assert_eq!(reports[0].r_final, FALLBACK_RISK);
    assert_eq!(reports[0].insufficient_history.len(), 5);
}

#[test]
fn event_trigger_without_events_reports_nothing() {
    let f = fixture();
    let mut sim = simulator(ProtocolConfig::default());
    let user = &f.ex.test_users[0];
    let trigger = TriggerPolicy::OnEvent { events: vec![] };
    let reports =
        run_session(&mut sim, &user_slices(&f.ex.history, user), &user_slices(&f.ex.test, user), &trigger);
    assert!(reports.is_empty());
    assert!(sim.delivered.is_empty());

    let slices = user_slices(&f.ex.test, user);
    let trigger = TriggerPolicy::OnEvent { events: vec![slices[1].key()] };
    let mut sim = simulator(ProtocolConfig::default());
    let reports = run_session(&mut sim, &user_slices(&f.ex.history, user), &slices, &trigger);
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].slice, slices[1].index as u32);
}

#[test]
fn perturbing_every_response_is_always_caught() {
    let policy = ClientPolicy::PerturbAll { delta: 0.5 };
    let mut sim = simulator(ProtocolConfig { frontend_policy: policy, backend_policy: policy, ..Default::default() });
    let reports = run_first_user(&mut sim);
    for r in reports.iter().filter(|r| !r.fallback) {
        assert!(r.cheat_detected);
        assert_eq!(r.r_final, 1.0);
    }
}

fn aggregate(backend: &dyn HeBackend, sim: &Simulator, values: &[f64]) -> DomainAggregate {
    let parts =
        values.iter().map(|v| (Some(Source::Swipe), backend.encrypt(&[*v], sim.frontend.public_key()).unwrap())).collect();
    DomainAggregate { role: Role::Frontend, parts, chains: values.len() }
}

#[test]
fn single_forgery_detection_rate_follows_decoy_share() {
    let backend = mock();
    let cfg = ProtocolConfig {
        genuine: GenuineMode::PerChain,
        frontend_policy: ClientPolicy::PerturbOne { delta: 1.0 },
        ..Default::default()
    };
    let mut sim = Simulator::new(backend.clone(), &fixture().chains, cfg, 2).unwrap();
    let agg = aggregate(backend.as_ref(), &sim, &[0.1, 0.2, 0.3, 0.4]);
    let trials = 1000;
    let mut caught = 0;
    for _ in 0..trials {
        let (Body::DecryptRequest { auth_id, ciphertexts }, ch) = sim.server.challenge(&agg, "u").unwrap() else {
            unreachable!()
        };
        assert_eq!((ch.genuine(), ch.decoys()), (4, 4));
        sim.frontend.allow(ciphertexts.len());
        let response = sim.frontend.decrypt_request(auth_id, &ciphertexts);
        caught += sim.server.verify(&ch, response).cheat as usize;
    }
    let rate = caught as f64 / trials as f64;
    assert!((rate - 0.5).abs() <= 0.05, "detection rate {rate}");
}

#[test]
fn response_count_mismatch_is_an_error() {
    let backend = mock();
    let mut sim = simulator(ProtocolConfig::default());
    let agg = aggregate(backend.as_ref(), &sim, &[0.5]);
    let (Body::DecryptRequest { auth_id, ciphertexts }, ch) = sim.server.challenge(&agg, "u").unwrap() else {
        unreachable!()
    };
    sim.frontend.allow(10);
    let Body::DecryptResponse { mut values, .. } = sim.frontend.decrypt_request(auth_id, &ciphertexts) else {
        unreachable!()
    };
    values.pop();
    let out = sim.server.verify(&ch, Body::DecryptResponse { auth_id, values, refused: None });
    assert_eq!(out.error, Some(ProtocolError::ResponseCount { expected: 5, found: 4 }));
    assert_eq!(out.value, None);
}

#[test]
fn masked_values_do_not_depend_on_the_result() {
    let backend = mock();
    let cfg = ProtocolConfig { frontend_policy: ClientPolicy::Passive, decoys: 1, ..Default::default() };
    let mut sim = Simulator::new(backend.clone(), &fixture().chains, cfg, 4).unwrap();
    let seen = |r: f64, sim: &mut Simulator| {
        let agg = aggregate(backend.as_ref(), sim, &[r]);
        let mut genuine = Vec::new();
        for _ in 0..500 {
            let (Body::DecryptRequest { auth_id, ciphertexts }, ch) = sim.server.challenge(&agg, "u").unwrap() else {
                unreachable!()
            };
            sim.frontend.allow(2);
            sim.frontend.seen.clear();
            let response = sim.frontend.decrypt_request(auth_id, &ciphertexts);
            let out = sim.server.verify(&ch, response);
            assert!((out.value.unwrap() - r).abs() < 1e-9);
            // The attacker cannot tell which value is genuine; take both.
            genuine.extend(&sim.frontend.seen);
        }
        genuine
    };
    let low = seen(-5.0, &mut sim);
    let high = seen(5.0, &mut sim);
    let (_, p) = ks_two_sample(&low, &high);
    assert!(p > 0.01, "p = {p}");
    assert!(low.iter().chain(&high).all(|v| (-5.0..=1005.0).contains(v)));
}

#[test]
fn server_holds_no_behavioral_plaintext_under_any_policy() {
    let policies = [
        ClientPolicy::Honest,
        ClientPolicy::Passive,
        ClientPolicy::PerturbAll { delta: 1.0 },
        ClientPolicy::PerturbOne { delta: 1.0 },
        ClientPolicy::Tamper,
    ];
    for policy in policies {
        for server_policy in [ServerPolicy::Honest, ServerPolicy::Curious] {
            let cfg = ProtocolConfig {
                frontend_policy: policy,
                backend_policy: policy,
                server_policy,
                ..Default::default()
            };
            let mut sim = simulator(cfg);
            let reports = run_first_user(&mut sim);
            assert!(sim.server.audit().is_ok(), "{policy:?} {server_policy:?}");
            assert!(reports.iter().all(|r| !r.errors.iter().any(|e| e.contains("audit"))));
        }
    }
}

#[test]
fn audit_flags_a_curious_server_that_gets_answers() {
    let f = fixture();
    let cfg = ProtocolConfig { server_policy: ServerPolicy::Curious, ..Default::default() };
    let mut sim = simulator(cfg);
    let user = &f.ex.test_users[0];
    for s in user_slices(&f.ex.history, user) {
        sim.enroll(&s);
    }
    let slice = &user_slices(&f.ex.test, user)[0];
    sim.observe(slice);
    let session = sim.frontend.collect_ordinal(&slice.session_id).unwrap();
    let inference = sim.server.infer(user, session, slice.index as u32).unwrap();
    let agg = &inference.domains[0];
    let (Body::DecryptRequest { auth_id, ciphertexts }, ch) = sim.server.challenge(agg, user).unwrap() else {
        unreachable!()
    };
    assert!(ch.len() > ch.genuine() + ch.decoys());
    let refused = sim.frontend.decrypt_request(auth_id, &ciphertexts);
    assert!(matches!(&refused, Body::DecryptResponse { refused: Some(_), .. }));
    assert!(sim.server.audit().is_ok());

    sim.frontend.allow(ciphertexts.len());
    let answered = sim.frontend.decrypt_request(auth_id, &ciphertexts);
    sim.server.verify(&ch, answered);
    assert!(matches!(sim.server.audit(), Err(ProtocolError::Audit(_))));
}

#[test]
fn decryptions_stay_within_budget() {
    let mut sim = simulator(ProtocolConfig::default());
    for r in run_first_user(&mut sim) {
        assert!(r.decrypted_scalars as f64 <= 0.01 * r.values_involved as f64 || r.decrypted_scalars == 0);
    }
    let cfg = ProtocolConfig { server_policy: ServerPolicy::Curious, ..Default::default() };
    let mut sim = simulator(cfg);
    let reports = run_first_user(&mut sim);
    assert!(reports.iter().all(|r| r.decrypted_scalars == 0));
    assert!(reports.iter().filter(|r| r.values_involved > 0).all(|r| r.errors.iter().any(|e| e.contains("refused"))));
    assert!(sim.server.audit().is_ok());
}

#[test]
fn tampering_client_is_flagged() {
    let cfg = ProtocolConfig { backend_policy: ClientPolicy::Tamper, ..Default::default() };
    let mut sim = simulator(cfg);
    let reports = run_first_user(&mut sim);
    assert!(reports.iter().all(|r| r.integrity_failure));
    assert!(reports.iter().all(|r| r.r_backend.is_none()));
}

#[test]
fn transport_faults_are_recorded_not_fatal() {
    let fault = |phase, kind| FaultSpec { phase: Some(phase), sender: None, kind, probability: 1.0 };
    let cases = [
        (fault(Phase::DecryptResponse, FaultKind::Drop), "dropped"),
        (fault(Phase::DecryptRequest, FaultKind::Delay { ms: 5000 }), "timed out"),
        (fault(Phase::InferRequest, FaultKind::Tamper), "integrity"),
    ];
    for (spec, needle) in cases {
        let mut sim = simulator(ProtocolConfig { faults: vec![spec], ..Default::default() });
        let reports = run_first_user(&mut sim);
        assert!(!reports.is_empty());
        for r in reports.iter().filter(|r| r.values_involved > 0 || needle == "integrity") {
            assert!(r.errors.iter().any(|e| e.contains(needle)), "{needle}: {:?}", r.errors);
            assert_eq!(r.r_final, FALLBACK_RISK);
        }
    }
}

#[test]
fn traffic_is_accounted_per_phase() {
    let mut sim = simulator(ProtocolConfig::default());
    let reports = run_first_user(&mut sim);
    let stats = sim.stats();
    for phase in Phase::ALL {
        assert!(stats.bytes(phase) > 0, "{}", phase.name());
    }
    assert_eq!(stats.per_phase[&Phase::RiskReport].messages, reports.len() as u64);
}

#[test]
fn attacked_slices_score_higher_on_a_separable_fixture() {
    let cfg = SynthConfig { users: 8, sessions_per_user: 4, signal: 3.0, ..SynthConfig::default() };
    let ds = generate(&cfg, 21).with_requests();
    let aug = AugmentConfig { entry_points: vec![0.0], ..AugmentConfig::default() };
    let ex = prepare(&ds, &SplitConfig { train_fraction: 0.75, ..Default::default() }, &aug, 21).unwrap();
    let fit = ex.fit_slices();
    let tcfg = TrainConfig { epochs: 15, ..TrainConfig::default() };
    let chains: Vec<_> = Source::ALL
        .iter()
        .map(|&s| {
            let w = WindowConfig::new(s, 10, 5).unwrap();
            train_chain(w, Architecture::default(), &tcfg, &fit, &ex.history, &ex.train).unwrap()
        })
        .collect();
    let mut legit = Vec::new();
    let mut attacked = Vec::new();
    for user in &ex.test_users {
        let mut sim = Simulator::new(mock(), &chains, ProtocolConfig::default(), 3).unwrap();
        let slices = user_slices(&ex.test, user);
        let mut ordered = slices.clone();
        ordered.sort_by_key(|s| (s.session_start(), s.index));
        let reports = run_session(&mut sim, &user_slices(&ex.history, user), &slices, &TriggerPolicy::Interval);
        for (r, s) in reports.iter().zip(&ordered) {
            if r.fallback {
                continue;
            }
            match s.label {
                Label::Legitimate => legit.push(r.r_final),
                Label::Attacked => attacked.push(r.r_final),
            }
        }
    }
    legit.sort_by(f64::total_cmp);
    let median = legit[legit.len() / 2];
    let above = attacked.iter().filter(|&&r| r > median).count();
    assert!(2 * above > attacked.len(), "{above}/{} attacked above legit median {median}", attacked.len());
}
