//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use mpsauth::dataset::synth::{generate, SynthConfig};
use mpsauth::dataset::{AugmentConfig, Label, Slice, Source};
use mpsauth::detector::{
    compile_he, history_pools, slice_windows, train_chain, Architecture, CnnModel, DetectorChain, InvestigationWindow,
    TrainConfig, WindowConfig,
};
use mpsauth::evalbench::{
    compute_eer, evaluate_slices, measure_performance, prepare, score_slices, sweep_windows, Experiment, GridCell,
    Scored, SplitConfig, SweepConfig, REFERENCE_EXPANSION, REFERENCE_OVERHEAD,
};
use mpsauth::he::{
    eps_mul, eps_mul_plain, eps_rotate_sum, make_backend, BackendKind, HeBackend, HeParams, MockBackend, EPS_ADD,
    EPS_FRESH,
};
use mpsauth::protocol::entities::DomainAggregate;
use mpsauth::protocol::{
    reference_report, run_session, Body, ClientPolicy, GenuineMode, ProtocolConfig, RiskReport, Role, ServerPolicy,
    Simulator, TriggerPolicy,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct Fixture {
    ex: Experiment,
    chains: Vec<DetectorChain>,
}

fn fixture(users: usize, epochs: usize, seed: u64) -> Fixture {
    let ds = generate(&SynthConfig { users, ..SynthConfig::default() }, seed).with_requests();
    let ex = prepare(&ds, &SplitConfig::default(), &AugmentConfig::default(), seed).expect("fixture prepares");
    let fit = ex.fit_slices();
    let chains = Source::ALL
        .iter()
        .map(|&src| {
            let tcfg = TrainConfig { epochs, seed: seed + src.index() as u64, ..TrainConfig::default() };
            let window = WindowConfig::new(src, 30, 7).unwrap();
            train_chain(window, Architecture::default(), &tcfg, &fit, &ex.history, &ex.train).expect("chain trains")
        })
        .collect();
    Fixture { ex, chains }
}

fn of_user(slices: &[Slice], user: &str) -> Vec<Slice> {
    let mut out: Vec<Slice> = slices.iter().filter(|s| s.user_id == user).cloned().collect();
    out.sort_by_key(|s| (s.session_start(), s.index));
    out
}

// 1. HE correctness against the plaintext oracle.
fn he_correctness() -> Verdict {
    let start = Instant::now();
    let trials = 1000;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut violations: BTreeMap<&str, usize> = BTreeMap::new();
    let mut mock_worst: f64 = 0.0;
    for kind in [BackendKind::Rlwe, BackendKind::Mock] {
        let backend = make_backend(kind, HeParams::default(), 17).unwrap();
        let keys = backend.keygen("acceptance").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..trials {
            let n = rng.random_range(1..=64);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-16.0..16.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-16.0..16.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let (ex, ey) = (backend.encrypt(&x, &keys.public_key).unwrap(), backend.encrypt(&y, &keys.public_key).unwrap());
            let dec = |ct| backend.decrypt(&ct, &keys.secret_key).unwrap();

            let mut check = |op: &'static str, got: Vec<f64>, want: Vec<f64>, bound: &dyn Fn(usize) -> f64| {
                for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                    let err = (g - w).abs();
                    match kind {
                        BackendKind::Mock => mock_worst = mock_worst.max(err),
                        BackendKind::Rlwe => {
                            let e = worst.entry(op).or_default();
                            *e = e.max(err);
                            if err > bound(i) {
                                *violations.entry(op).or_default() += 1;
                            }
                        }
                    }
                }
            };
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            check("add", dec(backend.add(&ex, &ey).unwrap()), sum, &|_| EPS_ADD);
            let shifted: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
            check("add_plain", dec(backend.add_plain(&ex, &p).unwrap()), shifted, &|_| EPS_FRESH);
            let scaled: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a * b).collect();
            check("mul_plain", dec(backend.mul_plain(&ex, &p).unwrap()), scaled, &|i| eps_mul_plain(p[i]));
            let prod: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
            check("mul", dec(backend.mul(&ex, &ey, &keys.eval_key).unwrap()), prod, &|i| eps_mul(x[i], y[i]));
            let span = rng.random_range(1..=n);
            let total: f64 = x[..span].iter().sum();
            let rotated = dec(backend.rotate_sum(&ex, span, &keys.eval_key).unwrap());
            check("rotate_sum", vec![rotated[0]], vec![total], &|_| eps_rotate_sum(span));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let bad: usize = violations.values().sum();
    let detail = format!(
        "{trials} trials per op; rlwe worst {}; {bad} bound violations; mock worst {mock_worst:.1e}; {secs:.1}s (limit 60s)",
        worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ")
    );
    verdict(bad == 0 && mock_worst <= 1e-9 && secs <= 60.0, detail)
}

fn test_windows(f: &Fixture, chain: &DetectorChain, n: usize) -> Vec<InvestigationWindow> {
    let pools = history_pools(&f.ex.history, &chain.prep);
    let windows = slice_windows(&pools, &f.ex.test, &chain.prep, &chain.window).unwrap();
    let all: Vec<InvestigationWindow> = windows.into_iter().flatten().flatten().collect();
    let step = (all.len() / n).max(1);
    all.into_iter().step_by(step).take(n).collect()
}

// 2. Encrypted inference against the plaintext network.
fn inference_fidelity(f: &Fixture) -> Verdict {
    let start = Instant::now();
    let chain = f.chains.iter().find(|c| c.source() == Source::Swipe).unwrap();
    let windows = test_windows(f, chain, 100);
    let mut worst = BTreeMap::new();
    for kind in [BackendKind::Mock, BackendKind::Rlwe] {
        let backend = make_backend(kind, HeParams::default(), 5).unwrap();
        let keys = backend.keygen("frontend").unwrap();
        let circuit = compile_he(&chain.model, backend.params()).unwrap();
        let mut w_max: f64 = 0.0;
        for w in &windows {
            let ct = backend.encrypt(&w.flatten(), &keys.public_key).unwrap();
            let out = circuit.infer_encrypted(backend.as_ref(), &ct, &keys.eval_key, 1.0).unwrap();
            let got = backend.decrypt(&out, &keys.secret_key).unwrap()[0];
            w_max = w_max.max((got - chain.infer_plain(w).unwrap()).abs());
        }
        worst.insert(kind.to_string(), w_max);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = windows.len() == 100 && worst["rlwe"] <= 1e-2 && worst["mock"] <= 1e-9 && secs <= 300.0;
    verdict(
        pass,
        format!(
            "{} windows; max |enc - plain| rlwe {:.2e} (limit 1e-2), mock {:.1e}; {secs:.1}s (limit 300s)",
            windows.len(),
            worst["rlwe"],
            worst["mock"]
        ),
    )
}

fn logit(m: &CnnModel, x: &[f64]) -> f64 {
    m.forward(x).logit
}

// 3. Analytic gradients against central finite differences.
fn gradient_check() -> Verdict {
    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
        let arch = Architecture { conv1_kernels: 2, conv1_width: 3, conv2_kernels: 2, conv2_width: 3, hidden: 3 };
        let (rows, dim) = (rng.random_range(1..4), rng.random_range(4..10));
        let mut m = CnnModel::init(arch, rows, dim, seed).unwrap();
        for v in m.w1.iter_mut().chain(&mut m.b1).chain(&mut m.w2).chain(&mut m.b2).chain(&mut m.wf).chain(&mut m.bf).chain(&mut m.wo) {
            *v += rng.random_range(-0.3..0.3);
        }
        let x: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let trace = m.forward(&x);
        let mut g = m.zero_gradients();
        m.backward(&x, &trace, 1.0, &mut g);

        type Field = fn(&mut CnnModel) -> &mut Vec<f64>;
        let layers: [(Field, &[f64]); 7] = [
            (|m| &mut m.w1, &g.w1),
            (|m| &mut m.b1, &g.b1),
            (|m| &mut m.w2, &g.w2),
            (|m| &mut m.b2, &g.b2),
            (|m| &mut m.wf, &g.wf),
            (|m| &mut m.bf, &g.bf),
            (|m| &mut m.wo, &g.wo),
        ];
        for (field, analytic) in layers {
            for (i, &a) in analytic.iter().enumerate() {
                let (mut up, mut down) = (m.clone(), m.clone());
                field(&mut up)[i] += h;
                field(&mut down)[i] -= h;
                let numeric = (logit(&up, &x) - logit(&down, &x)) / (2.0 * h);
                worst = worst.max(rel(a, numeric));
                checked += 1;
            }
        }
        let (mut up, mut down) = (m.clone(), m.clone());
        up.bo += h;
        down.bo -= h;
        worst = worst.max(rel(g.bo, (logit(&up, &x) - logit(&down, &x)) / (2.0 * h)));
    }
    verdict(worst <= 1e-4, format!("20 instances, {checked} weights; worst relative error {worst:.2e} (limit 1e-4)"))
}

/// FAR/FRR at every threshold counted from scratch, crossing interpolated.
fn eer_by_enumeration(scores: &[Scored]) -> f64 {
    let att: Vec<f64> = scores.iter().filter(|s| s.label == Label::Attacked).map(|s| s.score).collect();
    let leg: Vec<f64> = scores.iter().filter(|s| s.label == Label::Legitimate).map(|s| s.score).collect();
    let mut ts: Vec<f64> = scores.iter().map(|s| s.score).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let top = *ts.last().unwrap();
    ts.push(top + top.abs().max(1.0));
    let rates = |t: f64| {
        let far = att.iter().filter(|&&s| s < t).count() as f64 / att.len() as f64;
        let frr = leg.iter().filter(|&&s| s >= t).count() as f64 / leg.len() as f64;
        (far, frr)
    };
    let mut prev: Option<(f64, f64)> = None;
    for t in ts {
        let (far, frr) = rates(t);
        if far >= frr {
            return match prev {
                Some((pf, pr)) if far != frr => {
                    let lambda = -(pf - pr) / ((far - frr) - (pf - pr));
                    pf + lambda * (far - pf)
                }
                _ => far,
            };
        }
        prev = Some((far, frr));
    }
    unreachable!("the top threshold accepts everything")
}

// 4. EER against exhaustive threshold enumeration.
fn eer_oracle() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=1000);
        let levels = rng.random_range(2..200) as f64;
        let mut scores: Vec<Scored> = (0..n)
            .map(|_| Scored {
                score: (rng.random::<f64>() * levels).floor() / levels,
                label: if rng.random_bool(0.4) { Label::Attacked } else { Label::Legitimate },
            })
            .collect();
        scores[0].label = Label::Attacked;
        scores[1].label = Label::Legitimate;
        if compute_eer(&scores).unwrap().eer != eer_by_enumeration(&scores) {
            mismatches += 1;
        }
    }
    let coin: Vec<Scored> = (0..10_000)
        .map(|_| Scored {
            score: rng.random(),
            label: if rng.random_bool(0.5) { Label::Attacked } else { Label::Legitimate },
        })
        .collect();
    let coin_eer = compute_eer(&coin).unwrap().eer;
    verdict(
        mismatches == 0 && (coin_eer - 0.5).abs() <= 0.02,
        format!("{mismatches}/100 random sets differ from enumeration; coin-flip EER {coin_eer:.4} (0.5 +- 0.02)"),
    )
}

// 5. Mock protocol against the ciphertext-free reference.
fn plaintext_agreement(f: &Fixture) -> Verdict {
    let backend: Arc<dyn HeBackend> = Arc::new(MockBackend::new(HeParams::default(), 3).unwrap());
    let cfg = ProtocolConfig::default();
    let mut worst: f64 = 0.0;
    let (mut compared, mut with_result, mut flag_mismatch) = (0, 0, 0);
    let users: Vec<&String> = f.ex.train_users.iter().chain(&f.ex.test_users).collect();
    for (i, user) in users.iter().enumerate() {
        let history = of_user(&f.ex.history, user);
        let mut slices = of_user(&f.ex.train, user);
        slices.extend(of_user(&f.ex.test, user));
        let mut sim = Simulator::new(backend.clone(), &f.chains, cfg.clone(), i as u64).unwrap();
        let reports = run_session(&mut sim, &history, &slices, &TriggerPolicy::Interval);
        let mut ordered = slices.clone();
        ordered.sort_by_key(|s| (s.session_start(), s.index));
        for (report, slice) in reports.iter().zip(&ordered) {
            let reference = reference_report(&f.chains, &history, slice, None).unwrap();
            worst = worst.max((report.r_final - reference.r_final).abs());
            flag_mismatch += (report.fallback != reference.fallback) as usize;
            with_result += !report.fallback as usize;
            compared += 1;
        }
    }
    verdict(
        worst <= 1e-9 && flag_mismatch == 0 && with_result > 0,
        format!(
            "{} users, {compared} slices ({with_result} with a detector result); max |r_final - reference| {worst:.1e}",
            users.len()
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// 6. Trends of the original evaluation on the seeded synthetic fixture.
fn trend_reproduction() -> Verdict {
    let start = Instant::now();
    let (users, epochs, seed) = (60, 10, 1);
    let f = fixture(users, epochs, seed);
    let backend: Arc<dyn HeBackend> = Arc::new(MockBackend::new(HeParams::default(), seed).unwrap());
    let scores = score_slices(backend, &f.chains, &f.ex, &ProtocolConfig::default(), seed).unwrap();
    let eps = [0.0, 0.33, 0.66];
    let table = evaluate_slices(&scores, &Source::ALL, &eps, None).unwrap();

    let single: Vec<f64> = table.subsets.iter().filter(|s| s.sources.len() == 1).filter_map(|s| s.overall).collect();
    let single_mean = mean(&single);
    let all5 = table.row(5, 0.0).and_then(|r| r.overall).unwrap_or(f64::NAN);
    let a = all5 <= single_mean + 0.02;

    let mut b = true;
    let mut ep_pairs = Vec::new();
    for k in 1..=5 {
        let e0 = table.row(k, 0.0).and_then(|r| r.eer);
        let e66 = table.row(k, 0.66).and_then(|r| r.eer);
        match (e0, e66) {
            (Some(x), Some(y)) => {
                b &= x <= y;
                ep_pairs.push(format!("{x:.3}<={y:.3}"));
            }
            _ => b = false,
        }
    }

    let tcfg = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let grid = sweep_windows(&f.ex, &SweepConfig::default(), Architecture::default(), &tcfg).unwrap();
    let (c, c_worst, h30_worst) = o_trend(&grid);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        a && b && c && secs <= 1800.0,
        format!(
            "{users} users, seed {seed}: (a) all-5 overall {all5:.3} vs single mean {single_mean:.3} (+0.02) {}; \
             (b) EP0<=EP66 [{}] {}; (c) worst o-step of the h-averaged EER {c_worst:+.3} (+0.05) {}, \
             h=30 alone {h30_worst:+.3}; {secs:.0}s (limit 1800s)",
            ok(a),
            ep_pairs.join(" "),
            ok(b),
            ok(c)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

/// Largest EER increase between consecutive o sizes, per source, of the EER
/// averaged over h sizes; also the same at h = 30 alone.
fn o_trend(grid: &[GridCell]) -> (bool, f64, f64) {
    let mut by_src: BTreeMap<(Source, usize), Vec<f64>> = BTreeMap::new();
    let mut h30: BTreeMap<(Source, usize), f64> = BTreeMap::new();
    let mut complete = true;
    for cell in grid {
        match cell.eer {
            Some(e) => {
                by_src.entry((cell.source, cell.o)).or_default().push(e);
                if cell.h == 30 {
                    h30.insert((cell.source, cell.o), e);
                }
            }
            None => complete = false,
        }
    }
    let os = SweepConfig::default().o_sizes;
    let mut worst = f64::NEG_INFINITY;
    let mut worst30 = f64::NEG_INFINITY;
    for src in Source::ALL {
        for pair in os.windows(2) {
            let avg = |o| by_src.get(&(src, o)).map(|v| mean(v)).unwrap_or(f64::NAN);
            worst = worst.max(avg(pair[1]) - avg(pair[0]));
            if let (Some(x), Some(y)) = (h30.get(&(src, pair[0])), h30.get(&(src, pair[1]))) {
                worst30 = worst30.max(y - x);
            }
        }
    }
    (complete && worst <= 0.05, worst, worst30)
}

fn frontend_aggregate(backend: &dyn HeBackend, sim: &Simulator, values: &[f64]) -> DomainAggregate {
    let sources = [Source::Swipe, Source::Accelerometer, Source::Gyroscope, Source::Magnetometer];
    let parts = values
        .iter()
        .zip(sources)
        .map(|(v, s)| (Some(s), backend.encrypt(&[*v], sim.frontend.public_key()).unwrap()))
        .collect();
    DomainAggregate { role: Role::Frontend, parts, chains: values.len() }
}

/// Detection rate over `trials` challenges answered under `policy`.
fn detection_rate(f: &Fixture, policy: ClientPolicy, trials: usize) -> (f64, (usize, usize)) {
    let backend: Arc<dyn HeBackend> = Arc::new(MockBackend::new(HeParams::default(), 8).unwrap());
    let cfg = ProtocolConfig { genuine: GenuineMode::PerChain, decoys: 4, frontend_policy: policy, ..Default::default() };
    let mut sim = Simulator::new(backend.clone(), &f.chains, cfg, 12).unwrap();
    let agg = frontend_aggregate(backend.as_ref(), &sim, &[-1.2, 0.4, 2.5, -0.3]);
    let mut caught = 0;
    let mut shape = (0, 0);
    for _ in 0..trials {
        let (Body::DecryptRequest { auth_id, ciphertexts }, ch) = sim.server.challenge(&agg, "u").unwrap() else {
            panic!("challenge is a decrypt request")
        };
        shape = (ch.genuine(), ch.decoys());
        sim.frontend.allow(ciphertexts.len());
        let response = sim.frontend.decrypt_request(auth_id, &ciphertexts);
        caught += sim.server.verify(&ch, response).cheat as usize;
    }
    (caught as f64 / trials as f64, shape)
}

// 7. Cut-and-choose detection of forged decryptions.
fn cheat_detection(f: &Fixture) -> Verdict {
    let (all_rate, shape) = detection_rate(f, ClientPolicy::PerturbAll { delta: 0.5 }, 200);
    let (one_rate, _) = detection_rate(f, ClientPolicy::PerturbOne { delta: 0.5 }, 1000);
    let oracle = shape.1 as f64 / (shape.0 + shape.1) as f64;
    verdict(
        shape == (4, 4) && all_rate == 1.0 && (one_rate - 0.5).abs() <= 0.05,
        format!(
            "g={} d={}: forge-all detected {:.1}% of 200; forge-one {:.1}% of 1000 (oracle d/(g+d) = {:.1}%, +-5%)",
            shape.0,
            shape.1,
            all_rate * 100.0,
            one_rate * 100.0,
            oracle * 100.0
        ),
    )
}

// 8. No behavioral plaintext at the server, decryptions within budget.
fn zero_plaintext(f: &Fixture) -> Verdict {
    let backend: Arc<dyn HeBackend> = Arc::new(MockBackend::new(HeParams::default(), 4).unwrap());
    let policies = [
        ClientPolicy::Honest,
        ClientPolicy::Passive,
        ClientPolicy::PerturbAll { delta: 1.0 },
        ClientPolicy::PerturbOne { delta: 1.0 },
        ClientPolicy::Tamper,
    ];
    let user = &f.ex.test_users[0];
    let (history, slices) = (of_user(&f.ex.history, user), of_user(&f.ex.test, user));
    let (mut runs, mut audit_failures, mut over_budget, mut reports_seen, mut decrypting) = (0, 0, 0, 0, 0);
    let mut max_share: f64 = 0.0;
    for policy in policies {
        for server_policy in [ServerPolicy::Honest, ServerPolicy::Curious] {
            let cfg = ProtocolConfig { frontend_policy: policy, backend_policy: policy, server_policy, ..Default::default() };
            let mut sim = Simulator::new(backend.clone(), &f.chains, cfg, 21).unwrap();
            let reports: Vec<RiskReport> = run_session(&mut sim, &history, &slices, &TriggerPolicy::Interval);
            runs += 1;
            audit_failures += sim.server.audit().is_err() as usize;
            audit_failures += reports.iter().filter(|r| r.errors.iter().any(|e| e.contains("audit"))).count();
            for r in &reports {
                reports_seen += 1;
                decrypting += (r.decrypted_scalars > 0) as usize;
                if r.decrypted_scalars > 0 {
                    let share = r.decrypted_scalars as f64 / r.values_involved.max(1) as f64;
                    max_share = max_share.max(share);
                    over_budget += (share > 0.01) as usize;
                }
            }
        }
    }
    verdict(
        audit_failures == 0 && over_budget == 0 && decrypting > 0,
        format!(
            "{runs} policy combinations, {reports_seen} authentications: {audit_failures} audit failures; \
             largest decrypted share {:.3}% of values involved (limit 1%), {over_budget} over budget",
            max_share * 100.0
        ),
    )
}

// 9. Performance report plumbing on the RLWE backend.
fn measurement(f: &Fixture) -> Verdict {
    let start = Instant::now();
    let mock: Arc<dyn HeBackend> = Arc::new(MockBackend::new(HeParams::default(), 6).unwrap());
    let user = &f.ex.test_users[0];
    let (history, slices) = (of_user(&f.ex.history, user), of_user(&f.ex.test, user));
    let cfg = ProtocolConfig::default();
    let (_, plain_reports) =
        measure_performance(mock, &f.chains, &history, &slices, &cfg, &TriggerPolicy::Interval, "desk", 6).unwrap();
    let pick = plain_reports
        .iter()
        .zip(&slices)
        .filter(|(r, _)| !r.fallback)
        .min_by_key(|(r, _)| r.values_involved)
        .map(|(r, s)| (r.r_final, s.clone()));
    let Some((mock_risk, slice)) = pick else {
        return verdict(false, "no slice with a detector result".into());
    };
    let rlwe = make_backend(BackendKind::Rlwe, HeParams::default(), 6).unwrap();
    let (perf, reports) =
        measure_performance(rlwe, &f.chains, &history, &[slice], &cfg, &TriggerPolicy::Interval, "desk", 6).unwrap();
    let summary = perf.summary();
    let quoted = summary.contains(&format!("{REFERENCE_EXPANSION}")) && summary.contains(&format!("{REFERENCE_OVERHEAD}"));
    let diff = (reports[0].r_final - mock_risk).abs();
    verdict(
        perf.expansion > 1.0 && perf.overhead > 1.0 && quoted,
        format!(
            "rlwe expansion {:.1}x, overhead {:.1}x on {} slice; reference points quoted: {quoted}; \
             |rlwe - mock| risk {diff:.1e}; {:.0}s",
            perf.expansion,
            perf.overhead,
            perf.slices,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    let small = fixture(20, 10, 1);
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("HE correctness", Box::new(he_correctness)),
        ("encrypted inference fidelity", Box::new(|| inference_fidelity(&small))),
        ("gradient check", Box::new(gradient_check)),
        ("EER oracle equivalence", Box::new(eer_oracle)),
        ("end-to-end plaintext agreement", Box::new(|| plaintext_agreement(&small))),
        ("trend reproduction", Box::new(trend_reproduction)),
        ("cheat detection", Box::new(|| cheat_detection(&small))),
        ("zero plaintext and budget", Box::new(|| zero_plaintext(&small))),
        ("measurement plumbing", Box::new(|| measurement(&small))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        failed += !v.pass as usize;
        println!("criterion {} {} {name}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
