use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use mpsauth::dataset::synth::generate as synthesize;
use mpsauth::dataset::{ingest, Dataset, Slice, Source};
use mpsauth::detector::{train_chain, ModelBundle};
use mpsauth::evalbench::{
    evaluate_slices, measure_performance, prepare, score_slices, sweep_windows, write_grid, write_perf,
    write_slice_table, EvalError, Experiment, PerfReport,
};
use mpsauth::he::{make_backend, BackendKind, HeBackend};
use mpsauth::protocol::{run_session, RiskReport, Simulator, TriggerPolicy};
use std::sync::Arc;

use crate::config::ExperimentConfig;

/// Exit-code class of an error.
#[derive(Debug)]
pub enum Failure {
    /// Bad config, missing inputs or data that cannot support the request.
    User(anyhow::Error),
    Internal(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Internal(e.into())
    }
}

trait UserError<T> {
    fn user(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UserError<T> for Result<T, E> {
    fn user(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::User(e.into()))
    }
}

type Outcome = Result<(), Failure>;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const BUNDLE_FILE: &str = "bundle.json";

/// A run directory bound to its effective config.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
}

impl Run {
    /// Create `<out_dir>/<config hash>` and echo the config into it.
    pub fn open(cfg: ExperimentConfig, out_dir: &Path) -> Result<Run, Failure> {
        let dir = out_dir.join(cfg.hash());
        fs::create_dir_all(&dir).with_context(|| format!("cannot create run directory {}", dir.display())).user()?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        Ok(Run { cfg, dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?))
    }

    fn dataset(&self) -> Result<Dataset, Failure> {
        let path = match &self.cfg.dataset.path {
            Some(p) => p.clone(),
            None => self.path(DATASET_FILE),
        };
        if !path.exists() {
            return Err(Failure::User(anyhow!(
                "dataset {} not found; set dataset.path or run `mpsauth generate` first",
                path.display()
            )));
        }
        ingest(&path, self.cfg.dataset.min_points).with_context(|| format!("cannot load dataset {}", path.display())).user()
    }

    fn experiment(&self) -> Result<Experiment, Failure> {
        let ds = self.dataset()?;
        prepare(&ds, &self.cfg.split, &self.cfg.augment, self.cfg.seed).context("cannot prepare the experiment").user()
    }

    fn bundle(&self) -> Result<ModelBundle, Failure> {
        let path = self.path(BUNDLE_FILE);
        if !path.exists() {
            return Err(Failure::User(anyhow!("model bundle {} not found; run `mpsauth train` first", path.display())));
        }
        ModelBundle::load(&path).user()
    }

    fn backend(&self, kind: BackendKind) -> Result<Arc<dyn HeBackend>, Failure> {
        let params = self.cfg.he.params().user()?;
        Ok(make_backend(kind, params, self.cfg.seed)?)
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::SingleClass { .. } | EvalError::Dataset(_) => Failure::User(e.into()),
        other => Failure::Internal(other.into()),
    }
}

pub fn generate(run: &Run) -> Outcome {
    if run.cfg.dataset.path.is_some() {
        return Err(Failure::User(anyhow!("dataset.path is set; generate only writes synthetic datasets")));
    }
    let ds = synthesize(&run.cfg.dataset.synthetic, run.cfg.seed).with_requests();
    let mut out = run.create(DATASET_FILE)?;
    ds.write_jsonl(&mut out)?;
    out.flush()?;
    println!("{} points from {} users -> {}", ds.point_count(), ds.users.len(), run.path(DATASET_FILE).display());
    Ok(())
}

pub fn train(run: &Run) -> Outcome {
    let ex = run.experiment()?;
    let fit = ex.fit_slices();
    let mut chains = Vec::new();
    let mut failures = Vec::new();
    for src in Source::ALL {
        let window = run.cfg.windows.for_source(src).user()?;
        match train_chain(window, run.cfg.model, &run.cfg.train_config(src), &fit, &ex.history, &ex.train) {
            Ok(chain) => {
                println!(
                    "{src}: h={} o={} dim={} accuracy={:.3} final loss={:.4}",
                    window.h_size,
                    window.o_size,
                    chain.prep.dim(),
                    chain.report.accuracy,
                    chain.report.losses.last().copied().unwrap_or(f64::NAN)
                );
                chains.push(chain);
            }
            Err(e) => failures.push(format!("chain {src}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(Failure::User(anyhow!("training failed\n  {}", failures.join("\n  "))));
    }
    ModelBundle::new(run.cfg.seed, chains).save(&run.path(BUNDLE_FILE))?;
    println!("bundle -> {}", run.path(BUNDLE_FILE).display());
    Ok(())
}

fn write_reports(run: &Run, name: &str, reports: &[RiskReport]) -> anyhow::Result<()> {
    let mut out = run.create(name)?;
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn simulate(run: &Run) -> Outcome {
    let ex = run.experiment()?;
    let bundle = run.bundle()?;
    let kind = run.cfg.he.backend;
    let sub = format!("simulate-{kind}");
    let (perf, reports) = if ex.test.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let (perf, reports) = measure_performance(
            run.backend(kind)?,
            &bundle.chains,
            &ex.test_history(),
            &ex.test,
            &run.cfg.protocol,
            &run.cfg.trigger,
            &run.cfg.bench.platform,
            run.cfg.seed,
        )?;
        (vec![perf], reports)
    };
    write_reports(run, &format!("{sub}/reports.jsonl"), &reports)?;
    write_perf(run.create(&format!("{sub}/perf.csv"))?, &perf)?;
    let cheats = reports.iter().filter(|r| r.cheat_detected).count();
    let fallbacks = reports.iter().filter(|r| r.fallback).count();
    println!("{} reports ({kind}), {cheats} with cheat detected, {fallbacks} fallback", reports.len());
    for p in &perf {
        println!("{}", p.summary());
    }
    println!("outputs -> {}", run.path(&sub).display());
    Ok(())
}

/// The first `n` test slices of the first test users, with their histories.
fn first_slices(ex: &Experiment, n: usize) -> (Vec<Slice>, Vec<Slice>) {
    let mut slices: Vec<Slice> = ex.test.clone();
    slices.sort_by(|a, b| (&a.user_id, a.session_start(), a.index).cmp(&(&b.user_id, b.session_start(), b.index)));
    slices.truncate(n);
    let history = ex.history.iter().filter(|h| slices.iter().any(|s| s.user_id == h.user_id)).cloned().collect();
    (history, slices)
}

fn session_risks(run: &Run, kind: BackendKind, history: &[Slice], slices: &[Slice], bundle: &ModelBundle) -> Result<Vec<RiskReport>, Failure> {
    let mut reports = Vec::new();
    let mut users: Vec<&str> = slices.iter().map(|s| s.user_id.as_str()).collect();
    users.dedup();
    for user in users {
        let own = |v: &[Slice]| v.iter().filter(|s| s.user_id == user).cloned().collect::<Vec<_>>();
        let mut sim = Simulator::new(run.backend(kind)?, &bundle.chains, run.cfg.protocol.clone(), run.cfg.seed)?;
        reports.extend(run_session(&mut sim, &own(history), &own(slices), &TriggerPolicy::Interval));
    }
    Ok(reports)
}

pub fn evaluate(run: &Run) -> Outcome {
    let cfg = &run.cfg;
    let ex = run.experiment()?;
    let bundle = run.bundle()?;

    let mock = run.backend(BackendKind::Mock)?;
    let scores = score_slices(mock, &bundle.chains, &ex, &cfg.protocol, cfg.seed).map_err(eval_failure)?;
    let sources: Vec<Source> = bundle.chains.iter().map(|c| c.source()).collect();
    let table = evaluate_slices(&scores, &sources, &cfg.evaluation.entry_points, cfg.protocol.domain_weights)
        .map_err(eval_failure)?;
    write_slice_table(run.create("slice_table.csv")?, &table)?;
    for row in &table.rows {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("sources={} ep={:.2} eer={} overall={}", row.cardinality, row.ep, fmt(row.eer), fmt(row.overall));
    }

    let tcfg = mpsauth::detector::TrainConfig { seed: cfg.training.seed.wrapping_add(cfg.seed), ..cfg.training.clone() };
    let grid = sweep_windows(&ex, &cfg.evaluation.grid, cfg.model, &tcfg).map_err(eval_failure)?;
    write_grid(run.create("eer_grid.csv")?, &grid)?;
    let present = grid.iter().filter(|c| c.eer.is_some()).count();
    println!("grid: {present}/{} cells with an EER", grid.len());

    if cfg.evaluation.rlwe_spot_checks > 0 && !ex.test.is_empty() {
        let (history, slices) = first_slices(&ex, cfg.evaluation.rlwe_spot_checks);
        let plain = session_risks(run, BackendKind::Mock, &history, &slices, &bundle)?;
        let enc = session_risks(run, BackendKind::Rlwe, &history, &slices, &bundle)?;
        let mut out = csv::Writer::from_writer(run.create("spot_checks.csv")?);
        out.write_record(["slice", "mock", "rlwe", "abs_diff"])?;
        let mut worst: f64 = 0.0;
        for ((s, m), r) in slices.iter().zip(&plain).zip(&enc) {
            let diff = (m.r_final - r.r_final).abs();
            worst = worst.max(diff);
            out.write_record([s.key(), m.r_final.to_string(), r.r_final.to_string(), diff.to_string()])?;
        }
        out.flush()?;
        let verdict = if worst <= cfg.protocol.tol_he { "within" } else { "OUTSIDE" };
        println!("rlwe spot checks: {} slices, max |mock - rlwe| = {worst:.2e} ({verdict} tol_he)", slices.len());
    }
    println!("outputs -> {}", run.dir.display());
    Ok(())
}

pub fn bench(run: &Run) -> Outcome {
    let ex = run.experiment()?;
    let bundle = run.bundle()?;
    let (history, slices) = first_slices(&ex, run.cfg.bench.slices);
    if slices.is_empty() {
        return Err(Failure::User(anyhow!("no test slices to benchmark")));
    }
    let mut reports: Vec<PerfReport> = Vec::new();
    for kind in [BackendKind::Mock, BackendKind::Rlwe] {
        let (perf, _) = measure_performance(
            run.backend(kind)?,
            &bundle.chains,
            &history,
            &slices,
            &run.cfg.protocol,
            &TriggerPolicy::Interval,
            &run.cfg.bench.platform,
            run.cfg.seed,
        )?;
        println!("{}", perf.summary());
        reports.push(perf);
    }
    write_perf(run.create("perf.csv")?, &reports)?;
    let text: String = reports.iter().map(|r| r.summary() + "\n").collect();
    fs::write(run.path("bench.txt"), text)?;
    println!("outputs -> {}", run.dir.display());
    Ok(())
}
