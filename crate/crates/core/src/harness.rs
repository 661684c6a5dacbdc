//! Experiment orchestration: configuration files, training runs with their
//! artifacts, the evaluation protocol, hyperparameter sweeps and selection.
//!
//! A run directory holds one checkpoint per network, a `manifest.toml`
//! describing the run, and `metrics.csv` with one row per iteration. The
//! metrics file starts with a version line followed by a CSV header; floats
//! use the shortest representation that parses back to the same value, so
//! reading and re-writing a file is byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use serde::{Deserialize, Serialize};

use crate::approx::Mlp;
use crate::envs::{builtin, load_env, EnvSpec};
use crate::error::{Error, Result};
use crate::fmdp::{collect_rollout, ActionRule, ConstScorer, MemoryBuffer, RunState, Scorer};
use crate::learn::{Algorithm, GroupMetrics, IterationMetrics, TrainConfig, Trainer};
use crate::metrics::FairnessNotion;

pub const METRICS_VERSION: &str = "# ltfair-metrics v1";
pub const SWEEP_VERSION: &str = "# ltfair-sweep v1";
pub const EVAL_VERSION: &str = "# ltfair-eval v1";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_EVAL_SEEDS: usize = 10;
pub const DEFAULT_HORIZON: usize = 10_000;

pub const POLICY_FILE: &str = "policy.ckpt";
pub const VALUE_FILE: &str = "value.ckpt";
pub const PREDICTOR_FILE: &str = "predictor.ckpt";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.csv";

// ── Exit codes ──────────────────────────────────────────────────────────────

/// Process exit code for each error class.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Format(_) | Error::Selection(_) => 2,
        Error::Load { .. } | Error::Checkpoint(_) => 3,
        Error::Numerical(_)
        | Error::OverlapViolation(_)
        | Error::Environment(_)
        | Error::NoData(_) => 4,
        Error::Estimation { .. } | Error::Decomposition(_) | Error::Generation(_) => 5,
        Error::Io(_) => 6,
    }
}

// ── Configuration ───────────────────────────────────────────────────────────

fn d_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Environment name (`lending`, `recidivism`, `school`,
    /// `school_continuous`).
    pub env: String,
    /// Optional table file or directory replacing the built-in tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_path: Option<PathBuf>,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(env: &str, train: TrainConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            env: env.to_string(),
            env_path: None,
            out_dir: out_dir.into(),
            train,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `LTFAIR_SEED` / `LTFAIR_OUT`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env_overrides()?;
        Ok(cfg)
    }

    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var("LTFAIR_SEED") {
            self.train.seed = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("LTFAIR_SEED: not an integer: {seed:?}")))?;
        }
        if let Ok(out) = std::env::var("LTFAIR_OUT") {
            self.out_dir = PathBuf::from(out);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_env(&self) -> Result<EnvSpec> {
        match &self.env_path {
            Some(p) => load_env(p, &self.env),
            None => builtin(&self.env),
        }
    }
}

// ── Metrics file ────────────────────────────────────────────────────────────

const GROUP_COLUMNS: [&str; 6] = ["r", "eps_hat", "eps_bar", "d2", "phi_tilde", "n_memory"];

pub fn metrics_header(groups: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "iteration",
        "steps",
        "reward_window",
        "resource",
        "delta_true",
        "delta_observed",
        "delta_accepted",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for g in 0..groups {
        for c in GROUP_COLUMNS {
            h.push(format!("{c}_g{g}"));
        }
    }
    h.extend(
        [
            "max_weight",
            "min_cum_accept",
            "overlap_events",
            "disparity_ok",
            "bias_ok",
            "overall_ok",
            "renyi_loss",
            "policy_loss",
            "value_loss",
            "predictor_loss",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn metrics_fields(row: &IterationMetrics) -> Vec<String> {
    let mut f = vec![
        row.iteration.to_string(),
        row.steps.to_string(),
        row.reward_window.to_string(),
        row.resource.to_string(),
        row.delta_true.to_string(),
        row.delta_observed.to_string(),
        row.delta_accepted.to_string(),
    ];
    for g in &row.groups {
        f.extend([
            g.r.to_string(),
            g.eps_hat.to_string(),
            g.eps_bar.to_string(),
            g.d2.to_string(),
            g.phi_tilde.to_string(),
            g.n_memory.to_string(),
        ]);
    }
    f.extend([
        row.max_weight.to_string(),
        row.min_cum_accept.to_string(),
        row.overlap_events.to_string(),
        flag(row.disparity_ok),
        flag(row.bias_ok),
        flag(row.overall_ok),
        row.renyi_loss.to_string(),
        row.policy_loss.to_string(),
        row.value_loss.to_string(),
        row.predictor_loss.to_string(),
    ]);
    f
}

/// Streams metrics rows to a writer; the header is written on creation.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, groups: usize) -> Result<Self> {
        writeln!(out, "{METRICS_VERSION}")?;
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        inner
            .write_record(metrics_header(groups))
            .map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &IterationMetrics) -> Result<()> {
        self.inner
            .write_record(metrics_fields(row))
            .map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_metrics(rows: &[IterationMetrics], groups: usize) -> Result<String> {
    let mut buf = Vec::new();
    {
        let mut w = MetricsWriter::new(&mut buf, groups)?;
        for r in rows {
            w.write(r)?;
        }
    }
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

fn strip_version<'a>(text: &'a str, version: &str) -> Result<&'a str> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim_end() != version {
        return Err(Error::Format(format!(
            "expected version line {version:?}, found {first:?}"
        )));
    }
    Ok(rest)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::Format(format!("missing column {name}")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("column {name}: cannot parse {raw:?}")))
}

fn parse_flag(rec: &csv::StringRecord, i: usize, name: &str) -> Result<bool> {
    match rec.get(i) {
        Some("1") => Ok(true),
        Some("0") => Ok(false),
        other => Err(Error::Format(format!(
            "column {name}: expected 0 or 1, found {other:?}"
        ))),
    }
}

/// Parses a metrics file; returns the group count and the rows.
pub fn read_metrics(text: &str) -> Result<(usize, Vec<IterationMetrics>)> {
    let body = strip_version(text, METRICS_VERSION)?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let base = 7;
    let tail = 10;
    if header.len() < base + tail
        || !(header.len() - base - tail).is_multiple_of(GROUP_COLUMNS.len())
    {
        return Err(Error::Format(format!(
            "unexpected metrics header with {} columns",
            header.len()
        )));
    }
    let groups = (header.len() - base - tail) / GROUP_COLUMNS.len();
    if header != metrics_header(groups) {
        return Err(Error::Format(
            "metrics header does not match the schema".into(),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let h = |i: usize| header[i].as_str();
        let mut gm = Vec::with_capacity(groups);
        for g in 0..groups {
            let o = base + g * GROUP_COLUMNS.len();
            gm.push(GroupMetrics {
                r: field(&rec, o, h(o))?,
                eps_hat: field(&rec, o + 1, h(o + 1))?,
                eps_bar: field(&rec, o + 2, h(o + 2))?,
                d2: field(&rec, o + 3, h(o + 3))?,
                phi_tilde: field(&rec, o + 4, h(o + 4))?,
                n_memory: field(&rec, o + 5, h(o + 5))?,
            });
        }
        let t = base + groups * GROUP_COLUMNS.len();
        rows.push(IterationMetrics {
            iteration: field(&rec, 0, h(0))?,
            steps: field(&rec, 1, h(1))?,
            reward_window: field(&rec, 2, h(2))?,
            resource: field(&rec, 3, h(3))?,
            delta_true: field(&rec, 4, h(4))?,
            delta_observed: field(&rec, 5, h(5))?,
            delta_accepted: field(&rec, 6, h(6))?,
            groups: gm,
            max_weight: field(&rec, t, h(t))?,
            min_cum_accept: field(&rec, t + 1, h(t + 1))?,
            overlap_events: field(&rec, t + 2, h(t + 2))?,
            disparity_ok: parse_flag(&rec, t + 3, h(t + 3))?,
            bias_ok: parse_flag(&rec, t + 4, h(t + 4))?,
            overall_ok: parse_flag(&rec, t + 5, h(t + 5))?,
            renyi_loss: field(&rec, t + 6, h(t + 6))?,
            policy_loss: field(&rec, t + 7, h(t + 7))?,
            value_loss: field(&rec, t + 8, h(t + 8))?,
            predictor_loss: field(&rec, t + 9, h(t + 9))?,
        });
    }
    Ok((groups, rows))
}

// ── Runs ────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub run_id: String,
    pub algorithm: Algorithm,
    pub notion: FairnessNotion,
    pub seed: u64,
    pub env: String,
    pub env_hash: String,
    pub input_dim: usize,
    pub iterations: usize,
    pub total_steps: usize,
    pub final_resource: f64,
    pub wall_clock_seconds: f64,
    pub status: String,
    pub files: Vec<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

/// Identifier derived from the configuration.
pub fn run_id(cfg: &RunConfig) -> String {
    let t = &cfg.train;
    format!(
        "{}_{}_{}_b1-{}_b2-{}_s{}",
        cfg.env,
        t.algorithm.name(),
        t.notion.short(),
        t.beta1,
        t.beta2,
        t.seed
    )
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub rows: Vec<IterationMetrics>,
}

fn write_checkpoints(dir: &Path, trainer: &Trainer, suffix: &str) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for (name, net) in [
        (POLICY_FILE, trainer.policy()),
        (VALUE_FILE, trainer.value()),
        (PREDICTOR_FILE, trainer.predictor()),
    ] {
        let file = format!("{name}{suffix}");
        fs::write(dir.join(&file), net.to_checkpoint())?;
        files.push(file);
    }
    Ok(files)
}

/// Trains per the configuration and writes checkpoints, manifest and
/// metrics into `cfg.out_dir`. On a training failure a diagnostic
/// checkpoint (`*.diagnostic`) and a failed manifest are written before the
/// error is returned.
pub fn run(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.train.validate()?;
    let env = cfg.resolve_env()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let id = run_id(cfg);
    info!(
        "run {id}: {} iterations into {}",
        cfg.train.iterations(),
        cfg.out_dir.display()
    );
    let mut trainer = Trainer::new(cfg.train.clone(), env.clone())?;
    let file = fs::File::create(cfg.out_dir.join(METRICS_FILE))?;
    let mut writer = MetricsWriter::new(std::io::BufWriter::new(file), env.group_count())?;
    let mut rows = Vec::new();
    let outcome = trainer.train(|row| {
        writer.write(row)?;
        rows.push(row.clone());
        Ok(())
    });
    let (status, files) = match &outcome {
        Ok(()) => (
            "completed".to_string(),
            write_checkpoints(&cfg.out_dir, &trainer, "")?,
        ),
        Err(e) => (
            format!("failed: {e}"),
            write_checkpoints(&cfg.out_dir, &trainer, ".diagnostic")?,
        ),
    };
    let mut files = files;
    files.push(METRICS_FILE.to_string());
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        run_id: id,
        algorithm: cfg.train.algorithm,
        notion: cfg.train.notion,
        seed: cfg.train.seed,
        env: env.name().to_string(),
        env_hash: env.content_hash().to_string(),
        input_dim: env.input_dim(),
        iterations: trainer.iteration(),
        total_steps: rows.last().map_or(0, |r| r.steps),
        final_resource: trainer.resource(),
        wall_clock_seconds: trainer.elapsed().as_secs_f64(),
        status,
        files,
        config: cfg.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(cfg.out_dir.join(MANIFEST_FILE), text)?;
    outcome?;
    Ok(RunArtifacts {
        dir: cfg.out_dir.clone(),
        manifest,
        rows,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    Mlp::from_checkpoint(&text)
}

// ── Evaluation ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEvaluation {
    pub seed: u64,
    /// Final resource after the horizon.
    pub reward: f64,
    /// `mean_t |Δ_t|` of the running true disparity.
    pub mean_abs_delta: f64,
    /// `|mean_t Δ_t|`.
    pub abs_mean_delta: f64,
    pub mean_abs_delta_observed: f64,
    pub mean_abs_delta_accepted: f64,
    pub max_abs_delta_accepted: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub seeds: Vec<SeedEvaluation>,
}

fn mean_std(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = v.collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

impl Evaluation {
    pub fn reward(&self) -> (f64, f64) {
        mean_std(self.seeds.iter().map(|s| s.reward))
    }

    pub fn mean_abs_delta(&self) -> (f64, f64) {
        mean_std(self.seeds.iter().map(|s| s.mean_abs_delta))
    }

    pub fn abs_mean_delta(&self) -> (f64, f64) {
        mean_std(self.seeds.iter().map(|s| s.abs_mean_delta))
    }

    /// Time-averaged absolute disparity of the observable an algorithm is
    /// tuned on: accepted-only for PPO and POCAR, true for the oracle,
    /// observed for SELLF.
    pub fn selection_disparity(&self, algorithm: Algorithm) -> f64 {
        mean_std(self.seeds.iter().map(|s| match algorithm {
            Algorithm::Ppo | Algorithm::Pocar => s.mean_abs_delta_accepted,
            Algorithm::PocarOracle => s.mean_abs_delta,
            Algorithm::Sellf | Algorithm::SellfSemisto => s.mean_abs_delta_observed,
        }))
        .0
    }
}

/// Deploys a frozen policy for `horizon` steps per seed on a fresh pool,
/// with running disparities accumulated from the first step. When `trace`
/// is given, one CSV row per step is written to it.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    policy: &Mlp,
    predictor: Option<&Mlp>,
    env: &EnvSpec,
    notion: FairnessNotion,
    rule: ActionRule,
    seeds: &[u64],
    horizon: usize,
    mut trace: Option<&mut dyn Write>,
) -> Result<Evaluation> {
    if policy.input_dim() != env.input_dim() {
        return Err(Error::Checkpoint(format!(
            "policy expects {} inputs but environment {} provides {}",
            policy.input_dim(),
            env.name(),
            env.input_dim()
        )));
    }
    if let Some(w) = trace.as_deref_mut() {
        writeln!(w, "{EVAL_VERSION}")?;
        writeln!(
            w,
            "seed,step,resource,delta_true,delta_observed,delta_accepted"
        )?;
    }
    let half = ConstScorer(0.5);
    let pred: &dyn Scorer = match predictor {
        Some(p) => p,
        None => &half,
    };
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut run = RunState::new(env, seed);
        let mut memory = MemoryBuffer::default();
        let records = collect_rollout(
            &mut run,
            env,
            policy,
            pred,
            notion,
            horizon,
            rule,
            &mut memory,
            0,
        )?;
        let n = records.len() as f64;
        let mut resource = crate::fmdp::INITIAL_RESOURCE;
        let (mut sum_abs, mut sum, mut sum_obs, mut sum_acc, mut max_acc, mut accepted) =
            (0.0, 0.0, 0.0, 0.0, 0.0f64, 0usize);
        for (t, r) in records.iter().enumerate() {
            let d = r.oracle_delta();
            sum_abs += d.abs();
            sum += d;
            sum_obs += r.delta_tilde_running.abs();
            sum_acc += r.delta_accepted_running.abs();
            max_acc = max_acc.max(r.delta_accepted_running.abs());
            accepted += r.a as usize;
            resource += r.reward;
            if let Some(w) = trace.as_deref_mut() {
                writeln!(
                    w,
                    "{seed},{t},{resource},{d},{},{}",
                    r.delta_tilde_running, r.delta_accepted_running
                )?;
            }
        }
        out.push(SeedEvaluation {
            seed,
            reward: run.resource(),
            mean_abs_delta: sum_abs / n,
            abs_mean_delta: (sum / n).abs(),
            mean_abs_delta_observed: sum_obs / n,
            mean_abs_delta_accepted: sum_acc / n,
            max_abs_delta_accepted: max_acc,
            acceptance_rate: accepted as f64 / n,
        });
    }
    Ok(Evaluation { seeds: out })
}

/// Evaluates the policy stored in a run directory.
pub fn evaluate_run(
    dir: &Path,
    seeds: &[u64],
    horizon: usize,
    trace: Option<&mut dyn Write>,
) -> Result<Evaluation> {
    let manifest = Manifest::load(dir)?;
    let env = manifest.config.resolve_env()?;
    let policy = load_checkpoint(&dir.join(POLICY_FILE))?;
    let predictor = load_checkpoint(&dir.join(PREDICTOR_FILE)).ok();
    evaluate(
        &policy,
        predictor.as_ref(),
        &env,
        manifest.notion,
        manifest.algorithm.action_rule(),
        seeds,
        horizon,
        trace,
    )
}

// ── Sweep and selection ─────────────────────────────────────────────────────

fn d_horizon() -> usize {
    DEFAULT_HORIZON
}
fn d_selection_seeds() -> Vec<u64> {
    vec![1_000_000]
}
fn d_workers() -> usize {
    1
}

/// A hyperparameter grid over `(β₁, β₂)` on top of a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    /// Evaluation seeds used for selection (kept apart from report seeds).
    #[serde(default = "d_selection_seeds")]
    pub selection_seeds: Vec<u64>,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_workers")]
    pub workers: usize,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read grid {}: {e}", path.display())))?;
        let mut spec: SweepSpec =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        spec.base.apply_env_overrides()?;
        spec.base.train.validate()?;
        Ok(spec)
    }

    pub fn configs(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &b1 in &self.beta1 {
            for &b2 in &self.beta2 {
                let mut cfg = self.base.clone();
                cfg.train.beta1 = b1;
                cfg.train.beta2 = b2;
                let id = run_id(&cfg);
                cfg.out_dir = self.base.out_dir.join(id);
                out.push(cfg);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Time-averaged |Δ| of the algorithm's own observable.
    pub selection_disparity: f64,
    /// Time-averaged true |Δ| (diagnostic, never used for selection).
    pub true_disparity: f64,
    pub reward: f64,
    pub run_dir: String,
}

/// Trains one configuration and evaluates it on the selection seeds.
pub fn run_and_score(
    cfg: &RunConfig,
    selection_seeds: &[u64],
    horizon: usize,
) -> Result<SweepResult> {
    let art = run(cfg)?;
    let ev = evaluate_run(&art.dir, selection_seeds, horizon, None)?;
    Ok(SweepResult {
        run_id: art.manifest.run_id,
        algorithm: cfg.train.algorithm,
        beta1: cfg.train.beta1,
        beta2: cfg.train.beta2,
        seed: cfg.train.seed,
        selection_disparity: ev.selection_disparity(cfg.train.algorithm),
        true_disparity: ev.mean_abs_delta().0,
        reward: ev.reward().0,
        run_dir: art.dir.display().to_string(),
    })
}

/// Runs every grid point over a pool of `workers` threads. Results come
/// back in grid order whatever the completion order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepResult>> {
    let configs = spec.configs();
    if configs.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SweepResult>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..spec.workers.max(1).min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let r = run_and_score(&configs[i], &spec.selection_seeds, spec.horizon);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn write_sweep(results: &[SweepResult]) -> Result<String> {
    let mut buf = Vec::new();
    writeln!(buf, "{SWEEP_VERSION}")?;
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        for r in results {
            w.serialize(r).map_err(csv_err)?;
        }
        if results.is_empty() {
            w.write_record([
                "run_id",
                "algorithm",
                "beta1",
                "beta2",
                "seed",
                "selection_disparity",
                "true_disparity",
                "reward",
                "run_dir",
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_sweep(text: &str) -> Result<Vec<SweepResult>> {
    let body = strip_version(text, SWEEP_VERSION)?;
    csv::ReaderBuilder::new()
        .from_reader(body.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// Selection over precomputed clip values: keep the entries attaining the
/// minimum clip, return the one with the highest reward; remaining ties go
/// to the lowest `(β₁, β₂)`. `keys` holds `(β₁, β₂)` per entry.
pub fn select_by_clip(clips: &[f64], rewards: &[f64], keys: &[(f64, f64)]) -> Result<usize> {
    if clips.is_empty() {
        return Err(Error::Selection("no configurations to select from".into()));
    }
    if clips.len() != rewards.len() || clips.len() != keys.len() {
        return Err(Error::Selection(
            "clips, rewards and keys differ in length".into(),
        ));
    }
    if clips.iter().chain(rewards).any(|v| v.is_nan()) {
        return Err(Error::Selection("NaN disparity or reward".into()));
    }
    let min_clip = clips.iter().cloned().fold(f64::INFINITY, f64::min);
    let best = (0..clips.len())
        .filter(|&i| clips[i] == min_clip)
        .min_by(|&i, &j| {
            rewards[j]
                .total_cmp(&rewards[i])
                .then(keys[i].0.total_cmp(&keys[j].0))
                .then(keys[i].1.total_cmp(&keys[j].1))
        })
        .expect("at least one entry attains the minimum");
    Ok(best)
}

/// The clip used for selection: `max(|Δ| − ω, 0)`, so every configuration
/// within the constraint ties at zero and is ranked by reward.
pub fn clip_disparity(disparity: f64, omega: f64) -> f64 {
    (disparity - omega).max(0.0)
}

/// Selects one configuration per algorithm.
pub fn select(results: &[SweepResult], omega: f64) -> Result<Vec<SweepResult>> {
    if results.is_empty() {
        return Err(Error::Selection("empty results table".into()));
    }
    let mut out = Vec::new();
    for alg in Algorithm::ALL {
        let rows: Vec<&SweepResult> = results.iter().filter(|r| r.algorithm == alg).collect();
        if rows.is_empty() {
            continue;
        }
        let clips: Vec<f64> = rows
            .iter()
            .map(|r| clip_disparity(r.selection_disparity, omega))
            .collect();
        let rewards: Vec<f64> = rows.iter().map(|r| r.reward).collect();
        let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.beta1, r.beta2)).collect();
        out.push(rows[select_by_clip(&clips, &rewards, &keys)?].clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        let mut t = TrainConfig::new(Algorithm::Sellf, FairnessNotion::EqualityOfOpportunity);
        t.total_steps = 512;
        t.n_steps = 256;
        t.ppo_epochs = 1;
        t.pool_size = 100;
        t.beta1 = 1.0;
        t.beta2 = 0.05;
        RunConfig::new("lending", t, dir)
    }

    #[test]
    fn selection_examples() {
        let k = [(1.0, 0.01), (2.0, 0.01)];
        assert_eq!(
            select_by_clip(&[-0.01, -0.01], &[100.0, 200.0], &k).unwrap(),
            1
        );
        assert_eq!(
            select_by_clip(&[0.02, -0.01], &[900.0, 1.0], &k).unwrap(),
            1
        );
        assert_eq!(select_by_clip(&[0.3], &[5.0], &k[..1]).unwrap(), 0);
        assert_eq!(
            select_by_clip(&[0.0, 0.0], &[5.0, 5.0], &[(2.0, 0.1), (1.0, 0.5)]).unwrap(),
            1
        );
        assert!(matches!(
            select_by_clip(&[], &[], &[]),
            Err(Error::Selection(_))
        ));
        assert!(matches!(select(&[], 0.05), Err(Error::Selection(_))));
    }

    #[test]
    fn clip_ties_everything_within_the_constraint() {
        assert_eq!(clip_disparity(0.01, 0.05), 0.0);
        assert_eq!(clip_disparity(0.04, 0.05), 0.0);
        assert!((clip_disparity(0.08, 0.05) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip_and_field_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let bad =
            "env = \"lending\"\n[train]\nalgorithm = \"sellf\"\nnotion = \"eo\"\nomega = -1.0\n";
        match RunConfig::parse(bad) {
            Err(Error::Config(m)) => assert!(m.contains("omega"), "{m}"),
            other => panic!("{other:?}"),
        }
        let unknown =
            "env = \"lending\"\n[train]\nalgorithm = \"sellf\"\nnotion = \"eo\"\nbeta3 = 1.0\n";
        match RunConfig::parse(unknown) {
            Err(Error::Config(m)) => assert!(m.contains("beta3"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn run_writes_artifacts_and_metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let art = run(&tiny(dir.path())).unwrap();
        for f in [
            POLICY_FILE,
            VALUE_FILE,
            PREDICTOR_FILE,
            MANIFEST_FILE,
            METRICS_FILE,
        ] {
            assert!(art.dir.join(f).exists(), "{f}");
        }
        let text = fs::read_to_string(art.dir.join(METRICS_FILE)).unwrap();
        let (groups, rows) = read_metrics(&text).unwrap();
        assert_eq!(groups, 2);
        assert_eq!(rows.len(), 2);
        assert_eq!(write_metrics(&rows, groups).unwrap(), text);
        let m = Manifest::load(&art.dir).unwrap();
        assert_eq!(m.env_hash, builtin("lending").unwrap().content_hash());
        assert_eq!(m.status, "completed");
    }

    #[test]
    fn missing_table_is_a_load_error_with_its_own_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.env_path = Some(dir.path().join("nowhere"));
        let e = run(&cfg).unwrap_err();
        assert!(matches!(e, Error::Load { .. }));
        assert_ne!(exit_code(&e), exit_code(&Error::Numerical("x".into())));
    }

    #[test]
    fn zero_accept_policy_keeps_resource_constant() {
        let env = builtin("lending").unwrap();
        let mut policy = Mlp::zeros(crate::approx::Architecture::Linear, env.input_dim());
        let n = policy.param_count();
        policy.params_mut()[n - 1] = -1e6;
        let mut trace = Vec::new();
        let ev = evaluate(
            &policy,
            None,
            &env,
            FairnessNotion::EqualityOfOpportunity,
            ActionRule::Stochastic,
            &[1, 2],
            500,
            Some(&mut trace),
        )
        .unwrap();
        assert!(ev
            .seeds
            .iter()
            .all(|s| s.reward == 1000.0 && s.acceptance_rate == 0.0));
        let text = String::from_utf8(trace).unwrap();
        assert!(text
            .lines()
            .skip(2)
            .all(|l| l.split(',').nth(2) == Some("1000")));
    }

    #[test]
    fn sweep_results_round_trip() {
        let r = SweepResult {
            run_id: "x".into(),
            algorithm: Algorithm::PocarOracle,
            beta1: 2.0,
            beta2: 0.05,
            seed: 3,
            selection_disparity: 0.0312,
            true_disparity: 0.1,
            reward: 1234.5,
            run_dir: "runs/x".into(),
        };
        let text = write_sweep(std::slice::from_ref(&r)).unwrap();
        assert_eq!(read_sweep(&text).unwrap(), vec![r]);
    }
}
