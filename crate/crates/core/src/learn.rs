//! Training algorithms: a PPO core with advantage regularization (POCAR and
//! its oracle variant), and SELLF — label imputation with an IPW-trained
//! predictor, an observed-disparity penalty and a Rényi regularizer.
//!
//! The loss functions are exposed as pure maps from logits to
//! `(loss, d loss / d logit)` so that their gradients can be checked against
//! finite differences independently of the training loop.

use std::collections::HashMap;
use std::time::Instant;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{
    clip_grad_norm, log_sigmoid, sigmoid, Adam, Architecture, ForwardCache, Init, Mlp,
};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::fmdp::{collect_rollout, ActionRule, MemoryBuffer, RunState, TransitionRecord};
use crate::ipw::{PolicyHistory, PolicySnapshot, OVERLAP_FLOOR};
use crate::metrics::{
    check_conditions, error_bound, ipw_error_estimate, Certificate, DisparityReport,
    FairnessNotion, GroupReport,
};

// ── Configuration ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(alias = "PPO")]
    Ppo,
    #[serde(alias = "POCAR")]
    Pocar,
    #[serde(alias = "POCAR_ORACLE")]
    PocarOracle,
    #[serde(alias = "SELLF")]
    Sellf,
    #[serde(alias = "SELLF_SEMISTO")]
    SellfSemisto,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Ppo,
        Algorithm::Pocar,
        Algorithm::PocarOracle,
        Algorithm::Sellf,
        Algorithm::SellfSemisto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Pocar => "pocar",
            Algorithm::PocarOracle => "pocar_oracle",
            Algorithm::Sellf => "sellf",
            Algorithm::SellfSemisto => "sellf_semisto",
        }
    }

    pub fn is_sellf(self) -> bool {
        matches!(self, Algorithm::Sellf | Algorithm::SellfSemisto)
    }

    pub fn action_rule(self) -> ActionRule {
        match self {
            Algorithm::SellfSemisto => ActionRule::semi_stochastic(),
            _ => ActionRule::Stochastic,
        }
    }
}

fn d_omega() -> f64 {
    0.05
}
fn d_total_steps() -> usize {
    500_000
}
fn d_n_steps() -> usize {
    2048
}
fn d_minibatch() -> usize {
    64
}
fn d_ppo_epochs() -> usize {
    10
}
fn d_predictor_steps() -> usize {
    25
}
fn d_clip_eps() -> f64 {
    0.2
}
fn d_gamma() -> f64 {
    0.99
}
fn d_gae_lambda() -> f64 {
    0.95
}
fn d_lr_policy() -> f64 {
    1e-5
}
fn d_lr_value() -> f64 {
    1e-3
}
fn d_lr_predictor() -> f64 {
    1e-2
}
fn d_lr_predictor_decay() -> f64 {
    0.95
}
fn d_value_coef() -> f64 {
    0.5
}
fn d_max_grad_norm() -> f64 {
    0.5
}
fn d_history_subsample() -> usize {
    crate::ipw::DEFAULT_SUBSAMPLE
}
fn d_metrics_subsample() -> usize {
    4096
}
fn d_delta_conf() -> f64 {
    crate::metrics::DEFAULT_DELTA_CONF
}
fn d_true() -> bool {
    true
}
fn d_policy_arch() -> Architecture {
    Architecture::TanhMlp
}
fn d_predictor_arch() -> Architecture {
    Architecture::Linear
}
fn d_pool_size() -> usize {
    crate::envs::DEFAULT_POOL_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub notion: FairnessNotion,
    #[serde(default = "d_omega")]
    pub omega: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
    #[serde(default = "d_total_steps")]
    pub total_steps: usize,
    #[serde(default = "d_n_steps")]
    pub n_steps: usize,
    #[serde(default = "d_minibatch")]
    pub minibatch: usize,
    #[serde(default = "d_ppo_epochs")]
    pub ppo_epochs: usize,
    #[serde(default = "d_predictor_steps")]
    pub predictor_steps: usize,
    /// Switches predictor training off (used to check the PPO reduction).
    #[serde(default = "d_true")]
    pub predictor_updates: bool,
    #[serde(default = "d_clip_eps")]
    pub clip_eps: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_gae_lambda")]
    pub gae_lambda: f64,
    #[serde(default = "d_lr_policy")]
    pub lr_policy: f64,
    #[serde(default = "d_lr_value")]
    pub lr_value: f64,
    #[serde(default = "d_lr_predictor")]
    pub lr_predictor: f64,
    /// Per-iteration multiplicative decay of the predictor learning rate.
    #[serde(default = "d_lr_predictor_decay")]
    pub lr_predictor_decay: f64,
    #[serde(default = "d_value_coef")]
    pub value_coef: f64,
    #[serde(default = "d_max_grad_norm")]
    pub max_grad_norm: f64,
    /// Earlier policies sampled into the cumulative acceptance probability.
    #[serde(default = "d_history_subsample")]
    pub history_subsample: usize,
    /// Memory samples used for the per-iteration error estimate.
    #[serde(default = "d_metrics_subsample")]
    pub metrics_subsample: usize,
    #[serde(default = "d_delta_conf")]
    pub delta_conf: f64,
    #[serde(default = "d_policy_arch")]
    pub policy_arch: Architecture,
    #[serde(default = "d_predictor_arch")]
    pub predictor_arch: Architecture,
    #[serde(default = "d_pool_size")]
    pub pool_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, notion: FairnessNotion) -> Self {
        Self {
            algorithm,
            notion,
            omega: d_omega(),
            beta1: 0.0,
            beta2: 0.0,
            total_steps: d_total_steps(),
            n_steps: d_n_steps(),
            minibatch: d_minibatch(),
            ppo_epochs: d_ppo_epochs(),
            predictor_steps: d_predictor_steps(),
            predictor_updates: true,
            clip_eps: d_clip_eps(),
            gamma: d_gamma(),
            gae_lambda: d_gae_lambda(),
            lr_policy: d_lr_policy(),
            lr_value: d_lr_value(),
            lr_predictor: d_lr_predictor(),
            lr_predictor_decay: d_lr_predictor_decay(),
            value_coef: d_value_coef(),
            max_grad_norm: d_max_grad_norm(),
            history_subsample: d_history_subsample(),
            metrics_subsample: d_metrics_subsample(),
            delta_conf: d_delta_conf(),
            policy_arch: d_policy_arch(),
            predictor_arch: d_predictor_arch(),
            pool_size: d_pool_size(),
            seed: 0,
        }
    }

    /// Field-level validation.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if !(self.omega > 0.0) {
            return bad("omega", "must be positive");
        }
        if !(self.beta1 >= 0.0) {
            return bad("beta1", "must be non-negative");
        }
        if !(self.beta2 >= 0.0) {
            return bad("beta2", "must be non-negative");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps", "must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        for (name, v) in [
            ("n_steps", self.n_steps),
            ("minibatch", self.minibatch),
            ("total_steps", self.total_steps),
        ] {
            if v == 0 {
                return bad(name, "must be at least 1");
            }
        }
        if self.pool_size == 0 {
            return bad("pool_size", "must be at least 1");
        }
        for (name, v) in [
            ("lr_policy", self.lr_policy),
            ("lr_value", self.lr_value),
            ("lr_predictor", self.lr_predictor),
        ] {
            if !(v > 0.0) {
                return bad(name, "must be positive");
            }
        }
        if !(self.delta_conf > 0.0 && self.delta_conf < 1.0) {
            return bad("delta_conf", "must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.total_steps.div_ceil(self.n_steps)
    }
}

// ── Advantages and penalties ────────────────────────────────────────────────

/// Generalized advantage estimates over one window treated as a continuing
/// stream. `values` holds `n + 1` entries: `V(s_t)` for every record plus the
/// bootstrap value of the last record's successor. Returns advantages and
/// return targets `advantage + V`.
pub fn advantages(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(Error::Config(format!(
            "{} rewards need {} values, got {}",
            n,
            n + 1,
            values.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        next = delta + gamma * gae_lambda * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// SELLF penalty `β₁·max(|Δ̃| − ω/2, 0)`.
pub fn sellf_penalty(delta_tilde: f64, omega: f64, beta1: f64) -> f64 {
    beta1 * (delta_tilde.abs() - omega / 2.0).max(0.0)
}

/// POCAR penalty `β₁·max(|Δ_t| − ω, 0) + β₂·1{|Δ_t| > ω}·max(|Δ_{t+1}| − |Δ_t|, 0)`.
pub fn pocar_penalty(delta_t: f64, delta_next: f64, omega: f64, beta1: f64, beta2: f64) -> f64 {
    let first = beta1 * (delta_t.abs() - omega).max(0.0);
    let second = if delta_t.abs() > omega {
        beta2 * (delta_next.abs() - delta_t.abs()).max(0.0)
    } else {
        0.0
    };
    first + second
}

/// Subtracts the per-record penalties from the advantages.
pub fn regularize_advantage(adv: &mut [f64], penalty: &[f64]) {
    for (a, p) in adv.iter_mut().zip(penalty) {
        *a -= p;
    }
}

/// The per-record disparity column an algorithm may observe.
fn disparity_column(records: &[TransitionRecord], algorithm: Algorithm) -> Vec<f64> {
    records
        .iter()
        .map(|r| match algorithm {
            Algorithm::Ppo | Algorithm::Pocar => r.delta_accepted_running,
            Algorithm::PocarOracle => r.oracle_delta(),
            Algorithm::Sellf | Algorithm::SellfSemisto => r.delta_tilde_running,
        })
        .collect()
}

/// Per-record advantage penalties for the configured algorithm.
pub fn penalty_column(records: &[TransitionRecord], cfg: &TrainConfig) -> Vec<f64> {
    let n = records.len();
    let next = |col: &[f64], t: usize| if t + 1 < n { col[t + 1] } else { col[t] };
    match cfg.algorithm {
        Algorithm::Ppo => vec![0.0; n],
        Algorithm::Pocar | Algorithm::PocarOracle => {
            let col = disparity_column(records, cfg.algorithm);
            (0..n)
                .map(|t| pocar_penalty(col[t], next(&col, t), cfg.omega, cfg.beta1, cfg.beta2))
                .collect()
        }
        Algorithm::Sellf | Algorithm::SellfSemisto => {
            let col = disparity_column(records, cfg.algorithm);
            (0..n)
                .map(|t| {
                    // qualification parity looks one step ahead
                    let d = if cfg.notion == FairnessNotion::QualificationParity {
                        next(&col, t)
                    } else {
                        col[t]
                    };
                    sellf_penalty(d, cfg.omega, cfg.beta1)
                })
                .collect()
        }
    }
}

// ── Losses as functions of logits ───────────────────────────────────────────

/// Negative clipped surrogate `−mean(min(ρA, clip(ρ)A))` with
/// `ρ = π_θ(a)/π_old(a)` and its derivative with respect to each logit.
pub fn ppo_clip_terms(
    logits: &[f64],
    actions: &[bool],
    old_probs: &[f64],
    adv: &[f64],
    clip_eps: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = logits.len();
    let mut loss = 0.0;
    let mut d = vec![0.0; n];
    for j in 0..n {
        let s = sigmoid(logits[j]);
        let (p, old) = if actions[j] {
            (s, old_probs[j])
        } else {
            (1.0 - s, 1.0 - old_probs[j])
        };
        if !(old > 0.0) {
            return Err(Error::Numerical(format!(
                "behavior probability of the taken action is {old}"
            )));
        }
        let rho = p / old;
        let unclipped = rho * adv[j];
        let clipped = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv[j];
        if unclipped <= clipped {
            loss -= unclipped;
            let drho = if actions[j] {
                rho * (1.0 - s)
            } else {
                -rho * s
            };
            d[j] = -adv[j] * drho / n as f64;
        } else {
            loss -= clipped;
        }
    }
    Ok((loss / n as f64, d))
}

/// `Σⱼ kⱼ·(1 − p)²/D` with `p = σ(logit)`, `D = 1 − qⱼ(1 − p)` floored at the
/// overlap floor (no gradient through the floor). Returns the loss, logit
/// derivatives and the number of floored terms.
pub fn renyi_terms(
    logits: &[f64],
    reject_products: &[f64],
    coef: &[f64],
) -> (f64, Vec<f64>, usize) {
    let mut loss = 0.0;
    let mut floored = 0;
    let mut d = vec![0.0; logits.len()];
    for j in 0..logits.len() {
        if coef[j] == 0.0 {
            continue;
        }
        let p = sigmoid(logits[j]);
        let q = reject_products[j];
        let raw = 1.0 - q * (1.0 - p);
        let (den, dden) = if raw < OVERLAP_FLOOR {
            floored += 1;
            (OVERLAP_FLOOR, 0.0)
        } else {
            (raw, q)
        };
        let one_p = 1.0 - p;
        loss += coef[j] * one_p * one_p / den;
        // d/dp [(1−p)²/D] with dD/dp = q
        let dfdp = (-2.0 * one_p * den - one_p * one_p * dden) / (den * den);
        d[j] = coef[j] * dfdp * p * (1.0 - p);
    }
    (loss, d, floored)
}

/// Self-normalized weighted binary cross-entropy: for each group, the
/// weighted mean of `ℓ(y, σ(logit))`; summed over groups.
pub fn weighted_bce_terms(
    logits: &[f64],
    labels: &[bool],
    groups: &[usize],
    weights: &[f64],
) -> (f64, Vec<f64>) {
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut sums = vec![0.0; n_groups];
    for (w, g) in weights.iter().zip(groups) {
        sums[*g] += w;
    }
    let mut loss = 0.0;
    let mut d = vec![0.0; logits.len()];
    for j in 0..logits.len() {
        let total = sums[groups[j]];
        if !(total > 0.0) {
            continue;
        }
        let w = weights[j] / total;
        let z = logits[j];
        let l = if labels[j] {
            -log_sigmoid(z)
        } else {
            -log_sigmoid(-z)
        };
        loss += w * l;
        d[j] = w * (sigmoid(z) - if labels[j] { 1.0 } else { 0.0 });
    }
    (loss, d)
}

/// `coef·mean((V − G)²)` and its derivative in `V`.
pub fn value_mse_terms(values: &[f64], targets: &[f64], coef: f64) -> (f64, Vec<f64>) {
    let n = values.len() as f64;
    let mut loss = 0.0;
    let d = values
        .iter()
        .zip(targets)
        .map(|(v, g)| {
            loss += (v - g) * (v - g);
            2.0 * coef * (v - g) / n
        })
        .collect();
    (coef * loss / n, d)
}

/// Per-group Rényi coefficients `cⁱ·aⁱ/(rⁱ)²` where `cⁱ = rⁱ`, or `rⁱ/φ̃ⁱ`
/// under equality of opportunity. Groups with degenerate statistics get 0.
pub fn renyi_group_coefficients(stats: &[GroupStats], notion: FairnessNotion) -> Vec<f64> {
    stats
        .iter()
        .map(|s| {
            if !(s.reject_prob > 0.0) || s.count == 0 {
                return 0.0;
            }
            let c = match notion {
                FairnessNotion::EqualityOfOpportunity => {
                    if s.phi_tilde > 0.0 {
                        s.reject_prob / s.phi_tilde
                    } else {
                        return 0.0;
                    }
                }
                _ => s.reject_prob,
            };
            c * s.accept_cum / (s.reject_prob * s.reject_prob)
        })
        .collect()
}

/// Draws a semi-stochastic decision for policy probability `pi`.
pub fn semi_stochastic_action<R: Rng + ?Sized>(pi: f64, rng: &mut R) -> bool {
    ActionRule::semi_stochastic().act(pi, rng.random())
}

// ── Batched helpers ─────────────────────────────────────────────────────────

/// Distinct rows of a row-major batch. Discrete feature domains repeat
/// inputs heavily, so networks are evaluated once per distinct row; since
/// the backward pass is linear in the logit derivatives, summing those per
/// distinct row gives the same gradient.
struct Dedup {
    index: Vec<usize>,
    unique: Vec<f64>,
    count: usize,
}

impl Dedup {
    fn new(inputs: &[f64], d: usize) -> Self {
        let n = if d == 0 { 0 } else { inputs.len() / d };
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(n);
        let mut index = Vec::with_capacity(n);
        let mut unique = Vec::new();
        for row in inputs.chunks_exact(d.max(1)) {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let next = seen.len();
            let u = *seen.entry(key).or_insert_with(|| {
                unique.extend_from_slice(row);
                next
            });
            index.push(u);
        }
        let count = seen.len();
        Self {
            index,
            unique,
            count,
        }
    }

    fn expand(&self, per_unique: &[f64]) -> Vec<f64> {
        self.index.iter().map(|&u| per_unique[u]).collect()
    }

    fn reduce(&self, per_sample: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.count];
        for (&u, v) in self.index.iter().zip(per_sample) {
            out[u] += v;
        }
        out
    }
}

fn unique_logits(net: &Mlp, batch: &Dedup, cache: &mut ForwardCache) -> Result<Vec<f64>> {
    net.forward_batch(&batch.unique, batch.count, cache)?;
    Ok(cache.logits().to_vec())
}

fn check_batch(net: &Mlp, inputs: &[f64], n: usize) -> Result<()> {
    if inputs.len() != n * net.input_dim() {
        return Err(Error::Config(format!(
            "batch of {n} rows has {} values",
            inputs.len()
        )));
    }
    Ok(())
}

fn batch_logits(net: &Mlp, inputs: &[f64], n: usize, cache: &mut ForwardCache) -> Result<Vec<f64>> {
    check_batch(net, inputs, n)?;
    let batch = Dedup::new(inputs, net.input_dim());
    Ok(batch.expand(&unique_logits(net, &batch, cache)?))
}

fn batch_probs(net: &Mlp, inputs: &[f64], n: usize, cache: &mut ForwardCache) -> Result<Vec<f64>> {
    Ok(batch_logits(net, inputs, n, cache)?
        .into_iter()
        .map(sigmoid)
        .collect())
}

/// `∏ (1 − π[k])` over the history's sampled earlier snapshots, batched.
fn batch_reject_products(
    history: &PolicyHistory,
    inputs: &[f64],
    n: usize,
    cache: &mut ForwardCache,
) -> Result<Vec<f64>> {
    let Some(current) = history.current() else {
        return Ok(vec![1.0; n]);
    };
    check_batch(&current.net, inputs, n)?;
    let batch = Dedup::new(inputs, current.net.input_dim());
    let mut q = vec![1.0; batch.count];
    for &k in history.subset() {
        let z = unique_logits(&history.snapshots()[k].net, &batch, cache)?;
        for (qj, zj) in q.iter_mut().zip(z) {
            *qj *= 1.0 - sigmoid(zj);
        }
    }
    Ok(batch.expand(&q))
}

// ── Metrics ─────────────────────────────────────────────────────────────────

/// Buffer statistics of one group under the data-collecting policy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    /// Mean `1 − π_old` over the group's records.
    pub reject_prob: f64,
    /// Mean cumulative acceptance probability `a[1:K]`.
    pub accept_cum: f64,
    /// Fraction of records with `ỹ = 1`.
    pub phi_tilde: f64,
    /// Fraction of rejected records.
    pub reject_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub r: f64,
    pub eps_hat: f64,
    pub eps_bar: f64,
    pub d2: f64,
    pub phi_tilde: f64,
    pub n_memory: usize,
}

/// One row per training iteration. Missing values are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub steps: usize,
    pub reward_window: f64,
    pub resource: f64,
    /// Diagnostic only: never fed back into non-oracle training.
    pub delta_true: f64,
    pub delta_observed: f64,
    pub delta_accepted: f64,
    pub groups: Vec<GroupMetrics>,
    pub max_weight: f64,
    pub min_cum_accept: f64,
    pub overlap_events: usize,
    pub disparity_ok: bool,
    pub bias_ok: bool,
    pub overall_ok: bool,
    pub renyi_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub predictor_loss: f64,
}

// ── Trainer ─────────────────────────────────────────────────────────────────

pub struct Trainer {
    cfg: TrainConfig,
    env: EnvSpec,
    run: RunState,
    policy: Mlp,
    value: Mlp,
    predictor: Mlp,
    policy_opt: Adam,
    value_opt: Adam,
    predictor_opt: Adam,
    history: PolicyHistory,
    memory: MemoryBuffer,
    rng: ChaCha8Rng,
    iteration: usize,
    last_rollout: Vec<TransitionRecord>,
    cache: ForwardCache,
    elapsed: std::time::Duration,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, mut env: EnvSpec) -> Result<Self> {
        cfg.validate()?;
        env.pool_size = cfg.pool_size;
        let run = RunState::new(&env, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let d = env.input_dim();
        let sqrt2 = std::f64::consts::SQRT_2;
        let policy = Mlp::new(
            cfg.policy_arch,
            d,
            Init::Orthogonal {
                hidden_gain: sqrt2,
                output_gain: 0.01,
            },
            &mut rng,
        );
        let value = Mlp::new(
            cfg.policy_arch,
            d,
            Init::Orthogonal {
                hidden_gain: sqrt2,
                output_gain: 1.0,
            },
            &mut rng,
        );
        let predictor_init = match cfg.predictor_arch {
            Architecture::Linear => Init::Zeros,
            _ => Init::FanInUniform,
        };
        let predictor = Mlp::new(cfg.predictor_arch, d, predictor_init, &mut rng);
        Ok(Self {
            policy_opt: Adam::new(policy.param_count(), cfg.lr_policy),
            value_opt: Adam::new(value.param_count(), cfg.lr_value),
            predictor_opt: Adam::new(predictor.param_count(), cfg.lr_predictor),
            history: PolicyHistory::new(cfg.history_subsample),
            memory: MemoryBuffer::default(),
            cfg,
            env,
            run,
            policy,
            value,
            predictor,
            rng,
            iteration: 0,
            last_rollout: Vec::new(),
            cache: ForwardCache::default(),
            elapsed: std::time::Duration::ZERO,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn value(&self) -> &Mlp {
        &self.value
    }

    pub fn predictor(&self) -> &Mlp {
        &self.predictor
    }

    pub fn history(&self) -> &PolicyHistory {
        &self.history
    }

    pub fn memory(&self) -> &MemoryBuffer {
        &self.memory
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.iterations()
    }

    pub fn last_rollout(&self) -> &[TransitionRecord] {
        &self.last_rollout
    }

    pub fn resource(&self) -> f64 {
        self.run.resource()
    }

    /// Wall-clock time spent inside [`step`](Self::step).
    pub fn elapsed(&self) -> std::time::Duration {
        self.elapsed
    }

    /// Test instrumentation, see [`RunState::set_poison_hidden_labels`].
    pub fn set_poison_hidden_labels(&mut self, on: bool) {
        self.run.set_poison_hidden_labels(on);
    }

    /// Runs every remaining iteration, handing each metrics row to `sink`.
    pub fn train<F: FnMut(&IterationMetrics) -> Result<()>>(&mut self, mut sink: F) -> Result<()> {
        while !self.is_done() {
            let row = self.step()?;
            sink(&row)?;
        }
        Ok(())
    }

    /// One learning iteration: snapshot, collect, predictor update, policy
    /// and value updates.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let started = Instant::now();
        let out = self.step_inner();
        self.elapsed += started.elapsed();
        out
    }

    fn step_inner(&mut self) -> Result<IterationMetrics> {
        self.iteration += 1;
        let k = self.iteration;
        let cfg = self.cfg.clone();
        let groups = self.env.group_count();
        let d = self.env.input_dim();

        self.history.push(PolicySnapshot {
            iteration: k,
            net: self.policy.clone(),
        })?;
        self.history.resample(&mut self.rng);

        let resource_before = self.run.resource();
        let steps = cfg.n_steps.min(cfg.total_steps - (k - 1) * cfg.n_steps);
        let records = collect_rollout(
            &mut self.run,
            &self.env,
            &self.policy,
            &self.predictor,
            cfg.notion,
            steps,
            cfg.algorithm.action_rule(),
            &mut self.memory,
            k,
        )?;
        let n = records.len();
        let mut inputs = Vec::with_capacity(n * d);
        for r in &records {
            inputs.extend_from_slice(&r.input);
        }

        // history terms under the data-collecting policy
        let q_buf = batch_reject_products(&self.history, &inputs, n, &mut self.cache)?;
        let stats = group_stats(&records, &q_buf, groups);

        let mut overlap_events = 0;
        let predictor_loss = if cfg.algorithm.is_sellf() && cfg.predictor_updates {
            let lr = cfg.lr_predictor * cfg.lr_predictor_decay.powi(k as i32 - 1);
            self.update_predictor(lr, &mut overlap_events)?
        } else {
            f64::NAN
        };

        // advantages
        let mut values = batch_logits(&self.value, &inputs, n, &mut self.cache)?;
        let last = &records[n - 1];
        let bootstrap = self.value.logit(&self.env.input(&last.x_next, last.z))?;
        values.push(bootstrap);
        let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
        let (mut adv, returns) = advantages(&rewards, &values, cfg.gamma, cfg.gae_lambda)?;
        let penalty = penalty_column(&records, &cfg);
        regularize_advantage(&mut adv, &penalty);

        let coef_group = renyi_group_coefficients(&stats, cfg.notion);
        let use_renyi = cfg.algorithm.is_sellf() && cfg.beta2 > 0.0;
        let (policy_loss, value_loss) = self.update_policy_value(
            &records,
            &inputs,
            &adv,
            &returns,
            &q_buf,
            &coef_group,
            use_renyi,
            &mut overlap_events,
        )?;

        let renyi_loss = stats
            .iter()
            .zip(renyi_d2_buffer(&records, &q_buf, &stats, groups))
            .map(|(s, d2)| match cfg.notion {
                FairnessNotion::EqualityOfOpportunity if s.phi_tilde > 0.0 => {
                    s.reject_prob / s.phi_tilde * d2
                }
                FairnessNotion::EqualityOfOpportunity => f64::NAN,
                _ => s.reject_prob * d2,
            })
            .sum();

        let row = self.iteration_metrics(
            &records,
            &q_buf,
            &stats,
            resource_before,
            overlap_events,
            renyi_loss,
            policy_loss,
            value_loss,
            predictor_loss,
        )?;
        debug!(
            "iteration {k}: reward {:.3} Δ̃ {:.4} Δ {:.4} renyi {:.4}",
            row.reward_window, row.delta_observed, row.delta_true, row.renyi_loss
        );
        self.last_rollout = records;
        Ok(row)
    }

    fn update_predictor(&mut self, lr: f64, overlap_events: &mut usize) -> Result<f64> {
        if self.memory.is_empty() {
            warn!(
                "iteration {}: empty memory, predictor update skipped",
                self.iteration
            );
            return Ok(f64::NAN);
        }
        self.predictor_opt.lr = lr;
        let d = self.env.input_dim();
        let mb = self.cfg.minibatch;
        let current = self.history.current().expect("snapshot pushed").net.clone();
        let mut inputs = Vec::with_capacity(mb * d);
        let mut last_loss = f64::NAN;
        for _ in 0..self.cfg.predictor_steps {
            inputs.clear();
            let mut labels = Vec::with_capacity(mb);
            let mut groups = Vec::with_capacity(mb);
            for _ in 0..mb {
                let s = &self.memory.samples[self.rng.random_range(0..self.memory.len())];
                inputs.extend_from_slice(&s.input);
                labels.push(s.y);
                groups.push(s.z);
            }
            let pi = batch_probs(&current, &inputs, mb, &mut self.cache)?;
            let q = batch_reject_products(&self.history, &inputs, mb, &mut self.cache)?;
            let weights: Vec<f64> = pi
                .iter()
                .zip(&q)
                .map(|(p, q)| {
                    let cum = 1.0 - q * (1.0 - p);
                    if cum < OVERLAP_FLOOR {
                        *overlap_events += 1;
                    }
                    (1.0 - p) / cum.max(OVERLAP_FLOOR)
                })
                .collect();
            let (loss, grad) = self.predictor.grad(&inputs, mb, |logits| {
                weighted_bce_terms(logits, &labels, &groups, &weights)
            })?;
            self.predictor_opt
                .step(self.predictor.params_mut(), &grad)?;
            last_loss = loss;
        }
        Ok(last_loss)
    }

    #[allow(clippy::too_many_arguments)]
    fn update_policy_value(
        &mut self,
        records: &[TransitionRecord],
        inputs: &[f64],
        adv: &[f64],
        returns: &[f64],
        q_buf: &[f64],
        coef_group: &[f64],
        use_renyi: bool,
        overlap_events: &mut usize,
    ) -> Result<(f64, f64)> {
        let n = records.len();
        let d = self.env.input_dim();
        let mb = self.cfg.minibatch;
        let mut idx: Vec<usize> = (0..n).collect();
        let mut mb_inputs = Vec::with_capacity(mb * d);
        let mut pgrad = vec![0.0; self.policy.param_count()];
        let mut vgrad = vec![0.0; self.value.param_count()];
        let (mut ploss_sum, mut vloss_sum, mut batches) = (0.0, 0.0, 0usize);
        for _ in 0..self.cfg.ppo_epochs {
            idx.shuffle(&mut self.rng);
            for chunk in idx.chunks(mb) {
                mb_inputs.clear();
                for &j in chunk {
                    mb_inputs.extend_from_slice(&inputs[j * d..(j + 1) * d]);
                }
                let actions: Vec<bool> = chunk.iter().map(|&j| records[j].a).collect();
                let old: Vec<f64> = chunk.iter().map(|&j| records[j].pi_policy).collect();
                let mut a: Vec<f64> = chunk.iter().map(|&j| adv[j]).collect();
                normalize_advantages(&mut a);

                // policy
                let batch = Dedup::new(&mb_inputs, d);
                let logits = batch.expand(&unique_logits(&self.policy, &batch, &mut self.cache)?);
                let (mut loss, mut dl) =
                    ppo_clip_terms(&logits, &actions, &old, &a, self.cfg.clip_eps)?;
                if use_renyi {
                    let mut counts = vec![0usize; coef_group.len()];
                    for &j in chunk {
                        counts[records[j].z] += 1;
                    }
                    let coef: Vec<f64> = chunk
                        .iter()
                        .map(|&j| {
                            self.cfg.beta2 * coef_group[records[j].z] / counts[records[j].z] as f64
                        })
                        .collect();
                    let q: Vec<f64> = chunk.iter().map(|&j| q_buf[j]).collect();
                    let (rl, rd, floored) = renyi_terms(&logits, &q, &coef);
                    *overlap_events += floored;
                    loss += rl;
                    for (x, y) in dl.iter_mut().zip(rd) {
                        *x += y;
                    }
                }
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite policy loss at iteration {}",
                        self.iteration
                    )));
                }
                pgrad.iter_mut().for_each(|g| *g = 0.0);
                self.policy
                    .backward_batch(&mut self.cache, &batch.reduce(&dl), &mut pgrad);
                clip_grad_norm(&mut pgrad, self.cfg.max_grad_norm);
                self.policy_opt.step(self.policy.params_mut(), &pgrad)?;

                // value
                let values = batch.expand(&unique_logits(&self.value, &batch, &mut self.cache)?);
                let targets: Vec<f64> = chunk.iter().map(|&j| returns[j]).collect();
                let (vloss, dv) = value_mse_terms(&values, &targets, self.cfg.value_coef);
                if !vloss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite value loss at iteration {}",
                        self.iteration
                    )));
                }
                vgrad.iter_mut().for_each(|g| *g = 0.0);
                self.value
                    .backward_batch(&mut self.cache, &batch.reduce(&dv), &mut vgrad);
                clip_grad_norm(&mut vgrad, self.cfg.max_grad_norm);
                self.value_opt.step(self.value.params_mut(), &vgrad)?;

                ploss_sum += loss;
                vloss_sum += vloss;
                batches += 1;
            }
        }
        let b = batches.max(1) as f64;
        Ok((ploss_sum / b, vloss_sum / b))
    }

    #[allow(clippy::too_many_arguments)]
    fn iteration_metrics(
        &mut self,
        records: &[TransitionRecord],
        q_buf: &[f64],
        stats: &[GroupStats],
        resource_before: f64,
        mut overlap_events: usize,
        renyi_loss: f64,
        policy_loss: f64,
        value_loss: f64,
        predictor_loss: f64,
    ) -> Result<IterationMetrics> {
        let cfg = &self.cfg;
        let groups = self.env.group_count();
        let last = records.last().expect("non-empty rollout");

        // population weights over the buffer
        let mut max_weight: f64 = 0.0;
        let mut min_cum: f64 = f64::INFINITY;
        for (r, q) in records.iter().zip(q_buf) {
            let s = &stats[r.z];
            let cum = 1.0 - q * (1.0 - r.pi_policy);
            min_cum = min_cum.min(cum);
            if s.reject_prob > 0.0 {
                let w = s.accept_cum / s.reject_prob * (1.0 - r.pi_policy) / cum.max(OVERLAP_FLOOR);
                max_weight = max_weight.max(w);
            }
        }
        let d2_buf = renyi_d2_buffer(records, q_buf, stats, groups);

        // error estimate on a memory subsample, weighted under the collecting policy
        let m = self.memory.len().min(cfg.metrics_subsample);
        let picks: Vec<usize> = if m == self.memory.len() {
            (0..m).collect()
        } else {
            rand::seq::index::sample(&mut self.rng, self.memory.len(), m).into_vec()
        };
        let d = self.env.input_dim();
        let mut inputs = Vec::with_capacity(m * d);
        for &i in &picks {
            inputs.extend_from_slice(&self.memory.samples[i].input);
        }
        let (phi, pi, q) = if m > 0 {
            let current = &self.history.current().expect("snapshot pushed").net;
            (
                batch_probs(&self.predictor, &inputs, m, &mut self.cache)?,
                batch_probs(current, &inputs, m, &mut self.cache)?,
                batch_reject_products(&self.history, &inputs, m, &mut self.cache)?,
            )
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let pdim = cfg.predictor_arch.pseudo_dimension(d);
        let mut gm = Vec::with_capacity(groups);
        let mut reports = Vec::with_capacity(groups);
        for g in 0..groups {
            let mut samples = Vec::new();
            let mut weights = Vec::new();
            for (j, &i) in picks.iter().enumerate() {
                let s = &self.memory.samples[i];
                if s.z != g {
                    continue;
                }
                let cum = 1.0 - q[j] * (1.0 - pi[j]);
                if cum < OVERLAP_FLOOR {
                    overlap_events += 1;
                }
                samples.push((phi[j], s.y));
                weights.push((1.0 - pi[j]) / cum.max(OVERLAP_FLOOR));
            }
            let eps_hat = ipw_error_estimate(&samples, &weights).unwrap_or(f64::NAN);
            let eps_bar = if eps_hat.is_finite() {
                error_bound(eps_hat, d2_buf[g], samples.len(), pdim, cfg.delta_conf)
            } else {
                1.0
            };
            let s = &stats[g];
            gm.push(GroupMetrics {
                r: s.reject_rate,
                eps_hat,
                eps_bar,
                d2: d2_buf[g],
                phi_tilde: s.phi_tilde,
                n_memory: self.memory.count_group(g),
            });
            reports.push(GroupReport {
                r: s.reject_rate,
                eps_hat: eps_hat.is_finite().then_some(eps_hat),
                eps_bar: Some(eps_bar),
                phi_tilde: s.phi_tilde,
                d2: Some(d2_buf[g]),
                n_accepted: samples.len(),
                ..Default::default()
            });
        }
        let report = DisparityReport {
            notion: cfg.notion,
            delta_true: None,
            delta_accepted: last.delta_accepted_running,
            delta_observed: last.delta_tilde_running,
            groups: reports,
            v: None,
            decomposition_residual: None,
        };
        let verdict = check_conditions(&report, cfg.omega, Certificate::Bound);
        Ok(IterationMetrics {
            iteration: self.iteration,
            steps: (self.iteration - 1) * cfg.n_steps + records.len(),
            reward_window: self.run.resource() - resource_before,
            resource: self.run.resource(),
            delta_true: last.oracle_delta(),
            delta_observed: last.delta_tilde_running,
            delta_accepted: last.delta_accepted_running,
            groups: gm,
            max_weight,
            min_cum_accept: min_cum,
            overlap_events,
            disparity_ok: verdict.disparity_ok,
            bias_ok: verdict.bias_ok,
            overall_ok: verdict.overall_ok,
            renyi_loss,
            policy_loss,
            value_loss,
            predictor_loss,
        })
    }
}

/// Per-group statistics of a rollout; `q` holds each record's earlier
/// rejection product.
pub fn group_stats(records: &[TransitionRecord], q: &[f64], groups: usize) -> Vec<GroupStats> {
    let mut s = vec![GroupStats::default(); groups];
    for (r, qj) in records.iter().zip(q) {
        let g = &mut s[r.z];
        g.count += 1;
        g.reject_prob += 1.0 - r.pi_policy;
        g.accept_cum += 1.0 - qj * (1.0 - r.pi_policy);
        g.phi_tilde += r.y_tilde as u8 as f64;
        g.reject_rate += (!r.a) as u8 as f64;
    }
    for g in &mut s {
        if g.count > 0 {
            let n = g.count as f64;
            g.reject_prob /= n;
            g.accept_cum /= n;
            g.phi_tilde /= n;
            g.reject_rate /= n;
        }
    }
    s
}

/// Population estimate of `E_{D_A}[w²] = E[(a/r²)(1−π)²/a[1:K](x)]` per group.
fn renyi_d2_buffer(
    records: &[TransitionRecord],
    q: &[f64],
    stats: &[GroupStats],
    groups: usize,
) -> Vec<f64> {
    let mut d2 = vec![0.0; groups];
    for (r, qj) in records.iter().zip(q) {
        let s = &stats[r.z];
        if !(s.reject_prob > 0.0) {
            continue;
        }
        let cum = (1.0 - qj * (1.0 - r.pi_policy)).max(OVERLAP_FLOOR);
        let one_p = 1.0 - r.pi_policy;
        d2[r.z] += s.accept_cum / (s.reject_prob * s.reject_prob) * one_p * one_p / cum;
    }
    for (g, v) in d2.iter_mut().enumerate() {
        *v = if stats[g].count > 0 && stats[g].reject_prob > 0.0 {
            *v / stats[g].count as f64
        } else {
            f64::NAN
        };
    }
    d2
}

/// Zero-mean, unit-variance advantages within a minibatch.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.len() < 2 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / sd;
    }
}
