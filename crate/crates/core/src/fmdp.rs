//! Pool-based simulation of a fairness-aware MDP.
//!
//! A [`RunState`] holds a fixed pool of individuals. Each step draws one
//! individual uniformly, asks the policy for a decision, samples the hidden
//! label from the environment's qualification model, imputes a label for
//! rejected individuals with the predictor, pays the reward `a·(y − c)` and
//! moves the individual to its next features.
//!
//! Selective labels are enforced by the record type: [`TransitionRecord`]
//! exposes the true label only through [`TransitionRecord::y_obs`] (present
//! iff the individual was accepted). The hidden label and the true running
//! disparity are reachable only through the explicitly named oracle
//! accessors, which only evaluation code and the oracle baseline use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx::{sigmoid, Mlp};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::metrics::{running_accepted_disparity, running_disparity, FairnessNotion, GroupTally};

pub const INITIAL_RESOURCE: f64 = 1000.0;

pub type GroupId = usize;

/// `R(y, a) = a·(y − c)`.
pub fn reward(y: bool, a: bool, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Config(format!("acceptance cost {c} outside (0,1)")));
    }
    Ok(if a { (y as u8 as f64) - c } else { 0.0 })
}

// ── Decision makers ─────────────────────────────────────────────────────────

/// Anything that maps a network input to a probability.
pub trait Scorer {
    fn prob(&self, input: &[f64]) -> f64;
}

impl Scorer for Mlp {
    fn prob(&self, input: &[f64]) -> f64 {
        sigmoid(self.logit_unchecked(input))
    }
}

/// A constant probability, for tests and degenerate baselines.
#[derive(Debug, Clone, Copy)]
pub struct ConstScorer(pub f64);

impl Scorer for ConstScorer {
    fn prob(&self, _input: &[f64]) -> f64 {
        self.0
    }
}

/// Wraps a closure as a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Scorer for FnScorer<F> {
    fn prob(&self, input: &[f64]) -> f64 {
        (self.0)(input)
    }
}

/// How a policy probability becomes a decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionRule {
    /// `A ∼ Bern(π)`.
    Stochastic,
    /// Reject outright below the threshold, `A ∼ Bern(π)` otherwise.
    SemiStochastic { threshold: f64 },
}

impl ActionRule {
    pub const SEMI_STOCHASTIC_THRESHOLD: f64 = 0.25;

    pub fn semi_stochastic() -> Self {
        ActionRule::SemiStochastic {
            threshold: Self::SEMI_STOCHASTIC_THRESHOLD,
        }
    }

    /// Behavior probability of acceptance for policy probability `pi`.
    pub fn accept_prob(&self, pi: f64) -> f64 {
        match *self {
            ActionRule::Stochastic => pi,
            ActionRule::SemiStochastic { threshold } => {
                if pi < threshold {
                    0.0
                } else {
                    pi
                }
            }
        }
    }

    /// Decision from a uniform draw `u ∈ [0,1)`.
    pub fn act(&self, pi: f64, u: f64) -> bool {
        u < self.accept_prob(pi)
    }
}

// ── Run state ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: u64,
    pub z: GroupId,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pool: Vec<Individual>,
    resource: f64,
    rng_seed: u64,
    step_counter: u64,
    rng: ChaCha8Rng,
    /// Test instrumentation: store the flipped label for rejected records.
    /// Dynamics and random draws are unaffected.
    poison_hidden_labels: bool,
    input_buf: Vec<f64>,
}

impl RunState {
    /// Fresh pool drawn from the environment's initial distribution.
    pub fn new(env: &EnvSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = (0..env.pool_size as u64)
            .map(|id| {
                let z = env.sample_group(&mut rng);
                let x = env.sample_initial(z, &mut rng);
                Individual { id, z, x }
            })
            .collect();
        Self {
            pool,
            resource: INITIAL_RESOURCE,
            rng_seed: seed,
            step_counter: 0,
            rng,
            poison_hidden_labels: false,
            input_buf: Vec::new(),
        }
    }

    /// Pool with explicitly given individuals (tests).
    pub fn with_pool(pool: Vec<Individual>, seed: u64) -> Self {
        Self {
            pool,
            resource: INITIAL_RESOURCE,
            rng_seed: seed,
            step_counter: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            poison_hidden_labels: false,
            input_buf: Vec::new(),
        }
    }

    pub fn set_poison_hidden_labels(&mut self, on: bool) {
        self.poison_hidden_labels = on;
    }

    pub fn pool(&self) -> &[Individual] {
        &self.pool
    }

    pub fn resource(&self) -> f64 {
        self.resource
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }
}

// ── Records ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub id: u64,
    pub z: GroupId,
    pub x: Vec<f64>,
    /// Network input for `(x, z)`.
    pub input: Vec<f64>,
    pub a: bool,
    y_obs: Option<bool>,
    pub y_tilde: bool,
    pub reward: f64,
    pub x_next: Vec<f64>,
    /// Probability with which the action was actually drawn.
    pub pi_behavior: f64,
    /// Probability output of the policy network.
    pub pi_policy: f64,
    /// Observed disparity over the window so far (this record included).
    pub delta_tilde_running: f64,
    /// Accepted-only disparity over the window so far.
    pub delta_accepted_running: f64,
    oracle_delta_running: f64,
    hidden_y: bool,
    pub t: u64,
    pub episode: u64,
}

impl TransitionRecord {
    /// The label, available only for accepted individuals.
    pub fn y_obs(&self) -> Option<bool> {
        self.y_obs
    }

    /// The hidden ground-truth label. Oracle and evaluation use only.
    pub fn oracle_label(&self) -> bool {
        self.hidden_y
    }

    /// True running disparity over the window. Oracle and evaluation use only.
    pub fn oracle_delta(&self) -> f64 {
        self.oracle_delta_running
    }
}

/// One labeled sample in the cross-iteration memory.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedSample {
    pub z: GroupId,
    pub input: Vec<f64>,
    pub y: bool,
    pub iteration: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MemoryBuffer {
    pub samples: Vec<AcceptedSample>,
}

impl MemoryBuffer {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count_group(&self, z: GroupId) -> usize {
        self.samples.iter().filter(|s| s.z == z).count()
    }
}

// ── Running disparity ───────────────────────────────────────────────────────

/// Per-group tallies for the observed, accepted-only and true disparities.
#[derive(Debug, Clone)]
pub struct RunningDisparity {
    pub notion: FairnessNotion,
    pub observed: Vec<GroupTally>,
    pub accepted: Vec<GroupTally>,
    pub truth: Vec<GroupTally>,
}

impl RunningDisparity {
    pub fn new(notion: FairnessNotion, groups: usize) -> Self {
        Self {
            notion,
            observed: vec![GroupTally::default(); groups],
            accepted: vec![GroupTally::default(); groups],
            truth: vec![GroupTally::default(); groups],
        }
    }

    fn push(&mut self, z: GroupId, a: bool, y_tilde: bool, y_obs: Option<bool>, hidden: bool) {
        self.observed[z].add(a, y_tilde, 1.0);
        if let Some(y) = y_obs {
            self.accepted[z].add(true, y, 1.0);
        }
        self.truth[z].add(a, hidden, 1.0);
    }

    pub fn observe(&mut self, r: &TransitionRecord) {
        self.push(r.z, r.a, r.y_tilde, r.y_obs, r.hidden_y);
    }

    pub fn observed_delta(&self) -> f64 {
        running_disparity(&self.observed, self.notion)
    }

    pub fn accepted_delta(&self) -> f64 {
        running_accepted_disparity(&self.accepted, self.notion)
    }

    pub fn true_delta(&self) -> f64 {
        running_disparity(&self.truth, self.notion)
    }
}

// ── Simulation ──────────────────────────────────────────────────────────────

/// One environment step. Always consumes exactly four random draws
/// (individual, action, label, imputation) so that runs stay aligned
/// whatever the probabilities are.
pub fn sample_step(
    run: &mut RunState,
    env: &EnvSpec,
    policy: &dyn Scorer,
    predictor: &dyn Scorer,
    rule: ActionRule,
) -> Result<TransitionRecord> {
    if run.pool.is_empty() {
        return Err(Error::Environment("empty pool".into()));
    }
    let idx = run.rng.random_range(0..run.pool.len());
    let u_a: f64 = run.rng.random();
    let u_y: f64 = run.rng.random();
    let u_h: f64 = run.rng.random();

    let ind = &run.pool[idx];
    env.validate_features(&ind.x)?;
    let z = ind.z;
    env.write_input(&ind.x, z, &mut run.input_buf);
    let pi = policy.prob(&run.input_buf);
    let pi_behavior = rule.accept_prob(pi);
    let a = u_a < pi_behavior;
    let y = u_y < env.alpha(&ind.x, z)?;
    let y_hat = u_h < predictor.prob(&run.input_buf);
    let y_tilde = if a { y } else { y_hat };
    let r = reward(y, a, env.cost())?;
    let x_next = env.transition(&ind.x, a, y)?;
    let hidden_y = if run.poison_hidden_labels && !a {
        !y
    } else {
        y
    };

    let x = std::mem::replace(&mut run.pool[idx].x, x_next.clone());
    let record = TransitionRecord {
        id: run.pool[idx].id,
        z,
        x,
        input: run.input_buf.clone(),
        a,
        y_obs: a.then_some(y),
        y_tilde,
        reward: r,
        x_next,
        pi_behavior,
        pi_policy: pi,
        delta_tilde_running: 0.0,
        delta_accepted_running: 0.0,
        oracle_delta_running: 0.0,
        hidden_y,
        t: run.step_counter,
        episode: 0,
    };
    run.resource += r;
    run.step_counter += 1;
    Ok(record)
}

/// Collects one window of `n_steps` records. Running disparities restart at
/// the beginning of the window; accepted records are appended to `memory`
/// tagged with `iteration`.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    run: &mut RunState,
    env: &EnvSpec,
    policy: &dyn Scorer,
    predictor: &dyn Scorer,
    notion: FairnessNotion,
    n_steps: usize,
    rule: ActionRule,
    memory: &mut MemoryBuffer,
    iteration: usize,
) -> Result<Vec<TransitionRecord>> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    let mut running = RunningDisparity::new(notion, env.group_count());
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let mut rec = sample_step(run, env, policy, predictor, rule)?;
        rec.episode = iteration as u64;
        running.observe(&rec);
        rec.delta_tilde_running = running.observed_delta();
        rec.delta_accepted_running = running.accepted_delta();
        rec.oracle_delta_running = running.true_delta();
        if let Some(y) = rec.y_obs {
            memory.samples.push(AcceptedSample {
                z: rec.z,
                input: rec.input.clone(),
                y,
                iteration,
            });
        }
        out.push(rec);
    }
    Ok(out)
}
