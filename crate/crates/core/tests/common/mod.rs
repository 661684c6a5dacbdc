//! Checks shared by the integration tests and the acceptance runner. Each
//! returns plain counts so that callers decide how to report them.

#![allow(dead_code)]

use ltfair_core::approx::{Architecture, ForwardCache, Init, Mlp};
use ltfair_core::envs::builtin;
use ltfair_core::learn::{
    ppo_clip_terms, renyi_terms, value_mse_terms, weighted_bce_terms, Algorithm, IterationMetrics,
    TrainConfig, Trainer,
};
use ltfair_core::metrics::{ipw_error_estimate, FairnessNotion};
use ltfair_core::oracle::{enumerate, random_instance, Constraint, InstanceShape};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ── Finite-difference gradients ─────────────────────────────────────────────

pub const ARCHITECTURES: [Architecture; 3] = [
    Architecture::Linear,
    Architecture::TanhMlp,
    Architecture::ReluMlp,
];
pub const LOSSES: [&str; 4] = ["ppo_clip", "renyi", "weighted_bce", "value_mse"];

const FD_STEP: f64 = 1e-6;
const FD_INPUT: usize = 4;
const FD_BATCH: usize = 16;
const FD_COORDS: usize = 150;

#[derive(Debug, Default, Clone)]
pub struct GradientTally {
    pub checked: usize,
    pub within: usize,
    pub worst_fraction: f64,
    pub worst_case: String,
}

impl GradientTally {
    pub fn fraction(&self) -> f64 {
        self.within as f64 / self.checked.max(1) as f64
    }
}

/// Random data for one loss: returns a closure from logits to `(loss, dlogits)`.
fn loss_fn(name: &str, rng: &mut ChaCha8Rng) -> Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)> {
    let n = FD_BATCH;
    match name {
        "ppo_clip" => {
            let actions: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let old: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
            let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            Box::new(move |z| {
                ppo_clip_terms(z, &actions, &old, &adv, 0.2).expect("valid behavior probabilities")
            })
        }
        "renyi" => {
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.9)).collect();
            let coef: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            Box::new(move |z| {
                let (l, d, _) = renyi_terms(z, &q, &coef);
                (l, d)
            })
        }
        "weighted_bce" => {
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let groups: Vec<usize> = (0..n).map(|j| j % 2).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            Box::new(move |z| weighted_bce_terms(z, &labels, &groups, &w))
        }
        "value_mse" => {
            let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            Box::new(move |z| value_mse_terms(z, &targets, 0.5))
        }
        other => panic!("unknown loss {other}"),
    }
}

fn loss_at(
    net: &Mlp,
    inputs: &[f64],
    f: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    cache: &mut ForwardCache,
) -> f64 {
    net.forward_batch(inputs, FD_BATCH, cache)
        .expect("well-formed batch");
    f(cache.logits()).0
}

/// Central finite differences against the analytic gradient on a random
/// subset of coordinates. A coordinate agrees when its relative error is at
/// most `tol`, or when both derivatives are below `1e-8` in magnitude.
pub fn gradient_check(arch: Architecture, loss: &str, seed: u64, tol: f64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(arch, FD_INPUT, Init::FanInUniform, &mut rng);
    let inputs: Vec<f64> = (0..FD_BATCH * FD_INPUT)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let f = loss_fn(loss, &mut rng);
    let (_, analytic) = net.grad(&inputs, FD_BATCH, |z| f(z)).expect("finite loss");
    let p = net.param_count();
    let mut cache = ForwardCache::default();
    let coords: Vec<usize> = if p <= FD_COORDS {
        (0..p).collect()
    } else {
        (0..FD_COORDS).map(|_| rng.random_range(0..p)).collect()
    };
    let mut within = 0;
    for &i in &coords {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + FD_STEP;
        let up = loss_at(&net, &inputs, &*f, &mut cache);
        net.params_mut()[i] = orig - FD_STEP;
        let down = loss_at(&net, &inputs, &*f, &mut cache);
        net.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let scale = a.abs().max(fd.abs());
        if scale < 1e-8 || (a - fd).abs() / scale <= tol {
            within += 1;
        }
    }
    (coords.len(), within)
}

pub fn gradient_suite(seeds: u64, tol: f64) -> GradientTally {
    let mut tally = GradientTally {
        worst_fraction: 1.0,
        ..Default::default()
    };
    for arch in ARCHITECTURES {
        for loss in LOSSES {
            let (mut checked, mut within) = (0, 0);
            for seed in 0..seeds {
                let (c, w) = gradient_check(arch, loss, seed, tol);
                checked += c;
                within += w;
            }
            let frac = within as f64 / checked as f64;
            if frac < tally.worst_fraction {
                tally.worst_fraction = frac;
                tally.worst_case = format!("{}/{loss}", arch.name());
            }
            tally.checked += checked;
            tally.within += within;
        }
    }
    tally
}

// ── Monte-Carlo importance weighting ────────────────────────────────────────

#[derive(Debug, Default, Clone)]
pub struct MonteCarloTally {
    pub groups_checked: usize,
    pub within_3se: usize,
    /// Largest `|ε̂ − ε| / SE`.
    pub max_z: f64,
}

/// Draws `samples` accepted records per group from the historical acceptance
/// distribution of random tabular instances and compares the IPW error
/// estimate with the enumerated rejected-population error. The standard
/// error is the delta-method value computed exactly from the instance.
pub fn ipw_monte_carlo(instances: usize, samples: usize, seed: u64) -> MonteCarloTally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = MonteCarloTally::default();
    let mut done = 0;
    while done < instances {
        let inst = random_instance(&mut rng, InstanceShape::default(), Constraint::Overlap)
            .expect("instance");
        let rep = enumerate(&inst, FairnessNotion::QualificationParity).expect("enumeration");
        if rep.groups.iter().any(|g| g.r == 0.0 || g.eps.is_none()) {
            continue;
        }
        done += 1;
        for (z, g) in rep.groups.iter().enumerate() {
            let eps = g.eps.expect("checked above");
            let dist = WeightedIndex::new(&g.d_a).expect("accepted distribution");
            let mut draws = Vec::with_capacity(samples);
            let mut weights = Vec::with_capacity(samples);
            for _ in 0..samples {
                let k = dist.sample(&mut rng);
                let y = rng.random_bool(inst.alpha[z][k]);
                draws.push((inst.predictor[z][k], y));
                weights.push(g.w[k]);
            }
            let est = ipw_error_estimate(&draws, &weights).expect("non-empty sample");
            let var: f64 = (0..inst.support())
                .map(|k| {
                    let (phi, a) = (inst.predictor[z][k], inst.alpha[z][k]);
                    let sq = a * (phi - 1.0 - eps).powi(2) + (1.0 - a) * (phi - eps).powi(2);
                    g.d_a[k] * g.w[k] * g.w[k] * sq
                })
                .sum();
            let se = (var / samples as f64).sqrt();
            let zscore = (est - eps).abs() / se;
            tally.groups_checked += 1;
            if zscore <= 3.0 {
                tally.within_3se += 1;
            }
            tally.max_z = tally.max_z.max(zscore);
        }
    }
    tally
}

// ── Selective-labels firewall ───────────────────────────────────────────────

/// Everything a non-oracle learner may legitimately depend on, captured per
/// iteration: parameter bits and the observable metrics.
#[derive(Debug, PartialEq)]
pub struct ObservableTrace {
    pub params: Vec<Vec<u64>>,
    pub observables: Vec<Vec<u64>>,
}

fn observables(m: &IterationMetrics) -> Vec<u64> {
    let mut v = vec![
        m.reward_window,
        m.resource,
        m.delta_observed,
        m.delta_accepted,
        m.renyi_loss,
        m.policy_loss,
    ];
    v.extend([
        m.value_loss,
        m.predictor_loss,
        m.max_weight,
        m.min_cum_accept,
    ]);
    for g in &m.groups {
        v.extend([g.r, g.eps_hat, g.eps_bar, g.d2, g.phi_tilde]);
    }
    v.into_iter().map(f64::to_bits).collect()
}

pub fn small_config(alg: Algorithm, notion: FairnessNotion) -> TrainConfig {
    let mut cfg = TrainConfig::new(alg, notion);
    cfg.total_steps = 1536;
    cfg.n_steps = 512;
    cfg.ppo_epochs = 2;
    cfg.pool_size = 300;
    cfg.beta1 = 2.0;
    cfg.beta2 = 0.5;
    cfg.seed = 11;
    cfg
}

pub fn observable_trace(cfg: &TrainConfig, env: &str, poison: bool) -> ObservableTrace {
    let mut t =
        Trainer::new(cfg.clone(), builtin(env).expect("built-in env")).expect("valid config");
    t.set_poison_hidden_labels(poison);
    let mut trace = ObservableTrace {
        params: Vec::new(),
        observables: Vec::new(),
    };
    while !t.is_done() {
        let m = t.step().expect("training step");
        let mut bits: Vec<u64> = t.policy().params().iter().map(|p| p.to_bits()).collect();
        bits.extend(t.value().params().iter().map(|p| p.to_bits()));
        bits.extend(t.predictor().params().iter().map(|p| p.to_bits()));
        trace.params.push(bits);
        trace.observables.push(observables(&m));
    }
    trace
}

/// `(algorithm, identical under poisoning)` for every algorithm.
pub fn firewall_check(env: &str, notion: FairnessNotion) -> Vec<(Algorithm, bool)> {
    Algorithm::ALL
        .iter()
        .map(|&alg| {
            let cfg = small_config(alg, notion);
            (
                alg,
                observable_trace(&cfg, env, false) == observable_trace(&cfg, env, true),
            )
        })
        .collect()
}
