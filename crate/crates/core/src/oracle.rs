//! Exact tabular evaluator.
//!
//! A [`TabularInstance`] fixes finite per-group feature distributions, the
//! qualification model, the current policy, the predictor and a history of
//! earlier policies. [`enumerate`] sums over every `(z, x, y, a, ŷ)` outcome
//! to obtain every population quantity in closed form — disparities,
//! rejection rates, rejected-population errors, importance weights and the
//! Rényi divergence. It deliberately does not reuse the estimators in
//! [`crate::metrics`], so the two can be checked against each other.

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ipw::cumulative_accept_from_probs;
use crate::metrics::{
    check_conditions, decompose, Certificate, DisparityReport, FairnessNotion, GroupJoint,
    GroupReport,
};

pub const MAX_SUPPORT: usize = 50;
const GENERATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabularInstance {
    pub group_prior: Vec<f64>,
    /// `p_x[z][k] = P(X = k | Z = z)`.
    pub p_x: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    /// Current policy `π[K]`.
    pub policy: Vec<Vec<f64>>,
    pub predictor: Vec<Vec<f64>>,
    /// Earlier policies `π[1..K−1]`, each indexed `[z][k]`.
    pub history: Vec<Vec<Vec<f64>>>,
}

impl TabularInstance {
    pub fn groups(&self) -> usize {
        self.group_prior.len()
    }

    pub fn support(&self) -> usize {
        self.p_x.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups();
        if g < 2 {
            return Err(Error::Config(
                "tabular instance needs at least two groups".into(),
            ));
        }
        let n = self.support();
        if n == 0 || n > MAX_SUPPORT {
            return Err(Error::Config(format!(
                "support size {n} outside 1..={MAX_SUPPORT}"
            )));
        }
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if (self.group_prior.iter().sum::<f64>() - 1.0).abs() > 1e-12
            || !self.group_prior.iter().all(|p| prob(*p))
        {
            return Err(Error::Config("group prior is not a distribution".into()));
        }
        let tables: Vec<&Vec<Vec<f64>>> = [&self.p_x, &self.alpha, &self.policy, &self.predictor]
            .into_iter()
            .chain(self.history.iter())
            .collect();
        for t in tables {
            if t.len() != g
                || t.iter()
                    .any(|r| r.len() != n || !r.iter().all(|v| prob(*v)))
            {
                return Err(Error::Config("table shape or range mismatch".into()));
            }
        }
        for (z, row) in self.p_x.iter().enumerate() {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("p_x row {z} is not normalized")));
            }
        }
        Ok(())
    }

    /// `P(A[1:K] = 1 | x, z)` using the full history plus the current policy.
    pub fn cumulative_accept(&self, z: usize, k: usize) -> f64 {
        let probs: Vec<f64> = self
            .history
            .iter()
            .map(|h| h[z][k])
            .chain([self.policy[z][k]])
            .collect();
        cumulative_accept_from_probs(&probs)
    }
}

/// Exact population quantities for one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleGroup {
    pub mu: Option<f64>,
    pub mu_tilde: Option<f64>,
    pub mu_accepted: Option<f64>,
    pub r: f64,
    pub eps: Option<f64>,
    pub phi_tilde: f64,
    pub kappa: Option<f64>,
    /// `a[1:K] = P(A[1:K]=1 | Z=i)`.
    pub accept_cum: f64,
    pub d_a: Vec<f64>,
    pub d_r: Vec<f64>,
    pub w: Vec<f64>,
    /// `E_{D_A}[w]`.
    pub mean_w: f64,
    pub d2: f64,
    /// `E_{D_R}[φ − α]`, an independent route to `ε`.
    pub eps_via_weights: Option<f64>,
    pub joint: [[[f64; 2]; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub notion: FairnessNotion,
    pub delta: Option<f64>,
    pub delta_tilde: Option<f64>,
    pub delta_accepted: Option<f64>,
    /// `Δ̃` rebuilt from `Δ`, `r`, `ε` (and `κ`) by the decomposition formula.
    pub delta_tilde_decomposed: Option<f64>,
    pub groups: Vec<OracleGroup>,
    /// Equality of opportunity: `max rε/φ̃`.
    pub v: Option<f64>,
    /// Set when some `P(Ỹ=1 | Z=i) = 0` under equality of opportunity.
    pub kappa_undefined: bool,
}

fn gap(u: &[Option<f64>]) -> Option<f64> {
    let u: Option<Vec<f64>> = u.iter().cloned().collect();
    let u = u?;
    if u.len() == 2 {
        return Some(u[1] - u[0]);
    }
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(max - min)
}

fn bern(p: f64, v: usize) -> f64 {
    if v == 1 {
        p
    } else {
        1.0 - p
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Full enumeration over `(x, y, a, ŷ)` per group.
pub fn enumerate(inst: &TabularInstance, notion: FairnessNotion) -> Result<OracleReport> {
    inst.validate()?;
    let n = inst.support();
    let mut groups = Vec::with_capacity(inst.groups());
    for z in 0..inst.groups() {
        // raw outcome sums
        let (mut u_num, mut u_den) = (0.0, 0.0);
        let (mut ut_num, mut ut_den) = (0.0, 0.0);
        let (mut ua_num, mut ua_den) = (0.0, 0.0);
        let (mut rej, mut rej_err, mut phi_tilde) = (0.0, 0.0, 0.0);
        let mut joint = [[[0.0; 2]; 2]; 2];
        for k in 0..n {
            let px = inst.p_x[z][k];
            for y in 0..2 {
                for a in 0..2 {
                    for yh in 0..2 {
                        let p = px
                            * bern(inst.alpha[z][k], y)
                            * bern(inst.policy[z][k], a)
                            * bern(inst.predictor[z][k], yh);
                        if p == 0.0 {
                            continue;
                        }
                        let yt = if a == 1 { y } else { yh };
                        joint[a][y][yt] += p;
                        if a == 0 {
                            rej += p;
                            rej_err += p * (yh as f64 - y as f64);
                        }
                        phi_tilde += p * yt as f64;
                        match notion {
                            FairnessNotion::QualificationParity => {
                                u_num += p * y as f64;
                                u_den += p;
                                ut_num += p * yt as f64;
                                ut_den += p;
                                if a == 1 {
                                    ua_num += p * y as f64;
                                    ua_den += p;
                                }
                            }
                            FairnessNotion::AccuracyParity => {
                                u_num += p * (y == a) as u8 as f64;
                                u_den += p;
                                ut_num += p * (yt == a) as u8 as f64;
                                ut_den += p;
                                if a == 1 {
                                    ua_num += p * (y == a) as u8 as f64;
                                    ua_den += p;
                                }
                            }
                            FairnessNotion::EqualityOfOpportunity => {
                                if y == 1 {
                                    u_num += p * a as f64;
                                    u_den += p;
                                }
                                if yt == 1 {
                                    ut_num += p * a as f64;
                                    ut_den += p;
                                }
                                if a == 1 {
                                    ua_num += p * a as f64;
                                    ua_den += p;
                                }
                            }
                        }
                    }
                }
            }
        }
        let eps = ratio(rej_err, rej);
        let kappa = (notion == FairnessNotion::EqualityOfOpportunity && phi_tilde > 0.0)
            .then(|| 1.0 - rej * eps.unwrap_or(0.0) / phi_tilde);

        // importance weights
        let cum: Vec<f64> = (0..n).map(|k| inst.cumulative_accept(z, k)).collect();
        let accept_cum: f64 = (0..n).map(|k| inst.p_x[z][k] * cum[k]).sum();
        let r_pol: f64 = (0..n)
            .map(|k| inst.p_x[z][k] * (1.0 - inst.policy[z][k]))
            .sum();
        let d_a: Vec<f64> = (0..n)
            .map(|k| {
                if accept_cum > 0.0 {
                    inst.p_x[z][k] * cum[k] / accept_cum
                } else {
                    0.0
                }
            })
            .collect();
        let d_r: Vec<f64> = (0..n)
            .map(|k| {
                if r_pol > 0.0 {
                    inst.p_x[z][k] * (1.0 - inst.policy[z][k]) / r_pol
                } else {
                    0.0
                }
            })
            .collect();
        let w: Vec<f64> = (0..n)
            .map(|k| if d_a[k] > 0.0 { d_r[k] / d_a[k] } else { 0.0 })
            .collect();
        let mean_w: f64 = (0..n).map(|k| d_a[k] * w[k]).sum();
        let d2: f64 = (0..n).map(|k| d_a[k] * w[k] * w[k]).sum();
        let eps_via_weights = (r_pol > 0.0).then(|| {
            (0..n)
                .map(|k| d_r[k] * (inst.predictor[z][k] - inst.alpha[z][k]))
                .sum()
        });

        groups.push(OracleGroup {
            mu: ratio(u_num, u_den),
            mu_tilde: ratio(ut_num, ut_den),
            mu_accepted: ratio(ua_num, ua_den),
            r: rej,
            eps,
            phi_tilde,
            kappa,
            accept_cum,
            d_a,
            d_r,
            w,
            mean_w,
            d2,
            eps_via_weights,
            joint,
        });
    }

    let mu: Vec<Option<f64>> = groups.iter().map(|g| g.mu).collect();
    let mu_tilde: Vec<Option<f64>> = groups.iter().map(|g| g.mu_tilde).collect();
    let delta = gap(&mu);
    let delta_tilde = gap(&mu_tilde);
    let delta_accepted = if notion == FairnessNotion::EqualityOfOpportunity {
        Some(0.0)
    } else {
        gap(&groups.iter().map(|g| g.mu_accepted).collect::<Vec<_>>())
    };
    let kappa_undefined = notion == FairnessNotion::EqualityOfOpportunity
        && groups.iter().any(|g| g.phi_tilde <= 0.0);
    let bias: Vec<f64> = groups.iter().map(|g| g.r * g.eps.unwrap_or(0.0)).collect();
    let delta_tilde_decomposed = match notion {
        FairnessNotion::QualificationParity | FairnessNotion::AccuracyParity => {
            let sign = if notion == FairnessNotion::QualificationParity {
                1.0
            } else {
                -1.0
            };
            if inst.groups() == 2 {
                delta.map(|d| d + sign * (bias[1] - bias[0]))
            } else {
                gap(&groups
                    .iter()
                    .zip(&bias)
                    .map(|(g, b)| g.mu.map(|m| m + sign * b))
                    .collect::<Vec<_>>())
            }
        }
        FairnessNotion::EqualityOfOpportunity => gap(&groups
            .iter()
            .map(|g| g.mu.zip(g.kappa).map(|(m, k)| m * k))
            .collect::<Vec<_>>()),
    };
    let v = (notion == FairnessNotion::EqualityOfOpportunity && !kappa_undefined).then(|| {
        groups
            .iter()
            .zip(&bias)
            .map(|(g, b)| b / g.phi_tilde)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(OracleReport {
        notion,
        delta,
        delta_tilde,
        delta_accepted,
        delta_tilde_decomposed,
        groups,
        v,
        kappa_undefined,
    })
}

impl OracleReport {
    /// Per-group joints in the layout used by [`crate::metrics::decompose`].
    pub fn joints(&self) -> Vec<GroupJoint> {
        self.groups
            .iter()
            .map(|g| GroupJoint { mass: g.joint })
            .collect()
    }

    /// Converts to a metrics report carrying the exact errors. In bound mode
    /// each `ε̄` is supplied by the caller.
    pub fn to_disparity_report(&self, eps_bar: Option<&[f64]>) -> Result<DisparityReport> {
        let delta_tilde = self
            .delta_tilde
            .ok_or_else(|| Error::cell("observed conditioning cell"))?;
        let groups = self
            .groups
            .iter()
            .enumerate()
            .map(|(i, g)| GroupReport {
                r: g.r,
                eps: g.eps,
                eps_bar: eps_bar.map(|b| b[i]),
                phi_tilde: g.phi_tilde,
                kappa: g.kappa,
                d2: Some(g.d2),
                mu: g.mu,
                mu_tilde: g.mu_tilde,
                ..Default::default()
            })
            .collect();
        Ok(DisparityReport {
            notion: self.notion,
            delta_true: self.delta,
            delta_accepted: self.delta_accepted.unwrap_or(f64::NAN),
            delta_observed: delta_tilde,
            groups,
            v: self.v,
            decomposition_residual: None,
        })
    }
}

// ── Random instances ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    None,
    /// Every point keeps a cumulative acceptance probability of at least 0.05.
    Overlap,
    /// Groups are perturbations of one another of magnitude `scale`, so
    /// that observed disparities and bias terms are small.
    NearFair {
        scale: f64,
    },
    /// Qualification parity with `Δ^{A=1} = 0` but `|Δ| > 0.05`.
    Prop1Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceShape {
    pub groups: usize,
    pub support: usize,
    /// Number of earlier policies.
    pub history: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            groups: 2,
            support: 6,
            history: 2,
        }
    }
}

fn random_dist<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    let mut d: Vec<f64> = raw.iter().map(|v| v / s).collect();
    // push the rounding residue into the first entry
    let resid = 1.0 - d.iter().sum::<f64>();
    d[0] += resid;
    d
}

fn random_probs<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn perturb<R: Rng + ?Sized>(rng: &mut R, v: &[f64], scale: f64, lo: f64, hi: f64) -> Vec<f64> {
    v.iter()
        .map(|x| (x + rng.random_range(-scale..=scale)).clamp(lo, hi))
        .collect()
}

fn random_unconstrained<R: Rng + ?Sized>(
    rng: &mut R,
    shape: InstanceShape,
    overlap: bool,
) -> TabularInstance {
    let g = shape.groups;
    let n = shape.support;
    let plo = if overlap { 0.05 } else { 0.0 };
    let prior = random_dist(rng, g);
    TabularInstance {
        group_prior: prior,
        p_x: (0..g).map(|_| random_dist(rng, n)).collect(),
        alpha: (0..g).map(|_| random_probs(rng, n, 0.0, 1.0)).collect(),
        policy: (0..g).map(|_| random_probs(rng, n, plo, 1.0)).collect(),
        predictor: (0..g).map(|_| random_probs(rng, n, 0.0, 1.0)).collect(),
        history: (0..shape.history)
            .map(|_| (0..g).map(|_| random_probs(rng, n, plo, 1.0)).collect())
            .collect(),
    }
}

fn near_fair<R: Rng + ?Sized>(rng: &mut R, shape: InstanceShape, scale: f64) -> TabularInstance {
    let n = shape.support;
    let base = random_unconstrained(rng, InstanceShape { groups: 1, ..shape }, true);
    let g = shape.groups;
    let mut inst = TabularInstance {
        group_prior: random_dist(rng, g),
        p_x: Vec::new(),
        alpha: Vec::new(),
        policy: Vec::new(),
        predictor: Vec::new(),
        history: vec![Vec::new(); shape.history],
    };
    // predictors close to the truth keep the bias terms small
    let pred_base = perturb(rng, &base.alpha[0], scale, 0.0, 1.0);
    for _ in 0..g {
        let px = perturb(rng, &base.p_x[0], scale * 0.2, 1e-3, 1.0);
        let s: f64 = px.iter().sum();
        let mut px: Vec<f64> = px.iter().map(|v| v / s).collect();
        let resid = 1.0 - px.iter().sum::<f64>();
        px[0] += resid;
        inst.p_x.push(px);
        inst.alpha
            .push(perturb(rng, &base.alpha[0], scale, 0.0, 1.0));
        inst.policy
            .push(perturb(rng, &base.policy[0], scale, 0.05, 1.0));
        inst.predictor
            .push(perturb(rng, &pred_base, scale, 0.0, 1.0));
        for (h, hb) in inst.history.iter_mut().zip(&base.history) {
            h.push(perturb(rng, &hb[0], scale, 0.05, 1.0));
        }
    }
    debug_assert_eq!(inst.support(), n);
    inst
}

/// Rescales group 1's policy onto two support points so that the accepted
/// positive rate matches group 0's.
fn prop1_counterexample<R: Rng + ?Sized>(
    rng: &mut R,
    shape: InstanceShape,
) -> Option<TabularInstance> {
    let mut inst = random_unconstrained(rng, InstanceShape { groups: 2, ..shape }, false);
    let prec = |inst: &TabularInstance, z: usize| -> f64 {
        let n = inst.support();
        let num: f64 = (0..n)
            .map(|k| inst.p_x[z][k] * inst.policy[z][k] * inst.alpha[z][k])
            .sum();
        let den: f64 = (0..n).map(|k| inst.p_x[z][k] * inst.policy[z][k]).sum();
        num / den
    };
    let target = prec(&inst, 0);
    let a1 = &inst.alpha[1];
    let lo = (0..a1.len())
        .filter(|&k| a1[k] < target)
        .min_by(|&i, &j| a1[i].total_cmp(&a1[j]))?;
    let hi = (0..a1.len())
        .filter(|&k| a1[k] > target)
        .max_by(|&i, &j| a1[i].total_cmp(&a1[j]))?;
    let (p_lo, p_hi) = (inst.p_x[1][lo], inst.p_x[1][hi]);
    // accepted precision (p_lo·α_lo·π_lo + p_hi·α_hi·π_hi)/(p_lo·π_lo + p_hi·π_hi) = target
    let q = p_lo * (target - a1[lo]) / (p_hi * (a1[hi] - target));
    let (pi_lo, pi_hi) = if q <= 1.0 { (1.0, q) } else { (1.0 / q, 1.0) };
    let mut pol = vec![0.0; a1.len()];
    pol[lo] = pi_lo;
    pol[hi] = pi_hi;
    inst.policy[1] = pol;
    let rep = enumerate(&inst, FairnessNotion::QualificationParity).ok()?;
    let acc = rep.delta_accepted?;
    let delta = rep.delta?;
    (acc.abs() < 1e-12 && delta.abs() > 0.05).then_some(inst)
}

/// Draws an instance satisfying `constraint`.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    shape: InstanceShape,
    constraint: Constraint,
) -> Result<TabularInstance> {
    if shape.groups < 2 || shape.support == 0 || shape.support > MAX_SUPPORT {
        return Err(Error::Generation(format!("infeasible shape {shape:?}")));
    }
    for _ in 0..GENERATION_ATTEMPTS {
        let inst = match constraint {
            Constraint::None => Some(random_unconstrained(rng, shape, false)),
            Constraint::Overlap => Some(random_unconstrained(rng, shape, true)),
            Constraint::NearFair { scale } => Some(near_fair(rng, shape, scale)),
            Constraint::Prop1Counterexample => {
                if shape.groups != 2 {
                    return Err(Error::Generation(
                        "the counterexample recipe is binary".into(),
                    ));
                }
                prop1_counterexample(rng, shape)
            }
        };
        if let Some(inst) = inst {
            if inst.validate().is_ok() {
                return Ok(inst);
            }
        }
    }
    Err(Error::Generation(format!(
        "no instance satisfying {constraint:?} after {GENERATION_ATTEMPTS} attempts"
    )))
}

// ── Theorem suite ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    pub max_error: f64,
}

impl SuiteResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checked: 0,
            failures: 0,
            max_error: 0.0,
        }
    }

    fn record(&mut self, ok: bool, err: f64) {
        self.checked += 1;
        if !ok {
            self.failures += 1;
        }
        if err.is_finite() {
            self.max_error = self.max_error.max(err);
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures == 0
    }
}

/// Decomposition identities: the oracle's rebuilt `Δ̃` and the metrics
/// module's decomposition both match the directly enumerated `Δ̃`.
pub fn check_decomposition<R: Rng + ?Sized>(
    rng: &mut R,
    instances: usize,
    shape: InstanceShape,
) -> Result<SuiteResult> {
    let mut res = SuiteResult::new(&format!(
        "decomposition identities ({} groups)",
        shape.groups
    ));
    for notion in FairnessNotion::ALL {
        let mut done = 0;
        while done < instances {
            let inst = random_instance(rng, shape, Constraint::None)?;
            let rep = enumerate(&inst, notion)?;
            let (Some(dt), Some(dd)) = (rep.delta_tilde, rep.delta_tilde_decomposed) else {
                continue;
            };
            let m = decompose(&rep.joints(), notion)?;
            let err = (dt - dd)
                .abs()
                .max((m.delta_observed - dt).abs())
                .max(m.decomposition_residual.unwrap().abs());
            // multi-group qualification/accuracy parity only admits inequalities
            let ok = if shape.groups > 2 && notion != FairnessNotion::EqualityOfOpportunity {
                let bias: Vec<f64> = rep
                    .groups
                    .iter()
                    .map(|g| g.r * g.eps.unwrap_or(0.0))
                    .collect();
                let spread = bias.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - bias.iter().cloned().fold(f64::INFINITY, f64::min);
                (dt - rep.delta.unwrap()).abs() <= spread + 1e-12
                    && (m.delta_observed - dt).abs() <= 1e-12
            } else {
                err <= 1e-12
            };
            res.record(
                ok,
                if shape.groups > 2 && notion != FairnessNotion::EqualityOfOpportunity {
                    (m.delta_observed - dt).abs()
                } else {
                    err
                },
            );
            done += 1;
        }
    }
    Ok(res)
}

/// Accepted-only disparity: identically zero under equality of opportunity,
/// and a qualification-parity instance with `Δ^{A=1} = 0` but `|Δ| > 0.05`.
pub fn check_accepted_only<R: Rng + ?Sized>(rng: &mut R, instances: usize) -> Result<SuiteResult> {
    let mut res = SuiteResult::new("accepted-only disparity");
    for _ in 0..instances {
        let inst = random_instance(rng, InstanceShape::default(), Constraint::None)?;
        let rep = enumerate(&inst, FairnessNotion::EqualityOfOpportunity)?;
        let acc = rep.delta_accepted.unwrap();
        res.record(acc == 0.0, acc.abs());
    }
    let inst = random_instance(
        rng,
        InstanceShape::default(),
        Constraint::Prop1Counterexample,
    )?;
    let rep = enumerate(&inst, FairnessNotion::QualificationParity)?;
    let (acc, delta) = (rep.delta_accepted.unwrap(), rep.delta.unwrap());
    res.record(acc.abs() <= 1e-12 && delta.abs() > 0.05, acc.abs());
    Ok(res)
}

/// Soundness of the sufficient conditions: among instances whose
/// certificate holds, `|Δ| ≤ ω` always. Returns the suite result and the
/// number of certified instances found per ω.
pub fn check_soundness<R: Rng + ?Sized>(
    rng: &mut R,
    certified_per_omega: usize,
    mode: Certificate,
    shape: InstanceShape,
) -> Result<SuiteResult> {
    let label = match mode {
        Certificate::TrueError => "sufficient conditions (true error)",
        Certificate::Bound => "sufficient conditions (error bound)",
    };
    let mut res = SuiteResult::new(&format!("{label}, {} groups", shape.groups));
    for omega in [0.01, 0.05, 0.1] {
        for notion in FairnessNotion::ALL {
            let mut certified = 0;
            let mut attempts = 0;
            while certified < certified_per_omega {
                attempts += 1;
                if attempts > 2000 * certified_per_omega {
                    return Err(Error::Generation(format!(
                        "only {certified} certified instances for ω={omega}, {notion}"
                    )));
                }
                let scale = omega * rng.random_range(0.05..1.0);
                let inst = random_instance(rng, shape, Constraint::NearFair { scale })?;
                let rep = enumerate(&inst, notion)?;
                if rep.delta.is_none() || rep.delta_tilde.is_none() || rep.kappa_undefined {
                    continue;
                }
                let eps_bar: Vec<f64> = rep
                    .groups
                    .iter()
                    .map(|g| g.eps.unwrap_or(0.0).abs() + rng.random_range(0.0..omega * 0.05))
                    .collect();
                let report = rep.to_disparity_report(Some(&eps_bar))?;
                let verdict = check_conditions(&report, omega, mode);
                if !verdict.overall_ok {
                    continue;
                }
                certified += 1;
                let delta = rep.delta.unwrap().abs();
                res.record(delta <= omega + 1e-12, delta / omega);
            }
        }
    }
    Ok(res)
}

/// Importance-weight identities: `E_{D_A}[w] = 1`, `d₂ ≥ 1` and the
/// weighted accepted error equals the rejected error.
pub fn check_weights<R: Rng + ?Sized>(rng: &mut R, instances: usize) -> Result<SuiteResult> {
    let mut res = SuiteResult::new("importance-weight identities");
    for _ in 0..instances {
        let inst = random_instance(rng, InstanceShape::default(), Constraint::Overlap)?;
        let rep = enumerate(&inst, FairnessNotion::QualificationParity)?;
        for g in &rep.groups {
            if g.r == 0.0 {
                continue;
            }
            let e1 = (g.mean_w - 1.0).abs();
            let e2 = (g.eps_via_weights.unwrap() - g.eps.unwrap()).abs();
            let ok = e1 <= 1e-12 && e2 <= 1e-12 && g.d2 >= 1.0 - 1e-12;
            res.record(ok, e1.max(e2));
        }
    }
    Ok(res)
}

/// Runs every check and returns one row per suite.
pub fn verify_suite<R: Rng + ?Sized>(rng: &mut R, instances: usize) -> Result<Vec<SuiteResult>> {
    let three = InstanceShape {
        groups: 3,
        ..InstanceShape::default()
    };
    Ok(vec![
        check_decomposition(rng, instances, InstanceShape::default())?,
        check_decomposition(rng, instances, three)?,
        check_accepted_only(rng, instances)?,
        check_soundness(
            rng,
            instances,
            Certificate::TrueError,
            InstanceShape::default(),
        )?,
        check_soundness(rng, instances, Certificate::Bound, InstanceShape::default())?,
        check_soundness(rng, instances, Certificate::Bound, three)?,
        check_weights(rng, instances)?,
    ])
}

/// [`verify_suite`] driven by a seeded generator.
pub fn verify_seeded(seed: u64, instances: usize) -> Result<Vec<SuiteResult>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    verify_suite(&mut rng, instances)
}
