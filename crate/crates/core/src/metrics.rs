//! Disparity estimators and the certificate machinery.
//!
//! Three fairness notions are supported, each defining a per-group utility
//! `μⁱ`:
//!
//! | notion | utility |
//! |---|---|
//! | qualification parity | `E[Y | Z=i]` |
//! | accuracy parity | `E[1{Y=A} | Z=i]` |
//! | equality of opportunity | `E[A | Y=1, Z=i]` |
//!
//! The disparity is `μ¹ − μ⁰` for two groups and `max μ − min μ` otherwise.
//! Replacing `Y` by the imputed label `Ỹ = A·Y + (1−A)·Ŷ` gives the observed
//! disparity `Δ̃`; restricting to accepted individuals gives `Δ^{A=1}`.
//!
//! [`decompose`] splits `Δ̃` into the true disparity plus an imputation-bias
//! term driven by the rejection rate `rⁱ` and the signed predictor error on
//! the rejected population `εⁱ = E[Ŷ − Y | A=0, Z=i]`; [`check_conditions`]
//! evaluates the sufficient conditions under which `|Δ̃|` small certifies
//! `|Δ| ≤ ω`, either with the true `ε` or with an error bound `ε̄` from
//! [`error_bound`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmdp::TransitionRecord;

/// Default confidence parameter of the error bound.
pub const DEFAULT_DELTA_CONF: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessNotion {
    #[serde(alias = "qp")]
    QualificationParity,
    #[serde(alias = "ap")]
    AccuracyParity,
    #[serde(alias = "eo")]
    EqualityOfOpportunity,
}

impl FairnessNotion {
    pub const ALL: [FairnessNotion; 3] = [
        Self::QualificationParity,
        Self::AccuracyParity,
        Self::EqualityOfOpportunity,
    ];

    pub fn short(self) -> &'static str {
        match self {
            Self::QualificationParity => "qp",
            Self::AccuracyParity => "ap",
            Self::EqualityOfOpportunity => "eo",
        }
    }
}

impl fmt::Display for FairnessNotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for FairnessNotion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qp" | "qualification_parity" => Ok(Self::QualificationParity),
            "ap" | "accuracy_parity" => Ok(Self::AccuracyParity),
            "eo" | "equality_of_opportunity" => Ok(Self::EqualityOfOpportunity),
            other => Err(Error::Config(format!("unknown fairness notion {other:?}"))),
        }
    }
}

// ── Tallies and utilities ───────────────────────────────────────────────────

/// One decision outcome with whichever label the caller wants to score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub group: usize,
    pub accepted: bool,
    pub label: bool,
}

/// Per-group (possibly weighted) counts sufficient for every notion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupTally {
    pub n: f64,
    pub accepted: f64,
    pub positive: f64,
    pub accepted_positive: f64,
}

impl GroupTally {
    pub fn add(&mut self, accepted: bool, label: bool, weight: f64) {
        self.n += weight;
        if accepted {
            self.accepted += weight;
        }
        if label {
            self.positive += weight;
        }
        if accepted && label {
            self.accepted_positive += weight;
        }
    }

    /// Mass with `1{label = accepted}`.
    pub fn correct(&self) -> f64 {
        self.n - self.accepted - self.positive + 2.0 * self.accepted_positive
    }

    /// Population utility; `None` when the conditioning cell is empty.
    pub fn utility(&self, notion: FairnessNotion) -> Option<f64> {
        match notion {
            FairnessNotion::QualificationParity => (self.n > 0.0).then(|| self.positive / self.n),
            FairnessNotion::AccuracyParity => (self.n > 0.0).then(|| self.correct() / self.n),
            FairnessNotion::EqualityOfOpportunity => {
                (self.positive > 0.0).then(|| self.accepted_positive / self.positive)
            }
        }
    }

    /// Utility restricted to accepted individuals. Under equality of
    /// opportunity every accepted individual has `A = 1`, so the restricted
    /// utility is 1 whenever it is defined and the disparity vanishes.
    pub fn accepted_utility(&self, notion: FairnessNotion) -> Option<f64> {
        match notion {
            FairnessNotion::QualificationParity | FairnessNotion::AccuracyParity => {
                (self.accepted > 0.0).then(|| self.accepted_positive / self.accepted)
            }
            FairnessNotion::EqualityOfOpportunity => Some(1.0),
        }
    }

    fn empty_cell(&self, group: usize, notion: FairnessNotion) -> Error {
        match notion {
            FairnessNotion::EqualityOfOpportunity => {
                Error::cell(format!("group {group}, label = 1"))
            }
            _ => Error::cell(format!("group {group}")),
        }
    }
}

pub fn tally(outcomes: &[Outcome], groups: usize) -> Result<Vec<GroupTally>> {
    let mut t = vec![GroupTally::default(); groups];
    for o in outcomes {
        let g = t.get_mut(o.group).ok_or_else(|| {
            Error::Config(format!(
                "group {} out of range for {groups} groups",
                o.group
            ))
        })?;
        g.add(o.accepted, o.label, 1.0);
    }
    Ok(t)
}

/// `μ¹ − μ⁰` for two groups, `max − min` otherwise.
pub fn disparity_from_utilities(u: &[f64]) -> Result<f64> {
    match u.len() {
        0 | 1 => Err(Error::Config(format!(
            "disparity needs at least two groups, got {}",
            u.len()
        ))),
        2 => Ok(u[1] - u[0]),
        _ => multi_group_disparity(u),
    }
}

/// `max_i μⁱ − min_j μʲ`.
pub fn multi_group_disparity(u: &[f64]) -> Result<f64> {
    if u.len() < 2 {
        return Err(Error::Config(format!(
            "disparity needs at least two groups, got {}",
            u.len()
        )));
    }
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

pub fn disparity_of_tallies(t: &[GroupTally], notion: FairnessNotion) -> Result<f64> {
    let u = t
        .iter()
        .enumerate()
        .map(|(g, x)| x.utility(notion).ok_or_else(|| x.empty_cell(g, notion)))
        .collect::<Result<Vec<_>>>()?;
    disparity_from_utilities(&u)
}

pub fn accepted_disparity_of_tallies(t: &[GroupTally], notion: FairnessNotion) -> Result<f64> {
    if notion == FairnessNotion::EqualityOfOpportunity {
        if t.len() < 2 {
            return Err(Error::Config("disparity needs at least two groups".into()));
        }
        return Ok(0.0);
    }
    let u = t
        .iter()
        .enumerate()
        .map(|(g, x)| {
            x.accepted_utility(notion)
                .ok_or_else(|| Error::cell(format!("group {g}, accepted")))
        })
        .collect::<Result<Vec<_>>>()?;
    disparity_from_utilities(&u)
}

/// Running disparity for per-step penalties: 0 while any group still has
/// an empty conditioning cell.
pub fn running_disparity(t: &[GroupTally], notion: FairnessNotion) -> f64 {
    disparity_of_tallies(t, notion).unwrap_or(0.0)
}

pub fn running_accepted_disparity(t: &[GroupTally], notion: FairnessNotion) -> f64 {
    accepted_disparity_of_tallies(t, notion).unwrap_or(0.0)
}

pub fn disparity(outcomes: &[Outcome], groups: usize, notion: FairnessNotion) -> Result<f64> {
    disparity_of_tallies(&tally(outcomes, groups)?, notion)
}

// ── Record-level estimators ─────────────────────────────────────────────────

/// True disparity from the hidden labels (oracle / evaluation mode only).
pub fn disparity_true(
    records: &[TransitionRecord],
    groups: usize,
    notion: FairnessNotion,
) -> Result<f64> {
    let o: Vec<Outcome> = records
        .iter()
        .map(|r| Outcome {
            group: r.z,
            accepted: r.a,
            label: r.oracle_label(),
        })
        .collect();
    disparity(&o, groups, notion)
}

/// Observed disparity using imputed labels.
pub fn disparity_observed(
    records: &[TransitionRecord],
    groups: usize,
    notion: FairnessNotion,
) -> Result<f64> {
    let o: Vec<Outcome> = records
        .iter()
        .map(|r| Outcome {
            group: r.z,
            accepted: r.a,
            label: r.y_tilde,
        })
        .collect();
    disparity(&o, groups, notion)
}

/// Disparity restricted to accepted records (labels observed there).
pub fn disparity_accepted(
    records: &[TransitionRecord],
    groups: usize,
    notion: FairnessNotion,
) -> Result<f64> {
    let mut t = vec![GroupTally::default(); groups];
    for r in records {
        if let Some(y) = r.y_obs() {
            t.get_mut(r.z)
                .ok_or_else(|| Error::Config(format!("group {} out of range", r.z)))?
                .add(true, y, 1.0);
        }
    }
    accepted_disparity_of_tallies(&t, notion)
}

// ── Decomposition ───────────────────────────────────────────────────────────

/// Joint law of `(A, Y, Ỹ)` within one group: `mass[a][y][ỹ]`, summing to 1.
/// For accepted outcomes `Ỹ = Y`, so `mass[1][y][1−y]` must be 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroupJoint {
    pub mass: [[[f64; 2]; 2]; 2],
}

impl GroupJoint {
    pub fn total(&self) -> f64 {
        self.mass.iter().flatten().flatten().sum()
    }

    /// Empirical joint from records (needs the hidden labels).
    pub fn from_records(records: &[TransitionRecord], groups: usize) -> Result<Vec<GroupJoint>> {
        let mut j = vec![GroupJoint::default(); groups];
        let mut n = vec![0usize; groups];
        for r in records {
            let g = j
                .get_mut(r.z)
                .ok_or_else(|| Error::Config(format!("group {} out of range", r.z)))?;
            g.mass[r.a as usize][r.oracle_label() as usize][r.y_tilde as usize] += 1.0;
            n[r.z] += 1;
        }
        for (g, c) in j.iter_mut().zip(&n) {
            if *c == 0 {
                continue;
            }
            for v in g.mass.iter_mut().flatten().flatten() {
                *v /= *c as f64;
            }
        }
        Ok(j)
    }

    fn true_tally(&self) -> GroupTally {
        let mut t = GroupTally::default();
        for a in 0..2 {
            for y in 0..2 {
                t.add(a == 1, y == 1, self.mass[a][y][0] + self.mass[a][y][1]);
            }
        }
        t
    }

    fn observed_tally(&self) -> GroupTally {
        let mut t = GroupTally::default();
        for a in 0..2 {
            for yt in 0..2 {
                t.add(a == 1, yt == 1, self.mass[a][0][yt] + self.mass[a][1][yt]);
            }
        }
        t
    }

    /// `P(A = 0)`.
    pub fn rejection_rate(&self) -> f64 {
        self.mass[0].iter().flatten().sum()
    }

    /// `E[Ŷ − Y | A = 0]`; `None` if nobody is rejected.
    pub fn rejected_error(&self) -> Option<f64> {
        let r = self.rejection_rate();
        (r > 0.0).then(|| (self.mass[0][0][1] - self.mass[0][1][0]) / r)
    }

    /// `P(Ỹ = 1)`.
    pub fn phi_tilde(&self) -> f64 {
        (0..2)
            .flat_map(|a| (0..2).map(move |y| (a, y)))
            .map(|(a, y)| self.mass[a][y][1])
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// Rejection rate `P(A=0 | Z=i)`.
    pub r: f64,
    /// Signed error on the rejected population (oracle mode).
    pub eps: Option<f64>,
    /// IPW estimate of the error from accepted data.
    pub eps_hat: Option<f64>,
    /// Upper bound on `|ε|`.
    pub eps_bar: Option<f64>,
    /// `P(Ỹ=1 | Z=i)`.
    pub phi_tilde: f64,
    /// Equality of opportunity: `1 − r·ε/φ̃`.
    pub kappa: Option<f64>,
    /// Rényi divergence estimate `E_{D_A}[w²]`.
    pub d2: Option<f64>,
    pub n_accepted: usize,
    /// True utility (oracle mode).
    pub mu: Option<f64>,
    /// Utility under imputed labels.
    pub mu_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub notion: FairnessNotion,
    pub delta_true: Option<f64>,
    pub delta_accepted: f64,
    pub delta_observed: f64,
    pub groups: Vec<GroupReport>,
    /// Equality of opportunity only: `max_i rⁱεⁱ/φ̃ⁱ` (true mode).
    pub v: Option<f64>,
    /// `Δ̃` rebuilt from the decomposition minus `Δ̃` computed directly.
    pub decomposition_residual: Option<f64>,
}

/// Exact decomposition of the observed disparity from per-group joints.
pub fn decompose(joint: &[GroupJoint], notion: FairnessNotion) -> Result<DisparityReport> {
    if joint.len() < 2 {
        return Err(Error::Config(
            "decomposition needs at least two groups".into(),
        ));
    }
    let true_t: Vec<GroupTally> = joint.iter().map(|j| j.true_tally()).collect();
    let obs_t: Vec<GroupTally> = joint.iter().map(|j| j.observed_tally()).collect();
    let mu = true_t
        .iter()
        .enumerate()
        .map(|(g, t)| t.utility(notion).ok_or_else(|| t.empty_cell(g, notion)))
        .collect::<Result<Vec<_>>>()?;
    let mu_tilde = obs_t
        .iter()
        .enumerate()
        .map(|(g, t)| t.utility(notion).ok_or_else(|| t.empty_cell(g, notion)))
        .collect::<Result<Vec<_>>>()?;
    let delta = disparity_from_utilities(&mu)?;
    let delta_tilde = disparity_from_utilities(&mu_tilde)?;
    let delta_accepted = accepted_disparity_of_tallies(&true_t, notion).unwrap_or(f64::NAN);

    let mut groups = Vec::with_capacity(joint.len());
    // r·ε, with ε = 0 when nobody is rejected (the product is 0 either way)
    let mut bias = Vec::with_capacity(joint.len());
    for (g, j) in joint.iter().enumerate() {
        let r = j.rejection_rate();
        let eps = j.rejected_error();
        let phi_tilde = j.phi_tilde();
        let re = r * eps.unwrap_or(0.0);
        let kappa = if notion == FairnessNotion::EqualityOfOpportunity {
            if phi_tilde <= 0.0 {
                return Err(Error::Decomposition(format!(
                    "group {g}: P(Ỹ=1) = 0, κ undefined"
                )));
            }
            Some(1.0 - re / phi_tilde)
        } else {
            None
        };
        bias.push(re);
        groups.push(GroupReport {
            r,
            eps,
            phi_tilde,
            kappa,
            n_accepted: 0,
            mu: Some(mu[g]),
            mu_tilde: Some(mu_tilde[g]),
            ..Default::default()
        });
    }
    let rebuilt = match notion {
        FairnessNotion::QualificationParity | FairnessNotion::AccuracyParity => {
            let sign = if notion == FairnessNotion::QualificationParity {
                1.0
            } else {
                -1.0
            };
            let per_group: Vec<f64> = mu.iter().zip(&bias).map(|(m, b)| m + sign * b).collect();
            if joint.len() == 2 {
                delta + sign * (bias[1] - bias[0])
            } else {
                multi_group_disparity(&per_group)?
            }
        }
        FairnessNotion::EqualityOfOpportunity => {
            let per_group: Vec<f64> = mu
                .iter()
                .zip(&groups)
                .map(|(m, g)| m * g.kappa.expect("kappa set for EO"))
                .collect();
            disparity_from_utilities(&per_group)?
        }
    };
    let v = (notion == FairnessNotion::EqualityOfOpportunity).then(|| {
        bias.iter()
            .zip(&groups)
            .map(|(b, g)| b / g.phi_tilde)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(DisparityReport {
        notion,
        delta_true: Some(delta),
        delta_accepted,
        delta_observed: delta_tilde,
        groups,
        v,
        decomposition_residual: Some(rebuilt - delta_tilde),
    })
}

// ── IPW error estimate and bound ────────────────────────────────────────────

/// Self-normalized IPW estimate `Σ wⱼ (φ(xⱼ) − yⱼ) / Σ wⱼ` of the error on
/// the rejected population from accepted samples `(φ(xⱼ), yⱼ)`.
pub fn ipw_error_estimate(samples: &[(f64, bool)], weights: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoData("no accepted samples for this group".into()));
    }
    if samples.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} samples but {} weights",
            samples.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoData("importance weights sum to zero".into()));
    }
    let num: f64 = samples
        .iter()
        .zip(weights)
        .map(|((p, y), w)| w * (p - if *y { 1.0 } else { 0.0 }))
        .sum();
    Ok(num / total)
}

/// Generalization bound on the magnitude of the rejected-population error:
/// `|ε̂| + 2^{5/4}·√d2·((p·ln(2ne/p) + ln(4/δ))/n)^{3/8}`, saturated at 1.
/// With fewer samples than the pseudo-dimension the bound is trivial (1).
pub fn error_bound(eps_hat: f64, d2: f64, n: usize, pdim: f64, delta_conf: f64) -> f64 {
    if n == 0 || (n as f64) < pdim {
        return 1.0;
    }
    let n = n as f64;
    let complexity =
        (pdim * (2.0 * n * std::f64::consts::E / pdim).ln() + (4.0 / delta_conf).ln()) / n;
    let term = 2f64.powf(1.25) * d2.max(0.0).sqrt() * complexity.max(0.0).powf(0.375);
    (eps_hat.abs() + term).min(1.0)
}

// ── Sufficient conditions ───────────────────────────────────────────────────

/// Which error term the certificate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Signed true errors `εⁱ` (oracle only).
    TrueError,
    /// Error bounds `ε̄ⁱ` from observable data.
    Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub disparity_ok: bool,
    pub bias_ok: bool,
    pub overall_ok: bool,
}

impl Verdict {
    fn new(disparity_ok: bool, bias_ok: bool) -> Self {
        Self {
            disparity_ok,
            bias_ok,
            overall_ok: disparity_ok && bias_ok,
        }
    }

    fn vacuous() -> Self {
        Self::new(false, false)
    }
}

/// Evaluates the sufficient conditions for `|Δ| ≤ ω`.
///
/// * True errors: the spread `max rε − min rε` (divided by `φ̃` for equality
///   of opportunity) and `|Δ̃|` must both be at most `ω/2`, or `(1−v)ω/2`
///   with `v = max rε/φ̃` for equality of opportunity.
/// * Bounds: the spread is replaced by `Σ r·|ε̄|` (resp. `Σ r·|ε̄|/φ̃`) and
///   `v = max r·|ε̄|/φ̃`.
///
/// Equality of opportunity with `v ≥ 1` makes the certificate vacuous. Missing
/// error terms make it fail.
pub fn check_conditions(report: &DisparityReport, omega: f64, mode: Certificate) -> Verdict {
    let g = &report.groups;
    if g.len() < 2 || !(omega > 0.0) {
        return Verdict::vacuous();
    }
    let errors: Option<Vec<f64>> = match mode {
        Certificate::TrueError => g
            .iter()
            .map(|x| if x.r == 0.0 { Some(0.0) } else { x.eps })
            .collect(),
        Certificate::Bound => g.iter().map(|x| x.eps_bar.map(f64::abs)).collect(),
    };
    let Some(errors) = errors else {
        return Verdict::vacuous();
    };
    let dt = report.delta_observed.abs();
    match report.notion {
        FairnessNotion::QualificationParity | FairnessNotion::AccuracyParity => {
            let terms: Vec<f64> = g.iter().zip(&errors).map(|(x, e)| x.r * e).collect();
            let spread = match mode {
                Certificate::TrueError => multi_group_disparity(&terms).unwrap_or(f64::INFINITY),
                Certificate::Bound => terms.iter().sum(),
            };
            Verdict::new(dt <= omega / 2.0, spread <= omega / 2.0)
        }
        FairnessNotion::EqualityOfOpportunity => {
            if g.iter().any(|x| !(x.phi_tilde > 0.0)) {
                return Verdict::vacuous();
            }
            let terms: Vec<f64> = g
                .iter()
                .zip(&errors)
                .map(|(x, e)| x.r * e / x.phi_tilde)
                .collect();
            let v = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if v >= 1.0 {
                return Verdict::vacuous();
            }
            let spread = match mode {
                Certificate::TrueError => multi_group_disparity(&terms).unwrap_or(f64::INFINITY),
                Certificate::Bound => terms.iter().sum(),
            };
            let threshold = (1.0 - v) * omega / 2.0;
            Verdict::new(dt <= threshold, spread <= threshold)
        }
    }
}

/// Multi-group form of [`check_conditions`]; requires at least two groups.
pub fn multi_group_conditions(
    report: &DisparityReport,
    omega: f64,
    mode: Certificate,
) -> Result<Verdict> {
    if report.groups.len() < 2 {
        return Err(Error::Config(format!(
            "need at least two groups, got {}",
            report.groups.len()
        )));
    }
    Ok(check_conditions(report, omega, mode))
}
