//! Propensity bookkeeping across policy iterations.
//!
//! The accepted population `D_A` is everything accepted by any of the
//! deployed policies `π[1..K]`; the rejected population `D_R` is what the
//! current policy `π[K]` rejects. The importance weight
//!
//! ```text
//! w(x, i) = (a[1:K]ⁱ / rⁱ) · (1 − π[K](x,i)) / (1 − ∏ₖ (1 − π[k](x,i)))
//! ```
//!
//! converts expectations under `D_A` into expectations under `D_R`. Only a
//! random subset of earlier snapshots enters the product (the current policy
//! always does), redrawn once per learning iteration.

use rand::seq::index::sample;
use rand::Rng;

use crate::approx::Mlp;
use crate::error::{Error, Result};

/// Cumulative acceptance probabilities below this are clamped.
pub const OVERLAP_FLOOR: f64 = 1e-6;
pub const DEFAULT_SUBSAMPLE: usize = 10;

#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    pub iteration: usize,
    pub net: Mlp,
}

impl PolicySnapshot {
    /// `π(accept | input)`.
    pub fn prob(&self, input: &[f64]) -> Result<f64> {
        self.net.prob(input)
    }
}

#[derive(Debug, Clone)]
pub struct PolicyHistory {
    snapshots: Vec<PolicySnapshot>,
    subsample_size: usize,
    /// Indices of the sampled earlier snapshots (never the last one).
    subset: Vec<usize>,
}

impl PolicyHistory {
    pub fn new(subsample_size: usize) -> Self {
        Self {
            snapshots: Vec::new(),
            subsample_size,
            subset: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[PolicySnapshot] {
        &self.snapshots
    }

    pub fn current(&self) -> Option<&PolicySnapshot> {
        self.snapshots.last()
    }

    /// Appends a snapshot; iteration indices must strictly increase. The
    /// subset is left untouched until the next [`resample`](Self::resample).
    pub fn push(&mut self, snapshot: PolicySnapshot) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if snapshot.iteration <= last.iteration {
                return Err(Error::Config(format!(
                    "snapshot iteration {} does not follow {}",
                    snapshot.iteration, last.iteration
                )));
            }
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    /// Redraws up to `subsample_size` earlier snapshots uniformly without
    /// replacement; all of them if there are few enough.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let earlier = self.snapshots.len().saturating_sub(1);
        self.subset = if earlier <= self.subsample_size {
            (0..earlier).collect()
        } else {
            let mut s = sample(rng, earlier, self.subsample_size).into_vec();
            s.sort_unstable();
            s
        };
    }

    /// Indices of the earlier snapshots currently in use.
    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    /// `∏ (1 − π[k](x))` over the sampled earlier snapshots (the current
    /// policy excluded).
    pub fn earlier_reject_product(&self, input: &[f64]) -> Result<f64> {
        let mut q = 1.0;
        for &k in &self.subset {
            q *= 1.0 - self.snapshots[k].prob(input)?;
        }
        Ok(q)
    }

    /// `1 − ∏ (1 − π[k](x))` over the sampled snapshots plus the current one.
    pub fn cumulative_accept_prob(&self, input: &[f64]) -> Result<f64> {
        let current = self
            .current()
            .ok_or_else(|| Error::NoData("empty policy history".into()))?;
        let q = self.earlier_reject_product(input)?;
        Ok(1.0 - q * (1.0 - current.prob(input)?))
    }
}

/// `1 − ∏ (1 − pₖ)` for explicit probabilities.
pub fn cumulative_accept_from_probs(probs: &[f64]) -> f64 {
    1.0 - probs.iter().map(|p| 1.0 - p).product::<f64>()
}

/// The importance weight `(a/r)·(1 − π[K])/P(A[1:K]=1)`.
///
/// Errors with an overlap violation when the cumulative acceptance
/// probability is zero and with no-data when the rejection rate is zero.
pub fn weight(
    current_accept: f64,
    cum_accept: f64,
    accept_rate_cum: f64,
    reject_rate: f64,
) -> Result<f64> {
    if !(reject_rate > 0.0) {
        return Err(Error::NoData("rejection rate is zero".into()));
    }
    if !(cum_accept > 0.0) {
        return Err(Error::OverlapViolation(cum_accept));
    }
    Ok(accept_rate_cum / reject_rate * (1.0 - current_accept) / cum_accept)
}

/// [`weight`] with the cumulative acceptance clamped at [`OVERLAP_FLOOR`];
/// the flag reports whether the floor was applied.
pub fn weight_floored(
    current_accept: f64,
    cum_accept: f64,
    accept_rate_cum: f64,
    reject_rate: f64,
) -> Result<(f64, bool)> {
    let floored = cum_accept < OVERLAP_FLOOR;
    let w = weight(
        current_accept,
        cum_accept.max(OVERLAP_FLOOR),
        accept_rate_cum,
        reject_rate,
    )?;
    Ok((w, floored))
}

/// Empirical Rényi divergence of order 2: the mean squared weight.
pub fn renyi_d2(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::NoData(
            "no weights for the divergence estimate".into(),
        ));
    }
    Ok(weights.iter().map(|w| w * w).sum::<f64>() / weights.len() as f64)
}

/// Divides each weight by the sum of its group's weights.
pub fn self_normalize(weights: &[f64], groups: &[usize]) -> Result<Vec<f64>> {
    if weights.len() != groups.len() {
        return Err(Error::Config(format!(
            "{} weights but {} group labels",
            weights.len(),
            groups.len()
        )));
    }
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut sums = vec![0.0; n_groups];
    for (w, g) in weights.iter().zip(groups) {
        sums[*g] += w;
    }
    weights
        .iter()
        .zip(groups)
        .map(|(w, g)| {
            if sums[*g] > 0.0 {
                Ok(w / sums[*g])
            } else {
                Err(Error::NoData(format!("group {g} weights sum to zero")))
            }
        })
        .collect()
}
