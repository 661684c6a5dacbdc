//! The semisynthetic environments: lending (credit scores), recidivism
//! (age and prior-count classes) and school admission (categorical
//! socioeconomic profile plus a program indicator).
//!
//! An [`EnvSpec`] is loaded from a JSON distribution table (schema documented
//! in `docs/env-schema.json`) and is immutable afterwards. Feature vectors are
//! kept in their encoded form:
//!
//! * lending: one-hot over the score classes,
//! * recidivism: one-hot age class followed by one-hot prior-count class,
//! * school: one-hot blocks per categorical feature, then the program
//!   indicator, then (continuous variant only) the raw exam scores.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::sigmoid;
use crate::error::{Error, Result};

pub const DEFAULT_POOL_SIZE: usize = 5000;
pub const SCHEMA_VERSION: u32 = 1;
pub const BUILTIN_NAMES: [&str; 4] = ["lending", "recidivism", "school", "school_continuous"];

const ROW_TOLERANCE: f64 = 1e-9;

// ── Table schema ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Score {
        levels: usize,
    },
    AgePriors {
        age_classes: usize,
        prior_classes: usize,
    },
    School {
        categorical_sizes: Vec<usize>,
        age_feature: usize,
        continuous_scores: usize,
        score_range: [f64; 2],
    },
}

/// Logistic qualification model. The weight vector covers the encoded
/// feature vector followed by one coefficient for the group index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticAlpha {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Probability lift of the program indicator at the population-mean
    /// point, recorded by the table generator for reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_point_lift: Option<f64>,
}

impl LogisticAlpha {
    pub fn prob(&self, x: &[f64], z: usize) -> f64 {
        let n = x.len();
        let lin: f64 = self.weights[..n]
            .iter()
            .zip(x)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.weights[n] * z as f64
            + self.bias;
        sigmoid(lin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaModel {
    /// `table[z][k]` is the qualification probability at support point `k`.
    Table(Vec<Vec<f64>>),
    Logistic(LogisticAlpha),
}

/// On-disk layout of an environment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub name: String,
    pub schema_version: u32,
    pub cost: f64,
    pub group_prior: Vec<f64>,
    pub domain: Domain,
    /// Raw support points: `[score]`, `[age, priors]`, or per-feature
    /// category indices (plus raw scores) for school.
    pub support: Vec<Vec<f64>>,
    /// `init_probs[z][k]` = P(X⁰ = support[k] | Z = z).
    pub init_probs: Vec<Vec<f64>>,
    pub alpha: AlphaModel,
    #[serde(default)]
    pub provenance: String,
}

// ── Environment specification ───────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub table: DistributionTable,
    pub pool_size: usize,
    /// Encoded support points, parallel to `table.support`.
    encoded: Vec<Vec<f64>>,
    /// Cumulative init distribution per group for inverse-CDF sampling.
    init_cdf: Vec<Vec<f64>>,
    content_hash: String,
}

fn load_err(path: &str, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_string(),
        reason: reason.into(),
    }
}

impl EnvSpec {
    /// Validates a table and builds the spec.
    pub fn from_table(table: DistributionTable, origin: &str) -> Result<Self> {
        if table.schema_version != SCHEMA_VERSION {
            return Err(load_err(
                origin,
                format!("unsupported schema_version {}", table.schema_version),
            ));
        }
        if !(table.cost > 0.0 && table.cost < 1.0) {
            return Err(load_err(
                origin,
                format!("cost {} outside (0,1)", table.cost),
            ));
        }
        let groups = table.group_prior.len();
        if groups < 2 {
            return Err(load_err(origin, "group_prior needs at least two groups"));
        }
        if table.group_prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(load_err(origin, "group_prior entries must lie in [0,1]"));
        }
        let s: f64 = table.group_prior.iter().sum();
        if (s - 1.0).abs() > ROW_TOLERANCE {
            return Err(load_err(origin, format!("group_prior sums to {s}")));
        }
        if table.init_probs.len() != groups {
            return Err(load_err(
                origin,
                format!(
                    "init_probs has {} rows for {groups} groups",
                    table.init_probs.len()
                ),
            ));
        }
        let n = table.support.len();
        if n == 0 {
            return Err(load_err(origin, "empty support"));
        }
        for (row, probs) in table.init_probs.iter().enumerate() {
            if probs.len() != n {
                return Err(load_err(
                    origin,
                    format!(
                        "init_probs row {row} has {} entries, support has {n}",
                        probs.len()
                    ),
                ));
            }
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(load_err(
                    origin,
                    format!("init_probs row {row} has an entry outside [0,1]"),
                ));
            }
            let s: f64 = probs.iter().sum();
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(load_err(
                    origin,
                    format!("init_probs row {row} sums to {s}"),
                ));
            }
        }
        check_domain(&table, origin)?;
        let encoded = table
            .support
            .iter()
            .enumerate()
            .map(|(k, p)| {
                encode_point(&table.domain, p)
                    .map_err(|e| load_err(origin, format!("support point {k}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = encoded[0].len();
        match &table.alpha {
            AlphaModel::Table(rows) => {
                if rows.len() != groups {
                    return Err(load_err(
                        origin,
                        format!("alpha table has {} rows for {groups} groups", rows.len()),
                    ));
                }
                for (row, r) in rows.iter().enumerate() {
                    if r.len() != n {
                        return Err(load_err(
                            origin,
                            format!("alpha row {row} has {} entries, support has {n}", r.len()),
                        ));
                    }
                    if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return Err(load_err(
                            origin,
                            format!("alpha row {row} has an entry outside [0,1]"),
                        ));
                    }
                }
                if !matches!(
                    table.domain,
                    Domain::Score { .. } | Domain::AgePriors { .. }
                ) {
                    return Err(load_err(
                        origin,
                        "tabular alpha requires a score or age_priors domain",
                    ));
                }
            }
            AlphaModel::Logistic(l) => {
                if l.weights.len() != dim + 1 {
                    return Err(load_err(
                        origin,
                        format!(
                            "logistic alpha has {} weights, expected feature dim {dim} + 1",
                            l.weights.len()
                        ),
                    ));
                }
                if l.weights.iter().chain([&l.bias]).any(|v| !v.is_finite()) {
                    return Err(load_err(
                        origin,
                        "logistic alpha has non-finite coefficients",
                    ));
                }
            }
        }
        let init_cdf = table
            .init_probs
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        let canonical = serde_json::to_vec(&table).map_err(|e| load_err(origin, e.to_string()))?;
        let content_hash = format!("{:x}", Sha256::digest(&canonical));
        Ok(Self {
            table,
            pool_size: DEFAULT_POOL_SIZE,
            encoded,
            init_cdf,
            content_hash,
        })
    }

    pub fn name(&self) -> &str {
        &self.table.name
    }

    pub fn group_count(&self) -> usize {
        self.table.group_prior.len()
    }

    pub fn group_prior(&self) -> &[f64] {
        &self.table.group_prior
    }

    pub fn cost(&self) -> f64 {
        self.table.cost
    }

    pub fn support_len(&self) -> usize {
        self.encoded.len()
    }

    pub fn encoded_support(&self) -> &[Vec<f64>] {
        &self.encoded
    }

    /// SHA-256 of the canonical serialization of the table.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    /// Length of the encoded feature vector.
    pub fn feature_dim(&self) -> usize {
        self.encoded[0].len()
    }

    /// Length of the network input: features followed by a one-hot group.
    pub fn input_dim(&self) -> usize {
        self.feature_dim() + self.group_count()
    }

    /// Writes the network input for `(x, z)` into `out`. Raw exam scores are
    /// rescaled to `[0, 1]`; everything else is passed through.
    pub fn write_input(&self, x: &[f64], z: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(x);
        if let Domain::School {
            continuous_scores,
            score_range,
            ..
        } = &self.table.domain
        {
            let span = score_range[1] - score_range[0];
            let n = out.len();
            for v in &mut out[n - continuous_scores..] {
                *v = (*v - score_range[0]) / span;
            }
        }
        for g in 0..self.group_count() {
            out.push(if g == z { 1.0 } else { 0.0 });
        }
    }

    pub fn input(&self, x: &[f64], z: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.input_dim());
        self.write_input(x, z, &mut v);
        v
    }

    /// Samples a group from the prior.
    pub fn sample_group<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (g, p) in self.table.group_prior.iter().enumerate() {
            acc += p;
            if u < acc {
                return g;
            }
        }
        self.group_count() - 1
    }

    /// Samples an initial encoded feature vector for group `z`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, z: usize, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let cdf = &self.init_cdf[z];
        let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        self.encoded[k].clone()
    }

    /// Checks the feature-domain predicate.
    pub fn validate_features(&self, x: &[f64]) -> Result<()> {
        decode_point(&self.table.domain, x).map(|_| ())
    }

    /// Qualification probability α(x, z).
    pub fn alpha(&self, x: &[f64], z: usize) -> Result<f64> {
        if z >= self.group_count() {
            return Err(Error::Environment(format!("group {z} out of range")));
        }
        match &self.table.alpha {
            AlphaModel::Table(rows) => {
                let k = self.table_index(x)?;
                Ok(rows[z][k])
            }
            AlphaModel::Logistic(l) => {
                if x.len() != self.feature_dim() {
                    return Err(Error::Environment(format!(
                        "feature length {} != {}",
                        x.len(),
                        self.feature_dim()
                    )));
                }
                Ok(l.prob(x, z))
            }
        }
    }

    fn table_index(&self, x: &[f64]) -> Result<usize> {
        match decode_point(&self.table.domain, x)? {
            Decoded::Score(s) => Ok(s - 1),
            Decoded::AgePriors(a, p) => match self.table.domain {
                Domain::AgePriors { prior_classes, .. } => Ok((a - 1) * prior_classes + (p - 1)),
                _ => unreachable!(),
            },
            Decoded::School { .. } => Err(Error::Environment(
                "tabular alpha on a school domain".into(),
            )),
        }
    }

    /// Applies the environment's transition rule to encoded features.
    pub fn transition(&self, x: &[f64], a: bool, y: bool) -> Result<Vec<f64>> {
        match &self.table.domain {
            Domain::Score { levels } => {
                let s = match decode_point(&self.table.domain, x)? {
                    Decoded::Score(s) => s,
                    _ => unreachable!(),
                };
                let next = lending_transition_levels(s, a, y, *levels)?;
                Ok(one_hot(next - 1, *levels))
            }
            Domain::AgePriors { .. } => recidivism_transition(&self.table.domain, x, a, y),
            Domain::School { .. } => school_transition(&self.table.domain, x, a, y),
        }
    }

    /// Population base rate of the positive label under the initial
    /// distribution (indicator off).
    pub fn initial_base_rate(&self) -> Result<f64> {
        let mut total = 0.0;
        for (z, prior) in self.table.group_prior.iter().enumerate() {
            for (k, p) in self.table.init_probs[z].iter().enumerate() {
                if *p > 0.0 {
                    total += prior * p * self.alpha(&self.encoded[k], z)?;
                }
            }
        }
        Ok(total)
    }

    /// Serializes the underlying table as pretty JSON (for `export-env`).
    pub fn export_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.table).map_err(|e| Error::Format(e.to_string()))
    }
}

// ── Encoding ────────────────────────────────────────────────────────────────

enum Decoded {
    Score(usize),
    AgePriors(usize, usize),
    School { categories: Vec<usize> },
}

fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

fn check_domain(table: &DistributionTable, origin: &str) -> Result<()> {
    match &table.domain {
        Domain::Score { levels } if *levels < 2 => {
            Err(load_err(origin, "score domain needs at least 2 levels"))
        }
        Domain::AgePriors {
            age_classes,
            prior_classes,
        } if *age_classes < 1 || *prior_classes < 1 => Err(load_err(
            origin,
            "age_priors domain needs positive class counts",
        )),
        Domain::School {
            categorical_sizes,
            age_feature,
            score_range,
            ..
        } => {
            if categorical_sizes.is_empty() || categorical_sizes.iter().any(|&k| k < 1) {
                return Err(load_err(
                    origin,
                    "school domain needs non-empty categorical sizes",
                ));
            }
            if *age_feature >= categorical_sizes.len() {
                return Err(load_err(origin, "age_feature index out of range"));
            }
            if !(score_range[1] > score_range[0]) {
                return Err(load_err(origin, "score_range must be increasing"));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Encodes a raw support point.
fn encode_point(domain: &Domain, raw: &[f64]) -> Result<Vec<f64>> {
    let as_class = |v: f64, max: usize, what: &str| -> Result<usize> {
        if v.fract() != 0.0 || v < 1.0 || v > max as f64 {
            return Err(Error::Environment(format!("{what} {v} outside 1..={max}")));
        }
        Ok(v as usize)
    };
    match domain {
        Domain::Score { levels } => {
            if raw.len() != 1 {
                return Err(Error::Environment("score point must have one entry".into()));
            }
            Ok(one_hot(as_class(raw[0], *levels, "score")? - 1, *levels))
        }
        Domain::AgePriors {
            age_classes,
            prior_classes,
        } => {
            if raw.len() != 2 {
                return Err(Error::Environment(
                    "age/priors point must have two entries".into(),
                ));
            }
            let a = as_class(raw[0], *age_classes, "age class")?;
            let p = as_class(raw[1], *prior_classes, "priors class")?;
            let mut v = one_hot(a - 1, *age_classes);
            v.extend(one_hot(p - 1, *prior_classes));
            Ok(v)
        }
        Domain::School {
            categorical_sizes,
            continuous_scores,
            score_range,
            ..
        } => {
            let f = categorical_sizes.len();
            if raw.len() != f + continuous_scores {
                return Err(Error::Environment(format!(
                    "school point has {} entries, expected {}",
                    raw.len(),
                    f + continuous_scores
                )));
            }
            let mut v =
                Vec::with_capacity(categorical_sizes.iter().sum::<usize>() + 1 + continuous_scores);
            for (c, &k) in raw[..f].iter().zip(categorical_sizes) {
                if c.fract() != 0.0 || *c < 0.0 || *c >= k as f64 {
                    return Err(Error::Environment(format!("category {c} outside 0..{k}")));
                }
                v.extend(one_hot(*c as usize, k));
            }
            v.push(0.0);
            for s in &raw[f..] {
                if !(*s >= score_range[0] && *s <= score_range[1]) {
                    return Err(Error::Environment(format!(
                        "score {s} outside {score_range:?}"
                    )));
                }
                v.push(*s);
            }
            Ok(v)
        }
    }
}

/// Index of the single 1.0 entry of a one-hot block.
fn one_hot_index(block: &[f64]) -> Option<usize> {
    let mut idx = None;
    for (i, &v) in block.iter().enumerate() {
        if v == 1.0 {
            if idx.is_some() {
                return None;
            }
            idx = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    idx
}

fn decode_point(domain: &Domain, x: &[f64]) -> Result<Decoded> {
    match domain {
        Domain::Score { levels } => {
            if x.len() != *levels {
                return Err(Error::Environment(format!(
                    "lending features have length {}, expected {levels}",
                    x.len()
                )));
            }
            one_hot_index(x)
                .map(|i| Decoded::Score(i + 1))
                .ok_or_else(|| Error::Environment("lending features are not one-hot".into()))
        }
        Domain::AgePriors {
            age_classes,
            prior_classes,
        } => {
            if x.len() != age_classes + prior_classes {
                return Err(Error::Environment(format!(
                    "recidivism features have length {}, expected {}",
                    x.len(),
                    age_classes + prior_classes
                )));
            }
            let a = one_hot_index(&x[..*age_classes]);
            let p = one_hot_index(&x[*age_classes..]);
            match (a, p) {
                (Some(a), Some(p)) => Ok(Decoded::AgePriors(a + 1, p + 1)),
                _ => Err(Error::Environment(
                    "recidivism features are not a one-hot pair".into(),
                )),
            }
        }
        Domain::School {
            categorical_sizes,
            continuous_scores,
            score_range,
            ..
        } => {
            let cat_dim: usize = categorical_sizes.iter().sum();
            if x.len() != cat_dim + 1 + continuous_scores {
                return Err(Error::Environment(format!(
                    "school features have length {}, expected {}",
                    x.len(),
                    cat_dim + 1 + continuous_scores
                )));
            }
            let mut categories = Vec::with_capacity(categorical_sizes.len());
            let mut off = 0;
            for (f, &k) in categorical_sizes.iter().enumerate() {
                match one_hot_index(&x[off..off + k]) {
                    Some(c) => categories.push(c),
                    None => {
                        return Err(Error::Environment(format!(
                            "school feature {f} is not one-hot"
                        )))
                    }
                }
                off += k;
            }
            let ind = x[cat_dim];
            if ind != 0.0 && ind != 1.0 {
                return Err(Error::Environment(format!(
                    "program indicator {ind} is not binary"
                )));
            }
            for s in &x[cat_dim + 1..] {
                if !(*s >= score_range[0] && *s <= score_range[1]) {
                    return Err(Error::Environment(format!(
                        "score {s} outside {score_range:?}"
                    )));
                }
            }
            Ok(Decoded::School { categories })
        }
    }
}

// ── Transition rules ────────────────────────────────────────────────────────

/// Lending dynamics on the 1..=10 score scale: repayment raises the score by
/// one, default lowers it by one, rejection leaves it unchanged.
pub fn lending_transition(score: usize, a: bool, y: bool) -> Result<usize> {
    lending_transition_levels(score, a, y, 10)
}

fn lending_transition_levels(score: usize, a: bool, y: bool, levels: usize) -> Result<usize> {
    if score < 1 || score > levels {
        return Err(Error::Environment(format!(
            "score {score} outside 1..={levels}"
        )));
    }
    Ok(match (a, y) {
        (false, _) => score,
        (true, true) => (score + 1).min(levels),
        (true, false) => (score - 1).max(1),
    })
}

/// Recidivism dynamics: bail followed by reoffense (`y = 0`) moves the
/// prior-count class up one bucket, clamped at the last class.
pub fn recidivism_transition(domain: &Domain, x: &[f64], a: bool, y: bool) -> Result<Vec<f64>> {
    let (age_classes, prior_classes) = match domain {
        Domain::AgePriors {
            age_classes,
            prior_classes,
        } => (*age_classes, *prior_classes),
        _ => {
            return Err(Error::Environment(
                "recidivism transition on a non age/priors domain".into(),
            ))
        }
    };
    let (age, priors) = match decode_point(domain, x)? {
        Decoded::AgePriors(a, p) => (a, p),
        _ => unreachable!(),
    };
    let priors = if a && !y {
        (priors + 1).min(prior_classes)
    } else {
        priors
    };
    let mut v = one_hot(age - 1, age_classes);
    v.extend(one_hot(priors - 1, prior_classes));
    Ok(v)
}

/// School dynamics: the age category advances (saturating at the oldest
/// class) and the program indicator latches to 1 after an acceptance or a
/// positive label.
pub fn school_transition(domain: &Domain, x: &[f64], a: bool, y: bool) -> Result<Vec<f64>> {
    let (sizes, age_feature) = match domain {
        Domain::School {
            categorical_sizes,
            age_feature,
            ..
        } => (categorical_sizes, *age_feature),
        _ => {
            return Err(Error::Environment(
                "school transition on a non-school domain".into(),
            ))
        }
    };
    let categories = match decode_point(domain, x)? {
        Decoded::School { categories } => categories,
        _ => unreachable!(),
    };
    let mut next = x.to_vec();
    let off: usize = sizes[..age_feature].iter().sum();
    let k = sizes[age_feature];
    let age = categories[age_feature];
    let new_age = (age + 1).min(k - 1);
    next[off + age] = 0.0;
    next[off + new_age] = 1.0;
    let ind = sizes.iter().sum::<usize>();
    if a || y {
        next[ind] = 1.0;
    }
    Ok(next)
}

// ── Loading ─────────────────────────────────────────────────────────────────

fn builtin_text(name: &str) -> Option<&'static str> {
    match name {
        "lending" => Some(include_str!("../data/lending.json")),
        "recidivism" => Some(include_str!("../data/recidivism.json")),
        "school" => Some(include_str!("../data/school.json")),
        "school_continuous" => Some(include_str!("../data/school_continuous.json")),
        _ => None,
    }
}

pub fn parse_env(text: &str, origin: &str) -> Result<EnvSpec> {
    let table: DistributionTable = serde_json::from_str(text)
        .map_err(|e| load_err(origin, format!("schema violation: {e}")))?;
    EnvSpec::from_table(table, origin)
}

/// One of the tables compiled into the library.
pub fn builtin(name: &str) -> Result<EnvSpec> {
    let text = builtin_text(name).ok_or_else(|| {
        Error::Config(format!(
            "unknown environment {name:?}; expected one of {}",
            BUILTIN_NAMES.join(", ")
        ))
    })?;
    parse_env(text, &format!("builtin:{name}"))
}

/// Loads `name` from `path`, which is either a JSON file or a directory
/// containing `<name>.json`. The table's own `name` must match.
pub fn load_env(path: &Path, name: &str) -> Result<EnvSpec> {
    if !BUILTIN_NAMES.contains(&name) {
        return Err(Error::Config(format!(
            "unknown environment {name:?}; expected one of {}",
            BUILTIN_NAMES.join(", ")
        )));
    }
    let file = if path.is_dir() {
        path.join(format!("{name}.json"))
    } else {
        path.to_path_buf()
    };
    let origin = file.display().to_string();
    let text = std::fs::read_to_string(&file).map_err(|e| load_err(&origin, e.to_string()))?;
    let spec = parse_env(&text, &origin)?;
    if spec.name() != name {
        return Err(load_err(
            &origin,
            format!("table is named {:?}, expected {name:?}", spec.name()),
        ));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lending() -> EnvSpec {
        builtin("lending").unwrap()
    }

    #[test]
    fn lending_dynamics() {
        assert_eq!(lending_transition(5, true, true).unwrap(), 6);
        assert_eq!(lending_transition(5, false, true).unwrap(), 5);
        assert_eq!(lending_transition(5, false, false).unwrap(), 5);
        assert_eq!(lending_transition(10, true, true).unwrap(), 10);
        assert_eq!(lending_transition(1, true, false).unwrap(), 1);
        assert_eq!(lending_transition(5, true, false).unwrap(), 4);
        assert!(matches!(
            lending_transition(0, true, true),
            Err(Error::Environment(_))
        ));
        assert!(matches!(
            lending_transition(11, false, true),
            Err(Error::Environment(_))
        ));
    }

    #[test]
    fn lending_spec_shape() {
        let env = lending();
        assert_eq!(env.support_len(), 10);
        assert_eq!(env.cost(), 0.8);
        assert_eq!(env.group_prior(), &[0.5, 0.5]);
        assert_eq!(env.feature_dim(), 10);
        assert_eq!(env.input_dim(), 12);
    }

    #[test]
    fn lending_alpha_monotone() {
        let env = lending();
        for z in 0..2 {
            let vals: Vec<f64> = env
                .encoded_support()
                .iter()
                .map(|x| env.alpha(x, z).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]), "group {z}: {vals:?}");
        }
    }

    #[test]
    fn encoded_lending_transition() {
        let env = lending();
        let x5 = one_hot(4, 10);
        assert_eq!(env.transition(&x5, true, true).unwrap(), one_hot(5, 10));
        assert_eq!(env.transition(&x5, false, false).unwrap(), x5);
        assert!(env.transition(&[0.5; 10], true, true).is_err());
    }

    fn recid(age: usize, priors: usize) -> Vec<f64> {
        let mut v = one_hot(age - 1, 5);
        v.extend(one_hot(priors - 1, 8));
        v
    }

    #[test]
    fn recidivism_dynamics() {
        let env = builtin("recidivism").unwrap();
        let d = &env.table.domain;
        assert_eq!(
            recidivism_transition(d, &recid(2, 3), true, false).unwrap(),
            recid(2, 4)
        );
        assert_eq!(
            recidivism_transition(d, &recid(2, 3), false, false).unwrap(),
            recid(2, 3)
        );
        assert_eq!(
            recidivism_transition(d, &recid(2, 3), false, true).unwrap(),
            recid(2, 3)
        );
        assert_eq!(
            recidivism_transition(d, &recid(2, 3), true, true).unwrap(),
            recid(2, 3)
        );
        assert_eq!(
            recidivism_transition(d, &recid(2, 8), true, false).unwrap(),
            recid(2, 8)
        );
        let mut bad = recid(2, 3);
        bad[0] = 1.0;
        assert!(matches!(
            recidivism_transition(d, &bad, true, false),
            Err(Error::Environment(_))
        ));
        assert_eq!(env.feature_dim(), 13);
        assert_eq!(env.cost(), 0.9);
    }

    #[test]
    fn school_dynamics_and_boost() {
        let env = builtin("school").unwrap();
        let d = env.table.domain.clone();
        assert_eq!(env.feature_dim(), 127);
        // find a young applicant
        let young = env
            .encoded_support()
            .iter()
            .find(|x| x[0] == 1.0)
            .unwrap()
            .clone();
        assert_eq!(young[126], 0.0);
        let next = school_transition(&d, &young, true, false).unwrap();
        assert_eq!((next[0], next[1], next[126]), (0.0, 1.0, 1.0));
        assert_eq!(next[2..126], young[2..126]);
        let old_ind = next.clone();
        assert_eq!(
            school_transition(&d, &old_ind, false, false).unwrap(),
            old_ind
        );
        // y = 1 alone also latches the indicator
        let via_label = school_transition(&d, &young, false, true).unwrap();
        assert_eq!(via_label[126], 1.0);
        // the indicator raises alpha
        let mut with = young.clone();
        with[126] = 1.0;
        for z in 0..2 {
            assert!(env.alpha(&with, z).unwrap() > env.alpha(&young, z).unwrap());
        }
        assert_eq!(env.cost(), 0.5);
        assert_eq!(env.group_prior(), &[0.38, 0.62]);
    }

    #[test]
    fn school_base_rate() {
        for name in ["school", "school_continuous"] {
            let env = builtin(name).unwrap();
            let rate = env.initial_base_rate().unwrap();
            assert!((rate - 0.37).abs() < 0.01, "{name}: {rate}");
        }
    }

    #[test]
    fn school_indicator_lift_at_mean_point() {
        // Independent recomputation of the calibration: at the
        // population-mean encoded point the indicator lifts alpha by 0.5.
        for name in ["school", "school_continuous"] {
            let env = builtin(name).unwrap();
            let dim = env.feature_dim();
            let mut mean = vec![0.0; dim];
            for (z, prior) in env.group_prior().iter().enumerate() {
                for (k, p) in env.table.init_probs[z].iter().enumerate() {
                    for (m, v) in mean.iter_mut().zip(&env.encoded_support()[k]) {
                        *m += prior * p * v;
                    }
                }
            }
            let l = match &env.table.alpha {
                AlphaModel::Logistic(l) => l.clone(),
                _ => unreachable!(),
            };
            let zbar = env.group_prior()[1];
            let lin = |ind: f64| {
                let mut x = mean.clone();
                x[126] = ind;
                l.weights[..dim]
                    .iter()
                    .zip(&x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + l.weights[dim] * zbar
                    + l.bias
            };
            let lift = sigmoid(lin(1.0)) - sigmoid(lin(0.0));
            assert!((lift - 0.5).abs() < 1e-6, "{name}: {lift}");
        }
    }

    #[test]
    fn school_continuous_has_scores() {
        let env = builtin("school_continuous").unwrap();
        assert_eq!(env.feature_dim(), 130);
        let x = &env.encoded_support()[0];
        assert!(x[127..].iter().all(|s| (0.0..=1000.0).contains(s)));
        let input = env.input(x, 0);
        assert!(input[127..130].iter().all(|s| (0.0..=1.0).contains(s)));
        let next = env.transition(x, true, true).unwrap();
        assert_eq!(next[127..], x[127..]);
    }

    #[test]
    fn all_builtins_are_closed_under_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for name in BUILTIN_NAMES {
            let env = builtin(name).unwrap();
            for _ in 0..300 {
                let z = env.sample_group(&mut rng);
                let mut x = env.sample_initial(z, &mut rng);
                for _ in 0..5 {
                    x = env.transition(&x, rng.random(), rng.random()).unwrap();
                    env.validate_features(&x).unwrap();
                    let a = env.alpha(&x, z).unwrap();
                    assert!((0.0..=1.0).contains(&a));
                }
            }
        }
    }

    #[test]
    fn row_not_summing_to_one_names_row() {
        let mut table: DistributionTable =
            serde_json::from_str(builtin_text("lending").unwrap()).unwrap();
        table.init_probs[1][0] -= 0.1;
        let err = EnvSpec::from_table(table, "test").unwrap_err();
        match err {
            Error::Load { reason, .. } => assert!(reason.contains("row 1"), "{reason}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_violation_is_load_error() {
        assert!(matches!(
            parse_env("{\"name\": 3}", "x"),
            Err(Error::Load { .. })
        ));
    }

    #[test]
    fn load_from_directory_and_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let env = lending();
        std::fs::write(dir.path().join("lending.json"), env.export_json().unwrap()).unwrap();
        let back = load_env(dir.path(), "lending").unwrap();
        assert_eq!(back.table, env.table);
        assert_eq!(back.content_hash(), env.content_hash());
        assert!(matches!(
            load_env(dir.path(), "recidivism"),
            Err(Error::Load { .. })
        ));
    }

    #[test]
    fn init_sampling_matches_table() {
        let env = lending();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40_000;
        let mut counts = [0usize; 10];
        for _ in 0..n {
            let x = env.sample_initial(0, &mut rng);
            counts[one_hot_index(&x).unwrap()] += 1;
        }
        for (k, c) in counts.iter().enumerate() {
            let p = env.table.init_probs[0][k];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(((*c as f64 / n as f64) - p).abs() < 4.0 * se, "class {k}");
        }
    }
}
