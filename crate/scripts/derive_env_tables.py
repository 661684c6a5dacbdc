#!/usr/bin/env python3
"""Regenerate the environment distribution tables shipped in crates/core/data.

The simulator never reads raw FICO / COMPAS / ENEM records. It consumes
per-group feature distributions P(X0 | Z) and qualification models
alpha(X, Z) stored as JSON. This script is the offline step that produces
those files.

The raw datasets are not redistributed with this repository, so the shipped
tables are synthetic stand-ins shaped after the published aggregate
statistics of each dataset:

  lending     FICO score distribution and repayment curves by race, discretised
              into 10 score classes. The white group is spread almost uniformly
              over score classes while about half of the Black group sits in the
              two lowest classes; repayment probability increases with score
              and is slightly lower for the Black group at equal score.
  recidivism  COMPAS two-year recidivism by race, age (5 classes) and prior
              count (8 classes). The African-American group is younger and
              has more priors; no-reoffense probability increases with age and
              decreases with priors.
  school      ENEM-style admission data: 38 categorical socioeconomic features
              one-hot encoded to 126 dimensions (feature 0 is a two-class age
              attribute), a 62% / 38% group split and a 37% positive-label base
              rate under a logistic qualification model.

Running this script with the default seed reproduces the committed files
byte-for-byte. Replace the synthetic generators with empirical frequencies
computed from the public datasets to obtain dataset-derived tables; the file
schema (docs/env-schema.json) does not change.
"""

import argparse
import json
import math
from pathlib import Path

import numpy as np

DATA_DIR = Path(__file__).resolve().parent.parent / "crates" / "core" / "data"


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def logit(p):
    return math.log(p / (1.0 - p))


def rounded_probs(p, digits=6):
    """Round a probability vector and push the rounding residue into the largest entry."""
    p = np.round(np.asarray(p, dtype=float), digits)
    p[np.argmax(p)] += round(1.0 - p.sum(), digits)
    return [round(float(v), digits) for v in p]


def lending():
    # index 0 = Black (underprivileged), index 1 = white
    init = [
        [0.30, 0.19, 0.12, 0.09, 0.07, 0.06, 0.05, 0.05, 0.04, 0.03],
        [0.04, 0.05, 0.07, 0.09, 0.10, 0.11, 0.12, 0.13, 0.14, 0.15],
    ]
    alpha = [
        [0.12, 0.27, 0.42, 0.55, 0.66, 0.75, 0.83, 0.89, 0.93, 0.96],
        [0.18, 0.34, 0.49, 0.62, 0.72, 0.80, 0.87, 0.92, 0.96, 0.98],
    ]
    return {
        "name": "lending",
        "schema_version": 1,
        "cost": 0.8,
        "group_prior": [0.5, 0.5],
        "domain": {"type": "score", "levels": 10},
        "support": [[s] for s in range(1, 11)],
        "init_probs": [rounded_probs(r) for r in init],
        "alpha": {"table": alpha},
        "provenance": "synthetic stand-in shaped after FICO score-class frequencies and repayment curves by race",
    }


def recidivism():
    ages = 5
    priors = 8
    # P(age | z), P(priors | z); z=0 African-American, z=1 Caucasian
    age_p = [
        [0.30, 0.33, 0.18, 0.12, 0.07],
        [0.18, 0.30, 0.21, 0.18, 0.13],
    ]
    prior_p = [
        [0.22, 0.15, 0.11, 0.09, 0.13, 0.13, 0.10, 0.07],
        [0.36, 0.19, 0.12, 0.08, 0.10, 0.08, 0.05, 0.02],
    ]
    support = [[a, p] for a in range(1, ages + 1) for p in range(1, priors + 1)]
    init = []
    alpha = []
    for z in range(2):
        row = [age_p[z][a - 1] * prior_p[z][p - 1] for a, p in support]
        init.append(rounded_probs(row))
        arow = []
        for a, p in support:
            v = 0.55 + 0.32 * (a - 1) - 0.33 * (p - 1) + (0.0 if z == 1 else -0.15)
            arow.append(round(float(sigmoid(v)), 6))
        alpha.append(arow)
    return {
        "name": "recidivism",
        "schema_version": 1,
        "cost": 0.9,
        "group_prior": [0.6, 0.4],
        "domain": {"type": "age_priors", "age_classes": ages, "prior_classes": priors},
        "support": support,
        "init_probs": init,
        "alpha": {"table": alpha},
        "provenance": "synthetic stand-in shaped after COMPAS two-year recidivism by race, age class and prior-count class",
    }


def school(rng, continuous):
    n_per_group = 2000
    # feature 0: age (2 classes); 13 features with 4 classes; 24 features with 3 classes
    sizes = [2] + [4] * 13 + [3] * 24
    assert len(sizes) == 38 and sum(sizes) == 126
    ses_mean = [-0.55, 0.35]  # z=0 Black/brown, z=1 white
    # per-category loadings on the latent socioeconomic status
    loadings = [rng.normal(0.0, 0.9, size=k) for k in sizes]
    offsets = [rng.normal(0.0, 0.4, size=k) for k in sizes]
    loadings[0] = np.array([0.0, 0.0])
    offsets[0] = np.array([0.85, 0.0])  # ~70% start in the younger class

    support = []
    init = [[], []]
    ses_all = []
    for z in range(2):
        ses = rng.normal(ses_mean[z], 1.0, size=n_per_group)
        for s in ses:
            point = []
            for f, k in enumerate(sizes):
                logits = loadings[f] * s + offsets[f]
                p = np.exp(logits - logits.max())
                p /= p.sum()
                point.append(int(rng.choice(k, p=p)))
            if continuous:
                scores = []
                for shift in (0.0, 10.0, -15.0):
                    v = 520.0 + shift + 75.0 * s + rng.normal(0.0, 45.0)
                    scores.append(round(float(min(max(v, 0.0), 1000.0)), 1))
                point.extend(scores)
            support.append(point)
            ses_all.append(s)
    n = len(support)
    for z in range(2):
        row = np.zeros(n)
        row[z * n_per_group:(z + 1) * n_per_group] = 1.0 / n_per_group
        init[z] = [float(v) for v in row]

    # logistic qualification model over [one-hot(126), indicator, scores?, z]
    weights = []
    for f, k in enumerate(sizes):
        weights.extend(list(0.45 * loadings[f]))
    weights[0] = 0.0  # young
    weights[1] = -0.6  # old: lower pass probability
    score_w = [0.004, 0.003, 0.003] if continuous else []
    group_w = 0.15

    def encode(point):
        x = np.zeros(126)
        off = 0
        for f, k in enumerate(sizes):
            x[off + point[f]] = 1.0
            off += k
        return x

    X = np.array([encode(p) for p in support])
    S = np.array([p[38:] for p in support]) if continuous else np.zeros((n, 0))
    Z = np.array([0] * n_per_group + [1] * n_per_group, dtype=float)
    prior = np.array([0.38, 0.62])
    pop_w = np.where(Z == 1, prior[1] / n_per_group, prior[0] / n_per_group)
    wv = np.array(weights)
    sv = np.array(score_w)
    lin = X @ wv + (S @ sv if continuous else 0.0) + group_w * Z

    # bias: population base rate 0.37 with the indicator off
    lo, hi = -20.0, 20.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(pop_w @ sigmoid(lin + mid)) < 0.37:
            lo = mid
        else:
            hi = mid
    bias = 0.5 * (lo + hi)

    # indicator boost: +0.5 probability at the population-mean feature point
    mean_lin = float(pop_w @ lin) + bias
    base = float(sigmoid(mean_lin))
    target = min(base + 0.5, 0.999)
    boost = logit(target) - mean_lin

    full_weights = [round(float(v), 8) for v in weights] + [round(boost, 8)] + score_w + [group_w]
    return {
        "name": "school_continuous" if continuous else "school",
        "schema_version": 1,
        "cost": 0.5,
        "group_prior": [0.38, 0.62],
        "domain": {
            "type": "school",
            "categorical_sizes": sizes,
            "age_feature": 0,
            "continuous_scores": 3 if continuous else 0,
            "score_range": [0.0, 1000.0],
        },
        "support": support,
        "init_probs": init,
        "alpha": {"logistic": {"weights": full_weights, "bias": round(bias, 10), "mean_point_lift": 0.5}},
        "provenance": "synthetic ENEM-style applicant profiles: 38 categorical features (126 one-hot dims), 62/38 group split, 37% base rate",
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--out", type=Path, default=DATA_DIR)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    envs = [lending(), recidivism()]
    envs.append(school(np.random.default_rng(args.seed), continuous=False))
    envs.append(school(np.random.default_rng(args.seed), continuous=True))
    for env in envs:
        path = args.out / f"{env['name']}.json"
        with open(path, "w") as fh:
            json.dump(env, fh, separators=(",", ":"))
            fh.write("\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
