//! Long-term fair decision-making under selective labels.
//!
//! * [`fmdp`]: pool-based simulation engine and transition records.
//! * [`envs`]: lending, recidivism and school-admission environments.
//! * [`metrics`]: disparity estimators, decomposition and certificates.
//! * [`ipw`]: policy history, importance weights and Rényi divergence.
//! * [`approx`]: small networks with analytic gradients and Adam.
//! * [`learn`]: PPO, advantage-regularized baselines and SELLF.
//! * [`oracle`]: exact tabular enumeration used as ground truth in tests.
//! * [`harness`]: configuration, runs, evaluation, sweeps and selection.

pub mod approx;
pub mod envs;
pub mod error;
pub mod fmdp;
pub mod harness;
pub mod ipw;
pub mod learn;
pub mod metrics;
pub mod oracle;

pub use error::{Error, Result};
