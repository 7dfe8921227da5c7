//! LSTD(λ) policy evaluation with exact model oracles, finite-sample bound
//! calculators and a seeded Monte-Carlo harness.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod chain;
pub mod error;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod lstd;
pub mod rng;

pub use bounds::{global_bound, lambda_star, n_zero, BoundInputs, BoundReport, MixingParams};
pub use chain::{
    exact_value, garnet_generate, sample_trajectory, stationary_distribution, GarnetSpec, MarkovRewardProcess,
    StationaryDistribution, Trajectory,
};
pub use error::{Error, Result};
pub use features::{mu_geometry, mu_norm, random_features, FeatureMap, MuGeometry};
pub use harness::{run_experiment, ErrorMetric, ExperimentConfig, RunRecord, SummaryRow};
pub use lstd::{exact_a_b, lstd_estimate, ExactSolution, LstdAccumulator, LstdEstimate};
