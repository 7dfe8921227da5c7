//! Fixtures shared by the benchmarks.

use lstd_lab::chain::{garnet_generate, sample_trajectory, stationary_distribution, GarnetSpec, Trajectory};
use lstd_lab::features::{mu_geometry, random_features, FeatureMap, MuGeometry};
use lstd_lab::{MarkovRewardProcess, StationaryDistribution};

pub struct Fixture {
    pub mrp: MarkovRewardProcess,
    pub features: FeatureMap,
    pub mu: StationaryDistribution,
    pub geometry: MuGeometry,
    pub trajectory: Trajectory,
}

/// Garnet chain with uniform random features and a stationary trajectory.
pub fn fixture(n_states: usize, d: usize, gamma: f64, n: usize, seed: u64) -> Fixture {
    let mrp = garnet_generate(&GarnetSpec::new(n_states, seed), gamma).expect("garnet");
    let features = random_features(n_states, d, 1.0, seed ^ 0xfea7).expect("features");
    let mu = stationary_distribution(&mrp).expect("stationary distribution");
    let geometry = mu_geometry(&features, &mu).expect("gram");
    let trajectory = sample_trajectory(&mrp, &mu, n, seed ^ 0x7a1).expect("trajectory");
    Fixture { mrp, features, mu, geometry, trajectory }
}
