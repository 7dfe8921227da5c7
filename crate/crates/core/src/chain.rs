//! Finite ergodic Markov reward processes.
//!
//! A [`MarkovRewardProcess`] is the chain being evaluated: a row-stochastic
//! kernel, a bounded reward and a discount. The module generates random
//! Garnet instances, computes the stationary distribution and the exact
//! value function, applies the Bellman and `T^λ` operators and samples
//! trajectories started from stationarity.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::rng_from_seed;

/// Row sums must equal one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
pub const STATIONARY_TOL: f64 = 1e-10;
pub const STATIONARY_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovRewardProcess {
    p: DMatrix<f64>,
    r: DVector<f64>,
    gamma: f64,
    r_max: f64,
}

impl MarkovRewardProcess {
    /// Validate and build a chain from an explicit kernel and reward.
    pub fn new(p: DMatrix<f64>, r: DVector<f64>, gamma: f64, r_max: f64) -> Result<Self> {
        let s = p.nrows();
        if s == 0 || p.ncols() != s {
            return Err(Error::invalid(format!(
                "kernel must be square and non-empty, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        if r.len() != s {
            return Err(Error::invalid(format!("reward has {} entries for {} states", r.len(), s)));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("discount must lie in (0,1), got {gamma}")));
        }
        for (i, row) in p.row_iter().enumerate() {
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {sum}")));
            }
        }
        if r.iter().any(|&x| !(0.0..=r_max).contains(&x)) {
            return Err(Error::invalid(format!("rewards must lie in [0, {r_max}]")));
        }
        Ok(Self { p, r, gamma, r_max })
    }

    pub fn n_states(&self) -> usize {
        self.p.nrows()
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `R_max / (1 - γ)`, the sup bound on the value function.
    pub fn v_max(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    /// Same kernel and reward with another discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.p.clone(), self.r.clone(), gamma, self.r_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarnetSpec {
    pub n_states: usize,
    pub branching: usize,
    pub seed: u64,
    /// Weight of the uniform kernel blended in to certify ergodicity.
    pub ergodicity_blend: f64,
}

impl GarnetSpec {
    pub const DEFAULT_BRANCHING: usize = 5;
    pub const DEFAULT_BLEND: f64 = 0.01;

    pub fn new(n_states: usize, seed: u64) -> Self {
        Self { n_states, branching: Self::DEFAULT_BRANCHING.min(n_states), seed, ergodicity_blend: Self::DEFAULT_BLEND }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::invalid("a Garnet needs at least one state"));
        }
        if self.branching == 0 || self.branching > self.n_states {
            return Err(Error::invalid(format!("branching {} must lie in [1, {}]", self.branching, self.n_states)));
        }
        if !(0.0..0.1).contains(&self.ergodicity_blend) {
            return Err(Error::invalid(format!("blend {} must lie in [0, 0.1)", self.ergodicity_blend)));
        }
        Ok(())
    }
}

/// Generate a random Garnet chain with uniform rewards on `[0, 1]`.
///
/// Each row picks `branching` distinct successors and splits the unit mass
/// between them at sorted uniform cut points. The kernel is then blended with
/// the uniform kernel. The discount is set by the caller.
pub fn garnet_generate(spec: &GarnetSpec, gamma: f64) -> Result<MarkovRewardProcess> {
    spec.validate()?;
    let s = spec.n_states;
    let k = spec.branching;
    let eta = spec.ergodicity_blend;
    let mut rng = rng_from_seed(spec.seed);

    let mut p = DMatrix::zeros(s, s);
    let mut cuts = Vec::with_capacity(k + 1);
    for i in 0..s {
        let successors = index::sample(&mut rng, s, k).into_vec();
        cuts.clear();
        cuts.push(0.0);
        cuts.extend((1..k).map(|_| rng.random::<f64>()));
        cuts.push(1.0);
        cuts[1..k].sort_by(f64::total_cmp);
        for (j, &succ) in successors.iter().enumerate() {
            p[(i, succ)] = cuts[j + 1] - cuts[j];
        }
    }
    if eta > 0.0 {
        let uniform = eta / s as f64;
        p.apply(|x| *x = (1.0 - eta) * *x + uniform);
    }
    for mut row in p.row_iter_mut() {
        let sum: f64 = row.iter().sum();
        row /= sum;
    }

    let r = DVector::from_fn(s, |_, _| rng.random::<f64>());
    MarkovRewardProcess::new(p, r, gamma, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub mu: DVector<f64>,
    /// `‖μᵀP − μᵀ‖∞` at termination.
    pub residual: f64,
}

impl StationaryDistribution {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.mu.as_slice()
    }

    /// Explicit distribution, used for hand-built chains in tests.
    pub fn from_weights(mu: DVector<f64>) -> Result<Self> {
        if mu.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::invalid("stationary weights must be non-negative"));
        }
        let total = mu.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("stationary weights sum to {total}")));
        }
        Ok(Self { mu, residual: 0.0 })
    }
}

/// Stationary distribution by power iteration on `Pᵀ` from the uniform vector.
pub fn stationary_distribution(mrp: &MarkovRewardProcess) -> Result<StationaryDistribution> {
    let s = mrp.n_states();
    let p_t = mrp.kernel().transpose();
    let mut mu = DVector::from_element(s, 1.0 / s as f64);
    let mut next = DVector::zeros(s);
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITERS {
        next.gemv(1.0, &p_t, &mu, 0.0);
        residual = (&next - &mu).amax();
        if residual <= STATIONARY_TOL {
            return Ok(StationaryDistribution { mu, residual });
        }
        let total = next.sum();
        next /= total;
        std::mem::swap(&mut mu, &mut next);
    }
    Err(Error::NonConvergence { residual, iterations: STATIONARY_MAX_ITERS })
}

/// `v = (I − γP)⁻¹ r`.
pub fn exact_value(mrp: &MarkovRewardProcess) -> Result<DVector<f64>> {
    let s = mrp.n_states();
    let system = DMatrix::identity(s, s) - mrp.kernel() * mrp.gamma();
    linalg::solve(&system, mrp.reward()).ok_or_else(|| Error::SingularSystem("I - γP".into()))
}

/// `Tv = r + γPv`.
pub fn bellman_apply(mrp: &MarkovRewardProcess, v: &DVector<f64>) -> DVector<f64> {
    let mut out = mrp.reward().clone();
    out.gemv(mrp.gamma(), mrp.kernel(), v, 1.0);
    out
}

/// `T^λ v = (I − λγP)⁻¹ r + (1 − λ)γ P (I − λγP)⁻¹ v`.
pub fn t_lambda_apply(mrp: &MarkovRewardProcess, lambda: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("λ must lie in [0,1], got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(bellman_apply(mrp, v));
    }
    let s = mrp.n_states();
    let gamma = mrp.gamma();
    let resolvent = DMatrix::identity(s, s) - mrp.kernel() * (lambda * gamma);
    let mut rhs = DMatrix::zeros(s, 2);
    rhs.set_column(0, mrp.reward());
    rhs.set_column(1, v);
    let solved = linalg::solve_matrix(&resolvent, &rhs).ok_or_else(|| Error::SingularSystem("I - λγP".into()))?;
    let mut out: DVector<f64> = solved.column(0).into_owned();
    let weight = (1.0 - lambda) * gamma;
    if weight != 0.0 {
        out.gemv(weight, mrp.kernel(), &solved.column(1).into_owned(), 1.0);
    }
    Ok(out)
}

/// A sampled state sequence `X₁ … X_n` with the reward of each visited state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Length-`n` prefix.
    pub fn prefix(&self, n: usize) -> Trajectory {
        Trajectory { states: self.states[..n.min(self.states.len())].to_vec(), seed: self.seed }
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

#[inline]
fn draw(cdf: &[f64], u: f64) -> usize {
    // u is in [0,1); the last bucket absorbs round-off in the cumulative sum.
    let scaled = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= scaled).min(cdf.len() - 1)
}

/// Sample a trajectory of length `n` with `X₁ ~ μ`, by inverse-CDF sampling.
pub fn sample_trajectory(
    mrp: &MarkovRewardProcess,
    mu: &StationaryDistribution,
    n: usize,
    seed: u64,
) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::invalid(format!("trajectory length must be at least 2, got {n}")));
    }
    let s = mrp.n_states();
    if mu.len() != s {
        return Err(Error::invalid("stationary distribution does not match the chain"));
    }
    let mut rng = rng_from_seed(seed);
    let start_cdf = cumulative(mu.mu.iter().copied());
    let row_cdfs: Vec<Vec<f64>> = (0..s).map(|i| cumulative(mrp.kernel().row(i).iter().copied())).collect();

    let mut states = Vec::with_capacity(n);
    let mut x = draw(&start_cdf, rng.random::<f64>());
    states.push(x);
    for _ in 1..n {
        x = draw(&row_cdfs[x], rng.random::<f64>());
        states.push(x);
    }
    Ok(Trajectory { states, seed })
}

/// Structured-text document persisted by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrpDocument {
    pub n_states: usize,
    pub gamma: f64,
    /// Row-major dense kernel.
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    pub seed_provenance: Option<SeedProvenance>,
}

fn default_r_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub master_seed: u64,
    pub instance_id: u64,
    pub attempt: u64,
    pub garnet: GarnetSpec,
}

impl MrpDocument {
    pub fn from_mrp(mrp: &MarkovRewardProcess, provenance: Option<SeedProvenance>) -> Self {
        Self {
            n_states: mrp.n_states(),
            gamma: mrp.gamma(),
            p: mrp.kernel().row_iter().map(|row| row.iter().copied().collect()).collect(),
            r: mrp.reward().iter().copied().collect(),
            r_max: mrp.r_max(),
            seed_provenance: provenance,
        }
    }

    pub fn to_mrp(&self) -> Result<MarkovRewardProcess> {
        if self.p.len() != self.n_states || self.p.iter().any(|row| row.len() != self.n_states) {
            return Err(Error::invalid("P does not match n_states"));
        }
        let flat: Vec<f64> = self.p.iter().flatten().copied().collect();
        let p = DMatrix::from_row_slice(self.n_states, self.n_states, &flat);
        MarkovRewardProcess::new(p, DVector::from_vec(self.r.clone()), self.gamma, self.r_max)
    }
}
