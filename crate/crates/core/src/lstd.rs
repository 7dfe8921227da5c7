//! The LSTD(λ) estimator and its exact model-based counterpart.
//!
//! [`LstdAccumulator`] folds a trajectory one state at a time, maintaining
//! the eligibility trace `z_{i+1} = λγ z_i + φ(X_{i+1})` and the running sums
//! behind `Â = 1/(n−1) Σ z_i (φ(X_i) − γφ(X_{i+1}))ᵀ` and
//! `b̂ = 1/(n−1) Σ z_i r(X_i)`. Estimates can be taken at any checkpoint
//! without disturbing the fold, so a single pass yields a whole learning
//! curve.
//!
//! [`exact_a_b`] computes the limits `A`, `b`, `θ` and `v_LSTD(λ) = Φθ` from
//! the model by dense resolvent solves.

use std::collections::VecDeque;

use nalgebra::storage::Storage;
use nalgebra::{DMatrix, DVector, Dyn, Matrix, U1};
use serde::Serialize;

use crate::chain::{MarkovRewardProcess, StationaryDistribution, Trajectory};
use crate::error::{Error, Result};
use crate::features::{mu_norm, FeatureMap, MuGeometry};
use crate::linalg::{self, CompensatedMatrix};

/// Â is inverted through the pseudo-inverse below this smallest singular value.
pub const PINV_THRESHOLD: f64 = 1e-12;

/// Transitions summed in plain arithmetic before being folded into the
/// compensated totals.
const BLOCK_LEN: usize = 256;

fn check_lambda_gamma(lambda: f64, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("λ must lie in [0,1], got {lambda}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("γ must lie in (0,1), got {gamma}")));
    }
    Ok(())
}

/// Eligibility trace with decay `λγ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTrace {
    pub z: DVector<f64>,
    pub lambda_gamma: f64,
    started: bool,
}

impl EligibilityTrace {
    pub fn new(dim: usize, lambda_gamma: f64) -> Self {
        Self { z: DVector::zeros(dim), lambda_gamma, started: false }
    }

    /// `z ← λγ z + φ`, with `z₁ = φ(X₁)`.
    pub fn push<S: Storage<f64, Dyn>>(&mut self, phi: &Matrix<f64, Dyn, U1, S>) {
        if self.started {
            self.z.axpy(1.0, phi, self.lambda_gamma);
        } else {
            self.z.copy_from(phi);
            self.started = true;
        }
    }

    /// Geometric-sum envelope `L / (1 − λγ)` on `‖z‖∞`.
    pub fn envelope(&self, bound: f64) -> f64 {
        bound / (1.0 - self.lambda_gamma)
    }
}

/// Trace truncated to the last `depth` states:
/// `zᵐ_i = Σ_{k=max(i−m+1,1)}^{i} (λγ)^{i−k} φ(X_k)`.
#[derive(Debug, Clone)]
pub struct TruncatedTrace {
    depth: usize,
    lambda_gamma: f64,
    window: VecDeque<usize>,
    z: DVector<f64>,
}

impl TruncatedTrace {
    pub fn new(dim: usize, lambda_gamma: f64, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("truncation depth must be at least 1"));
        }
        Ok(Self { depth, lambda_gamma, window: VecDeque::with_capacity(depth), z: DVector::zeros(dim) })
    }

    /// Push `X_i` and return `zᵐ_i`. `phi_t` is Φᵀ (features by column).
    pub fn push(&mut self, state: usize, phi_t: &DMatrix<f64>) -> &DVector<f64> {
        if self.window.len() == self.depth {
            self.window.pop_front();
        }
        self.window.push_back(state);
        // Horner from the oldest retained state; with nothing dropped this is
        // the same operation sequence as the full recursion.
        self.z.fill(0.0);
        for (k, &x) in self.window.iter().enumerate() {
            if k == 0 {
                self.z.copy_from(&phi_t.column(x));
            } else {
                self.z.axpy(1.0, &phi_t.column(x), self.lambda_gamma);
            }
        }
        &self.z
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }
}

/// Finite-sample LSTD(λ) estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LstdEstimate {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    /// Number of states in the trajectory prefix.
    pub n: usize,
    pub min_singular_value: f64,
    pub used_pseudo_inverse: bool,
}

impl LstdEstimate {
    fn from_sums(a_hat: DMatrix<f64>, b_hat: DVector<f64>, n: usize) -> Self {
        let min_singular_value = linalg::min_singular_value(&a_hat);
        let solved = if min_singular_value < PINV_THRESHOLD { None } else { linalg::solve(&a_hat, &b_hat) };
        let (theta_hat, used_pseudo_inverse) = match solved {
            Some(theta) => (theta, false),
            None => (linalg::pinv_solve(&a_hat, &b_hat, PINV_THRESHOLD), true),
        };
        Self { a_hat, b_hat, theta_hat, n, min_singular_value, used_pseudo_inverse }
    }

    /// `Φθ̂`.
    pub fn value(&self, features: &FeatureMap) -> DVector<f64> {
        features.apply(&self.theta_hat)
    }
}

/// Blocked, compensated sums of `z_i τ_iᵀ` and `z_i r(X_i)`.
#[derive(Debug, Clone)]
struct Sums {
    block_a: DMatrix<f64>,
    block_b: DMatrix<f64>,
    total_a: CompensatedMatrix,
    total_b: CompensatedMatrix,
    in_block: usize,
    transitions: usize,
}

impl Sums {
    fn new(dim: usize) -> Self {
        Self {
            block_a: DMatrix::zeros(dim, dim),
            block_b: DMatrix::zeros(dim, 1),
            total_a: CompensatedMatrix::zeros(dim, dim),
            total_b: CompensatedMatrix::zeros(dim, 1),
            in_block: 0,
            transitions: 0,
        }
    }

    fn add(&mut self, z: &DVector<f64>, diff: &DVector<f64>, reward: f64) {
        self.block_a.ger(1.0, z, diff, 1.0);
        self.block_b.column_mut(0).axpy(reward, z, 1.0);
        self.in_block += 1;
        self.transitions += 1;
        if self.in_block == BLOCK_LEN {
            self.total_a.add(&self.block_a);
            self.total_b.add(&self.block_b);
            self.block_a.fill(0.0);
            self.block_b.fill(0.0);
            self.in_block = 0;
        }
    }

    fn estimate(&self) -> Option<LstdEstimate> {
        if self.transitions == 0 {
            return None;
        }
        let scale = 1.0 / self.transitions as f64;
        let a_hat = self.total_a.value_with(&self.block_a) * scale;
        let b_hat: DVector<f64> = self.total_b.value_with(&self.block_b).column(0) * scale;
        Some(LstdEstimate::from_sums(a_hat, b_hat, self.transitions + 1))
    }
}

/// Single-pass LSTD(λ) fold over a trajectory.
#[derive(Debug, Clone)]
pub struct LstdAccumulator {
    phi_t: DMatrix<f64>,
    rewards: DVector<f64>,
    gamma: f64,
    trace: EligibilityTrace,
    prev: Option<usize>,
    sums: Sums,
    diff: DVector<f64>,
    max_trace_sup: f64,
}

impl LstdAccumulator {
    pub fn new(features: &FeatureMap, rewards: &DVector<f64>, lambda: f64, gamma: f64) -> Result<Self> {
        check_lambda_gamma(lambda, gamma)?;
        if rewards.len() != features.n_states() {
            return Err(Error::invalid("reward vector does not match the feature map"));
        }
        let d = features.dim();
        Ok(Self {
            phi_t: features.matrix().transpose(),
            rewards: rewards.clone(),
            gamma,
            trace: EligibilityTrace::new(d, lambda * gamma),
            prev: None,
            sums: Sums::new(d),
            diff: DVector::zeros(d),
            max_trace_sup: 0.0,
        })
    }

    pub fn push(&mut self, state: usize) {
        if let Some(prev) = self.prev {
            // diff = φ(X_i) − γφ(X_{i+1})
            self.diff.copy_from(&self.phi_t.column(prev));
            self.diff.axpy(-self.gamma, &self.phi_t.column(state), 1.0);
            self.sums.add(&self.trace.z, &self.diff, self.rewards[prev]);
        }
        self.trace.push(&self.phi_t.column(state));
        self.max_trace_sup = self.max_trace_sup.max(self.trace.z.amax());
        self.prev = Some(state);
    }

    pub fn extend(&mut self, states: &[usize]) {
        for &x in states {
            self.push(x);
        }
    }

    /// Number of states consumed so far.
    pub fn samples(&self) -> usize {
        self.sums.transitions + usize::from(self.prev.is_some())
    }

    /// Estimate over the states consumed so far; `None` before two states.
    pub fn estimate(&self) -> Option<LstdEstimate> {
        self.sums.estimate()
    }

    pub fn trace(&self) -> &EligibilityTrace {
        &self.trace
    }

    /// Largest `‖z_i‖∞` seen so far.
    pub fn max_trace_sup(&self) -> f64 {
        self.max_trace_sup
    }
}

/// LSTD(λ) on a whole trajectory.
pub fn lstd_estimate(
    traj: &Trajectory,
    features: &FeatureMap,
    rewards: &DVector<f64>,
    lambda: f64,
    gamma: f64,
) -> Result<LstdEstimate> {
    if traj.len() < 2 {
        return Err(Error::invalid("LSTD needs a trajectory of at least two states"));
    }
    let mut acc = LstdAccumulator::new(features, rewards, lambda, gamma)?;
    acc.extend(&traj.states);
    Ok(acc.estimate().expect("at least one transition"))
}

/// LSTD(λ) with the trace truncated to the last `depth` states.
pub fn lstd_estimate_truncated(
    traj: &Trajectory,
    features: &FeatureMap,
    rewards: &DVector<f64>,
    lambda: f64,
    gamma: f64,
    depth: usize,
) -> Result<LstdEstimate> {
    check_lambda_gamma(lambda, gamma)?;
    if traj.len() < 2 {
        return Err(Error::invalid("LSTD needs a trajectory of at least two states"));
    }
    let phi_t = features.matrix().transpose();
    let mut trace = TruncatedTrace::new(features.dim(), lambda * gamma, depth)?;
    let mut sums = Sums::new(features.dim());
    let mut diff = DVector::zeros(features.dim());
    trace.push(traj.states[0], &phi_t);
    for w in traj.states.windows(2) {
        let (prev, next) = (w[0], w[1]);
        diff.copy_from(&phi_t.column(prev));
        diff.axpy(-gamma, &phi_t.column(next), 1.0);
        sums.add(trace.z(), &diff, rewards[prev]);
        trace.push(next, &phi_t);
    }
    Ok(sums.estimate().expect("at least one transition"))
}

/// Exact limits of the estimator for one instance and one λ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactSolution {
    pub lambda: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub theta: DVector<f64>,
    /// `v_LSTD(λ) = Φθ`.
    pub v_fixed: DVector<f64>,
}

/// `A = ΦᵀD_μ(I−γP)(I−λγP)⁻¹Φ`, `b = ΦᵀD_μ(I−λγP)⁻¹r`, `θ = A⁻¹b`.
pub fn exact_a_b(
    mrp: &MarkovRewardProcess,
    features: &FeatureMap,
    geometry: &MuGeometry,
    lambda: f64,
) -> Result<ExactSolution> {
    let gamma = mrp.gamma();
    check_lambda_gamma(lambda, gamma)?;
    let s = mrp.n_states();
    let d = features.dim();
    if features.n_states() != s {
        return Err(Error::invalid("feature map does not match the chain"));
    }
    let phi = features.matrix();

    let mut rhs = DMatrix::zeros(s, d + 1);
    rhs.columns_mut(0, d).copy_from(phi);
    rhs.set_column(d, mrp.reward());
    let resolvent = DMatrix::identity(s, s) - mrp.kernel() * (lambda * gamma);
    let solved = linalg::solve_matrix(&resolvent, &rhs).ok_or_else(|| Error::SingularSystem("I - λγP".into()))?;
    let y = solved.columns(0, d).into_owned();
    let y_r: DVector<f64> = solved.column(d).into_owned();

    let weighted_t = DMatrix::from_fn(d, s, |j, i| phi[(i, j)] * geometry.weights()[i]);
    let a = &weighted_t * (&y - mrp.kernel() * &y * gamma);
    let b = &weighted_t * y_r;
    let theta = linalg::solve(&a, &b).ok_or(Error::SingularA)?;
    let v_fixed = features.apply(&theta);
    Ok(ExactSolution { lambda, a, b, theta, v_fixed })
}

/// `‖Φθ̂ − Φθ‖_μ`.
pub fn lstd_error(
    estimate: &LstdEstimate,
    exact: &ExactSolution,
    features: &FeatureMap,
    mu: &StationaryDistribution,
) -> f64 {
    mu_norm(mu, &features.apply(&(&estimate.theta_hat - &exact.theta)))
}

/// Per-step temporal residual `Δ_i = v_LSTD(X_i) − γ v_LSTD(X_{i+1}) − r(X_i)`;
/// returns `max_i |Δ_i|`.
pub fn temporal_residual_sup(traj: &Trajectory, exact: &ExactSolution, rewards: &DVector<f64>, gamma: f64) -> f64 {
    traj.states
        .windows(2)
        .map(|w| (exact.v_fixed[w[0]] - gamma * exact.v_fixed[w[1]] - rewards[w[0]]).abs())
        .fold(0.0, f64::max)
}

/// The finite-sample estimation-error decomposition evaluated with the
/// oracle quantities: with `ε_A = Â − A` and `ε_b = b̂ − b`,
/// `‖Φθ̂ − Φθ‖_μ ≤ (1−λγ)/((1−γ)√ν) ‖(I + ε_A A⁻¹)⁻¹‖₂ ‖ε_A θ − ε_b‖₂`
/// whenever `‖ε_A‖₂ < C = (1−γ)ν/(1−λγ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimationDecomposition {
    pub eps_a_norm: f64,
    pub invertibility_constant: f64,
    /// `‖ε_A‖₂ < C`.
    pub applicable: bool,
    pub a_hat_invertible: bool,
    pub lhs: f64,
    pub rhs: f64,
}

impl EstimationDecomposition {
    /// Whether the inequality holds, allowing for round-off in the oracle.
    pub fn holds(&self) -> bool {
        !self.applicable || (self.a_hat_invertible && self.lhs <= self.rhs * (1.0 + 1e-9) + 1e-12)
    }
}

pub fn estimation_decomposition(
    estimate: &LstdEstimate,
    exact: &ExactSolution,
    features: &FeatureMap,
    mu: &StationaryDistribution,
    geometry: &MuGeometry,
    gamma: f64,
) -> Result<EstimationDecomposition> {
    let lambda_gamma = exact.lambda * gamma;
    let eps_a = &estimate.a_hat - &exact.a;
    let eps_b = &estimate.b_hat - &exact.b;
    let eps_a_norm = linalg::spectral_norm(&eps_a);
    let c = (1.0 - gamma) * geometry.nu / (1.0 - lambda_gamma);

    let d = exact.a.nrows();
    let a_inv = exact.a.clone().try_inverse().ok_or(Error::SingularA)?;
    let perturbed = DMatrix::identity(d, d) + &eps_a * a_inv;
    let sigma_min = linalg::min_singular_value(&perturbed);
    let inverse_norm = if sigma_min > 0.0 { 1.0 / sigma_min } else { f64::INFINITY };
    let k = (1.0 - lambda_gamma) / ((1.0 - gamma) * geometry.nu.sqrt());
    let rhs = k * inverse_norm * (&eps_a * &exact.theta - eps_b).norm();

    Ok(EstimationDecomposition {
        eps_a_norm,
        invertibility_constant: c,
        applicable: eps_a_norm < c,
        a_hat_invertible: estimate.min_singular_value > 0.0 && !estimate.used_pseudo_inverse,
        lhs: lstd_error(estimate, exact, features, mu),
        rhs,
    })
}
