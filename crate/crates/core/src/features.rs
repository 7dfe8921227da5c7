//! Linear architectures and the μ-weighted geometry they live in.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::StationaryDistribution;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{rng_from_seed, split_seed, stream};

pub const RANK_ATTEMPTS: usize = 16;
pub const SINGULAR_GRAM_TOL: f64 = 1e-14;
/// Largest state count for which Π is materialised as a dense S×S matrix.
pub const DENSE_PROJECTION_MAX_STATES: usize = 2000;

/// Relative singular-value threshold used for the rank check.
const RANK_RTOL: f64 = 1e-10;

/// An S×d feature matrix Φ with linearly independent columns and
/// `max |Φ[i][j]| ≤ L`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    bound: f64,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>, bound: f64) -> Result<Self> {
        let (s, d) = phi.shape();
        if d == 0 || d > s {
            return Err(Error::invalid(format!("feature dimension {d} must lie in [1, {s}]")));
        }
        let sup = phi.amax();
        if !sup.is_finite() || sup > bound {
            return Err(Error::invalid(format!("feature entries reach {sup}, above the bound {bound}")));
        }
        if !full_column_rank(&phi) {
            return Err(Error::RankDeficient { attempts: 1 });
        }
        Ok(Self { phi, bound })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// The per-feature sup bound `L`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// φ(x) as a row slice copy.
    pub fn features_of(&self, state: usize) -> DVector<f64> {
        self.phi.row(state).transpose()
    }

    /// `Φθ`.
    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.phi * theta
    }
}

fn full_column_rank(phi: &DMatrix<f64>) -> bool {
    let sv = phi.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > RANK_RTOL * max
}

/// Random features with i.i.d. entries uniform on `[0, L]`, redrawn with a
/// fresh sub-seed until the columns are linearly independent.
pub fn random_features(n_states: usize, dim: usize, bound: f64, seed: u64) -> Result<FeatureMap> {
    if dim == 0 || dim > n_states {
        return Err(Error::invalid(format!("feature dimension {dim} must lie in [1, {n_states}]")));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::invalid(format!("feature bound must be positive, got {bound}")));
    }
    for attempt in 0..RANK_ATTEMPTS {
        let sub = if attempt == 0 { seed } else { split_seed(seed, &[stream::RANK_RETRY, attempt as u64]) };
        let mut rng = rng_from_seed(sub);
        // Row-major fill so that the stream order matches the state order.
        let mut phi = DMatrix::zeros(n_states, dim);
        for i in 0..n_states {
            for j in 0..dim {
                phi[(i, j)] = rng.random::<f64>() * bound;
            }
        }
        if full_column_rank(&phi) {
            return Ok(FeatureMap { phi, bound });
        }
    }
    Err(Error::RankDeficient { attempts: RANK_ATTEMPTS })
}

/// `‖f‖_μ = √(Σ μ(x) f(x)²)`.
pub fn mu_norm(mu: &StationaryDistribution, f: &DVector<f64>) -> f64 {
    assert_eq!(mu.len(), f.len(), "dimension mismatch in μ-norm");
    mu.mu.iter().zip(f.iter()).map(|(&w, &x)| w * x * x).sum::<f64>().sqrt()
}

/// Gram matrix, its smallest eigenvalue and the μ-orthogonal projection onto
/// the span of Φ.
#[derive(Debug, Clone)]
pub struct MuGeometry {
    pub gram: DMatrix<f64>,
    pub nu: f64,
    /// Dense Π, present when `S ≤ DENSE_PROJECTION_MAX_STATES`.
    pub projection: Option<DMatrix<f64>>,
    chol: Cholesky<f64, Dyn>,
    phi: DMatrix<f64>,
    weights: DVector<f64>,
}

pub fn mu_geometry(features: &FeatureMap, mu: &StationaryDistribution) -> Result<MuGeometry> {
    let phi = features.matrix();
    if mu.len() != phi.nrows() {
        return Err(Error::invalid("stationary distribution does not match the feature map"));
    }
    let weighted = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, j| mu.mu[i] * phi[(i, j)]);
    let mut gram = phi.transpose() * &weighted;
    gram = (&gram + gram.transpose()) * 0.5;

    let nu = SymmetricEigen::new(gram.clone()).eigenvalues.min();
    if !(nu > SINGULAR_GRAM_TOL) {
        return Err(Error::SingularGram { nu });
    }
    let chol = Cholesky::new(gram.clone()).ok_or(Error::SingularGram { nu })?;

    let projection = (phi.nrows() <= DENSE_PROJECTION_MAX_STATES).then(|| phi * chol.solve(&weighted.transpose()));

    Ok(MuGeometry { gram, nu, projection, chol, phi: phi.clone(), weights: mu.mu.clone() })
}

impl MuGeometry {
    /// `Πv`, computed as `Φ M_μ⁻¹ Φᵀ D_μ v` without forming Π.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let rhs = self.phi.transpose() * v.component_mul(&self.weights);
        &self.phi * self.chol.solve(&rhs)
    }

    /// Coefficients of `Πv` in the feature basis.
    pub fn project_coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        let rhs = self.phi.transpose() * v.component_mul(&self.weights);
        self.chol.solve(&rhs)
    }

    /// `M_μ⁻¹ x`.
    pub fn gram_solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(x)
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// `‖v − Πv‖_μ`.
    pub fn projection_residual(&self, v: &DVector<f64>) -> f64 {
        let diff = v - self.project(v);
        diff.iter().zip(self.weights.iter()).map(|(&x, &w)| w * x * x).sum::<f64>().sqrt()
    }

    pub fn condition_number(&self) -> f64 {
        let eig = SymmetricEigen::new(self.gram.clone()).eigenvalues;
        eig.max() / eig.min()
    }
}

/// Smallest singular value of Φ, exposed for diagnostics.
pub fn feature_min_singular_value(features: &FeatureMap) -> f64 {
    linalg::min_singular_value(features.matrix())
}

/// Row-major feature document stored alongside the chain document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDocument {
    #[serde(rename = "Phi")]
    pub phi: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    pub bound: f64,
}

impl FeatureDocument {
    pub fn from_features(features: &FeatureMap) -> Self {
        Self {
            phi: features.matrix().row_iter().map(|row| row.iter().copied().collect()).collect(),
            bound: features.bound(),
        }
    }

    pub fn to_features(&self) -> Result<FeatureMap> {
        let rows = self.phi.len();
        let cols = self.phi.first().map_or(0, Vec::len);
        if self.phi.iter().any(|row| row.len() != cols) {
            return Err(Error::invalid("ragged feature matrix"));
        }
        let flat: Vec<f64> = self.phi.iter().flatten().copied().collect();
        FeatureMap::new(DMatrix::from_row_slice(rows, cols, &flat), self.bound)
    }
}
