//! Finite-sample and asymptotic error bounds for LSTD(λ).
//!
//! Every quantity here is a closed-form function of the instance constants
//! (`d`, `L`, `ν`, `V_max`, `R_max`, `γ`), the trace parameter `λ`, the sample
//! size `n`, the confidence `δ` and the exponential β-mixing envelope
//! `β_i ≤ β̄ exp(−b iᵏ)`. Sample sizes are taken as `f64` where the formulas
//! allow it so that the asymptotic regime (`n` up to `2⁶³`) can be explored.
//!
//! Naming follows the estimator's error analysis:
//!
//! | function                | quantity                                              |
//! |-------------------------|-------------------------------------------------------|
//! | [`capital_lambda`]      | `Λ(n,δ) = log(8n²/δ) + log(max{4e², nβ̄})`            |
//! | [`capital_i`]           | `I(n,δ) = 32Λ max{Λ/b, 1}^{1/κ}`                      |
//! | [`capital_gamma`]       | `Γ(n,δ) = log(2/δ) + log(max{4e², nβ̄})`              |
//! | [`capital_j`]           | `J(n,δ) = 32Γ max{Γ/b, 1}^{1/κ}`                      |
//! | [`trace_truncation_error`] | `ε(n) = 2m√(dk) L L′ / ((n−1)(1−λγ))`              |
//! | [`invertibility_lhs`]   | left side of the `n₀(δ)` condition                    |
//! | [`epsilon_terms`]       | `ε₀`, `ε′₀`, `ε₁`, `ε₂`, `C` and the `|Δ_i|` bound    |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `4e²`, the floor inside the mixing logarithm.
pub const FOUR_E_SQUARED: f64 = 4.0 * std::f64::consts::E * std::f64::consts::E;

/// Exponential β-mixing envelope `β_i ≤ β̄ exp(−b iᵏ)`.
///
/// `b = +∞` together with `β̄ = 0` encodes independent samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingParams {
    pub beta_bar: f64,
    pub b: f64,
    pub kappa: f64,
}

impl Default for MixingParams {
    fn default() -> Self {
        Self { beta_bar: 1.0, b: 1.0, kappa: 1.0 }
    }
}

impl MixingParams {
    pub fn independent() -> Self {
        Self { beta_bar: 0.0, b: f64::INFINITY, kappa: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_bar >= 0.0 && self.beta_bar.is_finite()) {
            return Err(Error::invalid(format!("β̄ must be finite and non-negative, got {}", self.beta_bar)));
        }
        if !(self.b > 0.0) {
            return Err(Error::invalid(format!("b must be positive, got {}", self.b)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("κ must be positive, got {}", self.kappa)));
        }
        Ok(())
    }

    fn log_factor(&self, n: f64) -> f64 {
        FOUR_E_SQUARED.max(n * self.beta_bar).ln()
    }

    /// `32x max{x/b, 1}^{1/κ}`.
    fn inflate(&self, x: f64) -> f64 {
        32.0 * x * (x / self.b).max(1.0).powf(1.0 / self.kappa)
    }
}

pub fn capital_lambda(n: f64, delta: f64, mixing: &MixingParams) -> f64 {
    (8.0 * n * n / delta).ln() + mixing.log_factor(n)
}

pub fn capital_i(n: f64, delta: f64, mixing: &MixingParams) -> f64 {
    mixing.inflate(capital_lambda(n, delta, mixing))
}

pub fn capital_gamma(n: f64, delta: f64, mixing: &MixingParams) -> f64 {
    (2.0 / delta).ln() + mixing.log_factor(n)
}

pub fn capital_j(n: f64, delta: f64, mixing: &MixingParams) -> f64 {
    mixing.inflate(capital_gamma(n, delta, mixing))
}

/// Truncation depth `m = ⌈log(n−1) / log(1/λγ)⌉`, at least 1.
///
/// With `λγ = 0` the trace only holds the current feature vector and the
/// depth is 1.
pub fn m_star(n: f64, lambda_gamma: f64) -> u64 {
    if lambda_gamma <= 0.0 || n <= 2.0 {
        return 1;
    }
    let m = ((n - 1.0).ln() / (1.0 / lambda_gamma).ln()).ceil();
    (m as u64).max(1)
}

/// `ε(n) = 2m√(dk) L L′ / ((n−1)(1−λγ))` with `m = m_star(n)`.
pub fn trace_truncation_error(n: f64, lambda_gamma: f64, d: f64, k: f64, l: f64, l_prime: f64) -> f64 {
    let m = m_star(n, lambda_gamma) as f64;
    2.0 * m * (d * k).sqrt() * l * l_prime / ((n - 1.0) * (1.0 - lambda_gamma))
}

/// Deviation radius of a trace-based `d×k` average: with probability
/// `1 − δ`, `‖Ĝ − E Ĝ‖₂` is below
/// `2√(dk) L L′ / ((1−λγ)√(n−1)) √((m+1) J(n−1,δ)) + ε(n)`.
#[allow(clippy::too_many_arguments)]
pub fn concentration_radius(
    n: f64,
    delta: f64,
    lambda_gamma: f64,
    d: f64,
    k: f64,
    l: f64,
    l_prime: f64,
    mixing: &MixingParams,
) -> f64 {
    concentration_leading(n, delta, lambda_gamma, d, k, l, l_prime, mixing)
        + trace_truncation_error(n, lambda_gamma, d, k, l, l_prime)
}

#[allow(clippy::too_many_arguments)]
fn concentration_leading(
    n: f64,
    delta: f64,
    lambda_gamma: f64,
    d: f64,
    k: f64,
    l: f64,
    l_prime: f64,
    mixing: &MixingParams,
) -> f64 {
    let m = m_star(n, lambda_gamma) as f64;
    2.0 * (d * k).sqrt() * l * l_prime / ((1.0 - lambda_gamma) * (n - 1.0).sqrt())
        * ((m + 1.0) * capital_j(n - 1.0, delta, mixing)).sqrt()
}

/// Every constant a bound needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: u64,
    pub delta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub d: usize,
    /// Feature sup bound `L`.
    pub l: f64,
    /// Smallest eigenvalue of the Gram matrix.
    pub nu: f64,
    pub v_max: f64,
    pub r_max: f64,
    pub mixing: MixingParams,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("δ must lie in (0,1), got {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("λ must lie in [0,1], got {}", self.lambda)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("γ must lie in (0,1), got {}", self.gamma)));
        }
        if self.d == 0 || !(self.l > 0.0) || !(self.nu > 0.0) || !(self.v_max > 0.0) || !(self.r_max >= 0.0) {
            return Err(Error::invalid("d, L, ν and V_max must be positive and R_max non-negative"));
        }
        self.mixing.validate()
    }

    pub fn lambda_gamma(&self) -> f64 {
        self.lambda * self.gamma
    }

    pub fn with_n(&self, n: u64) -> Self {
        Self { n, ..*self }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }

    /// `(1−λγ) / ((1−γ)√ν)`, the μ-norm amplification from `A`-space errors.
    fn amplification(&self) -> f64 {
        (1.0 - self.lambda_gamma()) / ((1.0 - self.gamma) * self.nu.sqrt())
    }
}

/// Left side of the sample-size condition defining `n₀(δ)`:
/// `(2dL²/((1−γ)ν)) [2/√(n−1) √((m+1) I(n−1,δ)) + 1/((n−1)(1−λγ)) + 2m/(n−1)]`.
pub fn invertibility_lhs(inputs: &BoundInputs, n: f64) -> f64 {
    let lg = inputs.lambda_gamma();
    let d = inputs.d as f64;
    let m = m_star(n, lg) as f64;
    let prefactor = 2.0 * d * inputs.l * inputs.l / ((1.0 - inputs.gamma) * inputs.nu);
    let bracket = 2.0 / (n - 1.0).sqrt() * ((m + 1.0) * capital_i(n - 1.0, inputs.delta, &inputs.mixing)).sqrt()
        + 1.0 / ((n - 1.0) * (1.0 - lg))
        + 2.0 * m / (n - 1.0);
    prefactor * bracket
}

const N_MAX: u64 = 1 << 63;

/// Smallest `n₀ ≥ 2` from which the sample-size condition holds.
///
/// The left side decreases in `n` while the truncation depth `m` is fixed and
/// jumps up where `m` increments. Doubling brackets a first crossing; the
/// constant-`m` segments below four times that crossing are then walked and
/// the last violation located by bisection inside its segment.
pub fn n_zero(inputs: &BoundInputs) -> Result<u64> {
    inputs.with_n(2).validate()?;
    let holds = |n: u64| invertibility_lhs(inputs, n as f64) < 1.0;

    let mut hi = 2u64;
    while !holds(hi) {
        if hi >= N_MAX {
            return Err(Error::NotFound);
        }
        hi = hi.saturating_mul(2).min(N_MAX);
    }
    let mut limit = hi.saturating_mul(4).min(N_MAX);
    loop {
        let last_bad = last_violation(inputs, &holds, limit);
        match last_bad {
            None => return Ok(2),
            Some(bad) if bad < limit => return Ok(bad + 1),
            Some(_) if limit >= N_MAX => return Err(Error::NotFound),
            Some(_) => limit = limit.saturating_mul(2).min(N_MAX),
        }
    }
}

/// Largest `n ≤ limit` at which the condition fails.
fn last_violation(inputs: &BoundInputs, holds: &impl Fn(u64) -> bool, limit: u64) -> Option<u64> {
    let lg = inputs.lambda_gamma();
    let mut last = None;
    let mut start = 2u64;
    while start <= limit {
        let end = segment_end(start, lg, limit);
        if !holds(start) {
            last = Some(if holds(end) { bisect(holds, start, end) - 1 } else { end });
        }
        if end == limit {
            break;
        }
        start = end + 1;
    }
    last
}

/// Last `n ≤ limit` sharing the truncation depth of `start`.
fn segment_end(start: u64, lambda_gamma: f64, limit: u64) -> u64 {
    if lambda_gamma <= 0.0 || start >= limit {
        return limit;
    }
    let m = m_star(start as f64, lambda_gamma);
    // m_star(n) = m for n − 1 ≤ (1/λγ)^m
    let guess = (m as f64 * (1.0 / lambda_gamma).ln()).exp().floor() + 1.0;
    let mut end = if guess.is_finite() && guess < limit as f64 { (guess as u64).max(start) } else { limit };
    while end > start && m_star(end as f64, lambda_gamma) > m {
        end -= 1;
    }
    while end < limit && m_star((end + 1) as f64, lambda_gamma) == m {
        end += 1;
    }
    end
}

/// Smallest `n ∈ (lo, hi]` with `holds(n)`, given `!holds(lo)` and `holds(hi)`.
fn bisect(holds: &impl Fn(u64) -> bool, mut lo: u64, mut hi: u64) -> u64 {
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Leading term of the estimation-error bound:
/// `4 V_max d L² / (√(n−1)(1−γ)ν) · √((1+m) I(n−1,δ))`.
pub fn estimation_bound(inputs: &BoundInputs) -> f64 {
    let n = inputs.nf();
    let d = inputs.d as f64;
    let m = m_star(n, inputs.lambda_gamma()) as f64;
    4.0 * inputs.v_max * d * inputs.l * inputs.l / ((n - 1.0).sqrt() * (1.0 - inputs.gamma) * inputs.nu)
        * ((1.0 + m) * capital_i(n - 1.0, inputs.delta, &inputs.mixing)).sqrt()
}

/// The pieces from which the estimation bound is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonTerms {
    /// Bias of `Â` from the missing trace history, `2dL² / ((n−1)(1−λγ)²)`.
    pub epsilon0: f64,
    /// Bias of `Âθ − b̂`.
    pub epsilon0_prime: f64,
    /// High-probability bound on `‖ε_A‖₂`.
    pub epsilon1: f64,
    /// High-probability bound on `‖ε_A θ − ε_b‖₂`.
    pub epsilon2: f64,
    /// The `1/√(n−1)` part of `epsilon2`.
    pub epsilon2_leading: f64,
    /// `C = (1−γ)ν / (1−λγ) ≤ 1/‖A⁻¹‖₂`.
    pub c: f64,
    /// `2√d L V_max / √ν ≥ |Δ_i|`.
    pub delta_bound: f64,
}

/// Evaluate `ε₀, ε′₀, ε₁, ε₂, C` and the temporal-residual bound.
///
/// The deviation terms are taken at per-sample confidence
/// `δ_n = δ / (4(n−1)²)`, for which `J(n−1, δ_n) = I(n−1, δ)`. The union over
/// `n ≥ 2` of the two failure events then has probability at most
/// `2 Σ δ_n = δπ²/12 < δ`, and `ε₁ < C` coincides with the `n₀` condition.
///
/// `theta_norm` defaults to its a-priori bound `V_max / √ν`.
pub fn epsilon_terms(inputs: &BoundInputs, theta_norm: Option<f64>) -> EpsilonTerms {
    let n = inputs.nf();
    let lg = inputs.lambda_gamma();
    let d = inputs.d as f64;
    let l = inputs.l;
    let delta_n = inputs.delta / (4.0 * (n - 1.0) * (n - 1.0));
    let one_minus_sq = (1.0 - lg) * (1.0 - lg);

    let epsilon0 = 2.0 * d * l * l / ((n - 1.0) * one_minus_sq);
    let theta_norm = theta_norm.unwrap_or(inputs.v_max / inputs.nu.sqrt());
    let epsilon0_prime = (2.0 * d * l * l * theta_norm + d.sqrt() * l * inputs.r_max) / ((n - 1.0) * one_minus_sq);
    let delta_bound = 2.0 * d.sqrt() * l * inputs.v_max / inputs.nu.sqrt();

    // Â: τ = φ(X_i) − γφ(X_{i+1}) has k = d columns bounded by L′ = 2L,
    // which gives the 4dL² factors of ε₁.
    let epsilon1 = concentration_radius(n, delta_n, lg, d, d, l, 2.0 * l, &inputs.mixing) + epsilon0;
    // Âθ − b̂: τ = Δ_i is scalar (k = 1) bounded by L′ = ‖Δ‖∞.
    let epsilon2_leading = concentration_leading(n, delta_n, lg, d, 1.0, l, delta_bound, &inputs.mixing);
    let epsilon2 = epsilon2_leading + trace_truncation_error(n, lg, d, 1.0, l, delta_bound) + epsilon0_prime;
    let c = (1.0 - inputs.gamma) * inputs.nu / (1.0 - lg);

    EpsilonTerms { epsilon0, epsilon0_prime, epsilon1, epsilon2, epsilon2_leading, c, delta_bound }
}

/// Explicit `Õ(1/n)` remainder of the estimation bound:
/// `K (ε₂ − ε₂,lead) + K ε₁ε₂ / (C − ε₁)` with `K = (1−λγ)/((1−γ)√ν)`.
///
/// `None` when `ε₁ ≥ C`, where the bound is void.
pub fn h_explicit(inputs: &BoundInputs) -> Option<f64> {
    let eps = epsilon_terms(inputs, None);
    if eps.epsilon1 >= eps.c {
        return None;
    }
    let k = inputs.amplification();
    Some(k * (eps.epsilon2 - eps.epsilon2_leading) + k * eps.epsilon1 * eps.epsilon2 / (eps.c - eps.epsilon1))
}

/// Coefficient pair bounding `‖v − v_LSTD(λ)‖_μ / ‖v − Πv‖_μ`.
pub fn approximation_coefficients(lambda: f64, gamma: f64) -> (f64, f64) {
    let lg = lambda * gamma;
    let plain = (1.0 - lg) / (1.0 - gamma);
    let spread = 1.0 + gamma - 2.0 * lg;
    assert!(spread > 0.0, "1 + γ − 2λγ must be positive");
    let improved = (1.0 - lg) / ((1.0 - gamma) * spread).sqrt();
    (plain, improved)
}

/// `(plain, improved)` bounds on the approximation error given `‖v − Πv‖_μ`.
pub fn approximation_bound(lambda: f64, gamma: f64, proj_residual: f64) -> (f64, f64) {
    let (plain, improved) = approximation_coefficients(lambda, gamma);
    (plain * proj_residual, improved * proj_residual)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: u64,
    pub delta: f64,
    pub lambda: f64,
    /// `Λ(n,δ)`.
    pub lambda_cap: f64,
    /// `I(n,δ)`.
    #[serde(rename = "I")]
    pub i: f64,
    pub m_star: u64,
    pub estimation_bound: f64,
    pub h_explicit: Option<f64>,
    pub approx_plain: f64,
    pub approx_improved: f64,
    /// `approx_plain + estimation_bound + h_explicit`.
    pub global_bound: Option<f64>,
    /// `approx_plain + estimation_bound`, the bound with the `Õ(1/n)` term dropped.
    pub global_leading: f64,
    pub n0: Option<u64>,
    pub n0_ok: bool,
}

/// Assemble the global error bound at `inputs.n`.
pub fn global_bound(inputs: &BoundInputs, proj_residual: f64) -> Result<BoundReport> {
    inputs.validate()?;
    if !(proj_residual >= 0.0) {
        return Err(Error::invalid(format!("projection residual must be non-negative, got {proj_residual}")));
    }
    let n = inputs.nf();
    let estimation = estimation_bound(inputs);
    let h = h_explicit(inputs);
    let (approx_plain, approx_improved) = approximation_bound(inputs.lambda, inputs.gamma, proj_residual);
    let n0 = n_zero(inputs).ok();
    Ok(BoundReport {
        n: inputs.n,
        delta: inputs.delta,
        lambda: inputs.lambda,
        lambda_cap: capital_lambda(n, inputs.delta, &inputs.mixing),
        i: capital_i(n, inputs.delta, &inputs.mixing),
        m_star: m_star(n, inputs.lambda_gamma()),
        estimation_bound: estimation,
        h_explicit: h,
        approx_plain,
        approx_improved,
        global_bound: h.map(|h| approx_plain + estimation + h),
        global_leading: approx_plain + estimation,
        n0,
        n0_ok: n0.is_some_and(|n0| inputs.n >= n0),
    })
}

/// λ minimising the leading-order global bound; ties go to the smaller λ.
pub fn lambda_star<'a>(reports: impl IntoIterator<Item = &'a BoundReport>) -> Option<f64> {
    reports
        .into_iter()
        .min_by(|a, b| a.global_leading.total_cmp(&b.global_leading).then(a.lambda.total_cmp(&b.lambda)))
        .map(|r| r.lambda)
}
