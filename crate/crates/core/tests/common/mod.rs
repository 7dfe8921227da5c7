//! Independent oracles. Each recomputes a library quantity by a different
//! route: series instead of resolvent solves, SVD instead of power iteration,
//! QR least squares instead of Cholesky, big-integer logarithms instead of f64.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;

use lstd_lab::bounds::{invertibility_lhs, BoundInputs, MixingParams};
use lstd_lab::chain::{GarnetSpec, MarkovRewardProcess, StationaryDistribution};
use lstd_lab::harness::{prepare_instance, ExperimentConfig, Instance};

/// Null vector of `Pᵀ − I` from the SVD, normalised to a probability vector.
pub fn stationary_oracle(p: &DMatrix<f64>) -> DVector<f64> {
    let s = p.nrows();
    let m = p.transpose() - DMatrix::identity(s, s);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let k = svd.singular_values.imin();
    let v: DVector<f64> = v_t.row(k).transpose();
    let total: f64 = v.sum();
    v / total
}

/// `Σ_k γᵏ Pᵏ r`, summed until the tail is below `1e-16 · V_max`.
pub fn value_oracle(mrp: &MarkovRewardProcess) -> DVector<f64> {
    let p = mrp.kernel();
    let gamma = mrp.gamma();
    let mut term = mrp.reward().clone();
    let mut total = term.clone();
    let mut weight = 1.0;
    while weight > 1e-18 {
        term = p * term * gamma;
        total += &term;
        weight *= gamma;
    }
    total
}

/// `T^λ v = Σ_k (1−λ)λᵏ T^{k+1} v`; for `λ = 1` this is the value function.
pub fn t_lambda_oracle(mrp: &MarkovRewardProcess, lambda: f64, v: &DVector<f64>) -> DVector<f64> {
    if lambda == 1.0 {
        return value_oracle(mrp);
    }
    let bellman = |x: &DVector<f64>| mrp.reward() + mrp.kernel() * x * mrp.gamma();
    let mut iterate = bellman(v);
    let mut total = &iterate * (1.0 - lambda);
    let mut weight = 1.0 - lambda;
    while weight > 1e-18 && lambda > 0.0 {
        weight *= lambda;
        iterate = bellman(&iterate);
        total += &iterate * weight;
    }
    total
}

/// `A = Σ_k (λγ)ᵏ ΦᵀD_μ(Pᵏ − γP^{k+1})Φ` and `b = Σ_k (λγ)ᵏ ΦᵀD_μPᵏr`.
pub fn a_b_series_oracle(
    mrp: &MarkovRewardProcess,
    phi: &DMatrix<f64>,
    mu: &DVector<f64>,
    lambda: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let gamma = mrp.gamma();
    let p = mrp.kernel();
    let lg = lambda * gamma;
    let weighted_t = DMatrix::from_fn(phi.ncols(), phi.nrows(), |j, i| phi[(i, j)] * mu[i]);
    let mut pk_phi = phi.clone();
    let mut pk_r = mrp.reward().clone();
    let mut a = DMatrix::zeros(phi.ncols(), phi.ncols());
    let mut b = DVector::zeros(phi.ncols());
    let mut weight = 1.0;
    loop {
        let next_phi = p * &pk_phi;
        a += (&weighted_t * (&pk_phi - &next_phi * gamma)) * weight;
        b += (&weighted_t * &pk_r) * weight;
        weight *= lg;
        if weight < 1e-18 {
            break;
        }
        pk_phi = next_phi;
        pk_r = p * pk_r;
    }
    (a, b)
}

/// `Πv` as the weighted least-squares fit of `D^{1/2}v` by `D^{1/2}Φ`, solved
/// by QR with three refinement steps.
pub fn projection_oracle(phi: &DMatrix<f64>, mu: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let sqrt_w = mu.map(f64::sqrt);
    let x = DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, j| sqrt_w[i] * phi[(i, j)]);
    let y = v.component_mul(&sqrt_w);
    let qr = x.clone().qr();
    let mut coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * &y)).unwrap();
    for _ in 0..3 {
        let residual = &y - &x * &coef;
        let grad = x.transpose() * residual;
        let normal = x.transpose() * &x;
        coef += normal.lu().solve(&grad).unwrap();
    }
    phi * coef
}

pub fn mu_norm_oracle(mu: &DVector<f64>, f: &DVector<f64>) -> f64 {
    mu.iter().zip(f.iter()).map(|(w, x)| w * x * x).sum::<f64>().sqrt()
}

/// Trace-free LSTD(0): plain sums of `φ(X_i)(φ(X_i) − γφ(X_{i+1}))ᵀ` and
/// `φ(X_i) r(X_i)`.
pub fn lstd0_oracle(
    states: &[usize],
    phi: &DMatrix<f64>,
    r: &DVector<f64>,
    gamma: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = phi.ncols();
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for w in states.windows(2) {
        let f0: DVector<f64> = phi.row(w[0]).transpose();
        let f1: DVector<f64> = phi.row(w[1]).transpose();
        a += &f0 * (&f0 - &f1 * gamma).transpose();
        b += &f0 * r[w[0]];
    }
    let scale = 1.0 / (states.len() - 1) as f64;
    (a * scale, b * scale)
}

const FIXED_BITS: u64 = 256;

fn one() -> BigInt {
    BigInt::from(1) << FIXED_BITS
}

/// `2 atanh(x)` in fixed point for `0 ≤ x < 1/3`.
fn two_atanh(x: &BigInt) -> BigInt {
    let x2 = (x * x) >> FIXED_BITS;
    let mut power = x.clone();
    let mut total = BigInt::from(0);
    let mut k = 1u32;
    while power != BigInt::from(0) {
        total += &power / BigInt::from(k);
        power = (&power * &x2) >> FIXED_BITS;
        k += 2;
    }
    total * 2
}

/// `ln(2)` in fixed point.
fn ln2() -> BigInt {
    // ln 2 = 2 atanh(1/3)
    two_atanh(&(one() / BigInt::from(3)))
}

/// `ln(num / den)` evaluated with 256-bit fixed-point arithmetic.
pub fn ln_ratio(num: &BigInt, den: &BigInt) -> f64 {
    assert!(num.sign() == num_bigint::Sign::Plus && den.sign() == num_bigint::Sign::Plus);
    // scale into y ∈ [1, 2): num/den = 2^e · y
    let mut e = num.bits() as i64 - den.bits() as i64;
    let (mut n, mut d) = (num.clone(), den.clone());
    if e > 0 {
        d <<= e as u64;
    } else {
        n <<= (-e) as u64;
    }
    if n < d {
        n <<= 1;
        e -= 1;
    }
    let y = (&n << FIXED_BITS) / &d;
    // ln y = 2 atanh((y − 1)/(y + 1)) with (y−1)/(y+1) < 1/3
    let t = ((&y - one()) << FIXED_BITS) / (&y + one());
    let total = two_atanh(&t) + ln2() * BigInt::from(e);
    let (sign, digits) = total.to_u64_digits();
    let mut value = 0.0f64;
    for &w in digits.iter().rev() {
        value = value * 2f64.powi(64) + w as f64;
    }
    let value = value / 2f64.powi(FIXED_BITS as i32);
    if sign == num_bigint::Sign::Minus {
        -value
    } else {
        value
    }
}

/// Exact rational form of a finite positive f64: `(mantissa, 2^shift)`.
pub fn f64_ratio(x: f64) -> (BigInt, BigInt) {
    assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    if e >= 0 {
        (BigInt::from(mantissa) << e as u64, BigInt::from(1))
    } else {
        (BigInt::from(mantissa), BigInt::from(1) << (-e) as u64)
    }
}

/// Configurations of the fixed-point suite: `(S, d, γ)` with `d ≤ S`.
pub fn suite_shapes() -> Vec<(usize, usize, f64)> {
    let shapes = [(5, 2), (5, 5), (20, 2), (20, 5), (20, 20), (100, 2), (100, 5), (100, 20)];
    let gammas = [0.5, 0.9, 0.99];
    (0..50).map(|i| (shapes[i % shapes.len()].0, shapes[i % shapes.len()].1, gammas[i % gammas.len()])).collect()
}

pub const SUITE_LAMBDAS: [f64; 6] = [0.0, 0.3, 0.5, 0.7, 0.9, 1.0];

pub fn suite_config(n_states: usize, d: usize, gamma: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_instances: 1,
        n_states,
        d,
        branching: GarnetSpec::DEFAULT_BRANCHING.min(n_states),
        gamma,
        lambdas: SUITE_LAMBDAS.to_vec(),
        master_seed: seed,
        ..ExperimentConfig::default()
    }
}

/// The 50 seeded instances of the fixed-point suite.
pub fn suite_instances(seed: u64) -> Vec<Instance> {
    suite_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, (s, d, g))| prepare_instance(&suite_config(s, d, g, seed), i as u64).unwrap().0)
        .collect()
}

pub fn mu_vector(mu: &StationaryDistribution) -> DVector<f64> {
    mu.mu.clone()
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Smallest `n` from which the sample-size condition holds up to `limit`, by
/// direct scan.
pub fn scan_n_zero(inputs: &BoundInputs, limit: u64) -> u64 {
    let mut last_bad = None;
    for n in 2..=limit {
        if invertibility_lhs(inputs, n as f64) >= 1.0 {
            last_bad = Some(n);
        }
    }
    last_bad.map_or(2, |b| b + 1)
}

/// Ten input sets whose `n₀` is small enough for `scan_n_zero`.
pub fn small_n0_sets() -> Vec<BoundInputs> {
    let mixing = MixingParams::independent();
    let mut sets = Vec::new();
    for (lambda, gamma) in [(0.0, 0.3), (0.3, 0.3), (0.5, 0.2), (1.0, 0.1), (0.9, 0.5)] {
        sets.push(tiny_inputs(lambda, gamma, mixing));
    }
    for (lambda, gamma) in [(0.0, 0.1), (0.5, 0.1), (0.2, 0.4), (1.0, 0.3), (0.7, 0.2)] {
        sets.push(BoundInputs { delta: 0.2, ..tiny_inputs(lambda, gamma, mixing) });
    }
    sets
}

fn tiny_inputs(lambda: f64, gamma: f64, mixing: MixingParams) -> BoundInputs {
    BoundInputs {
        n: 2,
        delta: 0.05,
        lambda,
        gamma,
        d: 1,
        l: 1.0,
        nu: 1.0,
        v_max: 1.0 / (1.0 - gamma),
        r_max: 1.0,
        mixing,
    }
}
