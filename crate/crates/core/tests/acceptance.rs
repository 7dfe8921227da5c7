//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! the real stdout, so the verdicts show up without `--nocapture`.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use lstd_lab::bounds::{
    approximation_coefficients, capital_gamma, capital_i, capital_j, capital_lambda, m_star, n_zero, MixingParams,
};
use lstd_lab::harness::{
    checkpoint_estimates, prepare_instance, run_experiment, write_records, ExperimentConfig, ExperimentOutput, Instance,
};
use lstd_lab::lstd::{
    estimation_decomposition, temporal_residual_sup, EligibilityTrace, LstdAccumulator, TruncatedTrace,
};

use common::{
    mu_norm_oracle, projection_oracle, scan_n_zero, slope, small_n0_sets, suite_instances, t_lambda_oracle,
    SUITE_LAMBDAS,
};

const SUITE_SEED: u64 = 2024;

fn verdict(criterion: u32, pass: bool, detail: impl AsRef<str>) {
    let word = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion}: {word} | {}", detail.as_ref()).unwrap();
    out.flush().unwrap();
}

fn suite() -> &'static [Instance] {
    static SUITE: OnceLock<Vec<Instance>> = OnceLock::new();
    SUITE.get_or_init(|| suite_instances(SUITE_SEED))
}

fn desk_config(parallelism: usize) -> ExperimentConfig {
    ExperimentConfig { master_seed: 7, parallelism, ..ExperimentConfig::default() }
}

fn desk_run() -> &'static ExperimentOutput {
    static RUN: OnceLock<ExperimentOutput> = OnceLock::new();
    RUN.get_or_init(|| run_experiment(&desk_config(1)).unwrap())
}

#[test]
fn criterion_01_fixed_point_suite() {
    let started = Instant::now();
    let suite = suite_instances(SUITE_SEED);
    let mut worst: f64 = 0.0;
    for inst in &suite {
        let phi = inst.features.matrix();
        for exact in &inst.exact {
            let t = t_lambda_oracle(&inst.mrp, exact.lambda, &exact.v_fixed);
            let residual = mu_norm_oracle(&inst.mu.mu, &(projection_oracle(phi, &inst.mu.mu, &t) - &exact.v_fixed));
            worst = worst.max(residual);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && secs < 30.0 && suite.len() == 50;
    verdict(1, pass, format!("max ‖ΠT^λ(Φθ) − Φθ‖_μ = {worst:.3e} over {} instances × 6 λ, {secs:.1} s", suite.len()));
    assert!(pass);
}

#[test]
fn criterion_02_lambda_one_projection() {
    let mut worst: f64 = 0.0;
    for inst in suite() {
        let exact = inst.exact.iter().find(|e| e.lambda == 1.0).unwrap();
        let pv = projection_oracle(inst.features.matrix(), &inst.mu.mu, &inst.v);
        worst = worst.max(mu_norm_oracle(&inst.mu.mu, &(&exact.v_fixed - pv)));
    }
    let pass = worst <= 1e-8;
    verdict(2, pass, format!("max ‖v_LSTD(1) − Πv‖_μ = {worst:.3e}"));
    assert!(pass);
}

#[test]
fn criterion_03_approximation_bounds() {
    let mut violations = 0;
    let mut checked = 0;
    let mut tightest: f64 = 0.0;
    for inst in suite() {
        let residual = mu_norm_oracle(&inst.mu.mu, &(&inst.v - inst.geometry.project(&inst.v)));
        let v_norm = mu_norm_oracle(&inst.mu.mu, &inst.v);
        for exact in &inst.exact {
            let error = mu_norm_oracle(&inst.mu.mu, &(&inst.v - &exact.v_fixed));
            let (plain, improved) = approximation_coefficients(exact.lambda, inst.mrp.gamma());
            // round-off in v, Πv and Φθ, relative to ‖v‖_μ
            let slack = 1e-12 * (1.0 + v_norm);
            if error > improved * residual + slack || error > plain * residual + slack {
                violations += 1;
            }
            if residual > 1e-9 * v_norm {
                tightest = tightest.max(error / (improved * residual));
            }
            checked += 1;
        }
    }
    let pass = violations == 0;
    verdict(
        3,
        pass,
        format!("{violations} violations in {checked} instance/λ pairs, max error / improved bound = {tightest:.6}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_sqrt_n_rate() {
    let started = Instant::now();
    let config = ExperimentConfig {
        n_instances: 20,
        n_states: 100,
        d: 20,
        gamma: 0.95,
        lambdas: vec![0.5],
        master_seed: 404,
        ..ExperimentConfig::default()
    };
    let grid: Vec<usize> = (0..6).map(|k| 10f64.powf(3.0 + 0.4 * k as f64).round() as usize).collect();
    let mut sums = vec![0.0; grid.len()];
    for id in 0..config.n_instances as u64 {
        let (inst, _) = prepare_instance(&config, id).unwrap();
        let traj = inst.trajectory(*grid.last().unwrap()).unwrap();
        let mut k = 0;
        checkpoint_estimates(&inst, &traj, 0, &grid, |est, _| {
            sums[k] += lstd_lab::lstd::lstd_error(est, &inst.exact[0], &inst.features, &inst.mu);
            k += 1;
        })
        .unwrap();
    }
    let x: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = sums.iter().map(|s| (s / config.n_instances as f64).ln()).collect();
    let fitted = slope(&x, &y);
    let secs = started.elapsed().as_secs_f64();
    let pass = (-0.65..=-0.35).contains(&fitted) && secs < 300.0;
    verdict(4, pass, format!("slope {fitted:.4} over n = {grid:?}, {secs:.1} s"));
    assert!(pass);
}

#[test]
fn criterion_05_estimation_decomposition() {
    let config = ExperimentConfig {
        n_instances: 10,
        n_states: 20,
        d: 5,
        gamma: 0.9,
        lambdas: SUITE_LAMBDAS.to_vec(),
        n_grid: vec![1_000, 10_000, 100_000],
        master_seed: 505,
        ..ExperimentConfig::default()
    };
    let (mut applicable, mut inapplicable, mut violations) = (0, 0, 0);
    for id in 0..config.n_instances as u64 {
        let (inst, _) = prepare_instance(&config, id).unwrap();
        let traj = inst.trajectory(config.max_n()).unwrap();
        for (k, exact) in inst.exact.iter().enumerate() {
            checkpoint_estimates(&inst, &traj, k, &config.n_grid, |est, _| {
                let dec =
                    estimation_decomposition(est, exact, &inst.features, &inst.mu, &inst.geometry, inst.mrp.gamma())
                        .unwrap();
                if dec.applicable {
                    applicable += 1;
                } else {
                    inapplicable += 1;
                }
                if !dec.holds() {
                    violations += 1;
                }
            })
            .unwrap();
        }
    }
    let pass = violations == 0 && applicable > 0;
    verdict(
        5,
        pass,
        format!("{violations} violations; {applicable} runs with ‖ε_A‖₂ < C, {inapplicable} runs with ‖ε_A‖₂ ≥ C"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_truncation_envelope() {
    let n = 10_000;
    let mut violations = 0;
    let mut steps = 0;
    for (lambda, gamma) in [(0.5, 0.9), (1.0, 0.89)] {
        let lg: f64 = lambda * gamma;
        let depths = [1, 5, m_star(n as f64, lg) as usize];
        let config = ExperimentConfig {
            n_instances: 3,
            n_states: 50,
            d: 10,
            gamma,
            lambdas: vec![lambda],
            master_seed: 606,
            ..ExperimentConfig::default()
        };
        for id in 0..config.n_instances as u64 {
            let (inst, _) = prepare_instance(&config, id).unwrap();
            let traj = inst.trajectory(n).unwrap();
            let phi_t = inst.features.matrix().transpose();
            let l = inst.features.bound();
            for m in depths {
                let envelope = l * lg.powi(m as i32) / (1.0 - lg);
                let mut full = EligibilityTrace::new(inst.features.dim(), lg);
                let mut cut = TruncatedTrace::new(inst.features.dim(), lg, m).unwrap();
                for &x in &traj.states {
                    full.push(&phi_t.column(x));
                    let gap = (&full.z - cut.push(x, &phi_t)).amax();
                    if gap > envelope * (1.0 + 1e-12) {
                        violations += 1;
                    }
                    steps += 1;
                }
            }
        }
    }
    let pass = violations == 0;
    verdict(6, pass, format!("{violations} violations over {steps} trace steps"));
    assert!(pass);
}

#[test]
fn criterion_07_bound_identities() {
    let mut worst: f64 = 0.0;
    for mixing in [MixingParams::default(), MixingParams { beta_bar: 0.3, b: 5.0, kappa: 0.5 }] {
        for i in 0..20 {
            let n = 10f64.powf(1.0 + 0.4 * i as f64);
            for j in 0..20 {
                let delta = 10f64.powf(-0.1 - 0.3 * j as f64);
                let shifted = 4.0 * n * n * delta;
                let j_rel = (capital_j(n, delta, &mixing) / capital_i(n, shifted, &mixing) - 1.0).abs();
                let g_rel = (capital_gamma(n, delta, &mixing) / capital_lambda(n, shifted, &mixing) - 1.0).abs();
                worst = worst.max(j_rel).max(g_rel);
            }
        }
    }
    let mut mismatches = Vec::new();
    for set in small_n0_sets() {
        let got = n_zero(&set).unwrap();
        let want = scan_n_zero(&set, 20 * got);
        if got != want {
            mismatches.push((got, want));
        }
    }
    let pass = worst <= 1e-12 && mismatches.is_empty();
    verdict(7, pass, format!("max relative identity gap {worst:.2e}; n₀ mismatches against the scan: {mismatches:?}"));
    assert!(pass);
}

fn mean_errors(output: &ExperimentOutput, n: u64) -> Vec<(f64, f64)> {
    output.summary.iter().filter(|s| s.n == n).map(|s| (s.lambda, s.mean_real_error)).collect()
}

fn argmin(rows: &[(f64, f64)]) -> f64 {
    rows.iter().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0))).unwrap().0
}

#[test]
fn criterion_08_desk_scale_pattern() {
    let started = Instant::now();
    let output = desk_run();
    let secs = started.elapsed().as_secs_f64();
    let early = mean_errors(output, 1_000);
    let late = mean_errors(output, 100_000);
    let best_small = early.iter().filter(|(l, _)| *l < 0.9).map(|r| r.1).fold(f64::INFINITY, f64::min);
    let at_one = early.iter().find(|(l, _)| *l == 1.0).unwrap().1;
    let part_a = best_small < at_one;
    let (star_early, star_late) = (argmin(&early), argmin(&late));
    let part_b = star_late >= star_early;
    let table: Vec<String> = early.iter().map(|(l, e)| format!("{l}:{e:.3}")).collect();
    verdict(
        8,
        part_a && part_b,
        format!(
            "(a) {} best λ<0.9 {best_small:.4} vs λ=1 {at_one:.4}; (b) {} argmin {star_early} at 10³, {star_late} at 10⁵; \
             n=10³ means {}; {secs:.1} s",
            if part_a { "pass" } else { "fail" },
            if part_b { "pass" } else { "fail" },
            table.join(" ")
        ),
    );
    assert!(part_b, "argmin λ decreased from {star_early} to {star_late}");
    assert!(part_a, "λ = 1 has the lowest mean error at n = 10³");
}

#[test]
fn criterion_09_structural_bounds() {
    let mut violations = 0;
    let mut checks = 0;
    for inst in suite() {
        let traj = inst.trajectory(10_000).unwrap();
        let d = inst.features.dim() as f64;
        let l = inst.features.bound();
        let nu = inst.geometry.nu;
        let v_max = inst.mrp.v_max();
        let gamma = inst.mrp.gamma();
        let mut check = |ok: bool| {
            checks += 1;
            if !ok {
                violations += 1;
            }
        };
        check(nu <= d * l * l);
        for exact in &inst.exact {
            check(exact.theta.norm() <= v_max / nu.sqrt());
            check(
                temporal_residual_sup(&traj, exact, inst.mrp.reward(), gamma) <= 2.0 * d.sqrt() * l * v_max / nu.sqrt(),
            );
            let mut acc = LstdAccumulator::new(&inst.features, inst.mrp.reward(), exact.lambda, gamma).unwrap();
            acc.extend(&traj.states);
            check(acc.max_trace_sup() <= l / (1.0 - exact.lambda * gamma) * (1.0 + 1e-12));
        }
    }
    let pass = violations == 0;
    verdict(9, pass, format!("{violations} violations in {checks} checks"));
    assert!(pass);
}

fn csv_bytes(output: &ExperimentOutput) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    write_records(&path, &output.records).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn criterion_10_determinism() {
    let serial = csv_bytes(desk_run());
    let parallel = csv_bytes(&run_experiment(&desk_config(8)).unwrap());
    let pass = serial == parallel && !serial.is_empty();
    verdict(
        10,
        pass,
        format!("parallelism 1 vs 8: {} vs {} bytes, identical = {}", serial.len(), parallel.len(), serial == parallel),
    );
    assert!(pass);
}
