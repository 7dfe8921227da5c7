//! Seeded Monte-Carlo driver for learning-curve experiments on Garnet chains.
//!
//! Each instance draws its chain, features and trajectory from sub-seeds of
//! `split_seed(master_seed, [instance_id, attempt])`, so results do not depend
//! on the worker count. A single trajectory of length `max(n_grid)` is folded
//! once per λ and the estimator is read out at every checkpoint.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundInputs, BoundReport, MixingParams};
use crate::chain::{
    exact_value, garnet_generate, sample_trajectory, stationary_distribution, GarnetSpec, MarkovRewardProcess,
    MrpDocument, SeedProvenance, StationaryDistribution, Trajectory,
};
use crate::error::{Error, Result};
use crate::features::{mu_geometry, mu_norm, random_features, FeatureDocument, FeatureMap, MuGeometry};
use crate::lstd::{exact_a_b, ExactSolution, LstdAccumulator, LstdEstimate};
use crate::rng::{split_seed, stream};

/// Regenerations allowed after a failed instance.
pub const MAX_REGENERATIONS: u64 = 3;
/// Fraction of failed instances above which a run aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

pub const RUN_HEADER: [&str; 11] = [
    "instance_id",
    "lambda",
    "n",
    "seed",
    "real_error",
    "estimation_error",
    "approx_error",
    "bound_estimation",
    "bound_global",
    "used_pseudo_inverse",
    "wall_time_ms",
];

pub const SUMMARY_HEADER: [&str; 6] =
    ["lambda", "n", "mean_real_error", "std_real_error", "mean_estimation_error", "count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    /// `‖·‖_μ`.
    #[default]
    AbsoluteMuNorm,
    /// `‖·‖_μ / ‖v‖_μ`.
    RelativeMuNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_instances: usize,
    pub n_states: usize,
    pub d: usize,
    pub branching: usize,
    pub eta: f64,
    pub gamma: f64,
    pub lambdas: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub delta: f64,
    pub mixing: MixingParams,
    pub master_seed: u64,
    pub error_metric: ErrorMetric,
    pub parallelism: usize,
    /// Sup bound `L` of the uniform random features.
    pub feature_bound: f64,
    /// Record per-checkpoint wall time. Off by default so that run CSVs are
    /// byte-identical across machines.
    pub record_wall_time: bool,
    /// Use this chain for every instance instead of a Garnet draw.
    pub chain_override: Option<MrpDocument>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_instances: 100,
            n_states: 100,
            d: 20,
            branching: GarnetSpec::DEFAULT_BRANCHING,
            eta: GarnetSpec::DEFAULT_BLEND,
            gamma: 0.99,
            lambdas: vec![0.0, 0.3, 0.5, 0.7, 0.9, 1.0],
            n_grid: vec![1_000, 10_000, 100_000],
            delta: 0.05,
            mixing: MixingParams::default(),
            master_seed: 0,
            error_metric: ErrorMetric::default(),
            parallelism: 1,
            feature_bound: 1.0,
            record_wall_time: false,
            chain_override: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(Error::invalid("n_instances must be at least 1"));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid("lambdas must be a non-empty list in [0, 1]"));
        }
        if self.n_grid.is_empty() || self.n_grid[0] < 2 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_grid must be strictly ascending with entries at least 2"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("γ must lie in (0,1), got {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("δ must lie in (0,1), got {}", self.delta)));
        }
        if self.parallelism == 0 {
            return Err(Error::invalid("parallelism must be at least 1"));
        }
        if !(self.feature_bound > 0.0 && self.feature_bound.is_finite()) {
            return Err(Error::invalid("feature_bound must be positive"));
        }
        let n_states = match &self.chain_override {
            Some(doc) => doc.n_states,
            None => {
                self.garnet_spec(0).validate()?;
                self.n_states
            }
        };
        if self.d == 0 || self.d > n_states {
            return Err(Error::invalid(format!("d = {} must lie in [1, {n_states}]", self.d)));
        }
        self.mixing.validate()
    }

    fn garnet_spec(&self, seed: u64) -> GarnetSpec {
        GarnetSpec { n_states: self.n_states, branching: self.branching, seed, ergodicity_blend: self.eta }
    }

    pub fn max_n(&self) -> usize {
        *self.n_grid.last().expect("validated n_grid")
    }
}

/// Every exact quantity of one generated instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: u64,
    pub attempt: u64,
    /// Sub-seed from which the chain, features and trajectory seeds derive.
    pub seed: u64,
    pub mrp: MarkovRewardProcess,
    pub features: FeatureMap,
    pub mu: StationaryDistribution,
    pub geometry: MuGeometry,
    pub v: DVector<f64>,
    /// `‖v − Πv‖_μ`.
    pub proj_residual: f64,
    /// One entry per configured λ.
    pub exact: Vec<ExactSolution>,
    pub garnet: Option<GarnetSpec>,
}

impl Instance {
    pub fn trajectory_seed(&self) -> u64 {
        split_seed(self.seed, &[stream::TRAJECTORY])
    }

    pub fn trajectory(&self, n: usize) -> Result<Trajectory> {
        sample_trajectory(&self.mrp, &self.mu, n, self.trajectory_seed())
    }

    pub fn bound_inputs(&self, config: &ExperimentConfig, lambda: f64, n: u64) -> BoundInputs {
        BoundInputs {
            n,
            delta: config.delta,
            lambda,
            gamma: self.mrp.gamma(),
            d: self.features.dim(),
            l: self.features.bound(),
            nu: self.geometry.nu,
            v_max: self.mrp.v_max(),
            r_max: self.mrp.r_max(),
            mixing: config.mixing,
        }
    }

    pub fn provenance(&self, master_seed: u64) -> SeedProvenance {
        SeedProvenance {
            master_seed,
            instance_id: self.id,
            attempt: self.attempt,
            garnet: self.garnet.unwrap_or(GarnetSpec::new(self.mrp.n_states(), 0)),
        }
    }
}

fn build_instance(config: &ExperimentConfig, id: u64, attempt: u64) -> Result<Instance> {
    let seed = split_seed(config.master_seed, &[id, attempt]);
    let (mrp, garnet) = match &config.chain_override {
        Some(doc) => (doc.to_mrp()?.with_gamma(config.gamma)?, None),
        None => {
            let spec = config.garnet_spec(split_seed(seed, &[stream::CHAIN]));
            (garnet_generate(&spec, config.gamma)?, Some(spec))
        }
    };
    let features =
        random_features(mrp.n_states(), config.d, config.feature_bound, split_seed(seed, &[stream::FEATURES]))?;
    let mu = stationary_distribution(&mrp)?;
    let geometry = mu_geometry(&features, &mu)?;
    let v = exact_value(&mrp)?;
    let proj_residual = geometry.projection_residual(&v);
    let exact = config
        .lambdas
        .iter()
        .map(|&lambda| exact_a_b(&mrp, &features, &geometry, lambda))
        .collect::<Result<Vec<_>>>()?;
    Ok(Instance { id, attempt, seed, mrp, features, mu, geometry, v, proj_residual, exact, garnet })
}

/// Generate instance `id`, regenerating with a fresh sub-seed on a
/// recoverable failure. Returns the instance and the number of failed attempts.
pub fn prepare_instance(config: &ExperimentConfig, id: u64) -> Result<(Instance, u64)> {
    let mut last = None;
    for attempt in 0..=MAX_REGENERATIONS {
        match build_instance(config, id, attempt) {
            Ok(instance) => return Ok((instance, attempt)),
            Err(e) if e.is_instance_failure() => {
                log::warn!("instance {id} attempt {attempt} failed: {e}");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: u64,
    pub lambda: f64,
    pub n: u64,
    pub seed: u64,
    pub real_error: f64,
    pub estimation_error: f64,
    pub approx_error: f64,
    pub bound_estimation: f64,
    /// `inf` below the sample size where the bound becomes finite.
    pub bound_global: f64,
    pub used_pseudo_inverse: bool,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub lambda: f64,
    pub n: u64,
    pub mean_real_error: f64,
    pub std_real_error: f64,
    pub mean_estimation_error: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    /// Instances that failed every regeneration.
    pub failed_instances: Vec<u64>,
    /// Failed attempts that were recovered by regeneration.
    pub regenerations: u64,
}

/// Record one checkpoint of one (instance, λ) fold.
fn record(
    config: &ExperimentConfig,
    instance: &Instance,
    exact: &ExactSolution,
    estimate: &LstdEstimate,
    wall_time_ms: f64,
) -> RunRecord {
    let mu = &instance.mu;
    let v_hat = estimate.value(&instance.features);
    let scale = match config.error_metric {
        ErrorMetric::AbsoluteMuNorm => 1.0,
        ErrorMetric::RelativeMuNorm => {
            let norm = mu_norm(mu, &instance.v);
            if norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        }
    };
    let inputs = instance.bound_inputs(config, exact.lambda, estimate.n as u64);
    let estimation_bound = bounds::estimation_bound(&inputs);
    let (approx_plain, _) = bounds::approximation_bound(exact.lambda, inputs.gamma, instance.proj_residual);
    let global = bounds::h_explicit(&inputs).map_or(f64::INFINITY, |h| approx_plain + estimation_bound + h);
    RunRecord {
        instance_id: instance.id,
        lambda: exact.lambda,
        n: estimate.n as u64,
        seed: instance.seed,
        real_error: scale * mu_norm(mu, &(&v_hat - &instance.v)),
        estimation_error: scale * mu_norm(mu, &(&v_hat - &exact.v_fixed)),
        approx_error: scale * mu_norm(mu, &(&instance.v - &exact.v_fixed)),
        bound_estimation: scale * estimation_bound,
        bound_global: scale * global,
        used_pseudo_inverse: estimate.used_pseudo_inverse,
        wall_time_ms,
    }
}

/// Fold the trajectory once per λ and read the estimate out at each checkpoint.
pub fn checkpoint_estimates(
    instance: &Instance,
    traj: &Trajectory,
    lambda_index: usize,
    n_grid: &[usize],
    mut visit: impl FnMut(&LstdEstimate, f64),
) -> Result<()> {
    let exact = &instance.exact[lambda_index];
    let mut acc = LstdAccumulator::new(&instance.features, instance.mrp.reward(), exact.lambda, instance.mrp.gamma())?;
    let started = Instant::now();
    let mut consumed = 0;
    for &n in n_grid {
        acc.extend(&traj.states[consumed..n]);
        consumed = n;
        let estimate = acc.estimate().expect("checkpoints hold at least two states");
        visit(&estimate, started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(())
}

pub fn run_instance(config: &ExperimentConfig, instance: &Instance) -> Result<Vec<RunRecord>> {
    let traj = instance.trajectory(config.max_n())?;
    let mut records = Vec::with_capacity(config.lambdas.len() * config.n_grid.len());
    for (k, exact) in instance.exact.iter().enumerate() {
        checkpoint_estimates(instance, &traj, k, &config.n_grid, |estimate, ms| {
            let wall = if config.record_wall_time { ms } else { 0.0 };
            records.push(record(config, instance, exact, estimate, wall));
        })?;
    }
    Ok(records)
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let pool = thread_pool(config.parallelism)?;
    let outcomes: Vec<Result<(Vec<RunRecord>, u64)>> = pool.install(|| {
        (0..config.n_instances as u64)
            .into_par_iter()
            .map(|id| {
                let (instance, failed_attempts) = prepare_instance(config, id)?;
                Ok((run_instance(config, &instance)?, failed_attempts))
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failed_instances = Vec::new();
    let mut regenerations = 0;
    for (id, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((mut r, failed_attempts)) => {
                regenerations += failed_attempts;
                records.append(&mut r);
            }
            Err(e) if e.is_instance_failure() => {
                log::warn!("instance {id} dropped after {} attempts: {e}", MAX_REGENERATIONS + 1);
                regenerations += MAX_REGENERATIONS + 1;
                failed_instances.push(id as u64);
            }
            Err(e) => return Err(e),
        }
    }
    if failed_instances.len() as f64 > MAX_FAILURE_FRACTION * config.n_instances as f64 {
        return Err(Error::TooManyFailures { failed: failed_instances.len(), total: config.n_instances });
    }
    if regenerations > 0 {
        log::info!("{regenerations} failed attempts, {} instances dropped", failed_instances.len());
    }
    let summary = summarize(&records);
    Ok(ExperimentOutput { records, summary, failed_instances, regenerations })
}

/// Mean and sample standard deviation of the real error per (λ, n), in order
/// of first appearance.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(u64, u64)> = Vec::new();
    let mut groups: Vec<Vec<&RunRecord>> = Vec::new();
    for r in records {
        let key = (r.lambda.to_bits(), r.n);
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                keys.push(key);
                groups.push(vec![r]);
            }
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let count = g.len();
            let mean = g.iter().map(|r| r.real_error).sum::<f64>() / count as f64;
            let var = if count > 1 {
                g.iter().map(|r| (r.real_error - mean).powi(2)).sum::<f64>() / (count - 1) as f64
            } else {
                0.0
            };
            SummaryRow {
                lambda: g[0].lambda,
                n: g[0].n,
                mean_real_error: mean,
                std_real_error: var.sqrt(),
                mean_estimation_error: g.iter().map(|r| r.estimation_error).sum::<f64>() / count as f64,
                count,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T], header: &[&str]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_records(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    write_csv(path, records, &RUN_HEADER)
}

pub fn write_summary(path: impl AsRef<Path>, summary: &[SummaryRow]) -> Result<()> {
    write_csv(path, summary, &SUMMARY_HEADER)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != RUN_HEADER {
        return Err(Error::invalid(format!("unexpected run CSV header {header:?}")));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Instance file written by [`write_instances`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub mrp: MrpDocument,
    pub features: FeatureDocument,
    pub nu: f64,
    pub proj_residual: f64,
}

/// Write one JSON document per instance into `dir`.
pub fn write_instances(config: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let pool = thread_pool(config.parallelism)?;
    let instances: Vec<Result<(Instance, u64)>> = pool
        .install(|| (0..config.n_instances as u64).into_par_iter().map(|id| prepare_instance(config, id)).collect());
    let mut paths = Vec::with_capacity(instances.len());
    for outcome in instances {
        let (instance, _) = outcome?;
        let doc = InstanceDocument {
            mrp: MrpDocument::from_mrp(&instance.mrp, Some(instance.provenance(config.master_seed))),
            features: FeatureDocument::from_features(&instance.features),
            nu: instance.geometry.nu,
            proj_residual: instance.proj_residual,
        };
        let path = dir.join(format!("instance_{:05}.json", instance.id));
        let mut file = File::create(&path)?;
        serde_json::to_writer_pretty(&mut file, &doc)?;
        file.write_all(b"\n")?;
        paths.push(path);
    }
    Ok(paths)
}

/// One row of a bound sweep. `n` is `None` on the asymptotic row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub n: Option<u64>,
    pub nu: f64,
    pub proj_residual: f64,
    pub lambda_cap: Option<f64>,
    #[serde(rename = "I")]
    pub i: Option<f64>,
    pub m_star: Option<u64>,
    pub estimation_bound: f64,
    pub h_explicit: Option<f64>,
    pub approx_plain: f64,
    pub approx_improved: f64,
    pub global_bound: Option<f64>,
    pub global_leading: f64,
    pub n0: Option<u64>,
    pub n0_ok: bool,
    /// λ minimising `global_leading` at this `n` over the grid.
    pub lambda_star: f64,
}

impl SweepRow {
    fn from_report(report: &BoundReport, nu: f64, proj_residual: f64) -> Self {
        Self {
            lambda: report.lambda,
            n: Some(report.n),
            nu,
            proj_residual,
            lambda_cap: Some(report.lambda_cap),
            i: Some(report.i),
            m_star: Some(report.m_star),
            estimation_bound: report.estimation_bound,
            h_explicit: report.h_explicit,
            approx_plain: report.approx_plain,
            approx_improved: report.approx_improved,
            global_bound: report.global_bound,
            global_leading: report.global_leading,
            n0: report.n0,
            n0_ok: report.n0_ok,
            lambda_star: f64::NAN,
        }
    }

    fn asymptotic(lambda: f64, gamma: f64, nu: f64, proj_residual: f64) -> Self {
        let (approx_plain, approx_improved) = bounds::approximation_bound(lambda, gamma, proj_residual);
        Self {
            lambda,
            n: None,
            nu,
            proj_residual,
            lambda_cap: None,
            i: None,
            m_star: None,
            estimation_bound: 0.0,
            h_explicit: Some(0.0),
            approx_plain,
            approx_improved,
            global_bound: Some(approx_plain),
            global_leading: approx_plain,
            n0: None,
            n0_ok: true,
            lambda_star: f64::NAN,
        }
    }
}

/// Evaluate the bounds over the (λ, n) grid with `ν` and `‖v − Πv‖_μ`
/// averaged over the configured instances. Rows are ordered by `n` then λ,
/// followed by one asymptotic row per λ.
pub fn sweep_bounds(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let pool = thread_pool(config.parallelism)?;
    let instances: Vec<Result<(Instance, u64)>> = pool
        .install(|| (0..config.n_instances as u64).into_par_iter().map(|id| prepare_instance(config, id)).collect());
    let mut nus = Vec::new();
    let mut residuals = Vec::new();
    let mut v_max: f64 = 0.0;
    let mut r_max: f64 = 0.0;
    for outcome in instances {
        match outcome {
            Ok((instance, _)) => {
                nus.push(instance.geometry.nu);
                residuals.push(instance.proj_residual);
                v_max = v_max.max(instance.mrp.v_max());
                r_max = r_max.max(instance.mrp.r_max());
            }
            Err(e) if e.is_instance_failure() => log::warn!("sweep skips an instance: {e}"),
            Err(e) => return Err(e),
        }
    }
    if nus.is_empty() {
        return Err(Error::TooManyFailures { failed: config.n_instances, total: config.n_instances });
    }
    let nu = nus.iter().sum::<f64>() / nus.len() as f64;
    let proj_residual = residuals.iter().sum::<f64>() / residuals.len() as f64;

    let base = BoundInputs {
        n: 2,
        delta: config.delta,
        lambda: 0.0,
        gamma: config.gamma,
        d: config.d,
        l: config.feature_bound,
        nu,
        v_max,
        r_max,
        mixing: config.mixing,
    };
    let mut rows = Vec::new();
    for &n in &config.n_grid {
        let reports = config
            .lambdas
            .iter()
            .map(|&lambda| bounds::global_bound(&base.with_lambda(lambda).with_n(n as u64), proj_residual))
            .collect::<Result<Vec<_>>>()?;
        let best = bounds::lambda_star(&reports).expect("non-empty λ grid");
        rows.extend(
            reports.iter().map(|r| SweepRow { lambda_star: best, ..SweepRow::from_report(r, nu, proj_residual) }),
        );
    }
    let limit_rows: Vec<SweepRow> =
        config.lambdas.iter().map(|&l| SweepRow::asymptotic(l, config.gamma, nu, proj_residual)).collect();
    let best = limit_rows
        .iter()
        .min_by(|a, b| a.global_leading.total_cmp(&b.global_leading).then(a.lambda.total_cmp(&b.lambda)))
        .map(|r| r.lambda)
        .expect("non-empty λ grid");
    rows.extend(limit_rows.into_iter().map(|r| SweepRow { lambda_star: best, ..r }));
    Ok(rows)
}

/// Write rows with a header derived from their field names.
pub fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
