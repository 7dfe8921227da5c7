use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lstd_lab::bounds::{self, BoundInputs, BoundReport, MixingParams};
use lstd_lab::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "lstd-lab", version, about = "LSTD(λ) policy-evaluation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one JSON instance file per generated chain.
    Generate {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Monte-Carlo experiment and write runs.csv and summary.csv.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the error bounds over the (λ, n) grid.
    ///
    /// With `--nu` the instance constants are taken from the flags; otherwise
    /// ν and ‖v − Πv‖_μ are averaged over the configured instances.
    Bounds {
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        constants: Constants,
        /// CSV file for the sweep.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run CSVs into a summary CSV.
    Report {
        /// Run CSV files.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => {
                ExperimentConfig::from_json_file(path).with_context(|| format!("reading config {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            config.master_seed = v;
        }
        if let Some(v) = self.instances {
            config.n_instances = v;
        }
        if let Some(v) = self.states {
            config.n_states = v;
            config.branching = config.branching.min(v);
        }
        if let Some(v) = self.dim {
            config.d = v;
        }
        if let Some(v) = self.gamma {
            config.gamma = v;
        }
        if let Some(v) = &self.lambdas {
            config.lambdas = v.clone();
        }
        if let Some(v) = &self.ns {
            config.n_grid = v.clone();
        }
        if let Some(v) = self.delta {
            config.delta = v;
        }
        if let Some(v) = self.jobs {
            config.parallelism = v;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct Constants {
    /// Smallest eigenvalue of the Gram matrix.
    #[arg(long)]
    nu: Option<f64>,
    /// Feature sup bound.
    #[arg(long, default_value_t = 1.0)]
    feature_bound: f64,
    #[arg(long, default_value_t = 1.0)]
    r_max: f64,
    /// Defaults to R_max / (1 − γ).
    #[arg(long)]
    v_max: Option<f64>,
    /// ‖v − Πv‖_μ.
    #[arg(long, default_value_t = 0.0)]
    proj_residual: f64,
    #[arg(long, default_value_t = 1.0)]
    beta_bar: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
}

#[derive(Serialize)]
struct BoundsOutput {
    reports: Vec<BoundReport>,
    lambda_star: Vec<(u64, f64)>,
}

fn explicit_bounds(config: &ExperimentConfig, c: &Constants, nu: f64) -> Result<BoundsOutput> {
    let base = BoundInputs {
        n: 2,
        delta: config.delta,
        lambda: 0.0,
        gamma: config.gamma,
        d: config.d,
        l: c.feature_bound,
        nu,
        v_max: c.v_max.unwrap_or(c.r_max / (1.0 - config.gamma)),
        r_max: c.r_max,
        mixing: MixingParams { beta_bar: c.beta_bar, b: c.b, kappa: c.kappa },
    };
    let mut reports = Vec::new();
    let mut lambda_star = Vec::new();
    for &n in &config.n_grid {
        let at_n = config
            .lambdas
            .iter()
            .map(|&l| bounds::global_bound(&base.with_lambda(l).with_n(n as u64), c.proj_residual))
            .collect::<lstd_lab::Result<Vec<_>>>()?;
        lambda_star.push((n as u64, bounds::lambda_star(&at_n).expect("non-empty λ grid")));
        reports.extend(at_n);
    }
    Ok(BoundsOutput { reports, lambda_star })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate { overrides, out } => {
            let config = overrides.resolve()?;
            let paths = harness::write_instances(&config, &out)?;
            println!("wrote {} instance files to {}", paths.len(), out.display());
        }
        Command::Run { overrides, out } => {
            let config = overrides.resolve()?;
            fs::create_dir_all(&out)?;
            let output = harness::run_experiment(&config)?;
            harness::write_records(out.join("runs.csv"), &output.records)?;
            harness::write_summary(out.join("summary.csv"), &output.summary)?;
            fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
            println!(
                "{} records, {} failed instances, {} regenerations",
                output.records.len(),
                output.failed_instances.len(),
                output.regenerations
            );
        }
        Command::Bounds { overrides, constants, out } => {
            let config = overrides.resolve()?;
            match constants.nu {
                Some(nu) => {
                    let output = explicit_bounds(&config, &constants, nu)?;
                    println!("{}", serde_json::to_string_pretty(&output)?);
                    if let Some(path) = out {
                        harness::write_rows(path, &output.reports)?;
                    }
                }
                None => {
                    let rows = harness::sweep_bounds(&config)?;
                    println!("{}", serde_json::to_string_pretty(&rows)?);
                    if let Some(path) = out {
                        harness::write_rows(path, &rows)?;
                    }
                }
            }
        }
        Command::Report { inputs, out } => {
            let mut records = Vec::new();
            for path in &inputs {
                records.extend(harness::read_records(path).with_context(|| format!("reading {}", path.display()))?);
            }
            if records.is_empty() {
                bail!("no run records in the input files");
            }
            let summary = harness::summarize(&records);
            harness::write_summary(&out, &summary)?;
            println!("{} summary rows from {} records", summary.len(), records.len());
        }
    }
    Ok(())
}
