//! Command-line runner: scenario solves, feasibility analysis, detection
//! resolution, benchmarks and the experiment catalog.
//!
//! Exit codes: 0 on success, 2 when a problem is infeasible, 3 on scenario
//! validation errors, 1 otherwise.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ris_isac::config::ScenarioConfig;
use ris_isac::experiments::{
    catalog, monte_carlo, run_benchmark, run_experiment, solve_proposed, BenchmarkKind,
};
use ris_isac::feasibility::{max_detection_probability, udr_search};
use ris_isac::scenario::mw_to_dbm;
use ris_isac::Error;

#[derive(Parser)]
#[command(
    name = "ris-isac",
    about = "RIS-enabled integrated sensing and communication: joint beamforming \
             under a detection-probability constraint, feasibility analysis and \
             detection-resolution studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the feasibility gate and the full alternation on a scenario.
    Solve {
        scenario: PathBuf,
        /// Channel realization seed (overrides the scenario file).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Maximum attainable detection probability and the feasibility verdict.
    Feasibility {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Smallest detectable target (tied angle spreads) at a probability level.
    Udr {
        scenario: PathBuf,
        /// Detection-probability level of the resolution search.
        #[arg(long)]
        gamma: f64,
        /// Bisection tolerance on the probability.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one comparison baseline (random_phases, no_sensing, directional,
    /// b4_forward_gain, b5_point_target).
    Benchmark {
        kind: String,
        scenario: PathBuf,
        /// Trials for the randomized baseline.
        #[arg(long, default_value_t = 300)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a catalog experiment, optionally averaged over Monte Carlo trials.
    Experiment {
        name: String,
        scenario: PathBuf,
        /// Monte Carlo trials (1 = a single seeded run).
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the CSV table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the experiment catalog.
    Catalog,
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ScenarioConfig, Error> {
    let mut config = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        config.run.seed = s;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Solve { scenario, seed } => {
            let config = load(&scenario, seed)?;
            let system = config.to_system()?;
            let channels = system.sample_channels(config.run.seed);
            let outcome = solve_proposed(&system, &channels)?;
            let m = &outcome.solution.metrics;
            println!("config_hash: {}", config.config_hash());
            println!("seed: {}", config.run.seed);
            println!("outer_iterations: {}", outcome.outer_iterations);
            println!("snr_db: {:.4}", m.snr_db());
            println!("echo_power_dbm: {:.4}", m.echo_dbm());
            println!("detection_probability: {:.6}", m.detection_probability);
            println!(
                "snr_trace_db: [{}]",
                outcome
                    .snr_trace
                    .iter()
                    .map(|s| format!("{:.4}", 10.0 * s.max(1e-300).log10()))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            Ok(())
        }
        Command::Feasibility { scenario, seed } => {
            let config = load(&scenario, seed)?;
            let system = config.to_system()?;
            let channels = system.sample_channels(config.run.seed);
            let report = max_detection_probability(&system, &channels)?;
            println!("config_hash: {}", config.config_hash());
            println!("max_detection_probability: {:.6}", report.u);
            println!(
                "max_echo_power_dbm: {:.4}",
                mw_to_dbm(report.max_echo_mw.max(1e-300))
            );
            println!("gamma: {}", system.detection.gamma_min);
            println!("feasible: {}", report.feasible);
            if !report.feasible {
                return Err(Error::Infeasible(format!(
                    "requirement {} exceeds the maximum {:.6}",
                    system.detection.gamma_min, report.u
                )));
            }
            Ok(())
        }
        Command::Udr {
            scenario,
            gamma,
            tol,
            seed,
        } => {
            let config = load(&scenario, seed)?;
            let system = config.to_system()?;
            let channels = system.sample_channels(config.run.seed);
            let result = udr_search(&system, &channels, gamma, tol)?;
            println!("config_hash: {}", config.config_hash());
            println!("gamma: {}", result.gamma);
            println!("delta_star_rad: {:.6e}", result.delta_star);
            println!("udr_area_m2: {:.6e}", result.area_m2);
            if let Some(t0) = result.t0_required {
                println!("t0_required_s: {:.6e}", t0);
            }
            Ok(())
        }
        Command::Benchmark {
            kind,
            scenario,
            trials,
            seed,
        } => {
            let config = load(&scenario, seed)?;
            let system = config.to_system()?;
            let channels = system.sample_channels(config.run.seed);
            let kind = BenchmarkKind::parse(&kind)?;
            let outcome = run_benchmark(kind, &system, &channels, trials, config.run.seed, None)?;
            let m = &outcome.mean_metrics;
            println!("benchmark: {}", outcome.kind.label());
            println!("trials: {}", outcome.trials);
            println!("snr_db: {:.4}", 10.0 * m.snr_linear.max(1e-300).log10());
            println!(
                "echo_power_dbm: {:.4}",
                mw_to_dbm(m.echo_power_mw.max(1e-300))
            );
            println!("detection_probability: {:.6e}", m.detection_probability);
            Ok(())
        }
        Command::Experiment {
            name,
            scenario,
            trials,
            seed,
            out,
        } => {
            let config = load(&scenario, seed)?;
            let table = if trials <= 1 {
                run_experiment(&name, &config)?
            } else {
                monte_carlo(&name, &config, trials, config.run.seed)?
            };
            let csv = table.to_csv_string();
            match out {
                Some(path) => std::fs::write(&path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Catalog => {
            for (name, description) in catalog() {
                println!("{name:20} {description}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Infeasible(_) => ExitCode::from(2),
                Error::Validation { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
