//! Command-line driver: stability runs, δ-scans, self-tests and the
//! Gaussian heat dissipation check.
//!
//! Exit codes: 0 success, 1 invalid config, 2 numerical failure,
//! 3 selftest failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use w2lab::harness::{
    self, delta_scan, heat_dissipation_check, run_experiment, ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(name = "w2lab", about = "2-Wasserstein stability laboratory for singular mean-field dynamics", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one coupled stability experiment from a JSON config
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// δ-scan: repeat the experiment over initial perturbation magnitudes
    /// with common noise and fit the log-log stability slope
    Scan {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated perturbation magnitudes, ascending (overrides
        /// the config's `deltas`)
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a module invariant suite with fixed seeds
    Selftest {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Closed-form vs empirical Gaussian heat-flow dissipation check
    Heatcheck {
        #[arg(long)]
        mu1: f64,
        #[arg(long)]
        s1: f64,
        #[arg(long)]
        mu2: f64,
        #[arg(long)]
        s2: f64,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        #[arg(long, default_value_t = 5)]
        t_steps: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_json_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = Some(o.to_string_lossy().into_owned());
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let report = run_experiment(&cfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "model={} N={} d2sq(0)={:.6e} sup d2sq={:.6e} fitted C={:.4} omega(d2sq0)={:.6e}{}",
                report.model,
                report.n_particles,
                report.d2_initial(),
                report.sup_d2(),
                report.fitted_c,
                report.omega_of_initial,
                if report.branch4_encountered {
                    " [H branch-4 region encountered: ODE oracle is authoritative]"
                } else {
                    ""
                }
            );
            if let Some(dir) = &cfg.output_dir {
                println!("artifacts written to {dir}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Scan { config, deltas, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let deltas = if deltas.is_empty() { cfg.deltas.clone() } else { deltas };
            let report = delta_scan(&cfg, &deltas)?;
            for run in &report.runs {
                println!(
                    "delta={:.3e} d2sq(0)={:.6e} d2sq(T)={:.6e} sup={:.6e} C={:.4}",
                    run.delta, run.d2_initial, run.d2_final, run.sup_d2, run.fitted_c
                );
            }
            println!(
                "slope={:.4} stderr={:.4} ci95=({:.4},{:.4}) degenerate={}",
                report.slope, report.slope_stderr, report.ci95.0, report.ci95.1, report.degenerate
            );
            if report.degenerate {
                eprintln!("warning: degenerate fit (responses at the Monte Carlo floor); try larger deltas or N");
            }
            if let Some(dir) = &cfg.output_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(
                    std::path::Path::new(dir).join("scan.json"),
                    serde_json::to_string_pretty(&report)? + "\n",
                )?;
                println!("scan report written to {dir}/scan.json");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { suite } => {
            let summary = harness::selftest(&suite)?;
            print!("{}", summary.render());
            if summary.pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
        Command::Heatcheck { mu1, s1, mu2, s2, t_max, t_steps } => {
            let grid: Vec<f64> =
                (0..=t_steps).map(|i| t_max * i as f64 / t_steps.max(1) as f64).collect();
            let rep = heat_dissipation_check(mu1, s1, mu2, s2, &grid)?;
            println!("t,closed_form,empirical");
            for i in 0..rep.times.len() {
                println!("{},{},{}", rep.times[i], rep.closed_form[i], rep.empirical[i]);
            }
            println!(
                "monotone={} derivative_at_zero={:.6} derivative_max_error={:.2e} empirical_within_5pct={}",
                rep.monotone_non_increasing,
                rep.derivative_at_zero,
                rep.derivative_max_error,
                rep.empirical_within_tolerance
            );
            if rep.monotone_non_increasing && rep.empirical_within_tolerance {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
    }
}
