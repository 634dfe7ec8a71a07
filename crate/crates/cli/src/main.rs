//! Command-line front end. Exit codes: 0 success, 2 invalid scenario or
//! arguments, 3 failed run, 4 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use netslice::broker::parse_theta_grid;
use netslice::runner::{
    compare, load_scenario, parse_policy, parse_seeds, replicate, run, sweep_thresholds, RunError, Scenario,
};

#[derive(Parser)]
#[command(
    name = "netslice",
    version,
    about = "Deterministic multi-tenant RAN slicing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and cross-check a scenario.
    Validate { scenario: PathBuf },
    /// Run once and write the metric files.
    Run {
        scenario: PathBuf,
        /// Defaults to the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run over several seeds and aggregate.
    Replicate {
        scenario: PathBuf,
        /// `a..b`, `a..=b` or a comma list.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search admission thresholds for the highest net revenue.
    SweepThresholds {
        scenario: PathBuf,
        /// One axis per class separated by `;`, each `v,v,...` or `start:end:count`.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired-seed comparison of policies on one metric.
    Compare {
        scenario: PathBuf,
        /// Comma-separated; the first is the baseline.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
        #[arg(long)]
        seeds: String,
        /// Defaults to `net_revenue` for admission policies and
        /// `total_served_bits` otherwise.
        #[arg(long)]
        metric: Option<String>,
    },
}

fn load(path: &Path) -> Result<Scenario, RunError> {
    Ok(load_scenario(path)?)
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            println!("valid: {} (config {})", s.spec.name, s.config_hash());
        }
        Command::Run { scenario, seed, out } => {
            let s = load(&scenario)?;
            let report = run(&s, seed.unwrap_or(s.spec.seed))?;
            report.write_to(&out)?;
            println!("digest {}", report.digest());
        }
        Command::Replicate { scenario, seeds, out } => {
            let s = load(&scenario)?;
            let rep = replicate(&s, &parse_seeds(&seeds)?)?;
            rep.write_to(&out)?;
            for r in &rep.runs {
                println!("seed {} digest {}", r.summary.seed, r.digest());
            }
        }
        Command::SweepThresholds {
            scenario,
            grid,
            seed,
            out,
        } => {
            let s = load(&scenario)?;
            let grid = parse_theta_grid(&grid)?;
            let report = sweep_thresholds(&s, &grid, seed.unwrap_or(s.spec.seed))?;
            report.write_to(&out)?;
            let bound = report.offline_bound.map_or("unavailable".to_owned(), |b| b.to_string());
            println!(
                "best theta {:?} net {} revenue {} (offline bound {bound}, always-accept net {})",
                report.sweep.best, report.sweep.best_net, report.best_revenue, report.always_accept_net
            );
        }
        Command::Compare {
            scenario,
            policies,
            seeds,
            metric,
        } => {
            let s = load(&scenario)?;
            let policies = policies
                .iter()
                .map(|p| parse_policy(p))
                .collect::<Result<Vec<_>, _>>()?;
            let metric = metric.unwrap_or_else(|| {
                let admission = policies
                    .iter()
                    .all(|p| matches!(p, netslice::runner::PolicyOverride::Admission(_)));
                if admission { "net_revenue" } else { "total_served_bits" }.to_owned()
            });
            print!("{}", compare(&s, &policies, &parse_seeds(&seeds)?, &metric)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
