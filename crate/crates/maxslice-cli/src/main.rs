use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use maxslice::experiment::report::{RunReport, TaskReport};
use maxslice::experiment::scenario::Scenario;
use maxslice::maximal_solver::SolveStatus;
use maxslice::experiment::{parse_grid_override, run_scenario_file, run_suite, scenario_files, RunOptions};

/// Runs maximal-hypersurface scenarios and writes report.json / table.csv.
#[derive(Parser)]
#[command(name = "maxslice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; each scenario writes into <out>/<scenario name>/.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Base seed replacing the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid replacing the scenario grids (refinement studies keep theirs).
    #[arg(long, global = true, value_name = "NxM")]
    grid_override: Option<String>,
    /// Only print failures.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run { file: PathBuf },
    /// Run every *.toml scenario in a directory.
    Suite { dir: PathBuf },
    /// List the scenarios in a directory.
    List {
        #[arg(default_value = "scenarios")]
        dir: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MAXSLICE_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("MAXSLICE_THREADS={v:?} is not a count"))?;
        if n == 0 {
            bail!("MAXSLICE_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn print_report(r: &RunReport, quiet: bool) {
    if !quiet {
        println!("scenario {} ({:.2} s)", r.scenario, r.wall_time_s);
        for task in &r.tasks {
            match task {
                TaskReport::Classify { verdict } => println!("  classify: {}", verdict.kind.name()),
                TaskReport::Solve { runs, flow_runs, .. } => {
                    let done = runs.iter().filter(|r| r.status == Some(SolveStatus::Converged)).count();
                    println!("  solve: {done}/{} converged, {} flow runs", runs.len(), flow_runs.len());
                }
                TaskReport::IdentityChecks { gradient, divergence, normal, conformal, laplacian } => println!(
                    "  identities: gradient {gradient:.2e}, divergence {divergence:.2e}, normal {normal:.2e}, \
                     conformal {conformal:.2e}, laplacian {laplacian:.2e}"
                ),
                TaskReport::RefinementStudy { quantity, errors, orders, .. } => {
                    let errors: Vec<String> = errors.iter().map(|e| format!("{e:.3e}")).collect();
                    let orders: Vec<String> =
                        orders.iter().map(|o| o.map_or("-".into(), |o| format!("{o:.2}"))).collect();
                    println!("  refinement {quantity}: errors [{}], orders [{}]", errors.join(", "), orders.join(", "))
                }
            }
        }
        for a in &r.assertions {
            println!("  [{}] {} {}: expected {}, got {}", if a.passed { "pass" } else { "FAIL" }, a.task, a.check, a.expected, a.actual);
        }
    } else {
        for a in r.failures() {
            eprintln!("{}: {} {}: expected {}, got {}", r.scenario, a.task, a.check, a.expected, a.actual);
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    let opts = RunOptions {
        seed: cli.seed,
        grid_override: cli.grid_override.as_deref().map(parse_grid_override).transpose()?,
    };
    match &cli.command {
        Command::Run { file } => {
            let report = run_scenario_file(file, Some(&cli.out), &opts)?;
            print_report(&report, cli.quiet);
            Ok(report.passed)
        }
        Command::Suite { dir } => {
            let suite = run_suite(dir, Some(&cli.out), &opts)?;
            for e in &suite.entries {
                if !cli.quiet || !e.passed {
                    println!("{} {} ({} assertions, {} failed)", if e.passed { "pass" } else { "FAIL" }, e.scenario, e.assertions, e.failed.len());
                }
                for a in &e.failed {
                    println!("    {} {}: expected {}, got {}", a.task, a.check, a.expected, a.actual);
                }
            }
            Ok(suite.passed)
        }
        Command::List { dir } => {
            for path in scenario_files(dir)? {
                let sc = Scenario::load(&path).with_context(|| path.display().to_string())?;
                let kinds: Vec<&str> = sc.tasks.iter().map(|t| t.kind()).collect();
                println!("{:<28} {:<44} {}", sc.name, path.display(), kinds.join(", "));
                if !cli.quiet && !sc.description.is_empty() {
                    println!("    {}", sc.description);
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
