use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use gridadmm::experiment::{self, emit_convergence_plot_data, methods_csv, ExperimentPlan, RunSummary, Setup};
use gridadmm::exec::Executor;
use gridadmm::opf::{solve_centralized, Network, SolveStatus, SolverOptions, CENTRAL_TOL, MAX_ITER};
use gridadmm::parse_case;
use gridadmm::sim::{self, Mode, RunStatus, SimConfig};

#[derive(Parser)]
#[command(name = "gridadmm", version, about = "Distributed AC OPF by regional ADMM over simulated links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized AC OPF of a MATPOWER case.
    Solve {
        case: PathBuf,
        #[arg(long, default_value_t = CENTRAL_TOL)]
        tol: f64,
    },
    /// One simulated ADMM run.
    Run(RunArgs),
    /// Every variant of an experiment plan.
    Plan {
        plan: PathBuf,
        /// Output directory, overriding the plan's.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run variants one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Rebuild tables and series from the traces of a finished plan.
    Report {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    case: PathBuf,
    #[arg(long)]
    partition: PathBuf,
    /// SimConfig file (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "sync")]
    mode: Mode,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Directory for the trace, convergence series and summary.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { case, tol } => solve(&case, tol),
        Command::Run(args) => run(args),
        Command::Plan { plan, out, sequential } => plan_cmd(&plan, out, sequential),
        Command::Report { dir, stride } => {
            let summaries = experiment::report(&dir, stride)?;
            print!("{}", methods_csv(&summaries));
            Ok(true)
        }
    }
}

fn solve(path: &Path, tol: f64) -> Result<bool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let net = Network::new(parse_case(&text)?);
    let started = std::time::Instant::now();
    let report = solve_centralized(&net, &SolverOptions { tol, max_iter: MAX_ITER });
    println!("status: {:?}", report.status);
    println!("objective: {:.4}", report.cost);
    println!("iterations: {}", report.iterations);
    println!("kkt_residual: {:.3e}", report.kkt_residual);
    println!("wall_time_s: {:.3}", started.elapsed().as_secs_f64());
    Ok(report.status == SolveStatus::LocalOptimal)
}

/// File values override defaults; flags override both.
fn resolve_config(args: &RunArgs) -> Result<SimConfig> {
    let mut config = match &args.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.tau {
        config.tau = v;
    }
    if let Some(v) = args.p {
        config.p = v;
    }
    if let Some(v) = args.rho0 {
        config.rho0 = v;
    }
    if let Some(v) = args.epsilon {
        config.epsilon = v;
    }
    if let Some(v) = args.max_iterations {
        config.max_iterations = v;
    }
    Ok(config)
}

fn run(args: RunArgs) -> Result<bool> {
    let config = resolve_config(&args)?;
    let setup = Setup::load(&args.case, &args.partition, config.beta_minus, config.beta_plus)?;
    let result = sim::run(&setup.net, &setup.partition, &config, args.mode)?.with_reference(setup.centralized);
    let summary = RunSummary::from_trace("run", &result.trace, Some(setup.centralized))?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("trace.ndjson"), result.trace.to_ndjson())?;
        fs::write(out.join("series.csv"), emit_convergence_plot_data(&result.trace, args.stride))?;
        fs::write(out.join("summary.csv"), methods_csv(std::slice::from_ref(&summary)))?;
    }
    println!("status: {}", result.status);
    if let Some(d) = &result.diagnostic {
        println!("diagnostic: {d}");
    }
    println!("nu: {:?}", result.nu);
    println!("virtual_time_s: {:.4}", result.time);
    println!("objective: {:.4}", result.objective);
    println!("centralized: {:.4}", setup.centralized);
    println!("gap_pct: {:.4}", result.gap.unwrap_or(f64::NAN));
    println!("na: {:?}", result.na);
    Ok(result.status == RunStatus::Converged)
}

fn plan_cmd(path: &Path, out: Option<PathBuf>, sequential: bool) -> Result<bool> {
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(out) = out {
        plan.output = out;
    }
    let executor = if sequential { Executor::Sequential } else { Executor::Parallel };
    let outcome = experiment::run_plan(&plan, executor)?;
    print!("{}", methods_csv(&outcome.summaries));
    let failed: Vec<&str> = outcome
        .outcomes
        .iter()
        .filter(|o| !matches!(&o.result, Ok(r) if r.status == RunStatus::Converged))
        .map(|o| o.variant.name.as_str())
        .collect();
    if !failed.is_empty() {
        eprintln!("{} of {} variants did not converge: {}", failed.len(), outcome.outcomes.len(), failed.join(", "));
    }
    Ok(failed.is_empty())
}
