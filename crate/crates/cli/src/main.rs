//! Command-line front end: solve scenarios, sweep transmit power, evaluate
//! benchmark flight strategies and validate exported trajectories.
//!
//! Exit codes: 0 success, 1 input/IO error, 2 infeasible problem,
//! 3 constraint validation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use uav_planner::export::{
    fmt_sig9, read_trajectory_csv, write_allocation_csv, write_report_json, write_sweep_csv,
    write_trajectory_csv,
};
use uav_planner::planner::{
    alternating_optimize, evaluate_strategy, validate_hard_constraints, PlanStatus,
    PlannerOptions, Strategy,
};
use uav_planner::scenario::dbm_to_watts;
use uav_planner::solver::SolverOptions;
use uav_planner::{allocate_all, build_rate_table, load_scenario, PenaltyConfig, Scenario};

#[derive(Parser)]
#[command(
    name = "uav-planner",
    about = "Joint UAV trajectory and subcarrier allocation planning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full alternating optimization and export its artifacts.
    Solve(SolveArgs),
    /// Evaluate every strategy over a grid of per-subcarrier powers.
    Sweep(SweepArgs),
    /// Evaluate a single flight strategy and export its artifacts.
    Benchmark(BenchmarkArgs),
    /// Check an exported trajectory against a scenario's constraints.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Rate-floor penalty weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Keep-out penalty weight.
    #[arg(long)]
    eta: Option<f64>,
    /// Max trajectory-refinement iterations per allocation.
    #[arg(long, default_value_t = 50)]
    lmax_sca: usize,
    /// Max alternating iterations.
    #[arg(long, default_value_t = 30)]
    lmax_outer: usize,
    /// Relative objective-change stop tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Recorded in report.json; the pipeline itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn penalties(&self) -> Result<PenaltyConfig> {
        let defaults = PenaltyConfig::default();
        PenaltyConfig::new(
            self.lambda.unwrap_or(defaults.lambda),
            self.eta.unwrap_or(defaults.eta),
        )
        .map_err(|e| anyhow!(e))
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            obj_tol: self.tol,
            ..SolverOptions::default()
        }
    }

    fn planner_options(&self) -> PlannerOptions {
        PlannerOptions {
            l_max_sca: self.lmax_sca,
            l_max_outer: self.lmax_outer,
            sca_tol: self.tol,
            outer_tol: self.tol,
        }
    }

    fn load(&self) -> Result<Scenario> {
        load_scenario(&self.scenario)
            .with_context(|| format!("loading scenario {}", self.scenario.display()))
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for trajectory.csv, allocation.csv and report.json.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario's per-subcarrier transmit power (dBm).
    #[arg(long, value_delimiter = ',')]
    power_dbm: Option<Vec<f64>>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for sweep.csv.
    #[arg(long)]
    out: PathBuf,
    /// Per-subcarrier powers to evaluate, dBm (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    power_dbm: Vec<f64>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// One of: proposed, no_nfz, detour, straight.
    #[arg(long)]
    strategy: String,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trajectory CSV to validate (as written by solve/benchmark).
    #[arg(long)]
    trajectory: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    ExitCode::from(code)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

fn with_power(mut scenario: Scenario, power_dbm: f64) -> Scenario {
    scenario.uav.per_subcarrier_power_w = dbm_to_watts(power_dbm);
    scenario
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_solve(args: SolveArgs) -> Result<u8> {
    let mut scenario = args.common.load()?;
    if let Some(powers) = &args.power_dbm {
        if powers.len() != 1 {
            return Err(anyhow!("solve takes a single --power-dbm value"));
        }
        scenario = with_power(scenario, powers[0]);
    }
    let penalties = args.common.penalties()?;
    ensure_out_dir(&args.out)?;

    let outcome = alternating_optimize(
        &scenario,
        penalties,
        &args.common.solver_options(),
        &args.common.planner_options(),
    );
    let mut report = outcome.report.clone();
    report.seed = args.common.seed;

    write_trajectory_csv(&args.out.join("trajectory.csv"), &scenario, &outcome.trajectory)?;
    if let Some(plan) = &outcome.plan {
        write_allocation_csv(&args.out.join("allocation.csv"), plan, &outcome.rate_table)?;
    }
    write_report_json(&args.out.join("report.json"), &report)?;

    match report.status {
        PlanStatus::Infeasible => {
            eprintln!("infeasible: {}", report.stop_reason);
            Ok(2)
        }
        _ => {
            println!(
                "status: {} after {} outer iterations; throughput {} bps/Hz",
                match report.status {
                    PlanStatus::Converged => "converged",
                    PlanStatus::MaxIters => "max-iters",
                    PlanStatus::Infeasible => unreachable!(),
                },
                report.iterations_outer,
                fmt_sig9(report.final_throughput)
            );
            Ok(0)
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let scenario = args.common.load()?;
    let penalties = args.common.penalties()?;
    let sopts = args.common.solver_options();
    let popts = args.common.planner_options();
    ensure_out_dir(&args.out)?;

    let pool = build_pool()?;
    let rows: Vec<(f64, uav_planner::StrategyOutcome)> = pool.install(|| {
        use rayon::prelude::*;
        args.power_dbm
            .par_iter()
            .flat_map(|&p| {
                let powered = with_power(scenario.clone(), p);
                let sopts = &sopts;
                let popts = &popts;
                Strategy::ALL
                    .into_par_iter()
                    .map(move |strategy| {
                        (
                            p,
                            evaluate_strategy(&powered, strategy, penalties, sopts, popts),
                        )
                    })
            })
            .collect()
    });

    write_sweep_csv(&args.out.join("sweep.csv"), &rows)?;
    let feasible = rows.iter().filter(|(_, o)| o.feasible).count();
    println!(
        "swept {} powers x {} strategies; {feasible}/{} points feasible",
        args.power_dbm.len(),
        Strategy::ALL.len(),
        rows.len()
    );
    Ok(0)
}

fn build_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("UAV_PLANNER_THREADS") {
        let threads: usize = raw
            .parse()
            .map_err(|_| anyhow!("UAV_PLANNER_THREADS must be a positive integer, got {raw:?}"))?;
        if threads == 0 {
            return Err(anyhow!("UAV_PLANNER_THREADS must be positive"));
        }
        builder = builder.num_threads(threads);
    }
    Ok(builder.build()?)
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<u8> {
    let scenario = args.common.load()?;
    let strategy = Strategy::parse(&args.strategy).ok_or_else(|| {
        anyhow!(
            "unknown strategy {:?}; expected one of proposed, no_nfz, detour, straight",
            args.strategy
        )
    })?;
    let penalties = args.common.penalties()?;
    ensure_out_dir(&args.out)?;

    let outcome = evaluate_strategy(
        &scenario,
        strategy,
        penalties,
        &args.common.solver_options(),
        &args.common.planner_options(),
    );
    write_trajectory_csv(&args.out.join("trajectory.csv"), &scenario, &outcome.trajectory)?;
    if let Some(plan) = &outcome.plan {
        let table = build_rate_table(&scenario, &outcome.trajectory.points);
        write_allocation_csv(&args.out.join("allocation.csv"), plan, &table)?;
    }
    if let Some(report) = &outcome.report {
        let mut report = report.clone();
        report.seed = args.common.seed;
        write_report_json(&args.out.join("report.json"), &report)?;
    }

    if outcome.feasible {
        println!(
            "{}: throughput {} bps/Hz",
            strategy.name(),
            fmt_sig9(outcome.throughput.unwrap_or(0.0))
        );
        Ok(0)
    } else {
        eprintln!("{}: infeasible: {}", strategy.name(), outcome.detail);
        Ok(2)
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<u8> {
    let scenario = args.common.load()?;
    let trajectory = read_trajectory_csv(&args.trajectory).map_err(|e| anyhow!(e))?;
    if trajectory.points.len() != scenario.grid.n_slots + 1 {
        return Err(anyhow!(
            "trajectory has {} points but the scenario grid needs {}",
            trajectory.points.len(),
            scenario.grid.n_slots + 1
        ));
    }
    let table = build_rate_table(&scenario, &trajectory.points);
    let plan = match allocate_all(&table, &scenario) {
        Ok(plan) => plan,
        Err(e) => {
            println!("allocation: INFEASIBLE ({e})");
            return Ok(3);
        }
    };
    let report = validate_hard_constraints(&trajectory, &plan, &scenario);
    let line = |name: &str, c: &uav_planner::planner::ConstraintCheck| {
        println!(
            "{name}: {} (worst residual {}, slot {:?})",
            if c.ok { "ok" } else { "VIOLATED" },
            fmt_sig9(c.residual),
            c.worst_slot
        );
    };
    line("min-rate", &report.qos);
    line("band", &report.band);
    line("keep-out", &report.keepout);
    line("speed", &report.speed);
    line("endpoints", &report.endpoints);
    Ok(if report.all_ok() { 0 } else { 3 })
}
