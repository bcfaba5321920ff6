//! Outer optimization: the successive-approximation trajectory loop, the
//! alternating allocation/trajectory loop, benchmark flight strategies and
//! hard-constraint validation of final outputs.

use serde::Serialize;

use crate::allocation::{allocate_all, plan_throughput, AllocationPlan};
use crate::channel::{build_rate_table, RateTable};
use crate::geometry::{dist, polyline_length, resample_uniform, route_around_disks, DetourError};
use crate::objective::{DcObjective, PenaltyConfig, SlackVars, TrajectoryVars};
use crate::scenario::Scenario;
use crate::solver::{initial_interior_point, solve_surrogate, SolveStatus, SolverOptions};

/// The UAV's ground-projected waypoint sequence, one point per slot boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn n_slots(&self) -> usize {
        self.points.len() - 1
    }

    pub fn step_length(&self, n: usize) -> f64 {
        dist(self.points[n - 1], self.points[n])
    }
}

#[derive(Debug, Clone)]
pub struct PlannerOptions {
    /// Max trajectory-refinement iterations per fixed allocation.
    pub l_max_sca: usize,
    /// Max alternating iterations.
    pub l_max_outer: usize,
    /// Relative stop tolerance on the penalized objective inside the
    /// trajectory loop.
    pub sca_tol: f64,
    /// Relative stop tolerance on throughput across alternating iterations.
    pub outer_tol: f64,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            l_max_sca: 50,
            l_max_outer: 30,
            sca_tol: 1e-6,
            outer_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanStatus {
    Converged,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
pub struct InfeasibleContext {
    /// First slot whose requirements cannot be met, 1-based.
    pub slot: Option<usize>,
    pub power_dbm: f64,
    pub detail: String,
}

/// Everything a solve reports: traces, feasibility verdicts and residuals.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub status: PlanStatus,
    pub stop_reason: String,
    pub iterations_outer: usize,
    /// Raw throughput objective, bps/Hz summed over slots and users.
    pub final_throughput: f64,
    /// Throughput after each accepted alternating iteration (first entry is
    /// the initial pair).
    pub objective_trace: Vec<f64>,
    /// Penalized-objective trace of every trajectory-refinement run.
    pub sca_traces: Vec<Vec<f64>>,
    pub qos_ok: bool,
    pub nfz_ok: bool,
    pub speed_ok: bool,
    pub endpoints_ok: bool,
    /// Worst minimum-rate shortfall, bps/Hz.
    pub max_residual_qos: f64,
    /// Worst keep-out incursion depth, meters.
    pub max_residual_nfz_m: f64,
    /// Worst step-length excess, meters.
    pub max_residual_speed_m: f64,
    pub power_dbm: f64,
    pub lambda: f64,
    pub eta: f64,
    pub seed: Option<u64>,
    pub infeasible: Option<InfeasibleContext>,
}

/// A finished solve: the report plus the artifacts it describes.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub report: SolveReport,
    pub trajectory: Trajectory,
    pub plan: Option<AllocationPlan>,
    pub slacks: Option<SlackVars>,
    pub rate_table: RateTable,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("trajectory anchor infeasible: speed violation {residual_speed:.3e} m^2, slack violation {residual_slack:.3e} m^2")]
pub struct InfeasibleAnchor {
    pub residual_speed: f64,
    pub residual_slack: f64,
}

/// One trajectory-refinement run for a fixed allocation.
#[derive(Debug, Clone)]
pub struct ScaRun {
    pub vars: TrajectoryVars,
    /// True penalized objective at the start point and after each accepted
    /// re-anchoring.
    pub trace: Vec<f64>,
    pub inner_iterations: usize,
}

impl ScaRun {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            points: self.vars.points(),
        }
    }

    pub fn slacks(&self) -> SlackVars {
        SlackVars(self.vars.t.clone())
    }
}

/// Maximize the penalized objective for a fixed allocation by repeatedly
/// maximizing the surrogate re-linearized at the newest iterate. The returned
/// trace is non-decreasing: each inner solve cannot lower the surrogate, and
/// the surrogate lower-bounds the true objective away from the anchor.
pub fn optimize_trajectory(
    start: &TrajectoryVars,
    plan: &AllocationPlan,
    scenario: &Scenario,
    penalties: PenaltyConfig,
    opts: &SolverOptions,
    l_max: usize,
    tol: f64,
) -> Result<ScaRun, InfeasibleAnchor> {
    let obj = DcObjective::new(plan, scenario, penalties);
    let mut current = start.clone();
    let mut trace = vec![obj.value(&current)];
    let mut inner_iterations = 0;
    for _ in 0..l_max {
        let sol = solve_surrogate(&current, plan, scenario, penalties, opts);
        if sol.status == SolveStatus::InfeasibleInput {
            return Err(InfeasibleAnchor {
                residual_speed: sol.residual_speed,
                residual_slack: sol.residual_slack,
            });
        }
        inner_iterations += sol.iterations;
        if sol.vars == current {
            break;
        }
        let value = obj.value(&sol.vars);
        let prev = *trace.last().unwrap();
        current = sol.vars;
        trace.push(value);
        if value - prev <= tol * (1.0 + prev.abs()) {
            break;
        }
    }
    Ok(ScaRun {
        vars: current,
        trace,
        inner_iterations,
    })
}

/// A trajectory-independent infeasibility certificate. At slot n the UAV can
/// be no closer to user k than the reachability cone allows
/// (|p_n - start| <= n V and |p_n - finish| <= (N - n) V), which caps the
/// per-subcarrier rate; if the summed minimum demands at those capped rates
/// exceed the band at some slot, no trajectory can satisfy the requirements.
fn certified_infeasible_slot(scenario: &Scenario) -> Option<(usize, String)> {
    let n_slots = scenario.grid.n_slots;
    let v = scenario.grid.max_step;
    let snr = scenario.snr_gain();
    let h2 = scenario.uav.altitude * scenario.uav.altitude;
    for n in 1..=n_slots {
        let mut demand = 0usize;
        for u in &scenario.users {
            let from_start = dist(scenario.uav.start, (u.x, u.y)) - n as f64 * v;
            let from_finish = dist(scenario.uav.finish, (u.x, u.y)) - (n_slots - n) as f64 * v;
            let ground = from_start.max(from_finish).max(0.0);
            let best_rate = crate::channel::log2(1.0 + snr / (ground * ground + h2));
            demand += crate::allocation::min_subcarriers(u.r_min, best_rate);
        }
        if demand > scenario.channel.n_subcarriers {
            return Some((
                n,
                format!(
                    "slot {n} needs at least {demand} subcarriers at the best reachable \
                     positions but only {} exist",
                    scenario.channel.n_subcarriers
                ),
            ));
        }
    }
    None
}

/// Best-effort allocation for an allocation-infeasible slot pattern: hand one
/// subcarrier at a time to the user furthest below its requirement. The
/// result may violate the rate floor but concentrates weight on the starved
/// users, so the trajectory loop is pulled toward them.
fn fallback_plan(rate_table: &RateTable, scenario: &Scenario) -> AllocationPlan {
    let n_f = scenario.channel.n_subcarriers;
    let counts = (1..=rate_table.n_slots())
        .map(|n| {
            let rates = rate_table.slot(n);
            let mut counts = vec![0usize; rates.len()];
            for _ in 0..n_f {
                let mut worst = 0;
                let mut worst_ratio = f64::INFINITY;
                for (k, &rate) in rates.iter().enumerate() {
                    let ratio = counts[k] as f64 * rate / scenario.users[k].r_min;
                    if ratio < worst_ratio - 1e-15 {
                        worst_ratio = ratio;
                        worst = k;
                    }
                }
                counts[worst] += 1;
            }
            counts
        })
        .collect();
    AllocationPlan::from_counts(counts, n_f)
}

/// Alternate between optimal reallocation and trajectory refinement until the
/// throughput stops improving. Starts from the constant-speed initial route;
/// if that route cannot satisfy every user, a few repair rounds steer the
/// trajectory toward the starved users before giving up.
pub fn alternating_optimize(
    scenario: &Scenario,
    penalties: PenaltyConfig,
    solver_opts: &SolverOptions,
    opts: &PlannerOptions,
) -> PlanOutcome {
    let power_dbm = scenario.uav.power_dbm();
    let infeasible_outcome = |trajectory: Trajectory,
                              table: RateTable,
                              sca_traces: Vec<Vec<f64>>,
                              slot: Option<usize>,
                              detail: String| {
        PlanOutcome {
            report: SolveReport {
                status: PlanStatus::Infeasible,
                stop_reason: detail.clone(),
                iterations_outer: 0,
                final_throughput: 0.0,
                objective_trace: Vec::new(),
                sca_traces,
                qos_ok: false,
                nfz_ok: false,
                speed_ok: false,
                endpoints_ok: false,
                max_residual_qos: f64::NAN,
                max_residual_nfz_m: f64::NAN,
                max_residual_speed_m: f64::NAN,
                power_dbm,
                lambda: penalties.lambda,
                eta: penalties.eta,
                seed: None,
                infeasible: Some(InfeasibleContext {
                    slot,
                    power_dbm,
                    detail,
                }),
            },
            trajectory,
            plan: None,
            slacks: None,
            rate_table: table,
        }
    };

    if let Some((slot, why)) = certified_infeasible_slot(scenario) {
        let fallback = straight_trajectory(scenario);
        let table = build_rate_table(scenario, &fallback.points);
        return infeasible_outcome(
            fallback,
            table,
            Vec::new(),
            Some(slot),
            format!("provably infeasible at {power_dbm:.1} dBm: {why}"),
        );
    }

    let mut vars = match initial_interior_point(scenario) {
        Ok(v) => v,
        Err(e) => {
            let fallback = straight_trajectory(scenario);
            let table = build_rate_table(scenario, &fallback.points);
            return infeasible_outcome(
                fallback,
                table,
                Vec::new(),
                None,
                format!("no feasible initial route: {e}"),
            );
        }
    };
    let mut table = build_rate_table(scenario, &vars.points());
    let mut sca_traces: Vec<Vec<f64>> = Vec::new();

    // Bootstrap: find a first feasible allocation, repairing the route
    // toward starved users if necessary.
    let mut plan_result = allocate_all(&table, scenario);
    let mut repair_rounds = 0;
    while plan_result.is_err() && repair_rounds < 3 {
        let fb = fallback_plan(&table, scenario);
        match optimize_trajectory(
            &vars,
            &fb,
            scenario,
            penalties,
            solver_opts,
            opts.l_max_sca,
            opts.sca_tol,
        ) {
            Ok(run) => {
                vars = run.vars;
                sca_traces.push(run.trace);
            }
            Err(_) => break,
        }
        table = build_rate_table(scenario, &vars.points());
        plan_result = allocate_all(&table, scenario);
        repair_rounds += 1;
    }
    let mut plan = match plan_result {
        Ok(p) => p,
        Err(e) => {
            let trajectory = Trajectory {
                points: vars.points(),
            };
            let detail = format!(
                "allocation infeasible at {power_dbm:.1} dBm even after {repair_rounds} trajectory repairs: {e}"
            );
            return infeasible_outcome(trajectory, table, sca_traces, Some(e.slot), detail);
        }
    };

    let mut throughput = plan_throughput(&plan, &table);
    let mut objective_trace = vec![throughput];
    let mut status = PlanStatus::MaxIters;
    let mut stop_reason = format!("iteration limit {} reached", opts.l_max_outer);
    let mut iterations_outer = 0;

    for _ in 1..=opts.l_max_outer {
        let run = match optimize_trajectory(
            &vars,
            &plan,
            scenario,
            penalties,
            solver_opts,
            opts.l_max_sca,
            opts.sca_tol,
        ) {
            Ok(run) => run,
            Err(e) => {
                status = PlanStatus::Converged;
                stop_reason = format!("trajectory step rejected ({e}); keeping previous iterate");
                break;
            }
        };
        let cand_table = build_rate_table(scenario, &run.vars.points());
        let new_plan = match allocate_all(&cand_table, scenario) {
            Ok(p) => p,
            Err(e) => {
                status = PlanStatus::Converged;
                stop_reason = format!(
                    "reallocation infeasible at slot {} after trajectory step; keeping previous iterate",
                    e.slot
                );
                break;
            }
        };
        let new_throughput = plan_throughput(&new_plan, &cand_table);
        if new_throughput < throughput - 1e-9 * throughput.abs().max(1.0) {
            status = PlanStatus::Converged;
            stop_reason = "throughput would decrease; keeping previous iterate".into();
            break;
        }
        vars = run.vars;
        sca_traces.push(run.trace);
        plan = new_plan;
        table = cand_table;
        iterations_outer += 1;
        let improvement = new_throughput - throughput;
        throughput = new_throughput;
        objective_trace.push(throughput);
        if improvement <= opts.outer_tol * throughput.abs().max(1.0) {
            status = PlanStatus::Converged;
            stop_reason = "throughput improvement below tolerance".into();
            break;
        }
    }

    let trajectory = Trajectory {
        points: vars.points(),
    };
    let validation = validate_hard_constraints(&trajectory, &plan, scenario);
    if !validation.all_ok() {
        status = PlanStatus::Infeasible;
        stop_reason = format!("final output failed hard validation: {}", validation.summary());
    }

    PlanOutcome {
        report: SolveReport {
            status,
            stop_reason,
            iterations_outer,
            final_throughput: throughput,
            objective_trace,
            sca_traces,
            qos_ok: validation.qos.ok,
            nfz_ok: validation.keepout.ok,
            speed_ok: validation.speed.ok,
            endpoints_ok: validation.endpoints.ok,
            max_residual_qos: validation.qos.residual,
            max_residual_nfz_m: validation.keepout.residual,
            max_residual_speed_m: validation.speed.residual,
            power_dbm,
            lambda: penalties.lambda,
            eta: penalties.eta,
            seed: None,
            infeasible: None,
        },
        trajectory,
        plan: Some(plan),
        slacks: Some(SlackVars(vars.t)),
        rate_table: table,
    }
}

/// One constraint family's verdict: worst residual (positive = violation
/// depth) and the slot where it occurs.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintCheck {
    pub ok: bool,
    /// Worst violation depth; zero or negative when satisfied (negative
    /// values are the margin).
    pub residual: f64,
    pub worst_slot: Option<usize>,
    pub worst_user: Option<usize>,
}

impl ConstraintCheck {
    fn tracking() -> Self {
        ConstraintCheck {
            ok: true,
            residual: f64::NEG_INFINITY,
            worst_slot: None,
            worst_user: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// Per-slot minimum rate, tolerance 1e-9 bps/Hz.
    pub qos: ConstraintCheck,
    /// Subcarrier budget per slot, exact.
    pub band: ConstraintCheck,
    /// Keep-out clearance, tolerance 1e-3 m.
    pub keepout: ConstraintCheck,
    /// Step length, tolerance 1e-6 m.
    pub speed: ConstraintCheck,
    /// Endpoint pinning, exact.
    pub endpoints: ConstraintCheck,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.qos.ok && self.band.ok && self.keepout.ok && self.speed.ok && self.endpoints.ok
    }

    pub fn summary(&self) -> String {
        let flag = |name: &str, c: &ConstraintCheck| {
            if c.ok {
                String::new()
            } else {
                format!(
                    "{name} violated by {:.3e} at slot {:?}; ",
                    c.residual, c.worst_slot
                )
            }
        };
        let mut s = String::new();
        s += &flag("min-rate", &self.qos);
        s += &flag("band", &self.band);
        s += &flag("keep-out", &self.keepout);
        s += &flag("speed", &self.speed);
        s += &flag("endpoints", &self.endpoints);
        if s.is_empty() {
            s = "all constraints satisfied".into();
        }
        s
    }
}

/// Check every hard constraint of a finished (trajectory, allocation) pair.
/// Never fails; returns per-constraint residuals.
pub fn validate_hard_constraints(
    trajectory: &Trajectory,
    plan: &AllocationPlan,
    scenario: &Scenario,
) -> ValidationReport {
    let n = scenario.grid.n_slots;
    assert_eq!(
        trajectory.points.len(),
        n + 1,
        "trajectory must have N+1 points"
    );
    assert_eq!(plan.n_slots(), n, "plan must cover N slots");
    let table = build_rate_table(scenario, &trajectory.points);

    // Minimum rate: count * rate >= r_min - 1e-9.
    let mut qos = ConstraintCheck::tracking();
    for slot in 1..=n {
        for (k, u) in scenario.users.iter().enumerate() {
            let shortfall = u.r_min - plan.counts[slot - 1][k] as f64 * table.at(slot, k);
            if shortfall > qos.residual {
                qos.residual = shortfall;
                qos.worst_slot = Some(slot);
                qos.worst_user = Some(k);
            }
        }
    }
    qos.ok = qos.residual <= 1e-9;

    // Subcarrier budget.
    let mut band = ConstraintCheck::tracking();
    for slot in 1..=n {
        let used: usize = plan.counts[slot - 1].iter().sum();
        let excess = used as f64 - scenario.channel.n_subcarriers as f64;
        if excess > band.residual {
            band.residual = excess;
            band.worst_slot = Some(slot);
        }
    }
    band.ok = band.residual <= 0.0;

    // Keep-out clearance in meters (the fixed start point counts too).
    let mut keepout = ConstraintCheck::tracking();
    for slot in 0..=n {
        for z in &scenario.nfzs {
            let incursion = z.radius - dist(trajectory.points[slot], z.center());
            if incursion > keepout.residual {
                keepout.residual = incursion;
                keepout.worst_slot = Some(slot);
            }
        }
    }
    keepout.ok = keepout.residual <= 1e-3;

    // Step lengths in meters.
    let mut speed = ConstraintCheck::tracking();
    for slot in 1..=n {
        let excess = trajectory.step_length(slot) - scenario.grid.max_step;
        if excess > speed.residual {
            speed.residual = excess;
            speed.worst_slot = Some(slot);
        }
    }
    speed.ok = speed.residual <= 1e-6;

    // Endpoints pinned exactly.
    let start_err = dist(trajectory.points[0], scenario.uav.start);
    let finish_err = dist(trajectory.points[n], scenario.uav.finish);
    let endpoints = ConstraintCheck {
        ok: start_err == 0.0 && finish_err == 0.0,
        residual: start_err.max(finish_err),
        worst_slot: if start_err >= finish_err {
            Some(0)
        } else {
            Some(n)
        },
        worst_user: None,
    };

    ValidationReport {
        qos,
        band,
        keepout,
        speed,
        endpoints,
    }
}

/// Benchmark: the uniform-speed straight chord (may cross keep-out disks).
pub fn straight_trajectory(scenario: &Scenario) -> Trajectory {
    let mut points = resample_uniform(
        &[scenario.uav.start, scenario.uav.finish],
        scenario.grid.n_slots,
    );
    points[0] = scenario.uav.start;
    points[scenario.grid.n_slots] = scenario.uav.finish;
    Trajectory { points }
}

/// Benchmark: the chord detoured around every blocking disk along external
/// tangent lines (disks inflated by 1 cm), re-discretized to uniform speed.
pub fn detour_tangent_trajectory(scenario: &Scenario) -> Result<Trajectory, DetourError> {
    let disks: Vec<_> = scenario
        .nfzs
        .iter()
        .map(|z| (z.center(), z.radius + 1e-2))
        .collect();
    let route = route_around_disks(scenario.uav.start, scenario.uav.finish, &disks, 8)?;
    let length = polyline_length(&route);
    let reach = scenario.grid.n_slots as f64 * scenario.grid.max_step;
    if length > reach {
        return Err(DetourError::Unreachable { length, reach });
    }
    let mut points = resample_uniform(&route, scenario.grid.n_slots);
    points[0] = scenario.uav.start;
    points[scenario.grid.n_slots] = scenario.uav.finish;
    Ok(Trajectory { points })
}

/// Benchmark: the full solve on a copy of the scenario with every keep-out
/// zone removed.
pub fn no_nfz_plan(
    scenario: &Scenario,
    penalties: PenaltyConfig,
    solver_opts: &SolverOptions,
    opts: &PlannerOptions,
) -> PlanOutcome {
    let mut unrestricted = scenario.clone();
    unrestricted.nfzs.clear();
    alternating_optimize(&unrestricted, penalties, solver_opts, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Proposed,
    NoNfz,
    Detour,
    Straight,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Proposed,
        Strategy::NoNfz,
        Strategy::Detour,
        Strategy::Straight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Proposed => "proposed",
            Strategy::NoNfz => "no_nfz",
            Strategy::Detour => "detour",
            Strategy::Straight => "straight",
        }
    }

    pub fn parse(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Throughput of one strategy on a scenario. Fixed trajectories (detour,
/// straight) are scored all-or-nothing: any allocation-infeasible slot makes
/// the whole point infeasible.
#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub feasible: bool,
    pub throughput: Option<f64>,
    pub trajectory: Trajectory,
    pub plan: Option<AllocationPlan>,
    pub detail: String,
    pub report: Option<SolveReport>,
}

pub fn evaluate_strategy(
    scenario: &Scenario,
    strategy: Strategy,
    penalties: PenaltyConfig,
    solver_opts: &SolverOptions,
    opts: &PlannerOptions,
) -> StrategyOutcome {
    match strategy {
        Strategy::Proposed | Strategy::NoNfz => {
            let outcome = if strategy == Strategy::Proposed {
                alternating_optimize(scenario, penalties, solver_opts, opts)
            } else {
                no_nfz_plan(scenario, penalties, solver_opts, opts)
            };
            let feasible = outcome.report.status != PlanStatus::Infeasible;
            StrategyOutcome {
                strategy,
                feasible,
                throughput: feasible.then_some(outcome.report.final_throughput),
                trajectory: outcome.trajectory,
                plan: outcome.plan,
                detail: outcome.report.stop_reason.clone(),
                report: Some(outcome.report),
            }
        }
        Strategy::Detour | Strategy::Straight => {
            let trajectory = if strategy == Strategy::Detour {
                match detour_tangent_trajectory(scenario) {
                    Ok(t) => t,
                    Err(e) => {
                        return StrategyOutcome {
                            strategy,
                            feasible: false,
                            throughput: None,
                            trajectory: straight_trajectory(scenario),
                            plan: None,
                            detail: e.to_string(),
                            report: None,
                        }
                    }
                }
            } else {
                straight_trajectory(scenario)
            };
            let table = build_rate_table(scenario, &trajectory.points);
            match allocate_all(&table, scenario) {
                Ok(plan) => {
                    let throughput = plan_throughput(&plan, &table);
                    StrategyOutcome {
                        strategy,
                        feasible: true,
                        throughput: Some(throughput),
                        trajectory,
                        plan: Some(plan),
                        detail: String::new(),
                        report: None,
                    }
                }
                Err(e) => StrategyOutcome {
                    strategy,
                    feasible: false,
                    throughput: None,
                    trajectory,
                    plan: None,
                    detail: e.to_string(),
                    report: None,
                },
            }
        }
    }
}
