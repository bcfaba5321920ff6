//! Inner solver: maximize the concave surrogate objective over the speed and
//! slack constraints with a log-barrier interior-point method.
//!
//! Free variables are the interior trajectory positions (endpoints stay
//! pinned) and one slack per slot and user that holds subcarriers. Keep-out
//! disks are enforced through half-plane cuts obtained by linearizing the
//! squared center distance at the anchor; the cut feasible set is contained
//! in the true keep-out-feasible set, so every iterate of the outer
//! successive-approximation loop remains clear of the disks.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::allocation::AllocationPlan;
use crate::channel::squared_distance;
use crate::geometry::{dist, resample_uniform, route_around_disks, DetourError};
use crate::objective::{slacks_from_points, DcObjective, PenaltyConfig, TrajectoryVars};
use crate::scenario::Scenario;

const LN_2: f64 = std::f64::consts::LN_2;

/// Anchor constraint violations beyond this (m^2) are rejected rather than
/// repaired.
const FEASIBILITY_TOL: f64 = 1e-6;

/// Half-plane cuts are relaxed by this much (m^2) so an anchor sitting
/// exactly on a disk boundary keeps a strictly positive barrier slack. The
/// induced center-distance shortfall is below a nanometer.
const CUT_RELAXATION: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Total Newton iteration budget across all barrier stages.
    pub max_iters: usize,
    /// Barrier stages stop once mu * n_constraints falls below this
    /// (scaled up when the objective is numerically large).
    pub kkt_tol: f64,
    /// Relative objective-change tolerance used by callers iterating the
    /// surrogate.
    pub obj_tol: f64,
    /// Geometric barrier reduction factor, in (0, 1).
    pub mu_shrink: f64,
    /// Initial barrier weight; None picks a weight that lets the slack
    /// variables float well away from their floors at first, which is what
    /// lets the positions move freely in the early stages.
    pub mu_init: Option<f64>,
    /// Backtracking line-search shrink factor, in (0, 1).
    pub ls_shrink: f64,
    /// Armijo sufficient-increase constant.
    pub ls_sufficient_decrease: f64,
    /// Enforce keep-out disks through linearized half-plane cuts.
    pub nfz_cuts: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 200,
            kkt_tol: 1e-5,
            obj_tol: 1e-6,
            mu_shrink: 0.2,
            mu_init: None,
            ls_shrink: 0.5,
            ls_sufficient_decrease: 1e-4,
            nfz_cuts: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iters == 0 {
            return Err("max_iters must be positive".into());
        }
        if let Some(mu) = self.mu_init {
            if !(mu > 0.0) {
                return Err("mu_init must be positive".into());
            }
        }
        for (name, v) in [
            ("kkt_tol", self.kkt_tol),
            ("obj_tol", self.obj_tol),
            ("ls_sufficient_decrease", self.ls_sufficient_decrease),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("mu_shrink", self.mu_shrink), ("ls_shrink", self.ls_shrink)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name} must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    InfeasibleInput,
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub vars: TrajectoryVars,
    /// Surrogate objective value at `vars`, linearized at the anchor.
    pub objective: f64,
    /// Max speed-constraint violation at `vars`, m^2 (0 when feasible).
    pub residual_speed: f64,
    /// Max slack-constraint violation at `vars`, m^2 (0 when feasible).
    pub residual_slack: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InitError {
    #[error("{0}")]
    Detour(#[from] DetourError),
    #[error("initial route length {length:.1} m exceeds the reachable {reach:.1} m")]
    Unreachable { length: f64, reach: f64 },
}

/// A strictly feasible starting point: the start-finish chord traversed at
/// constant speed (routed around any keep-out disk that blocks it), with
/// slacks inflated a fraction above the squared distances.
pub fn initial_interior_point(scenario: &Scenario) -> Result<TrajectoryVars, InitError> {
    let n = scenario.grid.n_slots;
    let start = scenario.uav.start;
    let finish = scenario.uav.finish;
    let blocked = scenario
        .nfzs
        .iter()
        .any(|z| crate::geometry::segment_crosses_disk(start, finish, z.center(), z.radius));
    let route = if blocked {
        let disks: Vec<_> = scenario
            .nfzs
            .iter()
            .map(|z| (z.center(), z.radius + 1e-2))
            .collect();
        route_around_disks(start, finish, &disks, 8)?
    } else {
        vec![start, finish]
    };
    let length = crate::geometry::polyline_length(&route);
    let reach = n as f64 * scenario.grid.max_step;
    if length > reach {
        return Err(InitError::Unreachable { length, reach });
    }
    let mut points = resample_uniform(&route, n);
    points[0] = start;
    points[n] = finish;
    let t = slacks_from_points(scenario, &points, 1e-3);
    Ok(TrajectoryVars {
        x: points.iter().map(|p| p.0).collect(),
        y: points.iter().map(|p| p.1).collect(),
        t,
    })
}

/// Max violations (m^2) of the speed and slack constraints.
pub fn constraint_residuals(scenario: &Scenario, vars: &TrajectoryVars) -> (f64, f64) {
    let v2 = scenario.grid.max_step * scenario.grid.max_step;
    let h = scenario.uav.altitude;
    let mut speed: f64 = 0.0;
    for n in 1..=vars.n_slots() {
        let step2 = (vars.x[n] - vars.x[n - 1]).powi(2) + (vars.y[n] - vars.y[n - 1]).powi(2);
        speed = speed.max(step2 - v2);
    }
    let mut slack: f64 = 0.0;
    for n in 1..=vars.n_slots() {
        for (k, u) in scenario.users.iter().enumerate() {
            let d2 = squared_distance(vars.point(n), u, h);
            slack = slack.max(d2 - vars.slack(n, k));
        }
    }
    (speed.max(0.0), slack.max(0.0))
}

struct Cut {
    slot: usize,
    ax: f64,
    ay: f64,
    c0: f64,
}

enum Constraint {
    /// V^2 - step(n)^2 >= 0 for the step into slot `n`.
    Speed { n: usize },
    /// t[n][k] - d^2(n, k) >= 0.
    Slack { n: usize, k: usize },
    /// Affine keep-out cut on a free position.
    HalfPlane(usize),
}

struct BarrierProblem<'a> {
    scenario: &'a Scenario,
    plan: &'a AllocationPlan,
    penalties: PenaltyConfig,
    anchor: TrajectoryVars,
    n: usize,
    free_pos: bool,
    /// Variable index of t[n-1][k], for slots/users holding subcarriers.
    t_index: Vec<Vec<Option<usize>>>,
    dim: usize,
    /// Constant surrogate gradient on free positions (from the linearized
    /// keep-out quadratics), indexed by slot.
    push_x: Vec<f64>,
    push_y: Vec<f64>,
    cuts: Vec<Cut>,
    constraints: Vec<Constraint>,
    snr: f64,
    v2: f64,
}

impl<'a> BarrierProblem<'a> {
    fn new(
        scenario: &'a Scenario,
        plan: &'a AllocationPlan,
        penalties: PenaltyConfig,
        anchor: TrajectoryVars,
        free_pos: bool,
        use_cuts: bool,
    ) -> Self {
        let n = scenario.grid.n_slots;
        let k_users = scenario.n_users();
        let n_free = if free_pos { n - 1 } else { 0 };

        let mut t_index = vec![vec![None; k_users]; n];
        let mut next = 2 * n_free;
        for slot in 1..=n {
            for k in 0..k_users {
                if plan.counts[slot - 1][k] > 0 {
                    t_index[slot - 1][k] = Some(next);
                    next += 1;
                }
            }
        }
        let dim = next;

        let eta = penalties.eta;
        let mut push_x = vec![0.0; n + 1];
        let mut push_y = vec![0.0; n + 1];
        for slot in 1..=n {
            for z in &scenario.nfzs {
                push_x[slot] += 2.0 * eta * (anchor.x[slot] - z.x);
                push_y[slot] += 2.0 * eta * (anchor.y[slot] - z.y);
            }
        }

        let mut cuts = Vec::new();
        if use_cuts && free_pos {
            for slot in 1..n {
                for z in &scenario.nfzs {
                    let dx0 = anchor.x[slot] - z.x;
                    let dy0 = anchor.y[slot] - z.y;
                    let f0 = dx0 * dx0 + dy0 * dy0;
                    let ax = 2.0 * dx0;
                    let ay = 2.0 * dy0;
                    let c0 = f0 - z.radius * z.radius + CUT_RELAXATION
                        - ax * anchor.x[slot]
                        - ay * anchor.y[slot];
                    cuts.push(Cut { slot, ax, ay, c0 });
                }
            }
        }

        let mut constraints = Vec::new();
        if free_pos {
            for slot in 1..=n {
                constraints.push(Constraint::Speed { n: slot });
            }
        }
        for slot in 1..=n {
            for k in 0..k_users {
                if t_index[slot - 1][k].is_some() {
                    constraints.push(Constraint::Slack { n: slot, k });
                }
            }
        }
        for i in 0..cuts.len() {
            constraints.push(Constraint::HalfPlane(i));
        }

        BarrierProblem {
            scenario,
            plan,
            penalties,
            anchor,
            n,
            free_pos,
            t_index,
            dim,
            push_x,
            push_y,
            cuts,
            constraints,
            snr: scenario.snr_gain(),
            v2: scenario.grid.max_step * scenario.grid.max_step,
        }
    }

    fn objective(&self) -> DcObjective<'a> {
        DcObjective::new(self.plan, self.scenario, self.penalties)
    }

    #[inline]
    fn ix(&self, slot: usize) -> usize {
        slot - 1
    }

    #[inline]
    fn iy(&self, slot: usize) -> usize {
        (self.n - 1) + slot - 1
    }

    fn pack(&self, vars: &TrajectoryVars) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        if self.free_pos {
            for slot in 1..self.n {
                v[self.ix(slot)] = vars.x[slot];
                v[self.iy(slot)] = vars.y[slot];
            }
        }
        for slot in 1..=self.n {
            for (k, idx) in self.t_index[slot - 1].iter().enumerate() {
                if let Some(i) = idx {
                    v[*i] = vars.t[slot - 1][k];
                }
            }
        }
        v
    }

    /// Rebuild full trajectory variables: pinned endpoints from the scenario,
    /// inactive slacks set pointwise just above the squared distance.
    fn unpack(&self, v: &DVector<f64>) -> TrajectoryVars {
        let n = self.n;
        let mut x = vec![0.0; n + 1];
        let mut y = vec![0.0; n + 1];
        x[0] = self.scenario.uav.start.0;
        y[0] = self.scenario.uav.start.1;
        x[n] = self.scenario.uav.finish.0;
        y[n] = self.scenario.uav.finish.1;
        for slot in 1..n {
            if self.free_pos {
                x[slot] = v[self.ix(slot)];
                y[slot] = v[self.iy(slot)];
            } else {
                x[slot] = self.anchor.x[slot];
                y[slot] = self.anchor.y[slot];
            }
        }
        let h = self.scenario.uav.altitude;
        let t = (1..=n)
            .map(|slot| {
                self.t_index[slot - 1]
                    .iter()
                    .enumerate()
                    .map(|(k, idx)| match idx {
                        Some(i) => v[*i],
                        None => {
                            squared_distance((x[slot], y[slot]), &self.scenario.users[k], h)
                                * (1.0 + 1e-9)
                        }
                    })
                    .collect()
            })
            .collect();
        TrajectoryVars { x, y, t }
    }

    /// Slack of one constraint at the packed point.
    fn slack(&self, c: &Constraint, v: &DVector<f64>) -> f64 {
        match *c {
            Constraint::Speed { n } => {
                let (x0, y0) = self.pos(v, n - 1);
                let (x1, y1) = self.pos(v, n);
                self.v2 - (x1 - x0).powi(2) - (y1 - y0).powi(2)
            }
            Constraint::Slack { n, k } => {
                let (x, y) = self.pos(v, n);
                let u = &self.scenario.users[k];
                let t = v[self.t_index[n - 1][k].unwrap()];
                t - (x - u.x).powi(2)
                    - (y - u.y).powi(2)
                    - self.scenario.uav.altitude * self.scenario.uav.altitude
            }
            Constraint::HalfPlane(i) => {
                let cut = &self.cuts[i];
                let (x, y) = self.pos(v, cut.slot);
                cut.c0 + cut.ax * x + cut.ay * y
            }
        }
    }

    #[inline]
    fn pos(&self, v: &DVector<f64>, slot: usize) -> (f64, f64) {
        if slot == 0 {
            self.scenario.uav.start
        } else if slot == self.n {
            self.scenario.uav.finish
        } else if self.free_pos {
            (v[self.ix(slot)], v[self.iy(slot)])
        } else {
            (self.anchor.x[slot], self.anchor.y[slot])
        }
    }

    fn min_slack(&self, v: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|c| self.slack(c, v))
            .fold(f64::INFINITY, f64::min)
    }

    /// A barrier weight at which the slack floors stop dominating: the
    /// centered slack mu / |dS/dt| then sits at roughly a third of the anchor
    /// slack value, leaving the positions free to move in the early stages.
    fn loose_mu(&self) -> f64 {
        let lam = self.penalties.lambda;
        let mut mu: f64 = 100.0;
        for slot in 1..=self.n {
            for (k, idx) in self.t_index[slot - 1].iter().enumerate() {
                if idx.is_none() {
                    continue;
                }
                let c = self.plan.counts[slot - 1][k] as f64;
                let t0 = self.anchor.t[slot - 1][k];
                // |dS/dt| at the anchor times t0.
                let wall = (1.0 + lam) * c * self.snr / ((t0 + self.snr) * LN_2);
                mu = mu.max(0.3 * wall);
            }
        }
        mu.clamp(100.0, 1e9)
    }

    /// Barrier objective: surrogate + mu * sum of log slacks.
    fn phi(&self, v: &DVector<f64>, mu: f64) -> f64 {
        let vars = self.unpack(v);
        let mut value = self.objective().surrogate(&vars, &self.anchor);
        for c in &self.constraints {
            let s = self.slack(c, v);
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            value += mu * s.ln();
        }
        value
    }

    /// Gradient of the barrier objective and the negated Hessian (positive
    /// definite by concavity).
    fn grad_neg_hess(&self, v: &DVector<f64>, mu: f64) -> (DVector<f64>, DMatrix<f64>) {
        let lam = self.penalties.lambda;
        let mut g = DVector::zeros(self.dim);
        let mut a = DMatrix::zeros(self.dim, self.dim);

        // Surrogate terms.
        for slot in 1..=self.n {
            for (k, idx) in self.t_index[slot - 1].iter().enumerate() {
                let Some(i) = *idx else { continue };
                let c = self.plan.counts[slot - 1][k] as f64;
                let t = v[i];
                let t0 = self.anchor.t[slot - 1][k];
                g[i] +=
                    (1.0 + lam) * c / ((t + self.snr) * LN_2) - (1.0 + lam) * c / (t0 * LN_2);
                a[(i, i)] += (1.0 + lam) * c / ((t + self.snr).powi(2) * LN_2);
            }
            if self.free_pos && slot < self.n {
                g[self.ix(slot)] += self.push_x[slot];
                g[self.iy(slot)] += self.push_y[slot];
            }
        }

        // Barrier terms: g += mu * grad s / s and
        // A += mu * (grad s grad s^T / s^2 - hess s / s).
        let mut sparse_grad: Vec<(usize, f64)> = Vec::with_capacity(6);
        for c in &self.constraints {
            let s = self.slack(c, v);
            sparse_grad.clear();
            match *c {
                Constraint::Speed { n } => {
                    let (x0, y0) = self.pos(v, n - 1);
                    let (x1, y1) = self.pos(v, n);
                    let dx = x1 - x0;
                    let dy = y1 - y0;
                    let left_free = n - 1 >= 1;
                    let right_free = n <= self.n - 1;
                    if right_free {
                        sparse_grad.push((self.ix(n), -2.0 * dx));
                        sparse_grad.push((self.iy(n), -2.0 * dy));
                        a[(self.ix(n), self.ix(n))] += 2.0 * mu / s;
                        a[(self.iy(n), self.iy(n))] += 2.0 * mu / s;
                    }
                    if left_free {
                        sparse_grad.push((self.ix(n - 1), 2.0 * dx));
                        sparse_grad.push((self.iy(n - 1), 2.0 * dy));
                        a[(self.ix(n - 1), self.ix(n - 1))] += 2.0 * mu / s;
                        a[(self.iy(n - 1), self.iy(n - 1))] += 2.0 * mu / s;
                    }
                    if left_free && right_free {
                        a[(self.ix(n), self.ix(n - 1))] += -2.0 * mu / s;
                        a[(self.ix(n - 1), self.ix(n))] += -2.0 * mu / s;
                        a[(self.iy(n), self.iy(n - 1))] += -2.0 * mu / s;
                        a[(self.iy(n - 1), self.iy(n))] += -2.0 * mu / s;
                    }
                }
                Constraint::Slack { n, k } => {
                    let i = self.t_index[n - 1][k].unwrap();
                    sparse_grad.push((i, 1.0));
                    if self.free_pos && n < self.n {
                        let (x, y) = self.pos(v, n);
                        let u = &self.scenario.users[k];
                        sparse_grad.push((self.ix(n), -2.0 * (x - u.x)));
                        sparse_grad.push((self.iy(n), -2.0 * (y - u.y)));
                        a[(self.ix(n), self.ix(n))] += 2.0 * mu / s;
                        a[(self.iy(n), self.iy(n))] += 2.0 * mu / s;
                    }
                }
                Constraint::HalfPlane(ci) => {
                    let cut = &self.cuts[ci];
                    sparse_grad.push((self.ix(cut.slot), cut.ax));
                    sparse_grad.push((self.iy(cut.slot), cut.ay));
                }
            }
            for &(i, gi) in &sparse_grad {
                g[i] += mu * gi / s;
                for &(j, gj) in &sparse_grad {
                    a[(i, j)] += mu * gi * gj / (s * s);
                }
            }
        }
        (g, a)
    }
}

/// Maximize the anchor-linearized surrogate subject to the speed and slack
/// constraints (plus keep-out cuts when enabled). Returns the anchor itself
/// whenever no strictly better point is found, so the surrogate value never
/// decreases across a call.
pub fn solve_surrogate(
    anchor: &TrajectoryVars,
    plan: &AllocationPlan,
    scenario: &Scenario,
    penalties: PenaltyConfig,
    opts: &SolverOptions,
) -> InnerSolution {
    let n = scenario.grid.n_slots;
    assert_eq!(anchor.x.len(), n + 1, "anchor must have N+1 points");
    assert_eq!(plan.counts.len(), n, "plan must cover N slots");

    let infeasible_input = |vars: &TrajectoryVars| {
        let (rs, rt) = constraint_residuals(scenario, vars);
        InnerSolution {
            vars: vars.clone(),
            objective: f64::NEG_INFINITY,
            residual_speed: rs,
            residual_slack: rt,
            iterations: 0,
            status: SolveStatus::InfeasibleInput,
        }
    };

    // Boundary pinning is part of the anchor contract.
    let start = scenario.uav.start;
    let finish = scenario.uav.finish;
    if dist((anchor.x[0], anchor.y[0]), start) > 1e-9
        || dist((anchor.x[n], anchor.y[n]), finish) > 1e-9
    {
        return infeasible_input(anchor);
    }

    let mut repaired = anchor.clone();
    repaired.x[0] = start.0;
    repaired.y[0] = start.1;
    repaired.x[n] = finish.0;
    repaired.y[n] = finish.1;

    // Reject anchors violating the speed or slack constraints beyond
    // tolerance; inflate slacks sitting exactly on their floor.
    let (speed_violation, _) = constraint_residuals(scenario, &repaired);
    if speed_violation > FEASIBILITY_TOL {
        return infeasible_input(anchor);
    }
    let h = scenario.uav.altitude;
    for slot in 1..=n {
        for (k, u) in scenario.users.iter().enumerate() {
            let d2 = squared_distance(repaired.point(slot), u, h);
            if d2 - repaired.t[slot - 1][k] > FEASIBILITY_TOL {
                return infeasible_input(anchor);
            }
            let floor = d2 * (1.0 + 1e-9);
            if repaired.t[slot - 1][k] < floor {
                repaired.t[slot - 1][k] = floor;
            }
        }
    }

    // Positions are fully determined when there is no interior point or the
    // endpoints are a full-speed chord apart; only the slacks remain.
    let chord = dist(start, finish);
    let reach = n as f64 * scenario.grid.max_step;
    let frozen = n == 1 || chord >= reach * (1.0 - 1e-12);
    if frozen {
        return solve_frozen_positions(repaired, plan, scenario, penalties);
    }

    // Nudge strictly into the interior of the speed region if the anchor
    // rides the boundary, blending toward the uniform chord.
    if !strictify_speed(&mut repaired, scenario) {
        return infeasible_input(anchor);
    }

    let use_cuts = opts.nfz_cuts && !scenario.nfzs.is_empty();
    let problem = BarrierProblem::new(scenario, plan, penalties, repaired.clone(), true, use_cuts);
    let mut v = problem.pack(&repaired);
    if problem.min_slack(&v) <= 0.0 {
        // A keep-out cut can only be non-strict if the anchor sits inside a
        // disk; that is outside the anchor contract.
        return infeasible_input(anchor);
    }

    let obj = problem.objective();
    let baseline = obj.surrogate(&repaired, &repaired);
    let m = problem.constraints.len() as f64;
    let scale_guard = 1e-9 * baseline.abs();
    let mu_target = opts.kkt_tol.max(scale_guard) / m;

    let mut mu = opts
        .mu_init
        .unwrap_or_else(|| problem.loose_mu().max(mu_target * 10.0));
    let mut iterations = 0usize;
    let mut status = SolveStatus::Converged;
    let trace_stages = std::env::var_os("UAV_PLANNER_SOLVER_TRACE").is_some();

    'stages: while mu > mu_target {
        let mut stage_steps = 0usize;
        let mut poor_steps = 0usize;
        loop {
            if iterations >= opts.max_iters {
                status = SolveStatus::MaxIters;
                break 'stages;
            }
            let phi = problem.phi(&v, mu);
            let (g, a) = problem.grad_neg_hess(&v, mu);
            let dir = match newton_direction(&a, &g) {
                Some(d) => d,
                None => break,
            };
            let decrement = g.dot(&dir);
            if decrement <= 0.0 || decrement * 0.5 <= 1e-12 * (1.0 + phi.abs()) {
                break;
            }
            // Backtrack to strict feasibility, then ask for sufficient
            // increase (with an allowance for evaluation roundoff).
            let noise = 1e-14 * (1.0 + phi.abs());
            let mut alpha = 1.0;
            let mut accepted = false;
            let mut gain = 0.0;
            while alpha > 1e-16 {
                let trial = &v + &dir * alpha;
                if problem.min_slack(&trial) > 0.0 {
                    let trial_phi = problem.phi(&trial, mu);
                    gain = trial_phi - phi;
                    if gain >= opts.ls_sufficient_decrease * alpha * decrement - noise {
                        v = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= opts.ls_shrink;
            }
            iterations += 1;
            stage_steps += 1;
            if !accepted {
                break;
            }
            // When actual progress repeatedly falls far short of the model's
            // prediction the quadratic model is poor at this barrier weight;
            // move on, continuation will revisit the region.
            if gain < 0.01 * alpha * decrement {
                poor_steps += 1;
                if poor_steps >= 3 {
                    break;
                }
            } else {
                poor_steps = 0;
            }
            if stage_steps >= 60 {
                break;
            }
        }
        if trace_stages {
            eprintln!(
                "stage mu={mu:.3e} steps={stage_steps} total={iterations} phi={:.6e}",
                problem.phi(&v, mu)
            );
        }
        // Fast-forward when the stage converged immediately: the iterate is
        // already central for much smaller barrier weights.
        mu *= if stage_steps <= 1 {
            opts.mu_shrink * opts.mu_shrink
        } else {
            opts.mu_shrink
        };
    }

    let vars = problem.unpack(&v);
    let objective = obj.surrogate(&vars, &repaired);
    if objective <= baseline {
        let (rs, rt) = constraint_residuals(scenario, &repaired);
        return InnerSolution {
            vars: repaired,
            objective: baseline,
            residual_speed: rs,
            residual_slack: rt,
            iterations,
            status,
        };
    }
    let (rs, rt) = constraint_residuals(scenario, &vars);
    InnerSolution {
        vars,
        objective,
        residual_speed: rs,
        residual_slack: rt,
        iterations,
        status,
    }
}

/// Closed-form slack optimization when every position is pinned: the
/// surrogate is separable and concave in each slack, with unconstrained
/// maximizer anchor_t - snr, clamped to sit strictly above the squared
/// distance.
fn solve_frozen_positions(
    mut vars: TrajectoryVars,
    plan: &AllocationPlan,
    scenario: &Scenario,
    penalties: PenaltyConfig,
) -> InnerSolution {
    let anchor = vars.clone();
    let snr = scenario.snr_gain();
    let h = scenario.uav.altitude;
    for slot in 1..=scenario.grid.n_slots {
        for (k, u) in scenario.users.iter().enumerate() {
            if plan.counts[slot - 1][k] == 0 {
                continue;
            }
            let d2 = squared_distance(vars.point(slot), u, h);
            let unconstrained = anchor.t[slot - 1][k] - snr;
            vars.t[slot - 1][k] = unconstrained.max(d2 * (1.0 + 1e-9));
        }
    }
    let obj = DcObjective::new(plan, scenario, penalties);
    let objective = obj.surrogate(&vars, &anchor);
    let baseline = obj.surrogate(&anchor, &anchor);
    let out = if objective > baseline { vars } else { anchor.clone() };
    let (rs, rt) = constraint_residuals(scenario, &out);
    InnerSolution {
        objective: obj.surrogate(&out, &anchor),
        vars: out,
        residual_speed: rs,
        residual_slack: rt,
        iterations: 1,
        status: SolveStatus::Converged,
    }
}

/// Blend interior points toward the uniform chord until every step is
/// strictly below the speed limit. Returns false if no blend works.
fn strictify_speed(vars: &mut TrajectoryVars, scenario: &Scenario) -> bool {
    let n = vars.n_slots();
    let v2 = scenario.grid.max_step * scenario.grid.max_step;
    let strict = |vars: &TrajectoryVars| {
        (1..=n).all(|slot| {
            let step2 = (vars.x[slot] - vars.x[slot - 1]).powi(2)
                + (vars.y[slot] - vars.y[slot - 1]).powi(2);
            step2 < v2 * (1.0 - 1e-12)
        })
    };
    if strict(vars) {
        return true;
    }
    let start = scenario.uav.start;
    let finish = scenario.uav.finish;
    for alpha in [1e-8, 1e-6, 1e-4, 1e-2, 0.1, 0.5] {
        let mut blended = vars.clone();
        for slot in 1..n {
            let f = slot as f64 / n as f64;
            let cx = start.0 + f * (finish.0 - start.0);
            let cy = start.1 + f * (finish.1 - start.1);
            blended.x[slot] = (1.0 - alpha) * vars.x[slot] + alpha * cx;
            blended.y[slot] = (1.0 - alpha) * vars.y[slot] + alpha * cy;
        }
        if strict(&blended) {
            // Slacks may have tightened slightly; re-inflate.
            let h = scenario.uav.altitude;
            for slot in 1..=n {
                for (k, u) in scenario.users.iter().enumerate() {
                    let floor = squared_distance(blended.point(slot), u, h) * (1.0 + 1e-9);
                    if blended.t[slot - 1][k] < floor {
                        blended.t[slot - 1][k] = floor;
                    }
                }
            }
            *vars = blended;
            return true;
        }
    }
    false
}

fn newton_direction(a: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let mut ridge = 0.0;
    let base = a.diagonal().amax().max(1e-12);
    for _ in 0..6 {
        let mut m = a.clone();
        if ridge > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += ridge;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            return Some(chol.solve(g));
        }
        ridge = if ridge == 0.0 {
            1e-12 * base
        } else {
            ridge * 100.0
        };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::AllocationPlan;
    use crate::scenario::{
        ChannelSpec, NfzSpec, Scenario, ScenarioFile, TimeSpec, UavSpec, UserSpec,
    };
    use approx::assert_relative_eq;

    fn single_user_scenario() -> Scenario {
        Scenario::from_file(ScenarioFile {
            users: vec![UserSpec {
                id: 0,
                x: 800.0,
                y: 800.0,
                r_min: 3.0,
            }],
            nfzs: vec![NfzSpec {
                x: 450.0,
                y: 450.0,
                radius: 150.0,
                height: 200.0,
            }],
            uav: UavSpec {
                altitude: 100.0,
                v_max: 50.0,
                start: [0.0, 0.0],
                finish: [0.0, 1000.0],
                power_dbm: 10.0,
            },
            channel: ChannelSpec {
                beta0_db: -50.0,
                noise_dbm: -100.0,
                n_subcarriers: 16,
            },
            time: TimeSpec {
                horizon_s: 50.0,
                n_slots: 50,
            },
        })
        .unwrap()
    }

    fn tiny_scenario(n_slots: usize, v_max: f64, user: (f64, f64), finish: (f64, f64)) -> Scenario {
        Scenario::from_file(ScenarioFile {
            users: vec![UserSpec {
                id: 0,
                x: user.0,
                y: user.1,
                r_min: 0.1,
            }],
            nfzs: Vec::<NfzSpec>::new(),
            uav: UavSpec {
                altitude: 100.0,
                v_max,
                start: [0.0, 0.0],
                finish: [finish.0, finish.1],
                power_dbm: 10.0,
            },
            channel: ChannelSpec {
                beta0_db: -50.0,
                noise_dbm: -100.0,
                n_subcarriers: 16,
            },
            time: TimeSpec {
                horizon_s: n_slots as f64,
                n_slots,
            },
        })
        .unwrap()
    }

    fn full_plan(scenario: &Scenario) -> AllocationPlan {
        AllocationPlan::from_counts(
            vec![
                vec![scenario.channel.n_subcarriers / scenario.n_users(); scenario.n_users()];
                scenario.grid.n_slots
            ],
            scenario.channel.n_subcarriers,
        )
    }

    #[test]
    fn initial_point_on_clear_chord() {
        let mut s = single_user_scenario();
        s.nfzs.clear();
        let vars = initial_interior_point(&s).unwrap();
        assert_eq!(vars.x.len(), 51);
        for slot in 0..=50 {
            assert_relative_eq!(vars.y[slot], 20.0 * slot as f64, epsilon = 1e-9);
            assert_eq!(vars.x[slot], 0.0);
        }
        let (rs, rt) = constraint_residuals(&s, &vars);
        assert_eq!((rs, rt), (0.0, 0.0));
    }

    #[test]
    fn initial_point_unblocked_by_offset_nfz() {
        // The zone at (450, 450) does not block the x = 0 chord.
        let s = single_user_scenario();
        let vars = initial_interior_point(&s).unwrap();
        assert_eq!(vars.x[25], 0.0);
    }

    #[test]
    fn initial_point_routes_around_blocking_nfz() {
        let mut s = single_user_scenario();
        s.nfzs[0].x = 50.0;
        s.nfzs[0].y = 500.0;
        let vars = initial_interior_point(&s).unwrap();
        for slot in 0..=50 {
            let d = dist(vars.point(slot), (50.0, 500.0));
            assert!(d >= 150.0 - 1e-6, "slot {slot} at distance {d}");
        }
        let (rs, _) = constraint_residuals(&s, &vars);
        assert_eq!(rs, 0.0);
    }

    #[test]
    fn initial_point_hover_when_start_is_finish() {
        let s = tiny_scenario(5, 10.0, (100.0, 0.0), (0.0, 0.0));
        let vars = initial_interior_point(&s).unwrap();
        assert!(vars.x.iter().all(|&x| x == 0.0));
        assert!(vars.y.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn initial_slacks_strictly_dominate_distances() {
        let s = single_user_scenario();
        let vars = initial_interior_point(&s).unwrap();
        for slot in 1..=50 {
            let d2 = squared_distance(vars.point(slot), &s.users[0], 100.0);
            let ratio = vars.slack(slot, 0) / d2;
            assert_relative_eq!(ratio, 1.001, max_relative = 1e-12);
        }
    }

    #[test]
    fn solver_rejects_speed_violating_anchor() {
        let s = tiny_scenario(2, 10.0, (50.0, 0.0), (0.0, 10.0));
        let plan = full_plan(&s);
        let mut anchor = initial_interior_point(&s).unwrap();
        anchor.x[1] = 500.0; // a 500 m step with V = 10
        let sol = solve_surrogate(
            &anchor,
            &plan,
            &s,
            PenaltyConfig::default(),
            &SolverOptions::default(),
        );
        assert_eq!(sol.status, SolveStatus::InfeasibleInput);
        assert!(sol.residual_speed > 0.0);
    }

    #[test]
    fn solver_preserves_endpoints_bitwise() {
        let s = tiny_scenario(4, 20.0, (40.0, 40.0), (10.0, 30.0));
        let plan = full_plan(&s);
        let anchor = initial_interior_point(&s).unwrap();
        let sol = solve_surrogate(
            &anchor,
            &plan,
            &s,
            PenaltyConfig::default(),
            &SolverOptions::default(),
        );
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_eq!(sol.vars.x[0], s.uav.start.0);
        assert_eq!(sol.vars.y[0], s.uav.start.1);
        assert_eq!(sol.vars.x[4], s.uav.finish.0);
        assert_eq!(sol.vars.y[4], s.uav.finish.1);
    }

    #[test]
    fn solver_output_is_feasible_and_ascending() {
        let s = tiny_scenario(4, 20.0, (40.0, 40.0), (10.0, 30.0));
        let plan = full_plan(&s);
        let anchor = initial_interior_point(&s).unwrap();
        let obj = DcObjective::new(&plan, &s, PenaltyConfig::default());
        let before = obj.surrogate(&anchor, &anchor);
        let sol = solve_surrogate(
            &anchor,
            &plan,
            &s,
            PenaltyConfig::default(),
            &SolverOptions::default(),
        );
        assert!(sol.residual_speed <= 1e-6);
        assert!(sol.residual_slack <= 1e-6);
        assert!(sol.objective >= before - 1e-9);
        // Moving toward the user strictly improves this instance.
        assert!(sol.objective > before);
    }

    #[test]
    fn stationary_anchor_comes_back_unchanged() {
        let s = tiny_scenario(4, 20.0, (40.0, 40.0), (10.0, 30.0));
        let plan = full_plan(&s);
        let anchor = initial_interior_point(&s).unwrap();
        let opts = SolverOptions::default();
        let pen = PenaltyConfig::default();
        let first = solve_surrogate(&anchor, &plan, &s, pen, &opts);
        // Re-anchor at the optimum repeatedly; once stationary the anchor is
        // returned as-is.
        let mut current = first.vars;
        for _ in 0..40 {
            let next = solve_surrogate(&current, &plan, &s, pen, &opts);
            if next.vars == current {
                return;
            }
            current = next.vars;
        }
        panic!("iteration never reached a fixed point");
    }

    #[test]
    fn frozen_chord_keeps_unique_feasible_path() {
        // Endpoints exactly N * V apart: the max-speed chord is the only
        // feasible trajectory.
        let s = tiny_scenario(4, 10.0, (20.0, 20.0), (0.0, 40.0));
        let plan = full_plan(&s);
        let anchor = initial_interior_point(&s).unwrap();
        let sol = solve_surrogate(
            &anchor,
            &plan,
            &s,
            PenaltyConfig::default(),
            &SolverOptions::default(),
        );
        assert_eq!(sol.status, SolveStatus::Converged);
        for slot in 0..=4 {
            assert_relative_eq!(sol.vars.y[slot], 10.0 * slot as f64, epsilon = 1e-9);
        }
        assert_eq!(sol.residual_speed, 0.0);
        assert_eq!(sol.residual_slack, 0.0);
    }

    #[test]
    fn cuts_keep_solution_outside_disks() {
        let mut s = single_user_scenario();
        s.nfzs[0] = crate::scenario::NoFlyZone {
            x: 150.0,
            y: 500.0,
            radius: 150.0,
            height: 200.0,
        };
        let plan = full_plan(&s);
        let anchor = initial_interior_point(&s).unwrap();
        let sol = solve_surrogate(
            &anchor,
            &plan,
            &s,
            PenaltyConfig::default(),
            &SolverOptions::default(),
        );
        assert_ne!(sol.status, SolveStatus::InfeasibleInput);
        for slot in 1..50 {
            let d = dist(sol.vars.point(slot), (150.0, 500.0));
            assert!(d >= 150.0 - 1e-3, "slot {slot} at {d}");
        }
    }
}

/// Development aid: finite-difference check of the barrier gradient and a
/// directional curvature probe at the anchor, printed to stderr.
#[doc(hidden)]
pub fn debug_gradient_check(
    anchor: &TrajectoryVars,
    plan: &AllocationPlan,
    scenario: &Scenario,
    penalties: PenaltyConfig,
    mu: f64,
) {
    let problem = BarrierProblem::new(scenario, plan, penalties, anchor.clone(), true, false);
    let v = problem.pack(anchor);
    let (g, a) = problem.grad_neg_hess(&v, mu);
    let h = 1e-5;
    for i in 0..v.len() {
        let mut plus = v.clone();
        let mut minus = v.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (problem.phi(&plus, mu) - problem.phi(&minus, mu)) / (2.0 * h);
        let rel = (g[i] - fd).abs() / fd.abs().max(1e-12);
        if rel > 1e-4 {
            eprintln!("grad mismatch at {i}: analytic {} fd {fd}", g[i]);
        }
        let centered = problem.phi(&v, mu);
        let fd2 = (problem.phi(&plus, mu) + problem.phi(&minus, mu) - 2.0 * centered) / (h * h);
        let rel2 = (-a[(i, i)] - fd2).abs() / fd2.abs().max(1e-9);
        if rel2 > 1e-2 {
            eprintln!("hess diag mismatch at {i}: analytic {} fd {fd2}", -a[(i, i)]);
        }
    }
    eprintln!("gradient check done, dim {}", v.len());
}
