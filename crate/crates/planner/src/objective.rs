//! Penalized trajectory objective in difference-of-concave form.
//!
//! For a fixed allocation the (penalty-augmented) throughput objective splits
//! as `value = gain - loss` where both parts are concave in the positions and
//! the slack variables. `loss` is linearized at an anchor point to obtain the
//! concave `surrogate`, a global lower bound on `value` that is tight at the
//! anchor; maximizing it repeatedly yields a monotone ascent on `value`.

use crate::allocation::AllocationPlan;
use crate::channel::squared_distance;
use crate::scenario::Scenario;

const LN_2: f64 = std::f64::consts::LN_2;

/// Weights folding the minimum-rate and keep-out constraints into the
/// objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub eta: f64,
}

impl PenaltyConfig {
    /// Validated constructor: both weights must be at least 1.
    pub fn new(lambda: f64, eta: f64) -> Result<PenaltyConfig, String> {
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(format!("lambda must be >= 1, got {lambda}"));
        }
        if !(eta >= 1.0) || !eta.is_finite() {
            return Err(format!("eta must be >= 1, got {eta}"));
        }
        Ok(PenaltyConfig { lambda, eta })
    }
}

impl Default for PenaltyConfig {
    /// See the solver notes: a large rate weight with a unit keep-out weight
    /// keeps the augmented objective aligned with raw throughput while the
    /// keep-out geometry is enforced by the inner solver's constraints.
    fn default() -> Self {
        PenaltyConfig {
            lambda: 1e6,
            eta: 1.0,
        }
    }
}

/// Decision variables of the trajectory subproblem: positions for
/// n = 0..=N (with n = 0 and n = N fixed to the scenario endpoints) and one
/// squared-distance slack per communication slot and user.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryVars {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// t[n - 1][k] for slot n in 1..=N: upper bound on the squared distance
    /// from the UAV at slot n to user k.
    pub t: Vec<Vec<f64>>,
}

impl TrajectoryVars {
    pub fn n_slots(&self) -> usize {
        self.x.len() - 1
    }

    pub fn n_users(&self) -> usize {
        self.t.first().map_or(0, |row| row.len())
    }

    pub fn point(&self, n: usize) -> (f64, f64) {
        (self.x[n], self.y[n])
    }

    /// Slack for slot n (1-based) and user k.
    pub fn slack(&self, n: usize, k: usize) -> f64 {
        self.t[n - 1][k]
    }

    /// Positions as a trajectory point list.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.x.iter().copied().zip(self.y.iter().copied()).collect()
    }
}

/// The per-slot, per-user slack values of a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackVars(pub Vec<Vec<f64>>);

/// Gradient of `loss` over (x, y, t). Entries for the fixed boundary points
/// n = 0 and n = N are zero by convention for x and y.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<Vec<f64>>,
}

/// Evaluator for one (plan, scenario, penalties) triple.
#[derive(Debug, Clone, Copy)]
pub struct DcObjective<'a> {
    pub plan: &'a AllocationPlan,
    pub scenario: &'a Scenario,
    pub penalties: PenaltyConfig,
}

impl<'a> DcObjective<'a> {
    pub fn new(
        plan: &'a AllocationPlan,
        scenario: &'a Scenario,
        penalties: PenaltyConfig,
    ) -> Self {
        DcObjective {
            plan,
            scenario,
            penalties,
        }
    }

    /// Slacks may only dip below the minimum possible squared distance
    /// through line-search overshoot; clamp before taking logarithms.
    #[inline]
    fn clamped(&self, t: f64) -> f64 {
        let h2 = self.scenario.uav.altitude * self.scenario.uav.altitude;
        t.max(h2 + 1e-9)
    }

    /// Concave increasing part: penalty constants plus
    /// (1 + lambda) * sum counts * log2(t + gamma0 * P).
    pub fn gain(&self, vars: &TrajectoryVars) -> f64 {
        let n = self.scenario.grid.n_slots as f64;
        let lam = self.penalties.lambda;
        let eta = self.penalties.eta;
        let snr = self.scenario.snr_gain();

        let rate_floor: f64 = self.scenario.users.iter().map(|u| u.r_min).sum();
        let keepout: f64 = self.scenario.nfzs.iter().map(|z| z.radius * z.radius).sum();

        let mut logs = 0.0;
        for (row, t_row) in self.plan.counts.iter().zip(&vars.t) {
            for (&c, &t) in row.iter().zip(t_row) {
                if c > 0 {
                    logs += c as f64 * (self.clamped(t) + snr).ln();
                }
            }
        }
        -lam * n * rate_floor - eta * n * keepout + (1.0 + lam) * logs / LN_2
    }

    /// Concave part subtracted from `gain`:
    /// (1 + lambda) * sum counts * log2(t) - eta * sum of squared center
    /// offsets from every keep-out zone.
    pub fn loss(&self, vars: &TrajectoryVars) -> f64 {
        let lam = self.penalties.lambda;
        let eta = self.penalties.eta;

        let mut logs = 0.0;
        for (row, t_row) in self.plan.counts.iter().zip(&vars.t) {
            for (&c, &t) in row.iter().zip(t_row) {
                if c > 0 {
                    logs += c as f64 * self.clamped(t).ln();
                }
            }
        }

        let mut quad = 0.0;
        for n in 1..=vars.n_slots() {
            for z in &self.scenario.nfzs {
                quad += (vars.x[n] - z.x).powi(2) + (vars.y[n] - z.y).powi(2);
            }
        }
        (1.0 + lam) * logs / LN_2 - eta * quad
    }

    /// Analytic gradient of `loss`. The spatial components are the calculus
    /// derivatives of the quadratic terms, -2 eta * sum_j (pos - center_j).
    pub fn loss_gradient(&self, vars: &TrajectoryVars) -> LossGradient {
        let lam = self.penalties.lambda;
        let eta = self.penalties.eta;
        let n_slots = vars.n_slots();

        let t = self
            .plan
            .counts
            .iter()
            .zip(&vars.t)
            .map(|(row, t_row)| {
                row.iter()
                    .zip(t_row)
                    .map(|(&c, &t)| {
                        if c > 0 {
                            (1.0 + lam) * c as f64 / (self.clamped(t) * LN_2)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();

        let mut gx = vec![0.0; n_slots + 1];
        let mut gy = vec![0.0; n_slots + 1];
        for n in 1..=n_slots {
            for z in &self.scenario.nfzs {
                gx[n] -= 2.0 * eta * (vars.x[n] - z.x);
                gy[n] -= 2.0 * eta * (vars.y[n] - z.y);
            }
        }
        LossGradient { x: gx, y: gy, t }
    }

    /// First-order expansion of `loss` at `anchor`, evaluated at `vars`.
    /// Concavity of `loss` makes this a global over-estimator.
    pub fn loss_linearized(&self, vars: &TrajectoryVars, anchor: &TrajectoryVars) -> f64 {
        let grad = self.loss_gradient(anchor);
        let mut value = self.loss(anchor);
        for n in 1..=vars.n_slots() {
            value += grad.x[n] * (vars.x[n] - anchor.x[n]);
            value += grad.y[n] * (vars.y[n] - anchor.y[n]);
        }
        for ((g_row, v_row), a_row) in grad.t.iter().zip(&vars.t).zip(&anchor.t) {
            for ((&g, &v), &a) in g_row.iter().zip(v_row).zip(a_row) {
                value += g * (v - a);
            }
        }
        value
    }

    /// Concave surrogate maximized by the inner solver:
    /// gain(vars) - linearization of loss at the anchor. Tight at
    /// vars = anchor and a lower bound on `value` everywhere.
    pub fn surrogate(&self, vars: &TrajectoryVars, anchor: &TrajectoryVars) -> f64 {
        self.gain(vars) - self.loss_linearized(vars, anchor)
    }

    /// The true penalized objective, gain - loss.
    pub fn value(&self, vars: &TrajectoryVars) -> f64 {
        self.gain(vars) - self.loss(vars)
    }
}

/// Slacks set pointwise to the squared distances of a trajectory, optionally
/// inflated by a relative margin to sit strictly inside the feasible region.
pub fn slacks_from_points(
    scenario: &Scenario,
    points: &[(f64, f64)],
    relative_margin: f64,
) -> Vec<Vec<f64>> {
    points[1..]
        .iter()
        .map(|&p| {
            scenario
                .users
                .iter()
                .map(|u| squared_distance(p, u, scenario.uav.altitude) * (1.0 + relative_margin))
                .collect()
        })
        .collect()
}
