//! Free-space LoS channel: UAV-to-user squared distances and per-subcarrier
//! rates. Channels are frequency flat, so rates are indexed by (slot, user)
//! only and a user's aggregate rate is count * per-subcarrier rate.

use crate::scenario::{Scenario, UserNode};

/// log2 via natural log with an explicit constant.
#[inline]
pub fn log2(x: f64) -> f64 {
    x.ln() / std::f64::consts::LN_2
}

/// Squared distance (m^2) between a UAV ground-projected position and a user,
/// at constant UAV altitude: (x - x_k)^2 + (y - y_k)^2 + H^2.
#[inline]
pub fn squared_distance(point: (f64, f64), user: &UserNode, altitude: f64) -> f64 {
    (point.0 - user.x).powi(2) + (point.1 - user.y).powi(2) + altitude * altitude
}

/// Per-subcarrier rate in bps/Hz: log2(1 + gamma0 * power / d^2).
#[inline]
pub fn per_subcarrier_rate(d2: f64, gamma0: f64, power_w: f64) -> f64 {
    log2(1.0 + gamma0 * power_w / d2)
}

/// Per-subcarrier rates for every communication slot n = 1..=N and user k.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    n_slots: usize,
    n_users: usize,
    /// rates[n - 1][k] for slot n in 1..=N.
    rates: Vec<Vec<f64>>,
}

impl RateTable {
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// Rate at communication slot `n` (1-based, 1..=N) for user index `k`.
    #[inline]
    pub fn at(&self, n: usize, k: usize) -> f64 {
        self.rates[n - 1][k]
    }

    /// All per-user rates at slot `n` (1-based).
    #[inline]
    pub fn slot(&self, n: usize) -> &[f64] {
        &self.rates[n - 1]
    }
}

/// Evaluate the rate table along a trajectory of N+1 points. Slot 0 is the
/// departure point and carries no communication, so only points 1..=N enter.
pub fn build_rate_table(scenario: &Scenario, points: &[(f64, f64)]) -> RateTable {
    assert_eq!(
        points.len(),
        scenario.grid.n_slots + 1,
        "trajectory must have N+1 points"
    );
    let gain = scenario.snr_gain();
    let rates = points[1..]
        .iter()
        .map(|&p| {
            scenario
                .users
                .iter()
                .map(|u| log2(1.0 + gain / squared_distance(p, u, scenario.uav.altitude)))
                .collect()
        })
        .collect();
    RateTable {
        n_slots: scenario.grid.n_slots,
        n_users: scenario.users.len(),
        rates,
    }
}
