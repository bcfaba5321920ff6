//! Problem instances: users, no-fly zones, UAV limits, channel constants and
//! the time discretization, plus loading/validation from JSON files.

use serde::{Deserialize, Serialize};
use std::path::Path;

/// A ground user with a per-slot minimum rate requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct UserNode {
    pub id: usize,
    /// Ground position in meters (z = 0).
    pub x: f64,
    pub y: f64,
    /// Minimum required rate per time slot, bps/Hz.
    pub r_min: f64,
}

/// A cylindrical keep-out region, modeled as a ground-plane disk exclusion.
#[derive(Debug, Clone, PartialEq)]
pub struct NoFlyZone {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Cylinder height in meters. Must exceed the UAV altitude, otherwise the
    /// zone would not constrain the UAV at all and the instance is rejected.
    pub height: f64,
}

impl NoFlyZone {
    pub fn center(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// UAV flight parameters. Transmit power is stored linear (watts per
/// subcarrier); interfaces accept dBm.
#[derive(Debug, Clone, PartialEq)]
pub struct UavConfig {
    pub altitude: f64,
    pub v_max: f64,
    pub start: (f64, f64),
    pub finish: (f64, f64),
    pub per_subcarrier_power_w: f64,
}

impl UavConfig {
    pub fn power_dbm(&self) -> f64 {
        watts_to_dbm(self.per_subcarrier_power_w)
    }
}

/// Channel constants. `gamma0` is the derived linear reference SNR per watt:
/// channel gain at 1 m divided by per-subcarrier noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub beta0_db: f64,
    pub noise_power_dbm: f64,
    pub n_subcarriers: usize,
    pub gamma0: f64,
}

/// Uniform time discretization of the flight horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    /// Total flight time, seconds.
    pub horizon: f64,
    /// Number of slots N; trajectory points are indexed 0..=N.
    pub n_slots: usize,
    /// Slot duration, seconds.
    pub dt: f64,
    /// Maximum travel distance per slot, meters (v_max * dt).
    pub max_step: f64,
}

/// An immutable, validated problem instance. Safe to share across
/// concurrent solver runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub users: Vec<UserNode>,
    pub nfzs: Vec<NoFlyZone>,
    pub uav: UavConfig,
    pub channel: ChannelConfig,
    pub grid: TimeGrid,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

/// dBm to watts: 10^((dBm - 30) / 10).
pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

/// Watts to dBm: 10 log10(w) + 30.
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// dB to linear ratio: 10^(dB / 10).
pub fn db_to_linear(g_db: f64) -> f64 {
    10f64.powf(g_db / 10.0)
}

/// Linear ratio to dB.
pub fn linear_to_db(g: f64) -> f64 {
    10.0 * g.log10()
}

// --- file schema ------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub nfzs: Vec<NfzSpec>,
    pub uav: UavSpec,
    pub channel: ChannelSpec,
    pub time: TimeSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub r_min: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NfzSpec {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UavSpec {
    pub altitude: f64,
    pub v_max: f64,
    pub start: [f64; 2],
    pub finish: [f64; 2],
    pub power_dbm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub beta0_db: f64,
    pub noise_dbm: f64,
    pub n_subcarriers: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimeSpec {
    pub horizon_s: f64,
    pub n_slots: usize,
}

/// Load and validate a scenario from a JSON file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let file: ScenarioFile = serde_json::from_str(&text)?;
    Scenario::from_file(file)
}

impl Scenario {
    /// Build and validate a scenario from the file schema, deriving
    /// `gamma0`, `dt` and `max_step`.
    pub fn from_file(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
        let users: Vec<UserNode> = file
            .users
            .iter()
            .map(|u| UserNode {
                id: u.id,
                x: u.x,
                y: u.y,
                r_min: u.r_min,
            })
            .collect();
        let nfzs: Vec<NoFlyZone> = file
            .nfzs
            .iter()
            .map(|z| NoFlyZone {
                x: z.x,
                y: z.y,
                radius: z.radius,
                height: z.height,
            })
            .collect();
        let uav = UavConfig {
            altitude: file.uav.altitude,
            v_max: file.uav.v_max,
            start: (file.uav.start[0], file.uav.start[1]),
            finish: (file.uav.finish[0], file.uav.finish[1]),
            per_subcarrier_power_w: dbm_to_watts(file.uav.power_dbm),
        };
        let channel = ChannelConfig {
            beta0_db: file.channel.beta0_db,
            noise_power_dbm: file.channel.noise_dbm,
            n_subcarriers: file.channel.n_subcarriers,
            gamma0: db_to_linear(file.channel.beta0_db) / dbm_to_watts(file.channel.noise_dbm),
        };
        let dt = file.time.horizon_s / file.time.n_slots.max(1) as f64;
        let grid = TimeGrid {
            horizon: file.time.horizon_s,
            n_slots: file.time.n_slots,
            dt,
            max_step: file.uav.v_max * dt,
        };
        Scenario::from_parts(users, nfzs, uav, channel, grid)
    }

    /// Validate all invariants; returns the scenario or the first violation
    /// with the offending field named.
    pub fn from_parts(
        users: Vec<UserNode>,
        nfzs: Vec<NoFlyZone>,
        uav: UavConfig,
        channel: ChannelConfig,
        grid: TimeGrid,
    ) -> Result<Scenario, ScenarioError> {
        if users.is_empty() {
            return Err(invalid("users", "at least one user is required"));
        }
        for (i, u) in users.iter().enumerate() {
            if !(u.r_min > 0.0) || !u.r_min.is_finite() {
                return Err(invalid(
                    &format!("users[{i}].r_min"),
                    format!("must be > 0, got {}", u.r_min),
                ));
            }
            if !u.x.is_finite() || !u.y.is_finite() {
                return Err(invalid(&format!("users[{i}]"), "non-finite position"));
            }
            if users[..i].iter().any(|v| v.id == u.id) {
                return Err(invalid(
                    &format!("users[{i}].id"),
                    format!("duplicate user id {}", u.id),
                ));
            }
        }

        if !(uav.altitude > 0.0) {
            return Err(invalid("uav.altitude", "must be > 0"));
        }
        if !(uav.v_max > 0.0) {
            return Err(invalid("uav.v_max", "must be > 0"));
        }
        if !(uav.per_subcarrier_power_w > 0.0) || !uav.per_subcarrier_power_w.is_finite() {
            return Err(invalid("uav.power_dbm", "per-subcarrier power must be > 0"));
        }

        for (j, z) in nfzs.iter().enumerate() {
            if !(z.radius > 0.0) {
                return Err(invalid(&format!("nfzs[{j}].radius"), "must be > 0"));
            }
            if !(z.height > uav.altitude) {
                return Err(invalid(
                    &format!("nfzs[{j}].height"),
                    format!(
                        "must exceed the UAV altitude {} (got {}); a shorter zone does not constrain the UAV",
                        uav.altitude, z.height
                    ),
                ));
            }
        }
        for j in 0..nfzs.len() {
            for i in 0..j {
                let d = dist(nfzs[i].center(), nfzs[j].center());
                if d < nfzs[i].radius + nfzs[j].radius {
                    return Err(invalid(
                        &format!("nfzs[{j}]"),
                        format!("overlaps nfzs[{i}]: center distance {d:.3} < sum of radii"),
                    ));
                }
            }
        }

        if grid.n_slots < 1 {
            return Err(invalid("time.n_slots", "must be >= 1"));
        }
        if !(grid.dt > 0.0) {
            return Err(invalid("time.horizon_s", "slot duration must be > 0"));
        }
        if grid.max_step != uav.v_max * grid.dt {
            return Err(invalid("time", "max_step must equal v_max * dt"));
        }

        if !(channel.gamma0 > 0.0) || !channel.gamma0.is_finite() {
            return Err(invalid("channel", "derived reference SNR must be > 0"));
        }
        let expected_gamma0 =
            db_to_linear(channel.beta0_db) / dbm_to_watts(channel.noise_power_dbm);
        if (channel.gamma0 - expected_gamma0).abs() > 1e-9 * expected_gamma0 {
            return Err(invalid(
                "channel.gamma0",
                "inconsistent with beta0_db and noise_dbm",
            ));
        }
        if channel.n_subcarriers < users.len() {
            return Err(invalid(
                "channel.n_subcarriers",
                format!(
                    "need at least one subcarrier per user ({} users, {} subcarriers)",
                    users.len(),
                    channel.n_subcarriers
                ),
            ));
        }

        let reach = grid.n_slots as f64 * grid.max_step;
        let d = dist(uav.start, uav.finish);
        if d > reach {
            return Err(invalid(
                "uav.finish",
                format!("unreachable: start-finish distance {d:.3} > N*V = {reach:.3}"),
            ));
        }
        for (j, z) in nfzs.iter().enumerate() {
            if dist(uav.start, z.center()) < z.radius {
                return Err(invalid(
                    "uav.start",
                    format!("lies strictly inside nfzs[{j}]"),
                ));
            }
            if dist(uav.finish, z.center()) < z.radius {
                return Err(invalid(
                    "uav.finish",
                    format!("lies strictly inside nfzs[{j}]"),
                ));
            }
        }

        Ok(Scenario {
            users,
            nfzs,
            uav,
            channel,
            grid,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// gamma0 * P, the received SNR numerator shared by every rate expression.
    pub fn snr_gain(&self) -> f64 {
        self.channel.gamma0 * self.uav.per_subcarrier_power_w
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}
