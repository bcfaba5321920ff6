//! Deterministic CSV/JSON artifact writers.
//!
//! Numbers are written with nine significant digits in fixed-point form, so
//! artifacts diff cleanly and identical runs produce identical bytes.

use std::io::Write;
use std::path::Path;

use crate::allocation::AllocationPlan;
use crate::channel::RateTable;
use crate::geometry::dist;
use crate::planner::{SolveReport, StrategyOutcome, Trajectory};
use crate::scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to serialize report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Format with exactly nine significant digits, fixed-point.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).clamp(0, 17) as usize;
    format!("{v:.decimals$}")
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExportError> {
    std::fs::write(path, contents).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// trajectory.csv: one row per waypoint with step length and the worst-case
/// keep-out clearance (distance to center minus radius; empty without zones).
pub fn write_trajectory_csv(
    path: &Path,
    scenario: &Scenario,
    trajectory: &Trajectory,
) -> Result<(), ExportError> {
    let mut out = String::from("n,time_s,x_m,y_m,step_m,min_nfz_clearance_m\n");
    for (n, &point) in trajectory.points.iter().enumerate() {
        let step = if n == 0 {
            0.0
        } else {
            trajectory.step_length(n)
        };
        let clearance = scenario
            .nfzs
            .iter()
            .map(|z| dist(point, z.center()) - z.radius)
            .fold(f64::INFINITY, f64::min);
        let clearance_field = if scenario.nfzs.is_empty() {
            String::new()
        } else {
            fmt_sig9(clearance)
        };
        out.push_str(&format!(
            "{n},{},{},{},{},{}\n",
            fmt_sig9(n as f64 * scenario.grid.dt),
            fmt_sig9(point.0),
            fmt_sig9(point.1),
            fmt_sig9(step),
            clearance_field,
        ));
    }
    write_file(path, &out)
}

/// allocation.csv: one row per (slot, user) with the per-subcarrier rate and
/// the user's total.
pub fn write_allocation_csv(
    path: &Path,
    plan: &AllocationPlan,
    rate_table: &RateTable,
) -> Result<(), ExportError> {
    let mut out = String::from("slot,user,count,rate,user_rate_total\n");
    for slot in 1..=plan.n_slots() {
        for (user, &count) in plan.slot_counts(slot).iter().enumerate() {
            let rate = rate_table.at(slot, user);
            out.push_str(&format!(
                "{slot},{user},{count},{},{}\n",
                fmt_sig9(rate),
                fmt_sig9(count as f64 * rate),
            ));
        }
    }
    write_file(path, &out)
}

pub fn write_report_json(path: &Path, report: &SolveReport) -> Result<(), ExportError> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write_file(path, &json)
}

/// sweep.csv: one row per (power, strategy), sorted by power then strategy
/// name. Infeasible points leave the throughput field empty.
pub fn write_sweep_csv(
    path: &Path,
    rows: &[(f64, StrategyOutcome)],
) -> Result<(), ExportError> {
    let mut sorted: Vec<&(f64, StrategyOutcome)> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| a.1.strategy.name().cmp(b.1.strategy.name()))
    });
    let mut out = String::from("power_dbm,strategy,throughput_bpshz,feasible\n");
    for (power, outcome) in sorted {
        let throughput = outcome
            .throughput
            .map(fmt_sig9)
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_sig9(*power),
            outcome.strategy.name(),
            throughput,
            outcome.feasible,
        ));
    }
    write_file(path, &out)
}

/// Read a trajectory back from the CSV layout written above.
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("read {path:?}: {e}"))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("n,") {
                return Err("missing trajectory header".into());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(format!("line {}: expected at least 4 fields", i + 1));
        }
        let x: f64 = fields[2]
            .parse()
            .map_err(|e| format!("line {}: bad x: {e}", i + 1))?;
        let y: f64 = fields[3]
            .parse()
            .map_err(|e| format!("line {}: bad y: {e}", i + 1))?;
        points.push((x, y));
    }
    if points.len() < 2 {
        return Err("trajectory needs at least 2 points".into());
    }
    Ok(Trajectory { points })
}

/// Write standard output into a writer, used by the command-line front end
/// for deterministic stdout snapshots in tests.
pub fn write_lines(mut w: impl Write, lines: &[String]) -> std::io::Result<()> {
    for line in lines {
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(0.0), "0.00000000");
        assert_eq!(fmt_sig9(1010.5), "1010.50000");
        assert_eq!(fmt_sig9(-1010.5), "-1010.50000");
        assert_eq!(fmt_sig9(0.001), "0.00100000000");
        assert_eq!(fmt_sig9(123456789.0), "123456789");
        assert_eq!(fmt_sig9(6.658211482751795), "6.65821148");
        assert_eq!(fmt_sig9(1234.56789), "1234.56789");
    }

    #[test]
    fn trajectory_roundtrip() {
        use crate::scenario::{
            ChannelSpec, NfzSpec, Scenario, ScenarioFile, TimeSpec, UavSpec, UserSpec,
        };
        let s = Scenario::from_file(ScenarioFile {
            users: vec![UserSpec {
                id: 0,
                x: 100.0,
                y: 100.0,
                r_min: 1.0,
            }],
            nfzs: vec![NfzSpec {
                x: 300.0,
                y: 0.0,
                radius: 50.0,
                height: 200.0,
            }],
            uav: UavSpec {
                altitude: 100.0,
                v_max: 50.0,
                start: [0.0, 0.0],
                finish: [0.0, 200.0],
                power_dbm: 10.0,
            },
            channel: ChannelSpec {
                beta0_db: -50.0,
                noise_dbm: -100.0,
                n_subcarriers: 16,
            },
            time: TimeSpec {
                horizon_s: 5.0,
                n_slots: 5,
            },
        })
        .unwrap();
        let t = crate::planner::straight_trajectory(&s);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        write_trajectory_csv(&path, &s, &t).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("n,time_s,x_m,y_m,step_m,min_nfz_clearance_m\n"));
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back.points.len(), 6);
        for (a, b) in back.points.iter().zip(&t.points) {
            assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_inputs_produce_identical_bytes() {
        use crate::allocation::AllocationPlan;
        let plan = AllocationPlan::from_counts(vec![vec![3, 13], vec![4, 12]], 16);
        // A rate table is only constructible through a scenario; reuse the
        // trajectory test fixture shape instead via serde-free construction.
        use crate::scenario::{ChannelSpec, Scenario, ScenarioFile, TimeSpec, UavSpec, UserSpec};
        let s = Scenario::from_file(ScenarioFile {
            users: vec![
                UserSpec {
                    id: 0,
                    x: 10.0,
                    y: 0.0,
                    r_min: 1.0,
                },
                UserSpec {
                    id: 1,
                    x: 0.0,
                    y: 10.0,
                    r_min: 1.0,
                },
            ],
            nfzs: vec![],
            uav: UavSpec {
                altitude: 100.0,
                v_max: 50.0,
                start: [0.0, 0.0],
                finish: [0.0, 80.0],
                power_dbm: 10.0,
            },
            channel: ChannelSpec {
                beta0_db: -50.0,
                noise_dbm: -100.0,
                n_subcarriers: 16,
            },
            time: TimeSpec {
                horizon_s: 2.0,
                n_slots: 2,
            },
        })
        .unwrap();
        let t = crate::planner::straight_trajectory(&s);
        let table = crate::channel::build_rate_table(&s, &t.points);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_allocation_csv(&a, &plan, &table).unwrap();
        write_allocation_csv(&b, &plan, &table).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
