//! Joint UAV trajectory and OFDMA subcarrier allocation planning.
//!
//! A UAV flies a discretized 2-D path between fixed endpoints and serves
//! ground users over orthogonal subcarriers. This crate maximizes total
//! downlink throughput subject to per-user minimum rates, circular no-fly
//! zones, a maximum cruising speed and the endpoint pinning, by alternating
//! between two subproblems:
//!
//! * for a fixed path, the throughput-optimal integer subcarrier allocation
//!   (weakest users get the minimum that meets their rate floor, the
//!   strongest user takes the rest), and
//! * for a fixed allocation, a penalized concave surrogate of the rate
//!   objective maximized by a log-barrier interior-point method, re-linearized
//!   at each iterate (successive convex approximation).
//!
//! Scenarios are immutable after validation and safe to share across threads;
//! every solve is deterministic.

pub mod allocation;
pub mod channel;
pub mod export;
pub mod geometry;
pub mod objective;
pub mod planner;
pub mod scenario;
pub mod solver;

pub use allocation::{allocate_all, allocate_slot, plan_throughput, AllocationPlan};
pub use channel::{build_rate_table, per_subcarrier_rate, squared_distance, RateTable};
pub use objective::{DcObjective, PenaltyConfig, SlackVars, TrajectoryVars};
pub use planner::{
    alternating_optimize, detour_tangent_trajectory, evaluate_strategy, no_nfz_plan,
    optimize_trajectory, straight_trajectory, validate_hard_constraints, PlanOutcome, PlanStatus,
    PlannerOptions, SolveReport, Strategy, StrategyOutcome, Trajectory, ValidationReport,
};
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use solver::{initial_interior_point, solve_surrogate, InnerSolution, SolverOptions};
