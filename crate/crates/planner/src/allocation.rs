//! Per-slot subcarrier allocation for a fixed trajectory.
//!
//! With frequency-flat channels the per-user subcarrier count is a sufficient
//! statistic: every weaker user receives the minimum count that meets its
//! rate requirement and the strongest user takes the remainder, which is the
//! throughput-optimal integer allocation. A brute-force enumerator over count
//! vectors is provided as an independent verification oracle.

use crate::channel::RateTable;
use crate::scenario::Scenario;

/// Guard band for the ceiling: if demand / rate is within this distance of an
/// integer, floating-point noise must not force an extra subcarrier.
const CEIL_GUARD: f64 = 1e-9;

/// Per-slot subcarrier counts and the concrete subcarrier-to-user assignment
/// they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    /// counts[n - 1][k]: subcarriers held by user k at slot n (1..=N).
    pub counts: Vec<Vec<usize>>,
    /// assignment[n - 1][i]: user holding subcarrier i at slot n, or None if
    /// the subcarrier is unused.
    pub assignment: Vec<Vec<Option<usize>>>,
}

impl AllocationPlan {
    pub fn n_slots(&self) -> usize {
        self.counts.len()
    }

    pub fn n_users(&self) -> usize {
        self.counts.first().map_or(0, |c| c.len())
    }

    /// Counts at slot `n` (1-based).
    pub fn slot_counts(&self, n: usize) -> &[usize] {
        &self.counts[n - 1]
    }

    /// A plan with the given counts and a derived assignment filling
    /// subcarriers in ascending user order.
    pub fn from_counts(counts: Vec<Vec<usize>>, n_subcarriers: usize) -> AllocationPlan {
        let assignment = counts
            .iter()
            .map(|slot| derive_assignment(slot, None, n_subcarriers))
            .collect();
        AllocationPlan { counts, assignment }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("no feasible subcarrier allocation at slot {slot}: {detail}")]
pub struct AllocationInfeasible {
    /// First offending slot, 1-based.
    pub slot: usize,
    pub detail: String,
}

/// Index of the user with the highest per-subcarrier rate; ties break to the
/// smallest index.
pub fn strongest_user(rates_at_slot: &[f64]) -> usize {
    assert!(!rates_at_slot.is_empty(), "at least one user required");
    let mut best = 0;
    for (k, &r) in rates_at_slot.iter().enumerate().skip(1) {
        if r > rates_at_slot[best] {
            best = k;
        }
    }
    best
}

/// Minimum subcarriers for a user to meet `r_min` at per-subcarrier `rate`:
/// ceil(r_min / rate), treating quotients within 1e-9 of an integer as exact.
pub fn min_subcarriers(r_min: f64, rate: f64) -> usize {
    debug_assert!(rate > 0.0 && r_min > 0.0);
    let q = r_min / rate;
    let rounded = q.round();
    if (q - rounded).abs() <= CEIL_GUARD {
        rounded as usize
    } else {
        q.ceil() as usize
    }
}

/// Whether `count` subcarriers at `rate` meet `r_min`, with the same guard
/// semantics as the ceiling above.
#[inline]
fn meets_requirement(count: usize, rate: f64, r_min: f64) -> bool {
    count as f64 + CEIL_GUARD >= r_min / rate
}

/// Optimal per-user counts for a single slot, or None when the requirements
/// cannot all be met with `n_subcarriers`.
pub fn allocate_slot(
    rates_at_slot: &[f64],
    n_subcarriers: usize,
    r_mins: &[f64],
) -> Option<Vec<usize>> {
    let k_star = strongest_user(rates_at_slot);
    let mut counts = vec![0usize; rates_at_slot.len()];
    let mut used = 0usize;
    for (k, (&rate, &r_min)) in rates_at_slot.iter().zip(r_mins).enumerate() {
        if k == k_star {
            continue;
        }
        let need = min_subcarriers(r_min, rate);
        counts[k] = need;
        used += need;
    }
    if used > n_subcarriers {
        return None;
    }
    let remainder = n_subcarriers - used;
    if !meets_requirement(remainder, rates_at_slot[k_star], r_mins[k_star]) {
        return None;
    }
    counts[k_star] = remainder;
    Some(counts)
}

/// Fill subcarriers sequentially in ascending user order; when `last` is
/// given, that user's block is placed after everyone else's. The order is
/// immaterial for throughput on frequency-flat channels; fixing it makes the
/// assignment deterministic.
fn derive_assignment(
    counts: &[usize],
    last: Option<usize>,
    n_subcarriers: usize,
) -> Vec<Option<usize>> {
    let mut assignment = vec![None; n_subcarriers];
    let mut i = 0;
    for (k, &c) in counts.iter().enumerate() {
        if last == Some(k) {
            continue;
        }
        for _ in 0..c {
            assignment[i] = Some(k);
            i += 1;
        }
    }
    if let Some(k) = last {
        for _ in 0..counts[k] {
            assignment[i] = Some(k);
            i += 1;
        }
    }
    assignment
}

/// Allocate every slot independently; fails with the first offending slot.
pub fn allocate_all(
    rate_table: &RateTable,
    scenario: &Scenario,
) -> Result<AllocationPlan, AllocationInfeasible> {
    let n_f = scenario.channel.n_subcarriers;
    let r_mins: Vec<f64> = scenario.users.iter().map(|u| u.r_min).collect();
    let mut counts = Vec::with_capacity(rate_table.n_slots());
    let mut assignment = Vec::with_capacity(rate_table.n_slots());
    for n in 1..=rate_table.n_slots() {
        let slot_rates = rate_table.slot(n);
        match allocate_slot(slot_rates, n_f, &r_mins) {
            Some(c) => {
                assignment.push(derive_assignment(&c, Some(strongest_user(slot_rates)), n_f));
                counts.push(c);
            }
            None => {
                let demand: usize = slot_rates
                    .iter()
                    .zip(&r_mins)
                    .map(|(&r, &m)| min_subcarriers(m, r))
                    .sum();
                return Err(AllocationInfeasible {
                    slot: n,
                    detail: format!(
                        "minimum demand {demand} subcarriers > {n_f} available for rates {slot_rates:?}"
                    ),
                });
            }
        }
    }
    Ok(AllocationPlan { counts, assignment })
}

/// Total throughput of a plan in bps/Hz: sum over slots and users of
/// count * per-subcarrier rate.
pub fn plan_throughput(plan: &AllocationPlan, rate_table: &RateTable) -> f64 {
    let mut total = 0.0;
    for n in 1..=plan.n_slots() {
        for (k, &c) in plan.slot_counts(n).iter().enumerate() {
            total += c as f64 * rate_table.at(n, k);
        }
    }
    total
}

/// Exhaustive verification oracle: enumerate every nonnegative count vector
/// summing to at most `n_subcarriers`, filter by the per-user requirement and
/// return a throughput maximizer. Desk scale only (K <= 4, N_F <= 16).
pub fn brute_force_slot_oracle(
    rates_at_slot: &[f64],
    n_subcarriers: usize,
    r_mins: &[f64],
) -> Option<(Vec<usize>, f64)> {
    assert!(rates_at_slot.len() <= 4 && n_subcarriers <= 16, "desk scale only");
    let k = rates_at_slot.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut counts = vec![0usize; k];
    enumerate(&mut counts, 0, n_subcarriers, &mut |candidate| {
        for ((&c, &rate), &r_min) in candidate.iter().zip(rates_at_slot).zip(r_mins) {
            if (c as f64) + CEIL_GUARD < r_min / rate {
                return;
            }
        }
        let throughput: f64 = candidate
            .iter()
            .zip(rates_at_slot)
            .map(|(&c, &r)| c as f64 * r)
            .sum();
        match &best {
            Some((_, t)) if *t >= throughput => {}
            _ => best = Some((candidate.to_vec(), throughput)),
        }
    });
    best
}

fn enumerate(counts: &mut Vec<usize>, k: usize, budget: usize, visit: &mut impl FnMut(&[usize])) {
    if k == counts.len() {
        visit(counts);
        return;
    }
    for c in 0..=budget {
        counts[k] = c;
        enumerate(counts, k + 1, budget - c, visit);
    }
    counts[k] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn strongest_user_examples() {
        assert_eq!(strongest_user(&[6.0, 4.0]), 0);
        assert_eq!(strongest_user(&[5.0, 5.0]), 0);
        assert_eq!(strongest_user(&[2.5]), 0);
        assert_eq!(strongest_user(&[1.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn min_subcarriers_examples() {
        assert_eq!(min_subcarriers(3.0, 4.0), 1);
        assert_eq!(min_subcarriers(3.0, 3.0), 1);
        assert_eq!(min_subcarriers(3.0, 0.8279765326736898), 4);
        assert_eq!(min_subcarriers(6.0, 3.0), 2);
    }

    #[test]
    fn min_subcarriers_guards_float_noise() {
        // 3 / rate = 3 + 4e-10: within the guard, so 3 subcarriers suffice.
        let rate = 3.0 / (3.0 + 4e-10);
        assert_eq!(min_subcarriers(3.0, rate), 3);
        // Beyond the guard the ceiling applies.
        let rate = 3.0 / (3.0 + 1e-6);
        assert_eq!(min_subcarriers(3.0, rate), 4);
    }

    #[test]
    fn allocate_slot_examples() {
        assert_eq!(
            allocate_slot(&[6.0, 4.0], 16, &[3.0, 3.0]),
            Some(vec![15, 1])
        );
        assert_eq!(allocate_slot(&[1.0, 1.0], 2, &[3.0, 3.0]), None);
        assert_eq!(
            allocate_slot(&[6.658211482751795], 16, &[3.0]),
            Some(vec![16])
        );
    }

    #[test]
    fn allocate_slot_infeasible_when_strongest_falls_short() {
        // Weak user takes 1; remainder 0 cannot carry r_min = 3.
        assert_eq!(allocate_slot(&[6.0, 4.0], 1, &[3.0, 3.0]), None);
    }

    #[test]
    fn single_slot_throughput_examples() {
        let counts = allocate_slot(&[6.0, 4.0], 16, &[3.0, 3.0]).unwrap();
        let throughput: f64 = counts
            .iter()
            .zip([6.0, 4.0])
            .map(|(&c, r)| c as f64 * r)
            .sum();
        assert_eq!(throughput, 94.0);

        let counts = allocate_slot(&[6.658211482751795], 16, &[3.0]).unwrap();
        assert_relative_eq!(
            counts[0] as f64 * 6.658211482751795,
            106.53138372402871,
            max_relative = 1e-12
        );
    }

    #[test]
    fn oracle_matches_on_examples() {
        let (counts, t) = brute_force_slot_oracle(&[6.0, 4.0], 16, &[3.0, 3.0]).unwrap();
        assert_eq!(counts, vec![15, 1]);
        assert_eq!(t, 94.0);
        assert_eq!(brute_force_slot_oracle(&[1.0, 1.0], 2, &[3.0, 3.0]), None);
        // K = 1: all subcarriers iff the total meets the requirement.
        let (counts, _) = brute_force_slot_oracle(&[0.5], 8, &[3.0]).unwrap();
        assert_eq!(counts, vec![8]);
        assert_eq!(brute_force_slot_oracle(&[0.5], 4, &[3.0]), None);
    }

    #[test]
    fn oracle_agreement_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let k = rng.gen_range(2..=3);
            let n_f = *[4usize, 8, 16].get(rng.gen_range(0..3)).unwrap();
            let rates: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..8.0)).collect();
            let r_mins: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..3.0)).collect();
            let fast = allocate_slot(&rates, n_f, &r_mins);
            let oracle = brute_force_slot_oracle(&rates, n_f, &r_mins);
            match (fast, oracle) {
                (None, None) => {}
                (Some(counts), Some((oracle_counts, oracle_t))) => {
                    let t: f64 = counts
                        .iter()
                        .zip(&rates)
                        .map(|(&c, &r)| c as f64 * r)
                        .sum();
                    assert_eq!(
                        t, oracle_t,
                        "objective mismatch: {counts:?} vs {oracle_counts:?} on {rates:?}"
                    );
                }
                (fast, oracle) => {
                    panic!("verdict mismatch on rates {rates:?} r_mins {r_mins:?} n_f {n_f}: {fast:?} vs {oracle:?}")
                }
            }
        }
    }

    #[test]
    fn exact_rate_ties_keep_objective_optimal() {
        // Ties may legitimately permute counts; the objective must not change.
        let rates = [5.0, 5.0, 2.0];
        let r_mins = [3.0, 3.0, 3.0];
        let counts = allocate_slot(&rates, 16, &r_mins).unwrap();
        let (_, oracle_t) = brute_force_slot_oracle(&rates, 16, &r_mins).unwrap();
        let t: f64 = counts.iter().zip(rates).map(|(&c, r)| c as f64 * r).sum();
        assert_eq!(t, oracle_t);
    }

    #[test]
    fn weak_users_get_exactly_their_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let k = rng.gen_range(2..=4);
            let rates: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..8.0)).collect();
            let r_mins: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..3.0)).collect();
            if let Some(counts) = allocate_slot(&rates, 16, &r_mins) {
                let k_star = strongest_user(&rates);
                let mut spent = 0;
                for i in 0..k {
                    if i != k_star {
                        assert_eq!(counts[i], min_subcarriers(r_mins[i], rates[i]));
                        spent += counts[i];
                    }
                }
                assert_eq!(counts[k_star], 16 - spent);
            }
        }
    }

    #[test]
    fn feasible_output_satisfies_requirements_and_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = rng.gen_range(1..=4);
            let n_f = rng.gen_range(k..=16);
            let rates: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..8.0)).collect();
            let r_mins: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..3.0)).collect();
            if let Some(counts) = allocate_slot(&rates, n_f, &r_mins) {
                assert!(counts.iter().sum::<usize>() <= n_f);
                for ((&c, &r), &m) in counts.iter().zip(&rates).zip(&r_mins) {
                    assert!(
                        c as f64 * r >= m - 1e-9 * r.max(1.0),
                        "requirement violated: {c} * {r} < {m}"
                    );
                }
            }
        }
    }

    #[test]
    fn widening_the_band_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k = rng.gen_range(2..=3);
            let rates: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..8.0)).collect();
            let r_mins: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..3.0)).collect();
            let mut last: Option<f64> = None;
            for n_f in [4usize, 8, 16] {
                let result = allocate_slot(&rates, n_f, &r_mins);
                match (result, last) {
                    (None, Some(_)) => panic!("feasible at smaller band became infeasible"),
                    (None, None) => {}
                    (Some(counts), prev) => {
                        let t: f64 = counts
                            .iter()
                            .zip(&rates)
                            .map(|(&c, &r)| c as f64 * r)
                            .sum();
                        if let Some(p) = prev {
                            assert!(t >= p, "throughput decreased with more subcarriers");
                        }
                        last = Some(t);
                    }
                }
            }
        }
    }

    #[test]
    fn assignment_consistent_with_counts() {
        let slot = derive_assignment(&[1, 12, 3], Some(1), 16);
        assert_eq!(slot.len(), 16);
        for (k, &expected) in [1usize, 12, 3].iter().enumerate() {
            let held = slot.iter().filter(|&&s| s == Some(k)).count();
            assert_eq!(held, expected);
        }
        // Weaker users ascending first, then the strongest user's block.
        assert_eq!(slot[0], Some(0));
        assert_eq!(slot[1], Some(2));
        assert_eq!(slot[4], Some(1));
        assert_eq!(slot[15], Some(1));
    }

    #[test]
    fn strongest_block_placed_last_even_when_smaller() {
        // Strongest user can legitimately hold fewer subcarriers than a weak
        // user whose rate is poor; its block still goes last.
        let rates = [6.0, 0.5, 0.5];
        let counts = allocate_slot(&rates, 16, &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(counts, vec![4, 6, 6]);
        let slot = derive_assignment(&counts, Some(strongest_user(&rates)), 16);
        assert_eq!(slot[0], Some(1));
        assert_eq!(slot[12], Some(0));
        assert_eq!(slot[15], Some(0));
    }

    #[test]
    fn unused_subcarriers_stay_unassigned() {
        let plan = AllocationPlan::from_counts(vec![vec![2, 1]], 8);
        let used = plan.assignment[0].iter().filter(|s| s.is_some()).count();
        assert_eq!(used, 3);
    }

    mod plan_tests {
        use super::*;
        use crate::channel::build_rate_table;
        use crate::scenario::{
            ChannelSpec, NfzSpec, Scenario, ScenarioFile, TimeSpec, UavSpec, UserSpec,
        };

        fn two_user_scenario(n_slots: usize) -> Scenario {
            Scenario::from_file(ScenarioFile {
                users: vec![
                    UserSpec {
                        id: 0,
                        x: 100.0,
                        y: 0.0,
                        r_min: 1.0,
                    },
                    UserSpec {
                        id: 1,
                        x: 400.0,
                        y: 0.0,
                        r_min: 1.0,
                    },
                ],
                nfzs: Vec::<NfzSpec>::new(),
                uav: UavSpec {
                    altitude: 100.0,
                    v_max: 50.0,
                    start: [0.0, 0.0],
                    finish: [0.0, 0.0],
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

        #[test]
        fn identical_slots_get_identical_counts() {
            let s = two_user_scenario(5);
            let points = vec![(0.0, 0.0); 6];
            let table = build_rate_table(&s, &points);
            let plan = allocate_all(&table, &s).unwrap();
            for n in 2..=5 {
                assert_eq!(plan.slot_counts(n), plan.slot_counts(1));
            }
        }

        #[test]
        fn first_infeasible_slot_is_reported() {
            let mut s = two_user_scenario(3);
            // Power so low that no slot can satisfy the requirements.
            s.uav.per_subcarrier_power_w = 1e-9;
            let points = vec![(0.0, 0.0); 4];
            let table = build_rate_table(&s, &points);
            let err = allocate_all(&table, &s).unwrap_err();
            assert_eq!(err.slot, 1);
        }

        #[test]
        fn throughput_is_additive_over_slots() {
            let s = two_user_scenario(4);
            let points = vec![(0.0, 0.0); 5];
            let table = build_rate_table(&s, &points);
            let plan = allocate_all(&table, &s).unwrap();
            let total = plan_throughput(&plan, &table);
            let per_slot: f64 = plan
                .slot_counts(1)
                .iter()
                .enumerate()
                .map(|(k, &c)| c as f64 * table.at(1, k))
                .sum();
            assert_relative_eq!(total, 4.0 * per_slot, max_relative = 1e-12);
        }

        #[test]
        fn empty_plan_has_zero_throughput() {
            let s = two_user_scenario(2);
            let points = vec![(0.0, 0.0); 3];
            let table = build_rate_table(&s, &points);
            let plan = AllocationPlan::from_counts(vec![vec![0, 0], vec![0, 0]], 16);
            assert_eq!(plan_throughput(&plan, &table), 0.0);
        }
    }
}
