use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uav_planner::objective::*;
use uav_planner::scenario::*;
use uav_planner::solver::*;
use uav_planner::channel::squared_distance;
use uav_planner::AllocationPlan;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..6 {
        let v_max = rng.gen_range(2.0..4.0);
        let finish = (rng.gen_range(-0.6..0.6) * v_max, rng.gen_range(0.8..1.6) * v_max);
        let users = vec![UserNode { id: 0, x: rng.gen_range(-30.0..30.0), y: rng.gen_range(-30.0..30.0), r_min: 0.1 }];
        let with_zone = case >= 4;
        let nfzs = if with_zone {
            vec![NoFlyZone { x: 1.5 * v_max, y: 0.5 * finish.1, radius: v_max, height: 120.0 }]
        } else { Vec::new() };
        let uav = UavConfig { altitude: 50.0, v_max, start: (0.0, 0.0), finish, per_subcarrier_power_w: dbm_to_watts(10.0) };
        let channel = ChannelConfig { beta0_db: -50.0, noise_power_dbm: -100.0, n_subcarriers: 16, gamma0: 1e8 };
        let grid = TimeGrid { horizon: 2.0, n_slots: 2, dt: 1.0, max_step: v_max };
        let scenario = Scenario::from_parts(users, nfzs, uav, channel, grid).unwrap();
        let plan = AllocationPlan::from_counts(vec![vec![16]; 2], 16);
        let pen = PenaltyConfig { lambda: 50.0, eta: 1.0 };
        let anchor = initial_interior_point(&scenario).unwrap();
        let sol = solve_surrogate(&anchor, &plan, &scenario, pen, &SolverOptions::default());
        // grid:
        let obj = DcObjective::new(&plan, &scenario, pen);
        let v = v_max;
        let p0 = (0.0, 0.0); let p2 = finish;
        let snr = scenario.snr_gain();
        let cut = scenario.nfzs.first().map(|z| {
            let dx0 = anchor.x[1]-z.x; let dy0 = anchor.y[1]-z.y;
            let f0 = dx0*dx0+dy0*dy0;
            (2.0*dx0, 2.0*dy0, f0 - z.radius*z.radius + 1e-6 - 2.0*dx0*anchor.x[1] - 2.0*dy0*anchor.y[1])
        });
        let (lox, hix) = ((p0.0 as f64).min(p2.0)-v, (p0.0 as f64).max(p2.0)+v);
        let (loy, hiy) = ((p0.1 as f64).min(p2.1)-v, (p0.1 as f64).max(p2.1)+v);
        let mut best = f64::NEG_INFINITY;
        let mut best_xy = (0.0, 0.0);
        for ix in 0..=200 {
            let x = lox + (hix-lox)*ix as f64/200.0;
            for iy in 0..=200 {
                let y = loy + (hiy-loy)*iy as f64/200.0;
                if (x-p0.0).powi(2)+(y-p0.1).powi(2) > v*v { continue; }
                if (p2.0-x).powi(2)+(p2.1-y).powi(2) > v*v { continue; }
                if let Some((ax,ay,c0)) = cut { if c0 + ax*x + ay*y < 0.0 { continue; } }
                let mut vars = anchor.clone();
                vars.x[1]=x; vars.y[1]=y;
                for slot in 1..=2usize {
                    let d2 = squared_distance((vars.x[slot],vars.y[slot]), &scenario.users[0], 50.0);
                    vars.t[slot-1][0] = (anchor.t[slot-1][0]-snr).max(d2);
                }
                let val = obj.surrogate(&vars, &anchor);
                if val > best { best = val; best_xy = (x,y); }
            }
        }
        println!("case {case}: solver {:.6} grid {:.6} diff {:+.4e} status {:?} iters {} | grid_xy ({:.3},{:.3}) solver_xy ({:.3},{:.3}) | t_sol {:?} t_anchor {:?}",
            sol.objective, best, sol.objective - best, sol.status, sol.iterations,
            best_xy.0, best_xy.1, sol.vars.x[1], sol.vars.y[1], sol.vars.t, anchor.t);
    }
}
