use gtmpc_core::dynamics::{JointState, ScenarioConfig, VehicleState};
use gtmpc_core::mpc::build_problem;
use gtmpc_core::objectives::{IndividualWeights, SharedWeight, WeightTuple};
use gtmpc_core::trajopt::{self, AgentRole, AgentSpec, Constraint, HorizonProblem, Penalty, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single(initial: VehicleState, w: IndividualWeights, horizon: usize, scenario: &ScenarioConfig) -> HorizonProblem {
    HorizonProblem {
        horizon,
        dt: scenario.dt,
        v_ref: scenario.v_max,
        agents: vec![AgentSpec {
            initial,
            weights: Some(w),
            role: AgentRole::Decision { bounds: Some((scenario.u_min, scenario.u_max)) },
        }],
        shared: None,
        constraints: vec![
            Constraint::SpeedMax { agent: 0, limit: scenario.v_max },
            Constraint::SpeedMin { agent: 0, limit: scenario.v_min },
        ],
    }
}

fn random_joint(rng: &mut ChaCha8Rng, scenario: &ScenarioConfig, horizon: usize) -> HorizonProblem {
    let joint = loop {
        let j = JointState::new(
            VehicleState::new(rng.random_range(-60.0..-5.0), rng.random_range(2.0..11.0)),
            VehicleState::new(rng.random_range(-60.0..-5.0), rng.random_range(2.0..11.0)),
        );
        if j.distance() > scenario.safety_radius + 1.0 {
            break j;
        }
    };
    let lw = |rng: &mut ChaCha8Rng| 10f64.powf(rng.random_range(-2.0..2.0));
    let weights = WeightTuple {
        cav: IndividualWeights::new(lw(rng), lw(rng)),
        hdv: IndividualWeights::new(lw(rng), lw(rng)),
        shared: SharedWeight::new(1e3, scenario.gamma),
    };
    build_problem(&joint, &weights, scenario, horizon)
}

/// Minimum objective over all feasible points of a per-variable grid.
fn grid_oracle(problem: &HorizonProblem, levels: &[f64]) -> f64 {
    let n = problem.decision_count();
    let total = levels.len().pow(n as u32);
    let mut best = f64::INFINITY;
    let mut x = vec![0.0; n];
    for mut idx in 0..total {
        for xi in x.iter_mut() {
            *xi = levels[idx % levels.len()];
            idx /= levels.len();
        }
        if trajopt::max_violation(problem, &x).unwrap() > 0.0 {
            continue;
        }
        if let Ok(f) = trajopt::objective(problem, &x) {
            best = best.min(f);
        }
    }
    best
}

#[test]
fn speed_only_cost_saturates_acceleration() {
    let sc = ScenarioConfig::default();
    let p = single(VehicleState::new(-40.0, 0.0), IndividualWeights::new(0.0, 1.0), 3, &sc);
    let r = trajopt::solve(&p, &[0.0; 3], &SolverOptions::default()).unwrap();
    assert!(r.converged);
    for a in &r.controls {
        assert!((a - sc.u_max).abs() < 1e-9, "{:?}", r.controls);
    }
    let levels: Vec<f64> = (0..21).map(|i| sc.u_min + (sc.u_max - sc.u_min) * i as f64 / 20.0).collect();
    assert!(r.objective <= grid_oracle(&p, &levels) + 1e-9);
}

#[test]
fn speed_only_cost_tapers_near_limit() {
    let sc = ScenarioConfig::default();
    let p = single(VehicleState::new(-40.0, 11.0), IndividualWeights::new(0.0, 1.0), 3, &sc);
    let r = trajopt::solve(&p, &[0.0; 3], &SolverOptions::default()).unwrap();
    assert!(r.converged);
    assert!((r.controls[0] - sc.u_max).abs() < 1e-6);
    let levels: Vec<f64> = (0..21).map(|i| sc.u_min + (sc.u_max - sc.u_min) * i as f64 / 20.0).collect();
    assert!(r.objective <= grid_oracle(&p, &levels) + 1e-9);
    assert!(r.max_violation <= 1e-6);
}

#[test]
fn input_only_cost_gives_zero_controls() {
    let sc = ScenarioConfig::default();
    let p = single(VehicleState::new(-40.0, 7.0), IndividualWeights::new(1.0, 0.0), 4, &sc);
    let r = trajopt::solve(&p, &[1.0, -2.0, 0.5, 3.0], &SolverOptions::default()).unwrap();
    assert!(r.controls.iter().all(|a| a.abs() < 1e-6), "{:?}", r.controls);
    let g = trajopt::gradient(&p, &[0.3, -1.0, 2.0, 0.0], None).unwrap();
    for (gk, ak) in g.iter().zip([0.3, -1.0, 2.0, 0.0]) {
        assert!((gk - 2.0 * ak).abs() < 1e-12);
    }
}

#[test]
fn joint_h2_beats_three_level_grid() {
    let sc = ScenarioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let p = random_joint(&mut rng, &sc, 2);
        let r = trajopt::solve(&p, &[0.0; 4], &SolverOptions::default()).unwrap();
        let oracle = grid_oracle(&p, &[-5.0, 0.0, 3.0]);
        assert!(r.max_violation <= 1e-6);
        assert!(r.objective <= oracle + 1e-6, "solver {} oracle {}", r.objective, oracle);
    }
}

fn fd_check(p: &HorizonProblem, x: &[f64], penalty: Option<&Penalty>) {
    let h = 1e-5;
    let g = trajopt::gradient(p, x, penalty).unwrap();
    let f = |y: &[f64]| match penalty {
        Some(pen) => trajopt::augmented_objective(p, y, pen).unwrap(),
        None => trajopt::objective(p, y).unwrap(),
    };
    let mut num = 0.0;
    let mut den: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        num += (g[i] - fd).powi(2);
        den += fd * fd;
    }
    let rel = num.sqrt() / den.sqrt().max(1.0);
    assert!(rel <= 1e-5, "relative error {rel}");
}

#[test]
fn gradient_matches_finite_differences() {
    let sc = ScenarioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let h = 1 + i % 10;
        let p = random_joint(&mut rng, &sc, h);
        let x: Vec<f64> = (0..2 * h).map(|_| rng.random_range(-5.0..3.0)).collect();
        if trajopt::objective(&p, &x).is_err() {
            continue;
        }
        fd_check(&p, &x, None);
        let (ni, ne) = p.constraint_counts();
        let pen = Penalty {
            ineq: (0..ni).map(|_| rng.random_range(0.0..5.0)).collect(),
            eq: vec![0.0; ne],
            rho: 10f64.powf(rng.random_range(0.0..3.0)),
        };
        fd_check(&p, &x, Some(&pen));
    }
}

#[test]
fn solve_is_deterministic() {
    let sc = ScenarioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let p = random_joint(&mut rng, &sc, 10);
        let opts = SolverOptions::default();
        let a = trajopt::solve(&p, &[0.0; 20], &opts).unwrap();
        let b = trajopt::solve(&p, &[0.0; 20], &opts).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn outer_loop_violation_is_monotone() {
    let sc = ScenarioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let opts = SolverOptions { record_trace: true, ..SolverOptions::default() };
    for _ in 0..30 {
        let p = random_joint(&mut rng, &sc, 10);
        let r = trajopt::solve(&p, &[0.0; 20], &opts).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1].violation <= w[0].violation + opts.tol_feas, "{:?}", r.trace);
        }
        if r.converged {
            assert!(r.max_violation <= opts.tol_feas);
        }
    }
}

#[test]
fn minimizer_is_invariant_to_weight_scaling() {
    let sc = ScenarioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let p = random_joint(&mut rng, &sc, 6);
        let mut q = p.clone();
        for a in &mut q.agents {
            a.weights = a.weights.map(|w| w.scaled(10.0));
        }
        q.shared = q.shared.map(|s| SharedWeight::new(10.0 * s.w_shared, s.gamma));
        let opts = SolverOptions::default();
        let a = trajopt::solve(&p, &[0.0; 12], &opts).unwrap();
        let b = trajopt::solve(&q, &[0.0; 12], &opts).unwrap();
        for (x, y) in a.controls.iter().zip(&b.controls) {
            assert!((x - y).abs() < 1e-4, "{:?} vs {:?}", a.controls, b.controls);
        }
    }
}
