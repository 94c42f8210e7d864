use gtmpc_core::bayesopt::{expected_improvement, optimize, propose_next, resume, BoConfig, BoState};
use gtmpc_core::gp::{GpModel, HyperPolicy, KernelParams, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `erf` from the positive-term series `2/√π · e^{−x²} Σ 2ⁿ x^{2n+1} / (2n+1)!!`.
fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x > 6.0 {
        return 1.0;
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > 1e-18 * sum {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

fn ei_oracle(mu: f64, sigma: f64, best: f64) -> f64 {
    let d = best - mu;
    if sigma == 0.0 {
        return d.max(0.0);
    }
    let z = d / sigma;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    sigma * pdf + d * cdf
}

#[test]
fn ei_matches_erf_oracle() {
    assert!((expected_improvement(0.0, 1.0, 1.0) - 1.0833154705876864).abs() < 1e-10);
    assert!((ei_oracle(0.0, 1.0, 1.0) - 1.0833154705876864).abs() < 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let mu = rng.random_range(-5.0..5.0);
        let sigma = 10f64.powf(rng.random_range(-12.0..1.0));
        let best = rng.random_range(-5.0..5.0);
        let e = expected_improvement(mu, sigma, best);
        assert!(e >= 0.0);
        assert!((e - ei_oracle(mu, sigma, best)).abs() <= 1e-10, "{mu} {sigma} {best}");
    }
    for d in [-1.0, 0.0, 0.5, 2.0] {
        assert_eq!(expected_improvement(-d, 0.0, 0.0), ei_oracle(-d, 0.0, 0.0));
        assert!((expected_improvement(-d, 1e-14, 0.0) - d.max(0.0)).abs() <= 1e-10);
    }
}

fn quadratic(center: Point) -> impl Fn(&Point) -> gtmpc_core::Result<f64> {
    move |x: &Point| {
        let (a, b) = (x[0] - center[0], x[1] - center[1]);
        Ok(5.0 + 2.0 * a * a + 0.6 * a * b + 1.2 * b * b)
    }
}

#[test]
fn planted_quadratic_is_found() {
    let cfg = BoConfig::default();
    let mut hits = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let center = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let r = optimize(quadratic(center), &cfg, seed).unwrap();
        assert_eq!(r.state.records.len(), 30);
        let dist = ((r.best[0] - center[0]).powi(2) + (r.best[1] - center[1]).powi(2)).sqrt();
        if dist <= 0.15 {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn incumbent_and_budget_contracts() {
    let cfg = BoConfig { j_init: 4, j_max: 6, ..BoConfig::default() };
    let r = optimize(quadratic([0.3, -0.4]), &cfg, 9).unwrap();
    assert_eq!(r.state.records.len(), 10);
    assert_eq!(r.new_evaluations, 10);
    let mut prev = f64::INFINITY;
    for rec in &r.state.records {
        assert!(cfg.bounds.contains(&rec.candidate));
        assert!(rec.incumbent <= prev);
        prev = rec.incumbent;
    }
    let min = r.state.records.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_cost, min);
    assert!(r.state.records.iter().any(|rec| rec.candidate == r.best));

    let again = optimize(quadratic([0.3, -0.4]), &cfg, 9).unwrap();
    assert_eq!(r.state, again.state);

    let only_init = optimize(quadratic([0.3, -0.4]), &BoConfig { j_max: 0, ..cfg.clone() }, 9).unwrap();
    assert_eq!(only_init.state.records[..], r.state.records[..4]);

    let partial = BoState { seed: 9, records: r.state.records[..7].to_vec() };
    let resumed = resume(quadratic([0.3, -0.4]), &cfg, partial).unwrap();
    assert_eq!(resumed.new_evaluations, 3);
    assert_eq!(resumed.state, r.state);
    let full = resume(quadratic([0.3, -0.4]), &cfg, r.state.clone()).unwrap();
    assert_eq!(full.new_evaluations, 0);
}

fn grid_argmax(model: &GpModel, best: f64) -> Point {
    let mut arg = [0.0, 0.0];
    let mut top = f64::NEG_INFINITY;
    for i in 0..101 {
        for j in 0..101 {
            let x = [-2.0 + 0.04 * i as f64, -2.0 + 0.04 * j as f64];
            let (mu, sd) = model.predict(&x);
            let e = expected_improvement(mu, sd, best);
            if e > top {
                top = e;
                arg = x;
            }
        }
    }
    arg
}

#[test]
fn proposal_moves_away_from_costly_point() {
    let kernel = KernelParams { lengthscales: [0.8, 0.8], signal_var: 1.0, noise_var: 1e-8 };
    let x0 = [0.5, -0.5];
    let model = GpModel::fit(&[x0], &[10.0], HyperPolicy::Fixed(kernel)).unwrap();
    // Incumbent below the lone observation: improvement only where the prior spreads.
    let best = 9.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = propose_next(&model, best, &BoConfig::default(), &mut rng);
    let dist = ((p[0] - x0[0]).powi(2) + (p[1] - x0[1]).powi(2)).sqrt();
    assert!(dist > 0.4, "{p:?}");
    let g = grid_argmax(&model, best);
    let gd = ((g[0] - x0[0]).powi(2) + (g[1] - x0[1]).powi(2)).sqrt();
    assert!(gd > 0.4);
}

#[test]
fn symmetric_dataset_proposes_on_axis() {
    let kernel = KernelParams { lengthscales: [1.0, 1.0], signal_var: 1.0, noise_var: 1e-8 };
    let x = [[-1.5, 0.0], [1.5, 0.0]];
    let model = GpModel::fit(&x, &[2.0, 2.0], HyperPolicy::Fixed(kernel)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = grid_argmax(&model, 2.0);
    assert!(g[0].abs() <= 0.04, "{g:?}");
    let p = propose_next(&model, 2.0, &BoConfig::default(), &mut rng);
    assert!(p[0].abs() <= 0.04, "{p:?}");
}
