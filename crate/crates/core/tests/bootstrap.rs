use changeplane::bootstrap::*;
use changeplane::data::{simulate_scenario, simulate_with_noise, Dataset, ScenarioSpec};
use changeplane::limit::{sample_limit_distribution, LimitDraw, LimitSpec, NoiseLaw, Which};
use changeplane::search::{fit, FitConfig};
use changeplane::stats::{ks_critical_01, ks_statistic};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn fake_draw(w: f64, g: f64) -> LimitDraw {
    LimitDraw {
        w1: vec![w, -w],
        w2: vec![2.0 * w, 0.0],
        signs: vec![],
        n_minus: 0,
        g_hat: Some((vec![], g)),
        g_check: Some((vec![], g)),
        phi_hat: Some((vec![0.0], g)),
        phi_check: Some((vec![0.0], g)),
        window: 1.0,
        q02_min: 0.0,
        exact_min: true,
        mode_non_unique: false,
    }
}

#[test]
fn density_at_zero_uniform_and_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let f = kernel_density_at_zero(&u, 2.0, -0.2).unwrap();
    assert!((f - 0.25).abs() < 0.01, "{f}");
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let f = kernel_density_at_zero(&g, 2.0, -0.2).unwrap();
    // the smoothed density at 0 is phi(0)/sqrt(1 + h^2); the bandwidth bias alone is about 0.008
    let sd = (g.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let h = 2.0 * sd * (n as f64).powf(-0.2);
    let smoothed = 0.398_942_280_4 / (1.0 + h * h).sqrt();
    assert!((f - smoothed).abs() < 0.008, "{f} vs {smoothed}");
}

#[test]
fn resampler_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 500;
    let eps: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
    let mean = eps.iter().sum::<f64>() / n as f64;
    let s2 = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
    let law = residual_resampler(&eps, mean, s2.sqrt(), 2.0, -0.2).unwrap();
    let NoiseLaw::Smoothed { bandwidth, .. } = &law else { panic!() };
    let target = s2 + bandwidth * bandwidth;
    let m = 1_000_000;
    let draws: Vec<f64> = (0..m).map(|_| law.sample(&mut rng)).collect();
    let dm = draws.iter().sum::<f64>() / m as f64;
    let dv = draws.iter().map(|e| (e - dm).powi(2)).sum::<f64>() / m as f64;
    assert!(dm.abs() < 0.005, "{dm}");
    assert!((dv / target - 1.0).abs() < 0.02, "{dv} vs {target}");
}

#[test]
fn noiseless_residuals_vanish() {
    let sc = ScenarioSpec::table(1, 1, 0.0).unwrap();
    let ds = simulate_scenario(&sc, 200, 3).unwrap();
    let rs = residual_summary(&ds, &sc.truth()).unwrap();
    assert!(rs.eps_hat.iter().all(|e| e.abs() < 1e-12));
    assert!(rs.sigma2 < 1e-24);
    assert!(residual_resampler(&rs.eps_hat, rs.eps_bar, rs.sigma2.sqrt(), 2.0, -0.2).is_err());
}

#[test]
fn intercept_only_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ds = Dataset::new(y, vec![1.0; n], x.clone(), 1, 1).unwrap();
    let theta = changeplane::data::ChangePlaneParams::new(vec![0.1], vec![-0.2], vec![1.0], 0.3).unwrap();
    let rs = residual_summary(&ds, &theta).unwrap();
    let nl = x.iter().filter(|&&v| v <= 0.3).count() as f64;
    let s1 = rs.sigma1.unwrap()[(0, 0)];
    assert!((s1 - rs.sigma2 * n as f64 / nl).abs() < 1e-12);
}

#[test]
fn sigma_hat_consistent_on_model1() {
    let sc = ScenarioSpec::table(1, 1, 1.0).unwrap();
    let ds = simulate_scenario(&sc, 2000, 5).unwrap();
    let f = fit(&ds, &FitConfig::default()).unwrap();
    let rs = residual_summary(&ds, &f.theta_hat).unwrap();
    assert!((rs.sigma2 - 1.0).abs() < 0.1, "{}", rs.sigma2);
}

#[test]
fn neighborhood_radius_on_model1() {
    let sc = ScenarioSpec::table(1, 1, 1.0).unwrap();
    let n = 10_000;
    let ds = simulate_scenario(&sc, n, 6).unwrap();
    let u: Vec<f64> = ds.project(&[1.0]).iter().map(|v| v - 1.0).collect();
    let r = neighborhood_size(n, 2.0 / 3.0);
    let (idx, t) = neighborhood_set(&u, r).unwrap();
    assert_eq!(idx.len(), r);
    let mean_abs = idx.iter().map(|&i| u[i].abs()).sum::<f64>() / r as f64;
    assert!(mean_abs <= 2.0 * t);
    let target = r as f64 / (2.0 * 0.25 * n as f64);
    assert!((t / target - 1.0).abs() < 0.2, "{t} vs {target}");
}

#[test]
fn bootstrap_zero_draws_and_marks() {
    let sc = ScenarioSpec::table(1, 2, 1.0).unwrap();
    let ds = simulate_scenario(&sc, 300, 7).unwrap();
    let f = fit(&ds, &FitConfig::default()).unwrap();
    let cfg = BootstrapConfig { b: 0, ..Default::default() };
    let out = parametric_bootstrap(&ds, &f.theta_hat, &cfg, Which::Both).unwrap();
    assert!(out.draws.is_empty());
    let c: Vec<f64> = f.theta_hat.beta.iter().zip(&f.theta_hat.delta).map(|(b, d)| b - d).collect();
    assert_eq!(out.spec.contrast, c);
    let d = changeplane::limit::sample_jump_process(&out.spec, 10.0, 1).unwrap();
    for j in 0..d.minus.u.len() {
        let cz = changeplane::linalg::dot(&c, &d.minus.z[2 * j..2 * j + 2]);
        assert_eq!(d.minus.e[j], cz * cz + 2.0 * d.minus.eps[j] * cz);
    }
}

#[test]
fn bootstrap_gamma_law_matches_true_limit() {
    let sc = ScenarioSpec::table(1, 1, 1.0).unwrap();
    let ds = simulate_scenario(&sc, 2000, 8).unwrap();
    let f = fit(&ds, &FitConfig::default()).unwrap();
    let cfg = BootstrapConfig { b: 1000, seed: 3, ..Default::default() };
    let boot = parametric_bootstrap(&ds, &f.theta_hat, &cfg, Which::Mean).unwrap();
    let truth = sample_limit_distribution(&LimitSpec::from_scenario(&sc).unwrap(), 1000, 4, Which::Mean).unwrap();
    let a: Vec<f64> = boot.draws.iter().map(|d| d.g_hat.as_ref().unwrap().1).collect();
    let b: Vec<f64> = truth.iter().map(|d| d.g_hat.as_ref().unwrap().1).collect();
    let ks = ks_statistic(&a, &b);
    assert!(ks < ks_critical_01(1000, 1000), "KS {ks}");
}

#[test]
fn symmetric_and_degenerate_intervals() {
    let theta = ScenarioSpec::table(1, 1, 1.0).unwrap().truth();
    let draws: Vec<LimitDraw> = (0..101).map(|i| fake_draw(i as f64 - 50.0, 2.0 * (i as f64 - 50.0))).collect();
    let ci = confidence_intervals(&theta, &draws, 100, 0.9, &[], false).unwrap();
    let b1 = ci.get("beta1").unwrap();
    assert!(((b1.hi - b1.estimate) - (b1.estimate - b1.lo)).abs() < 1e-12);
    let zero: Vec<LimitDraw> = (0..60).map(|_| fake_draw(0.0, 0.0)).collect();
    let ci = confidence_intervals(&theta, &zero, 100, 0.95, &[vec![1.0; 6]], false).unwrap();
    for iv in ci.coordinates.iter().chain(&ci.contrasts) {
        assert_eq!((iv.lo, iv.hi), (iv.estimate, iv.estimate));
    }
    assert!(confidence_intervals(&theta, &zero[..10], 100, 0.95, &[], false).is_err());
}

#[test]
fn shifting_response_shifts_regression_intervals_only() {
    for (model, seed) in [(1u8, 10u64), (2, 11)] {
        let sc = ScenarioSpec::table(model, 1, 1.0).unwrap();
        let (ds, _) = simulate_with_noise(&sc, 300, seed).unwrap();
        let c = [0.7, -0.4];
        let y2: Vec<f64> = (0..ds.n()).map(|i| ds.y()[i] + c[0] * ds.z_row(i)[0] + c[1] * ds.z_row(i)[1]).collect();
        let ds2 = ds.with_y(y2).unwrap();
        let cfg = FitConfig::default();
        let (f1, f2) = (fit(&ds, &cfg).unwrap(), fit(&ds2, &cfg).unwrap());
        let bc = BootstrapConfig { b: 60, seed: 1, ..Default::default() };
        let run = |ds: &Dataset, th| {
            let out = parametric_bootstrap(ds, th, &bc, Which::Mean).unwrap();
            confidence_intervals(th, &out.draws, ds.n(), 0.95, &[], false).unwrap()
        };
        let (a, b) = (run(&ds, &f1.theta_hat), run(&ds2, &f2.theta_hat));
        let d = 2;
        for (k, (ia, ib)) in a.coordinates.iter().zip(&b.coordinates).enumerate() {
            let shift = if k < 2 * d { c[k % d] } else { 0.0 };
            assert!((ib.lo - ia.lo - shift).abs() < 1e-6, "{} {} {}", ia.name, ia.lo, ib.lo);
            assert!((ib.hi - ia.hi - shift).abs() < 1e-6, "{}", ia.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn wider_level_contains_narrower(vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 50..120)) {
        let theta = ScenarioSpec::table(1, 1, 1.0).unwrap().truth();
        let draws: Vec<LimitDraw> = vals.iter().map(|&(w, g)| fake_draw(w, g)).collect();
        let a = confidence_intervals(&theta, &draws, 200, 0.95, &[], false).unwrap();
        let b = confidence_intervals(&theta, &draws, 200, 0.99, &[], false).unwrap();
        for (x, y) in a.coordinates.iter().zip(&b.coordinates) {
            prop_assert!(y.lo <= x.lo && x.hi <= y.hi);
        }
    }
}
