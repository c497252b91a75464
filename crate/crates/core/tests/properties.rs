use changeplane::data::{mean_response, simulate_scenario, simulate_with_noise, ChangePlaneParams, Dataset, ScenarioSpec};
use changeplane::linalg::norm;
use changeplane::midpoint::{canonicalize_orientation, corridor, induced_signs, mode_midargmin, MidpointConfig, ModeMethod};
use changeplane::objective::{mask_from_projection, ssr, subgroup_least_squares, subgroup_mask};
use changeplane::search::{fit, FitConfig};
use proptest::prelude::*;

fn unit(v: &[f64]) -> Vec<f64> {
    let r = norm(v);
    v.iter().map(|x| x / r).collect()
}

fn arb_case() -> impl Strategy<Value = (u8, usize, u64, Vec<f64>, f64)> {
    (1u8..=3, 10usize..60, any::<u64>(), proptest::collection::vec(-1.0f64..1.0, 3), -1.5f64..1.5)
}

fn setup(model: u8, n: usize, seed: u64, dir: &[f64]) -> (Dataset, Vec<f64>) {
    let sc = ScenarioSpec::table(model, 1, 1.0).unwrap();
    let ds = simulate_scenario(&sc, n, seed).unwrap();
    let mut w = dir[..sc.p()].to_vec();
    if norm(&w) < 1e-3 {
        w[0] = 1.0;
    }
    (ds, unit(&w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn objective_identity((model, n, seed, dir, gamma) in arb_case()) {
        let (ds, w) = setup(model, n, seed, &dir);
        let fit = subgroup_least_squares(&ds, &w, gamma).unwrap();
        let lhs = ds.n() as f64 * fit.m_value + fit.ssr;
        prop_assert!((lhs - ds.yty()).abs() <= 1e-9 * ds.yty());
    }

    #[test]
    fn ssr_depends_only_on_the_mask((model, n, seed, dir, gamma) in arb_case(), t in 0.0f64..1.0) {
        let (ds, w) = setup(model, n, seed, &dir);
        let mut proj = ds.project(&w);
        proj.sort_by(f64::total_cmp);
        // another threshold in the same gap of the sorted projections
        let k = proj.partition_point(|&u| u <= gamma);
        let lo = if k == 0 { gamma - 1.0 } else { proj[k - 1] };
        let hi = if k == proj.len() { gamma + 1.0 } else { proj[k] };
        let other = lo + t * (hi - lo);
        prop_assume!(other >= lo && other < hi);
        prop_assert_eq!(subgroup_mask(&ds, &w, gamma).unwrap(), subgroup_mask(&ds, &w, other).unwrap());
        prop_assert_eq!(ssr(&ds, &w, gamma).unwrap(), ssr(&ds, &w, other).unwrap());
    }

    #[test]
    fn reflection_swaps_subgroups((model, n, seed, dir, gamma) in arb_case()) {
        let (ds, w) = setup(model, n, seed, &dir);
        let proj = ds.project(&w);
        prop_assume!(proj.iter().all(|u| (u - gamma).abs() > 1e-9));
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let a = subgroup_least_squares(&ds, &w, gamma).unwrap();
        let b = subgroup_least_squares(&ds, &neg, -gamma).unwrap();
        prop_assert!((a.ssr - b.ssr).abs() <= 1e-9 * (1.0 + a.ssr));
        prop_assert_eq!(a.n_left, b.n_right);
        if let (Some(x), Some(y)) = (&a.beta, &b.delta) {
            for (p, q) in x.iter().zip(y) {
                prop_assert!((p - q).abs() <= 1e-7 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn canonicalization_is_idempotent(w in proptest::collection::vec(-1.0f64..1.0, 1..5), g in -2.0f64..2.0) {
        prop_assume!(norm(&w) > 1e-3);
        let th = ChangePlaneParams::new(vec![1.0, 2.0], vec![3.0, 4.0], unit(&w), g).unwrap();
        let once = canonicalize_orientation(&th);
        prop_assert_eq!(canonicalize_orientation(&once), once.clone());
        let first = once.omega.iter().copied().find(|&v| v != 0.0).unwrap();
        prop_assert!(first > 0.0);
    }
}

#[test]
fn simulation_reconstructs_response_and_is_reproducible() {
    for model in 1..=3 {
        let sc = ScenarioSpec::table(model, 2, 1.0).unwrap();
        let (ds, noise) = simulate_with_noise(&sc, 300, 9).unwrap();
        let (ds2, _) = simulate_with_noise(&sc, 300, 9).unwrap();
        assert_eq!(ds, ds2);
        let th = sc.truth();
        for i in 0..ds.n() {
            let m = mean_response(&th, ds.z_row(i), ds.x_row(i)).unwrap();
            assert!((m + noise[i] - ds.y()[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn subgroup_proportions_match_design() {
    for model in 1..=3 {
        let sc = ScenarioSpec::table(model, 1, 1.0).unwrap();
        let ds = simulate_scenario(&sc, 100_000, 1).unwrap();
        let mask = mask_from_projection(&ds.project(&sc.omega0), sc.gamma0);
        let frac = mask.iter().filter(|&&m| m).count() as f64 / ds.n() as f64;
        assert!((frac - sc.left_probability()).abs() < 0.01, "model {model}: {frac}");
    }
}

#[test]
fn fit_is_row_permutation_invariant() {
    for (model, seed) in [(1u8, 1u64), (2, 2), (3, 3)] {
        let sc = ScenarioSpec::table(model, 1, 1.0).unwrap();
        let ds = simulate_scenario(&sc, 150, seed).unwrap();
        let perm: Vec<usize> = (0..ds.n()).rev().collect();
        let dp = ds.permuted(&perm);
        let cfg = FitConfig::default();
        let (a, b) = (fit(&ds, &cfg).unwrap(), fit(&dp, &cfg).unwrap());
        assert!((a.ssr - b.ssr).abs() <= 1e-9 * a.ssr);
        let ma = mask_from_projection(&ds.project(&a.theta_tilde.omega), a.theta_tilde.gamma);
        let mb = mask_from_projection(&dp.project(&b.theta_tilde.omega), b.theta_tilde.gamma);
        let mb_back: Vec<bool> = (0..ds.n()).map(|i| mb[ds.n() - 1 - i]).collect();
        assert_eq!(ma, mb_back);
    }
}

#[test]
fn scaling_x_scales_thresholds() {
    for (model, seed) in [(2u8, 4u64), (3, 5)] {
        let sc = ScenarioSpec::table(model, 1, 1.0).unwrap();
        let ds = simulate_scenario(&sc, 200, seed).unwrap();
        let c = 3.0;
        let x: Vec<f64> = ds.x_flat().iter().map(|v| v * c).collect();
        let ds2 = Dataset::new(ds.y().to_vec(), ds.z_flat().to_vec(), x, ds.d(), ds.p()).unwrap();
        let cfg = FitConfig::default();
        let (a, b) = (fit(&ds, &cfg).unwrap(), fit(&ds2, &cfg).unwrap());
        assert!((b.theta_check.gamma - c * a.theta_check.gamma).abs() < 1e-8 * (1.0 + a.theta_check.gamma.abs()));
        assert!((b.theta_hat.gamma - c * a.theta_hat.gamma).abs() < 1e-6 * (1.0 + a.theta_hat.gamma.abs()));
        for k in 0..ds.p() {
            assert!((a.theta_check.omega[k] - b.theta_check.omega[k]).abs() < 1e-8);
            assert!((a.theta_hat.omega[k] - b.theta_hat.omega[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn qp_and_sampled_modes_agree() {
    for (model, seed) in [(3u8, 6u64), (3, 7), (3, 8)] {
        let sc = ScenarioSpec::table(model, 1, 1.0).unwrap();
        let ds = simulate_scenario(&sc, 200, seed).unwrap();
        let f = fit(&ds, &FitConfig::default()).unwrap();
        let level = induced_signs(&ds, &f.theta_tilde.omega, f.theta_tilde.gamma);
        let qp = mode_midargmin(&ds, &level, &MidpointConfig::default()).unwrap();
        let cfg = MidpointConfig { mode_method: ModeMethod::Sampled, m_n: 20_000, ..Default::default() };
        let sampled = mode_midargmin(&ds, &level, &cfg).unwrap();
        let (a, b) = (corridor(&ds, &qp.omega, &level).c_r, corridor(&ds, &sampled.omega, &level).c_r);
        assert!(a >= b - 1e-12);
        assert!(a - b < 1e-3, "qp {a} sampled {b}");
    }
}
