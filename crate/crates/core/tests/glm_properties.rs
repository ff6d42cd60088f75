use proptest::prelude::*;
use rand::Rng;

use lcc_core::glm::{fit_logistic_report, score};
use lcc_core::rng;
use lcc_core::{fit_logistic, Error, FitConfig, ModelParams, ObservationSet, PopulationSpec};

fn synthetic(n: usize, p: usize, seed: u64, theta: &ModelParams) -> ObservationSet {
    let mut s = rng::stream(seed);
    let mut feats = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| s.random::<f64>() * 4.0 - 2.0).collect();
        let prob = lcc_core::numerics::sigmoid(theta.linear_predictor(&x));
        labels.push(s.random::<f64>() < prob);
        feats.extend(x);
    }
    ObservationSet::new(feats, p, labels).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn offset_shift_equivalence(
        seed in 0u64..10_000,
        li in -2.0f64..2.0,
        l1 in -1.5f64..1.5,
        l2 in -1.5f64..1.5,
    ) {
        let truth = ModelParams::new(-0.5, vec![1.0, -0.7]);
        let data = synthetic(600, 2, seed, &truth);
        let lambda = ModelParams::new(li, vec![l1, l2]);
        let offsets: Vec<f64> = data.rows().map(|x| -lambda.linear_predictor(x)).collect();
        let cfg = FitConfig::default();
        let direct = fit_logistic(&data, &cfg).unwrap();
        let shifted = fit_logistic(&data.clone().with_offsets(offsets).unwrap(), &cfg).unwrap();
        prop_assert!(shifted.sub(&lambda).max_abs_diff(&direct) < 1e-7);
    }

    #[test]
    fn weight_scaling_leaves_fit_unchanged(seed in 0u64..10_000, k in 1e-3f64..1e3) {
        let truth = ModelParams::new(0.3, vec![0.8, 0.2, -1.1]);
        let data = synthetic(500, 3, seed, &truth);
        let mut s = rng::stream(seed ^ 0xabc);
        let w: Vec<f64> = (0..data.n()).map(|_| 0.2 + s.random::<f64>()).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * k).collect();
        let cfg = FitConfig::default();
        let a = fit_logistic(&data.clone().with_weights(w).unwrap(), &cfg).unwrap();
        let b = fit_logistic(&data.clone().with_weights(scaled).unwrap(), &cfg).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-8);
    }

    #[test]
    fn fitted_score_is_below_tolerance(seed in 0u64..10_000) {
        let truth = ModelParams::new(-1.0, vec![0.5, 0.5]);
        let data = synthetic(300, 2, seed, &truth);
        let cfg = FitConfig::default();
        let rep = fit_logistic_report(&data, &cfg, None).unwrap();
        let g = score(&rep.params, &data).unwrap();
        let worst = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / data.total_weight();
        prop_assert!(worst <= cfg.grad_tol);
    }
}

#[test]
fn error_shrinks_at_root_n_rate() {
    let truth = ModelParams::new(-0.4, vec![0.9, -0.6, 0.3]);
    let medians: Vec<f64> = [1000usize, 4000, 16_000]
        .iter()
        .map(|&n| {
            let errs = (0..50)
                .map(|s| {
                    let data = synthetic(n, 3, 1000 * n as u64 + s, &truth);
                    fit_logistic(&data, &FitConfig::default()).unwrap().distance(&truth)
                })
                .collect();
            median(errs)
        })
        .collect();
    for w in medians.windows(2) {
        let r = w[1] / w[0];
        assert!(r > 0.5 / 1.6 && r < 0.5 * 1.6, "medians {medians:?}");
    }
}

#[test]
fn two_separated_points() {
    let data = ObservationSet::new(vec![-1.0, 1.0], 1, vec![false, true]).unwrap();
    assert!(matches!(fit_logistic(&data, &FitConfig::default()), Err(Error::Separation { .. })));
}

#[test]
fn weighted_oatmeal_cells_recover_population_slope() {
    // one row per (cell, label) weighted by its population probability
    let pop = PopulationSpec::oatmeal().compile().unwrap();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for cell in pop.cells().unwrap() {
        let p = lcc_core::numerics::sigmoid(cell.logodds);
        for (y, w) in [(true, p), (false, 1.0 - p)] {
            feats.extend_from_slice(&cell.x);
            labels.push(y);
            weights.push(cell.mass * w);
        }
    }
    let data = ObservationSet::new(feats, 2, labels).unwrap().with_weights(weights).unwrap();
    let fit = fit_logistic(&data, &FitConfig::default()).unwrap();
    assert!((fit.slopes[0] - 1.4).abs() < 0.05, "{fit:?}");
}

#[test]
fn converges_when_loss_differences_fall_below_rounding() {
    // a large, heavily offset local case-control subsample whose optimum
    // cannot be located from summed-loss comparisons alone
    use lcc_core::populations::{population_theta_star, Integration};
    use lcc_core::sampling::{draw_subsample, draw_uniforms, fit_subsample};
    use lcc_core::SamplingScheme;
    let pop = PopulationSpec::oatmeal().compile().unwrap();
    let star = population_theta_star(&pop, &Integration::default(), 1e-13).unwrap().params;
    let data = pop.sample(1_000_000, &mut rng::stream(0)).unwrap();
    let u = draw_uniforms(data.n(), &mut rng::stream(99));
    let sub = draw_subsample(&data, &SamplingScheme::lcc(star, 1.0), &u).unwrap();
    let fit = fit_subsample(&data, &sub, &FitConfig::default()).unwrap();
    assert!(fit.grad_norm < FitConfig::default().grad_tol);
}
