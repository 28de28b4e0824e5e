mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use wrht_core::sequential::seeded_rng;
use wrht_core::{
    calibrate_radius, cusum_run, synth_stream, threshold_by_type1, threshold_from_maxima, CalibrationConfig,
    HotellingModel, PsiFamily, PsiKind, StreamSpec,
};

fn normal_stream(d: usize, length: usize, seed: u64) -> Vec<Vec<f64>> {
    synth_stream(&StreamSpec {
        d,
        pre_mean: vec![0.0; d],
        post_mean: vec![0.0; d],
        cov_scale: 1.0,
        change_time: length,
        length,
        seed,
    })
    .unwrap()
}

/// Pinned output of the calibration below, seed 0.
const CALIBRATED_THETA: f64 = 0.1;

#[test]
fn calibration_regression() {
    let data = normal_stream(1, 200, 0);
    let cfg = CalibrationConfig { window: 20, bootstrap_reps: 50, confidence: 0.9, divergence_tol: 0.05, ..Default::default() };
    let result = calibrate_radius(&data, PsiFamily::new(PsiKind::Log), &cfg).unwrap();
    assert!(!result.saturated);
    assert_eq!(result.theta, CALIBRATED_THETA);
    assert_eq!(calibrate_radius(&data, PsiFamily::new(PsiKind::Log), &cfg).unwrap(), result);
}

#[test]
fn larger_tolerance_never_raises_the_radius() {
    for seed in 0..10 {
        let data = normal_stream(2, 60, 100 + seed);
        let mut last = f64::INFINITY;
        for tol in [0.01, 0.05, 0.1, 0.3] {
            let cfg = CalibrationConfig { window: 10, bootstrap_reps: 15, divergence_tol: tol, seed, ..Default::default() };
            let result = calibrate_radius(&data, PsiFamily::new(PsiKind::Exp), &cfg).unwrap();
            assert!(result.quantile_curve.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{:?}", result.quantile_curve);
            assert!(result.theta <= last, "seed {seed}, tol {tol}: {} after {last}", result.theta);
            last = result.theta;
        }
    }
}

#[test]
fn constant_data_calibrates_to_the_grid_minimum() {
    let data = vec![vec![1.5, -2.0]; 40];
    let cfg = CalibrationConfig { bootstrap_reps: 5, ..Default::default() };
    for kind in ALL {
        let result = calibrate_radius(&data, PsiFamily::new(kind), &cfg).unwrap();
        assert_eq!(result.theta, cfg.theta_grid[0]);
        assert!(result.quantile_curve.iter().all(|q| q.abs() < 1e-9));
    }
}

proptest! {
    #[test]
    fn leading_zero_scores_do_not_change_the_chart(scores in prop::collection::vec(-2.0..2.0f64, 1..40), zeros in 0usize..10, h in 0.0..4.0f64) {
        let base = cusum_run(&scores, h).unwrap();
        let padded: Vec<f64> = std::iter::repeat_n(0.0, zeros).chain(scores.iter().copied()).collect();
        let run = cusum_run(&padded, h).unwrap();
        prop_assert!(run.trajectory[..zeros].iter().all(|s| *s == 0.0));
        prop_assert_eq!(&run.trajectory[zeros..], &base.trajectory[..]);
        if h > 0.0 {
            prop_assert_eq!(run.alarm, base.alarm.map(|t| t + zeros));
        }
    }

    #[test]
    fn higher_thresholds_alarm_later(scores in prop::collection::vec(-2.0..2.0f64, 1..60), h in 0.0..5.0f64, extra in 0.0..3.0f64) {
        let low = cusum_run(&scores, h).unwrap().alarm;
        let high = cusum_run(&scores, h + extra).unwrap().alarm;
        match (low, high) {
            (Some(a), Some(b)) => prop_assert!(b >= a),
            (None, Some(_)) => prop_assert!(false, "alarm at the higher threshold only"),
            _ => {}
        }
    }

    #[test]
    fn synthetic_streams_are_reproducible(seed in any::<u64>(), d in 1usize..4, change in 0usize..20) {
        let spec = StreamSpec { d, pre_mean: vec![0.5; d], post_mean: vec![-1.0; d], cov_scale: 2.0, change_time: change, length: 20, seed };
        let a = synth_stream(&spec).unwrap();
        let b = synth_stream(&spec).unwrap();
        prop_assert_eq!(a.len(), 20);
        let bits = |s: &Vec<Vec<f64>>| s.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn hotelling_is_affine_invariant() {
    let mut r = rng(3);
    for d in 1..5 {
        let train: Vec<Vec<f64>> = (0..30).map(|_| (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).collect();
        let test: Vec<Vec<f64>> = (0..10).map(|_| (0..d).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect()).collect();
        let a: DMatrix<f64> = DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 } else { 0.0 } + r.random_range(-0.5..0.5));
        assert!(a.determinant().abs() > 0.1);
        let b = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
        let map = |x: &Vec<f64>| (&a * DVector::from_column_slice(x) + &b).as_slice().to_vec();
        let plain = HotellingModel::fit(&train, Some(0.0)).unwrap();
        let moved = HotellingModel::fit(&train.iter().map(map).collect::<Vec<_>>(), Some(0.0)).unwrap();
        for x in &test {
            let (s, t) = (plain.score(x).unwrap(), moved.score(&map(x)).unwrap());
            assert!((s - t).abs() <= 1e-8 * (1.0 + s), "d={d}: {s} vs {t}");
        }
    }
}

#[test]
fn hotelling_inverse_covariance_is_positive_definite() {
    let mut r = rng(8);
    for d in 1..6 {
        let train: Vec<Vec<f64>> = (0..3 * d + 2).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let model = HotellingModel::fit(&train, None).unwrap();
        let s = model.sigma_inv();
        assert!((s - s.transpose()).amax() <= 1e-9 * s.amax());
        for _ in 0..100 {
            let v = DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0));
            assert!((v.transpose() * s * &v)[(0, 0)] > 0.0);
        }
    }
}

fn null_scores(seed: u64, rep: usize) -> Vec<f64> {
    let mut rng = seeded_rng(seed, rep as u64);
    (0..100).map(|_| rng.sample::<f64, _>(StandardNormal) - 0.5).collect()
}

fn run_max(scores: &[f64]) -> f64 {
    cusum_run(scores, f64::MAX).unwrap().trajectory.into_iter().fold(0.0, f64::max)
}

/// The threshold from `2R` replicates stays within three standard errors,
/// in rank, of the order statistic chosen from the first `R`.
#[test]
fn doubling_the_replicates_keeps_the_threshold_stable() {
    let alpha = 0.05;
    let reps = 400;
    let steps = (3.0 * (alpha * (1.0 - alpha) * reps as f64).sqrt()).ceil() as usize;
    for seed in 0..5 {
        let small = threshold_by_type1(|r| Ok(null_scores(seed, r)), alpha, reps).unwrap();
        let large = threshold_by_type1(|r| Ok(null_scores(seed, r)), alpha, 2 * reps).unwrap();
        let mut maxima: Vec<f64> = (0..reps).map(|r| run_max(&null_scores(seed, r))).collect();
        maxima.sort_by(f64::total_cmp);
        let k = maxima.iter().position(|m| *m == small).unwrap();
        let lo = maxima[k.saturating_sub(steps)];
        let hi = maxima[(k + steps).min(reps - 1)];
        assert!(lo <= large && large <= hi, "seed {seed}: {large} outside [{lo}, {hi}]");
    }
}

#[test]
fn false_alarm_rate_stays_within_three_standard_errors() {
    let alpha = 0.1;
    let reps = 500;
    let h = threshold_by_type1(|r| Ok(null_scores(11, r)), alpha, reps).unwrap();
    let alarms = (0..reps).filter(|r| cusum_run(&null_scores(12, *r), h).unwrap().alarm.is_some()).count();
    let rate = alarms as f64 / reps as f64;
    let band = 3.0 * (alpha * (1.0 - alpha) / reps as f64).sqrt();
    assert!((rate - alpha).abs() <= band, "rate {rate}");
}

#[test]
fn threshold_of_all_zero_scores_is_zero() {
    assert_eq!(threshold_by_type1(|_| Ok(vec![0.0; 10]), 0.05, 20).unwrap(), 0.0);
    assert_eq!(threshold_from_maxima(&[1.0, 3.0], 0.5).unwrap(), 3.0);
}
