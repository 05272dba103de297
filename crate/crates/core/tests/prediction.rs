use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use umbrella::generator::MotionModel;
use umbrella::geom::{dist, Point};
use umbrella::prediction::{
    calibrate, fit_predictor, predict_bundle, sample_trajectory, ConstantVelocity, CpCorrection, PredictionBundle,
    Predictor, PredictorKind, TargetForecast,
};

fn draws(model: &MotionModel, n: usize, len: usize, seed: u64) -> Vec<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| model.sample(&mut rng, len, 1.0)).collect()
}

fn refs(v: &[Vec<Point>]) -> Vec<&[Point]> {
    v.iter().map(Vec::as_slice).collect()
}

fn turning() -> MotionModel {
    MotionModel::PiecewiseLinear {
        waypoints: vec![[0.0, 0.0], [15.0, 0.0], [15.0, 40.0]],
        speed: 1.0,
        speed_noise: 0.1,
        waypoint_noise: 3.0,
        position_noise: 0.05,
    }
}

fn joint_coverage(pred: &dyn Predictor, test: &[Vec<Point>], t: usize, radii: &[f64]) -> f64 {
    let inside = test
        .iter()
        .filter(|traj| {
            let yhat = pred.predict(&traj[..=t], radii.len());
            (0..radii.len()).all(|h| dist(yhat[h], traj[t + 1 + h]) <= radii[h])
        })
        .count();
    inside as f64 / test.len() as f64
}

#[test]
fn joint_coverage_on_held_out_draws() {
    let model = turning();
    let (t, horizon) = (8, 20);
    let training = draws(&model, 100, 40, 1);
    let cal = draws(&model, 1000, 40, 2);
    let test = draws(&model, 500, 40, 3);
    let pred = fit_predictor(&refs(&training), PredictorKind::LinearAutoregressive { order: 2 }).unwrap();
    let radii = calibrate(pred.as_ref(), &refs(&cal), t, horizon, 0.15, CpCorrection::Bonferroni).unwrap();
    assert!(joint_coverage(pred.as_ref(), &test, t, &radii) >= 0.82);
    let per_step = calibrate(pred.as_ref(), &refs(&cal), t, horizon, 0.15, CpCorrection::None).unwrap();
    assert!(per_step.iter().zip(&radii).all(|(a, b)| a <= b));
}

#[test]
fn noiseless_motion_gets_zero_radii_and_full_coverage() {
    let model = MotionModel::PiecewiseLinear {
        waypoints: vec![[0.0, 0.0], [100.0, 50.0]],
        speed: 1.5,
        speed_noise: 0.0,
        waypoint_noise: 0.0,
        position_noise: 0.0,
    };
    let cal = draws(&model, 100, 30, 4);
    let radii = calibrate(&ConstantVelocity, &refs(&cal), 5, 10, 0.15, CpCorrection::Bonferroni).unwrap();
    assert!(radii.iter().all(|&r| r < 1e-9));
    assert_eq!(joint_coverage(&ConstantVelocity, &draws(&model, 20, 30, 5), 5, &radii), 1.0);
}

#[test]
fn radii_shrink_as_delta_grows() {
    let cal = draws(&turning(), 300, 40, 6);
    let tight = calibrate(&ConstantVelocity, &refs(&cal), 8, 15, 0.5, CpCorrection::Bonferroni).unwrap();
    let loose = calibrate(&ConstantVelocity, &refs(&cal), 8, 15, 0.05, CpCorrection::Bonferroni).unwrap();
    assert!(tight.iter().zip(&loose).all(|(a, b)| a <= b));
    assert!(tight.iter().zip(&loose).any(|(a, b)| a < b));
}

#[test]
fn targets_are_calibrated_independently() {
    let calm = MotionModel::PiecewiseLinear {
        waypoints: vec![[0.0, 0.0], [100.0, 0.0]],
        speed: 1.0,
        speed_noise: 0.0,
        waypoint_noise: 0.0,
        position_noise: 0.01,
    };
    let cal_a = draws(&calm, 100, 30, 7);
    let cal_b = draws(&turning(), 100, 30, 8);
    let obs_a = &cal_a[0][..6];
    let obs_b = &cal_b[0][..6];
    let cv: &dyn Predictor = &ConstantVelocity;
    let b = predict_bundle(
        &["a".into(), "b".into()],
        &[cv, cv],
        &[obs_a, obs_b],
        0.0,
        1.0,
        10,
        0.15,
        &[refs(&cal_a), refs(&cal_b)],
        CpCorrection::Bonferroni,
    )
    .unwrap();
    let solo = calibrate(cv, &refs(&cal_a), 5, 10, 0.15, CpCorrection::Bonferroni).unwrap();
    assert_eq!(b.targets[0].radii, solo);
    assert!(b.targets[1].radii[9] > 5.0 * b.targets[0].radii[9]);
}

#[test]
fn observed_top_speed_is_the_maximum_step() {
    let obs: Vec<Point> = vec![[0.0, 0.0], [0.5, 0.0], [1.7, 0.0], [2.5, 0.0]];
    let cv: &dyn Predictor = &ConstantVelocity;
    let cal: Vec<Vec<Point>> = vec![(0..10).map(|k| [k as f64, 0.0]).collect(); 30];
    let b = predict_bundle(&["x".into()], &[cv], &[&obs], 0.0, 1.0, 2, 0.15, &[refs(&cal)], CpCorrection::None).unwrap();
    assert!((b.targets[0].vmax - 1.2).abs() < 1e-12);
}

fn bundle(radii: Vec<f64>) -> PredictionBundle {
    let n = radii.len();
    PredictionBundle {
        t0: 0.0,
        dt: 1.0,
        delta: 0.15,
        targets: vec![TargetForecast {
            id: "m".into(),
            origin: [0.0, 0.0],
            yhat: (1..=n).map(|k| [k as f64, 0.5 * k as f64]).collect(),
            radii,
            vmax: 1.0,
        }],
    }
}

#[test]
fn sampled_radii_are_uniform_with_or_without_smoothness() {
    let b = bundle(vec![4.0; 30]);
    for smoothness in [0.0, 0.9] {
        let mut fractions = Vec::new();
        for seed in 0..400 {
            let path = &sample_trajectory(&b, seed, smoothness)[0];
            for (k, y) in b.targets[0].yhat.iter().enumerate() {
                fractions.push(dist(path.points[k + 1], *y) / 4.0);
            }
        }
        let n = fractions.len() as f64;
        let mean = fractions.iter().sum::<f64>() / n;
        let below = fractions.iter().filter(|&&f| f < 0.25).count() as f64 / n;
        assert!((mean - 0.5).abs() < 0.02, "smoothness {smoothness}: mean {mean}");
        assert!((below - 0.25).abs() < 0.02, "smoothness {smoothness}: lower quartile {below}");
    }
}

#[test]
fn smoothness_correlates_consecutive_offsets() {
    let b = bundle(vec![4.0; 30]);
    let jump = |smoothness: f64| {
        let mut total = 0.0;
        for seed in 0..100 {
            let p = &sample_trajectory(&b, seed, smoothness)[0].points;
            for k in 2..p.len() {
                let a = [p[k - 1][0] - b.targets[0].yhat[k - 2][0], p[k - 1][1] - b.targets[0].yhat[k - 2][1]];
                let c = [p[k][0] - b.targets[0].yhat[k - 1][0], p[k][1] - b.targets[0].yhat[k - 1][1]];
                total += dist(a, c);
            }
        }
        total
    };
    assert!(jump(0.95) < 0.5 * jump(0.0));
}

proptest! {
    #[test]
    fn samples_stay_inside_their_regions(
        radii in prop::collection::vec(0.0f64..20.0, 1..25),
        seed in any::<u64>(),
        smoothness in 0.0f64..0.99,
    ) {
        let b = bundle(radii.clone());
        let path = &sample_trajectory(&b, seed, smoothness)[0];
        prop_assert_eq!(path.points[0], b.targets[0].origin);
        for (k, (y, r)) in b.targets[0].yhat.iter().zip(&radii).enumerate() {
            prop_assert!(dist(path.points[k + 1], *y) <= r + 1e-9);
        }
        prop_assert_eq!(path, &sample_trajectory(&b, seed, smoothness)[0]);
    }
}
