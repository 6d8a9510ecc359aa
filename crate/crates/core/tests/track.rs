use approx::assert_relative_eq;
use disac::associate::{association_probabilities, LikelihoodMatrix};
use disac::channel::RngStreams;
use disac::geometry::*;
use disac::track::*;
use nalgebra::{DMatrix, Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn p0() -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 0.01, 0.01))
}

fn is_psd_symmetric(p: &Matrix4<f64>) -> bool {
    (p - p.transpose()).abs().max() <= 1e-10 * p.abs().max().max(1.0)
        && p.symmetric_eigen().eigenvalues.iter().all(|&l| l >= -1e-9)
}

// ----------------------------------------------------------------------------
// Prediction
// ----------------------------------------------------------------------------

#[test]
fn prediction_adds_process_noise_exactly() {
    let model = MotionModel::new(3.2, 1e-4, 2e-4);
    let t = Track::new(0, TargetState::new(25.0, 6.0, -0.4, -0.2), p0(), 0.9);
    let p = ekf_predict(&t, &model);
    let f = model.transition();
    assert_relative_eq!(
        p.cov - f * t.cov * f.transpose(),
        model.process_noise(),
        epsilon = 1e-15
    );
    assert_eq!(p.mean, propagate(&t.mean, 3.2, None));
}

#[test]
fn stationary_prediction_keeps_mean_and_grows_covariance() {
    let model = MotionModel::new(3.2, 1e-4, 1e-4);
    let mut t = Track::new(0, TargetState::new(5.0, 5.0, 0.0, 0.0), p0(), 1.0);
    for _ in 0..100 {
        let next = ekf_predict(&t, &model);
        assert_eq!(next.mean, t.mean);
        assert!(next.cov.trace() > t.cov.trace());
        t = next;
    }
}

// ----------------------------------------------------------------------------
// Update
// ----------------------------------------------------------------------------

#[test]
fn linear_update_matches_classical_kalman() {
    let mut rng = RngStreams::new(1).stream("kf", 0);
    for _ in 0..50 {
        let a = Matrix4::from_fn(|_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let p = a * a.transpose() + Matrix4::identity() * 0.1;
        let h = Matrix2x4::from_fn(|_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let r = Matrix2::new(0.5, 0.1, 0.1, 0.3);
        let x = Vector4::from_fn(|_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let nu = Vector2::new(0.3, -0.2);
        let (m, c) = kalman_update(&x, &p, &nu, &h, &r).unwrap();
        let s = h * p * h.transpose() + r;
        let k = p * h.transpose() * s.try_inverse().unwrap();
        assert_relative_eq!(m, x + k * nu, epsilon = 1e-12);
        assert_relative_eq!(c, p - k * s * k.transpose(), epsilon = 1e-10);
    }
}

#[test]
fn uninformative_measurement_leaves_prediction() {
    let tx = Position::new(0.0, 10.0);
    let rx = Position::new(10.0, -5.0);
    let x = TargetState::new(20.0, 5.0, -0.3, 0.1);
    let truth = TargetState::new(20.5, 4.5, -0.31, 0.12);
    let z = predicted_measurement(&tx, &rx, &truth).unwrap();
    let omega = Matrix2::new(1.0, 0.0, 0.0, 1e-2) * 1e6;
    let (m, c) = ekf_update(&x, &p0(), &z, &tx, &rx, &omega).unwrap();
    assert!((m - x).norm() <= 1e-3 * x.norm());
    assert!((c - p0()).norm() <= 1e-3 * p0().norm());
}

#[test]
fn singular_innovation_covariance_is_an_error() {
    let h = Matrix2x4::zeros();
    let r = Matrix2::zeros();
    assert!(kalman_update(&Vector4::zeros(), &p0(), &Vector2::zeros(), &h, &r).is_err());
}

#[test]
fn iterated_update_with_one_iteration_is_the_ekf() {
    let tx = Position::new(0.0, 10.0);
    let rx = Position::new(10.0, -5.0);
    let x = TargetState::new(20.0, 5.0, -0.3, 0.1);
    let z = Vector2::new(40.0, 0.1);
    let omega = Matrix2::new(0.5, 0.0, 0.0, 1e-4);
    let a = ekf_update(&x, &p0(), &z, &tx, &rx, &omega).unwrap();
    let b = iekf_update(&x, &p0(), &z, &tx, &rx, &omega, 1).unwrap();
    assert_eq!(a, b);
}

// ----------------------------------------------------------------------------
// Fusion and existence
// ----------------------------------------------------------------------------

#[test]
fn fusion_matches_sampled_mixture_moments() {
    let x1 = TargetState::new(1.0, 2.0, 0.1, -0.1);
    let x2 = TargetState::new(2.0, 1.0, -0.2, 0.3);
    let p1 = Matrix4::from_diagonal(&Vector4::new(0.5, 0.3, 0.02, 0.01));
    let mut p2 = Matrix4::from_diagonal(&Vector4::new(0.2, 0.6, 0.01, 0.03));
    p2[(0, 1)] = 0.1;
    p2[(1, 0)] = 0.1;
    let (w1, w2) = (0.3, 0.7);
    let (mean, cov) = fuse_jpda(&[(w1, x1, p1), (w2, x2, p2)]).unwrap();

    let mut rng = RngStreams::new(2).stream("mix", 0);
    let n = 1_000_000;
    let mut sum = Vector4::zeros();
    let mut outer = Matrix4::zeros();
    for _ in 0..n {
        let s = if rand::Rng::gen::<f64>(&mut rng) < w1 {
            x1 + gaussian4(&p1, &mut rng)
        } else {
            x2 + gaussian4(&p2, &mut rng)
        };
        sum += s;
        outer += s * s.transpose();
    }
    let m = sum / n as f64;
    let c = outer / n as f64 - m * m.transpose();
    assert!((m - mean).norm() <= 0.01 * mean.norm(), "{m} vs {mean}");
    assert!((c - cov).norm() <= 0.01 * cov.norm(), "{c} vs {cov}");
}

#[test]
fn fusion_is_permutation_invariant() {
    let a = (0.2, TargetState::new(1.0, 0.0, 0.0, 0.0), p0());
    let b = (0.5, TargetState::new(0.0, 1.0, 0.1, 0.0), p0() * 2.0);
    let c = (0.3, TargetState::new(2.0, 2.0, 0.0, 0.1), p0() * 0.5);
    let (m1, p1) = fuse_jpda(&[a, b, c]).unwrap();
    let (m2, p2) = fuse_jpda(&[c, a, b]).unwrap();
    assert_relative_eq!(m1, m2, epsilon = 1e-14);
    assert_relative_eq!(p1, p2, epsilon = 1e-14);
}

#[test]
fn existence_is_order_invariant() {
    let e = [0.1, 0.7, 0.35, 0.9];
    let mut r = e;
    r.reverse();
    assert_relative_eq!(
        track_existence(&e).unwrap(),
        track_existence(&r).unwrap(),
        epsilon = 1e-15
    );
    assert!(track_existence(&[1.2]).is_err());
}

// ----------------------------------------------------------------------------
// Tracker loop
// ----------------------------------------------------------------------------

fn noiseless_scans(truth: &[TargetState], geo: &RadarGeometry) -> Vec<ChannelScan> {
    let mut out = Vec::new();
    for (m, tx) in geo.tx.iter().enumerate() {
        for (n, rx) in geo.rx.iter().enumerate() {
            out.push(ChannelScan {
                tx: m,
                rx: n,
                z: truth
                    .iter()
                    .map(|x| predicted_measurement(tx, rx, x).unwrap())
                    .collect(),
                origin: (0..truth.len()).map(Some).collect(),
            });
        }
    }
    out
}

#[test]
fn noiseless_single_target_is_tracked_exactly() {
    let geo = RadarGeometry::circular();
    let cfg = TrackerConfig::reference(&geo);
    let x0 = reference_targets()[0];
    let dt = cfg.motion.dt;
    let mut x = x0;
    let mut truth = Vec::new();
    let mut scans = Vec::new();
    for _ in 0..50 {
        x = propagate(&x, dt, None);
        truth.push(x);
        scans.push(noiseless_scans(&[x], &geo));
    }
    let out = run_tracker(vec![Track::new(0, x0, p0(), 0.9)], &scans, &geo, &cfg).unwrap();
    let t = &out[0];
    assert!(t.alive);
    assert_eq!(t.history.len(), 50);
    let mse: f64 = t
        .history
        .iter()
        .zip(&truth)
        .map(|(h, x)| (h.mean[0] - x[0]).powi(2) + (h.mean[1] - x[1]).powi(2))
        .sum::<f64>()
        / 50.0;
    assert!(mse.sqrt() < 1e-6, "rmse {}", mse.sqrt());
}

#[test]
fn track_is_dropped_after_consecutive_misses() {
    let geo = RadarGeometry::circular();
    let cfg = TrackerConfig::reference(&geo);
    let empty: Vec<ChannelScan> = noiseless_scans(&[], &geo);
    let scans = vec![empty; 5];
    let out = run_tracker(
        vec![Track::new(0, reference_targets()[0], p0(), 0.9)],
        &scans,
        &geo,
        &cfg,
    )
    .unwrap();
    assert!(!out[0].alive);
    assert_eq!(out[0].history.len(), cfg.miss_limit);
    assert!(out[0].existence < 0.9);
}

#[test]
fn fusion_modes_agree_on_noiseless_data() {
    let geo = RadarGeometry::circular();
    let x0 = reference_targets()[1];
    let x1 = propagate(&x0, 3.2, None);
    let scans = vec![noiseless_scans(&[x1], &geo)];
    for fusion in [
        FusionMode::Batch,
        FusionMode::Sequential,
        FusionMode::Parallel,
    ] {
        let cfg = TrackerConfig {
            fusion,
            ..TrackerConfig::reference(&geo)
        };
        let out = run_tracker(vec![Track::new(0, x0, p0(), 0.9)], &scans, &geo, &cfg).unwrap();
        let e = out[0].mean - x1;
        assert!(e.norm() < 1e-6, "{fusion:?}: {e}");
        assert!(is_psd_symmetric(&out[0].cov));
    }
}

/// The echoes of the three reference targets arrive at each receiver in
/// range order; association against the predicted measurements relabels
/// them so every receiver sees each target exactly once.
#[test]
fn echo_ordering_is_resolved_per_receiver() {
    let geo = RadarGeometry::circular();
    let cfg = TrackerConfig::reference(&geo);
    let targets = reference_targets();
    // Covariance of an established track.
    let tracked = Matrix4::from_diagonal(&Vector4::new(1e-2, 1e-2, 1e-4, 1e-4));
    let mut rng = RngStreams::new(3).stream("echo", 0);
    for scan in noiseless_scans(&targets, &geo) {
        let (tx, rx) = (&geo.tx[scan.tx], &geo.rx[scan.rx]);
        let omega = cfg.noise.get(scan.tx, scan.rx);
        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.shuffle(&mut rng);
        let z: Vec<Vector2<f64>> = order
            .iter()
            .map(|&i| scan.z[i] + Vector2::new(100.0, 2e-6))
            .collect();
        let l = DMatrix::from_fn(targets.len(), targets.len(), |j, i| {
            let (s, _) = innovation_covariance(tx, rx, &targets[i], &tracked, omega).unwrap();
            let d = z[j] - predicted_measurement(tx, rx, &targets[i]).unwrap();
            (-0.5 * d.dot(&(s.try_inverse().unwrap() * d))).exp() / s.determinant().sqrt()
        });
        let res = association_probabilities(&LikelihoodMatrix::new(l, scan.tx, scan.rx).unwrap())
            .unwrap();
        let mut labels: Vec<usize> = res.assignment.clone();
        for (i, &j) in res.assignment.iter().enumerate() {
            assert_eq!(order[j], i, "channel ({}, {})", scan.tx, scan.rx);
        }
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), targets.len());
    }
}

#[test]
fn simulated_scans_carry_origins_and_clutter() {
    let geo = RadarGeometry::circular();
    let cfg = TrackerConfig {
        p_fa: 0.5,
        ..TrackerConfig::reference(&geo)
    };
    let mut rng = RngStreams::new(4).stream("scan", 0);
    let scans = simulate_scans(&reference_targets(), &geo, &cfg, &mut rng).unwrap();
    assert_eq!(scans.len(), 16);
    let clutter: usize = scans
        .iter()
        .map(|s| s.origin.iter().filter(|o| o.is_none()).count())
        .sum();
    assert!(clutter > 0);
    for s in &scans {
        assert_eq!(s.z.len(), s.origin.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn updates_keep_covariance_psd(
        seed in 0u64..10_000,
        dx in -2.0f64..2.0,
        dy in -2.0f64..2.0,
        iterations in 1usize..6,
    ) {
        let geo = RadarGeometry::circular();
        let cfg = TrackerConfig::reference(&geo);
        let x = reference_targets()[(seed % 3) as usize];
        let truth = x + Vector4::new(dx, dy, 0.01 * dy, -0.01 * dx);
        let mut rng = RngStreams::new(seed).stream("psd", 0);
        let tx = &geo.tx[(seed % 4) as usize];
        let rx = &geo.rx[((seed / 4) % 4) as usize];
        let omega = cfg.noise.get(0, 0);
        let z = predicted_measurement(tx, rx, &truth).unwrap() + Vector2::new(
            rand::Rng::gen_range(&mut rng, -1000.0..1000.0),
            rand::Rng::gen_range(&mut rng, -1e-5..1e-5),
        );
        let (_, c) = iekf_update(&x, &p0(), &z, tx, rx, omega, iterations).unwrap();
        prop_assert!(is_psd_symmetric(&c));
        let pred = ekf_predict(&Track::new(0, x, c, 1.0), &cfg.motion);
        prop_assert!(is_psd_symmetric(&pred.cov));
    }
}
