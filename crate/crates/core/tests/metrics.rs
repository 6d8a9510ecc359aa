use approx::assert_relative_eq;
use disac::channel::RngStreams;
use disac::geometry::Position;
use disac::metrics::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn all_correct_scores_one() {
    let s = correct_association_probability(&[0, 1, 2], &[0, 1, 2]).unwrap();
    assert_eq!((s.correct, s.total, s.p_c), (3, 3, 1.0));
}

#[test]
fn eight_of_ten() {
    let truth: Vec<usize> = (0..10).collect();
    let mut a = truth.clone();
    a.swap(0, 1);
    let s = correct_association_probability(&a, &truth).unwrap();
    assert_eq!(s.correct, 8);
    assert_relative_eq!(s.p_c, 0.8);
}

#[test]
fn empty_or_mismatched_scoring_is_an_error() {
    assert!(correct_association_probability::<usize>(&[], &[]).is_err());
    assert!(correct_association_probability(&[0], &[0, 1]).is_err());
    assert!(AssociationScore::new(3, 2).is_err());
}

#[test]
fn random_permutation_scores_one_over_n() {
    // A uniformly random permutation has one fixed point on average.
    let mut rng = RngStreams::new(1).stream("perm", 0);
    for n in [2usize, 3, 5, 8] {
        let truth: Vec<usize> = (0..n).collect();
        let trials = 20_000;
        let mut a = truth.clone();
        a.shuffle(&mut rng);
        let mut pooled = correct_association_probability(&a, &truth).unwrap();
        for _ in 1..trials {
            a.shuffle(&mut rng);
            pooled = pooled.merge(&correct_association_probability(&a, &truth).unwrap());
        }
        // Fixed-point count has unit variance, so the pooled mean has
        // standard error 1 / (n sqrt(trials)).
        let se = 1.0 / (n as f64 * (trials as f64).sqrt());
        assert!(
            (pooled.p_c - 1.0 / n as f64).abs() < 4.0 * se,
            "n {n}: {}",
            pooled.p_c
        );
    }
}

#[test]
fn rmse_of_exact_estimate_is_zero() {
    let t = vec![vec![Position::new(1.0, 2.0), Position::new(3.0, 4.0)]];
    let r = position_rmse(&t, &t).unwrap();
    assert_eq!(r.overall, 0.0);
    assert_eq!(r.per_cpi, vec![0.0, 0.0]);
}

#[test]
fn rmse_of_constant_offset() {
    let t = vec![vec![Position::new(0.0, 0.0); 4]; 3];
    let e = vec![vec![Position::new(3.0, 4.0); 4]; 3];
    let r = position_rmse(&e, &t).unwrap();
    assert_relative_eq!(r.overall, 5.0);
    for v in r.per_cpi {
        assert_relative_eq!(v, 5.0);
    }
}

#[test]
fn rmse_matches_recomputation() {
    let mut rng = RngStreams::new(2).stream("rmse", 0);
    let (runs, n) = (7, 11);
    let draw = |rng: &mut dyn rand::RngCore| -> Vec<Vec<Position>> {
        (0..runs)
            .map(|_| {
                (0..n)
                    .map(|_| Position::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                    .collect()
            })
            .collect()
    };
    let (e, t) = (draw(&mut rng), draw(&mut rng));
    let r = position_rmse(&e, &t).unwrap();
    let mut total = 0.0;
    for k in 0..n {
        let mut s = 0.0;
        for i in 0..runs {
            let dx = e[i][k].x - t[i][k].x;
            let dy = e[i][k].y - t[i][k].y;
            s += dx * dx + dy * dy;
        }
        total += s;
        assert_relative_eq!(r.per_cpi[k], (s / runs as f64).sqrt(), max_relative = 1e-14);
    }
    assert_relative_eq!(
        r.overall,
        (total / (runs * n) as f64).sqrt(),
        max_relative = 1e-14
    );
}

#[test]
fn rmse_rejects_misaligned_input() {
    let a = vec![vec![Position::zeros(); 3]];
    let b = vec![vec![Position::zeros(); 2]];
    assert!(position_rmse(&a, &b).is_err());
    assert!(position_rmse(&a, &[a[0].clone(), a[0].clone()]).is_err());
    assert!(position_rmse(&[], &[]).is_err());
}

#[test]
fn constant_trace_converges_at_one() {
    let s = summarize_convergence(&[2.0, 2.0, 2.0], 1e-4).unwrap();
    assert_eq!(s.iterations_to_tolerance, Some(1));
    assert!(s.monotone);
    assert_eq!(s.final_value, 2.0);
}

#[test]
fn decreasing_trace_is_monotone() {
    let t: Vec<f64> = (0..20).map(|k| 1.0 + 0.5f64.powi(k)).collect();
    let s = summarize_convergence(&t, 1e-4).unwrap();
    assert!(s.monotone);
    // |v_k - v_{k-1}| = 2^-k against v_{k-1} = 1 + 2^-(k-1).
    let expected =
        (1..20).find(|&k| 0.5f64.powi(k as i32) <= 1e-4 * (1.0 + 0.5f64.powi(k as i32 - 1)));
    assert_eq!(s.iterations_to_tolerance, expected);
}

#[test]
fn noisy_trace_first_index_below_tolerance() {
    let t = [10.0, 8.0, 8.5, 8.4999, 7.0, 6.99999];
    let s = summarize_convergence(&t, 1e-3).unwrap();
    assert_eq!(s.iterations_to_tolerance, Some(3));
    assert!(!s.monotone);
    assert!(summarize_convergence(&[], 1e-3).is_err());
}

proptest! {
    #[test]
    fn score_is_invariant_to_relabeling(
        labels in proptest::collection::vec(0usize..5, 1..30),
        noise in proptest::collection::vec(0usize..5, 30),
        perm_seed in 0u64..1000,
    ) {
        let assigned: Vec<usize> = labels.iter().zip(&noise).map(|(l, n)| if n % 2 == 0 { *l } else { *n }).collect();
        let mut map: Vec<usize> = (0..5).collect();
        map.shuffle(&mut RngStreams::new(perm_seed).stream("relabel", 0));
        let a2: Vec<usize> = assigned.iter().map(|&x| map[x]).collect();
        let t2: Vec<usize> = labels.iter().map(|&x| map[x]).collect();
        prop_assert_eq!(
            correct_association_probability(&assigned, &labels).unwrap(),
            correct_association_probability(&a2, &t2).unwrap()
        );
    }
}
