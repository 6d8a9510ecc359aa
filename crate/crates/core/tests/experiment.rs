use disac::config::*;
use disac::experiment::*;
use std::path::Path;

fn small(name: &str, trials: usize) -> ExperimentConfig {
    let mut cfg = load_config(Path::new(name)).unwrap();
    cfg.trials = trials;
    cfg
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn reals_carry_seventeen_digits() {
    assert_eq!(fmt_real(0.1), "1.0000000000000001e-1");
    assert_eq!(fmt_real(0.1).parse::<f64>().unwrap(), 0.1);
    assert_eq!(fmt_real(f64::INFINITY), "inf");
}

#[test]
fn association_circular_three_targets() {
    let mut cfg = small("association-pc", 50);
    let Experiment::AssociationPc(s) = &mut cfg.experiment else {
        panic!()
    };
    s.geometries.truncate(1);
    s.target_counts = vec![3];
    let dir = tempfile::tempdir().unwrap();
    run_to_dir(&cfg, dir.path()).unwrap();
    let (h, rows) = read_csv(&dir.path().join("association.csv"));
    assert_eq!(h, ["trial", "geometry", "n_targets", "p_c"]);
    assert_eq!(rows.len(), 50);
    let (_, agg) = read_csv(&dir.path().join("association_summary.csv"));
    assert_eq!(agg.len(), 1);
    let p: f64 = agg[0][5].parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
    // Pooled P_c is the mean of per-trial P_c when D is equal across trials.
    let mean: f64 = rows
        .iter()
        .map(|r| r[3].parse::<f64>().unwrap())
        .sum::<f64>()
        / 50.0;
    assert!((mean - p).abs() < 1e-12);
}

#[test]
fn tracking_rows_cover_three_targets() {
    let cfg = small("tracking-circular", 2);
    let out = run_experiment(&cfg).unwrap();
    assert!(out.failures.is_empty());
    let t = &out.tables[0];
    assert_eq!(
        t.header,
        [
            "trial",
            "cpi",
            "target_id",
            "truth_x",
            "truth_y",
            "est_x",
            "est_y",
            "existence"
        ]
    );
    let mut ids: Vec<&str> = t.rows.iter().map(|r| r[2].as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids, ["0", "1", "2"]);
    let close = t
        .rows
        .iter()
        .filter(|r| {
            let f = |i: usize| r[i].parse::<f64>().unwrap();
            (f(3) - f(5)).hypot(f(4) - f(6)) < 10.0
        })
        .count();
    assert!(
        close * 10 >= t.rows.len() * 9,
        "{close} of {}",
        t.rows.len()
    );
}

#[test]
fn codesign_and_sweep_tables() {
    let cfg = small("codesign-convergence", 1);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.tables.len(), 2);
    assert_eq!(out.tables[1].rows.len(), 2);
    let mut sweep = small("system-sweep-fd", 1);
    let Experiment::SystemSweep(s) = &mut sweep.experiment else {
        panic!()
    };
    s.values = vec![-40.0, 0.0];
    let out = run_experiment(&sweep).unwrap();
    assert_eq!(out.tables[0].rows.len(), 2);
    assert_eq!(out.tables[1].rows.len(), 2);
}

#[test]
fn sweep_axes_set_scenario_parameters() {
    let spec = SweepSpec {
        axis: SweepAxis::Snr,
        values: vec![10.0],
        targets: 2,
        max_outer: 5,
        tol: 1e-4,
    };
    let sc = sweep_scenario(&spec, 10.0);
    assert!((sc.noise_radar - 0.1).abs() < 1e-15 && (sc.noise_ul - 0.1).abs() < 1e-15);
    let fd = SweepSpec {
        axis: SweepAxis::Fd,
        ..spec.clone()
    };
    assert!((sweep_scenario(&fd, -20.0).si_attenuation - 0.01).abs() < 1e-15);
    let n = SweepSpec {
        axis: SweepAxis::Targets,
        ..spec
    };
    assert_eq!(sweep_scenario(&n, 3.0).targets.len(), 3);
}

#[test]
fn identical_runs_are_byte_identical() {
    for (name, trials) in [
        ("association-pc", 20),
        ("tracking-circular", 3),
        ("codesign-convergence", 2),
    ] {
        let cfg = small(name, trials);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let fa = run_to_dir(&cfg, a.path()).unwrap();
        let fb = run_to_dir(&cfg, b.path()).unwrap();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(
                std::fs::read(x).unwrap(),
                std::fs::read(y).unwrap(),
                "{}",
                x.display()
            );
        }
    }
}

#[test]
fn different_seeds_differ() {
    let a = small("association-pc", 10);
    let mut b = a.clone();
    b.seed += 1;
    assert_ne!(run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
}

#[test]
fn failed_trials_leave_partial_results_and_marker() {
    // A target parked on a receiver makes its Doppler undefined.
    let mut cfg = small("tracking-circular", 2);
    let Experiment::Tracking(s) = &mut cfg.experiment else {
        panic!()
    };
    s.targets = vec![[-10.0, -10.0, 0.0, 0.0]];
    s.process_noise = 0.0;
    s.init_sigma_pos = 0.0;
    s.init_sigma_vel = 0.0;
    let dir = tempfile::tempdir().unwrap();
    assert!(run_to_dir(&cfg, dir.path()).is_err());
    let marker = std::fs::read_to_string(dir.path().join("FAILED.txt")).unwrap();
    assert_eq!(marker.lines().count(), 2);
    assert!(dir.path().join("tracking.csv").exists());
}
