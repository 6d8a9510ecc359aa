//! Experiment orchestration and result files.
//!
//! Every experiment is a pure function of its configuration: trial `t`
//! draws from RNG streams keyed by the master seed, the stream name and
//! `t`, trials run in parallel and results are collected in trial order.
//! Files are CSV with a header row; reals carry 17 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::associate::{
    association_probabilities, rcs_weights, LikelihoodMatrix, MeasurementModel,
};
use crate::channel::{draw_comm_channels, draw_radar_paths, RngStreams};
use crate::codesign::{
    bcd_codesign, initial_design, is_feasible, BcdOptions, CodesignProblem, DualOptions, StepRule,
    TermWeights,
};
use crate::config::{
    AssociationSpec, CodesignSpec, Experiment, ExperimentConfig, GeometrySpec, RadarParams,
    SweepAxis, SweepSpec, TrackingSpec,
};
use crate::error::{Error, Result};
use crate::geometry::{
    observe, MotionModel, Position, RadarGeometry, Scenario, TargetState, SPEED_OF_LIGHT_KM_S,
};
use crate::metrics::{correct_association_probability, summarize_convergence, AssociationScore};
use crate::track::{
    gaussian4, run_tracker, simulate_scans, simulate_truth, triangulation_fix, MeasurementDomain,
    MeasurementNoise, Track, TrackerConfig,
};

/// Bounds of the 95% two-sided chi-square(4) interval used for NEES.
pub const NEES_BAND_4: (f64, f64) = (0.484_418_557_550_5, 11.143_286_781_877_8);

// ----------------------------------------------------------------------------
// Tables
// ----------------------------------------------------------------------------

/// One CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Real number with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

/// Write one table as CSV.
pub fn emit_table(table: &Table, path: &Path) -> Result<()> {
    let io = |e: &dyn std::fmt::Display| Error::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    w.write_record(&table.header).map_err(|e| io(&e))?;
    for r in &table.rows {
        if r.len() != table.header.len() {
            return Err(Error::Dimension(format!(
                "row width {} in table {}",
                r.len(),
                table.name
            )));
        }
        w.write_record(r).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

/// Tables produced by one run, plus the failed trials if any.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub failures: Vec<(usize, String)>,
}

/// Run the configured experiment without touching the file system.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let streams = RngStreams::new(cfg.seed);
    match &cfg.experiment {
        Experiment::CodesignConvergence(s) => codesign_convergence(s, cfg.trials, &streams),
        Experiment::SystemSweep(s) => system_sweep(s, cfg.trials, &streams),
        Experiment::AssociationPc(s) => association_pc(s, cfg.trials, &streams),
        Experiment::Tracking(s) => tracking(s, cfg.trials, &streams),
    }
}

/// Run and write `config.json` plus one CSV per table into `dir`. Failed
/// trials are listed in `FAILED.txt` after the partial tables are written.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let out = run_experiment(cfg)?;
    let mut files = Vec::new();
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, cfg.to_json() + "\n")
        .map_err(|e| Error::Io(format!("{}: {e}", cfg_path.display())))?;
    files.push(cfg_path);
    for t in &out.tables {
        let p = dir.join(format!("{}.csv", t.name));
        emit_table(t, &p)?;
        files.push(p);
    }
    let marker = dir.join("FAILED.txt");
    if out.failures.is_empty() {
        if marker.exists() {
            fs::remove_file(&marker)
                .map_err(|e| Error::Io(format!("{}: {e}", marker.display())))?;
        }
        Ok(files)
    } else {
        let text: String = out
            .failures
            .iter()
            .map(|(t, e)| format!("trial {t}: {e}\n"))
            .collect();
        fs::write(&marker, &text).map_err(|e| Error::Io(format!("{}: {e}", marker.display())))?;
        Err(Error::Numerical(format!(
            "{} of {} trials failed; see {}",
            out.failures.len(),
            cfg.trials,
            marker.display()
        )))
    }
}

/// Run trials in parallel; keep successes in trial order and collect the
/// failures.
fn par_trials<T: Send>(
    trials: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> (Vec<(usize, T)>, Vec<(usize, String)>) {
    let results: Vec<(usize, Result<T>)> = (0..trials).into_par_iter().map(|t| (t, f(t))).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (t, r) in results {
        match r {
            Ok(v) => ok.push((t, v)),
            Err(e) => failed.push((t, e.to_string())),
        }
    }
    (ok, failed)
}

// ----------------------------------------------------------------------------
// Co-design experiments
// ----------------------------------------------------------------------------

/// Draw the channels of one trial on a scenario.
pub fn codesign_problem(
    sc: Scenario,
    streams: &RngStreams,
    trial: usize,
) -> Result<CodesignProblem> {
    let t = trial as u64;
    let radar = draw_radar_paths(
        &sc.radar_tx,
        &sc.radar_rx,
        &sc.targets,
        sc.carrier_hz,
        &mut streams.stream("radar", t),
    )?;
    let comm = draw_comm_channels(&sc, &mut streams.stream("comm", t))?;
    CodesignProblem::new(sc, radar, comm, TermWeights::default())
}

fn rule_name(r: StepRule) -> &'static str {
    match r {
        StepRule::BarzilaiBorwein => "barzilai-borwein",
        StepRule::Polyak => "polyak",
    }
}

/// Result of one optimiser run.
#[derive(Debug, Clone, PartialEq)]
pub struct CodesignRun {
    pub rule: StepRule,
    pub cwsr: [f64; 3],
    pub baseline: [f64; 3],
    pub gamma_min: Vec<f64>,
    pub gamma: Vec<f64>,
    pub cwsr_trace: Vec<f64>,
    pub inner_iterations: usize,
    pub feasible: bool,
}

/// Optimise one trial with one step rule, starting from the random-code
/// DCP baseline.
pub fn codesign_run(
    problem: &CodesignProblem,
    streams: &RngStreams,
    trial: usize,
    rule: StepRule,
    max_outer: usize,
    tol: f64,
) -> Result<CodesignRun> {
    let init = initial_design(problem, &mut streams.stream("init", trial as u64))?;
    let base = problem.cwsr(&init)?;
    let opts = BcdOptions {
        max_outer,
        tol,
        window: 1,
        dual: DualOptions {
            rule,
            ..DualOptions::default()
        },
    };
    let (design, trace) = bcd_codesign(problem, init, &opts)?;
    let c = problem.cwsr(&design)?;
    Ok(CodesignRun {
        rule,
        cwsr: [c.radar, c.ul, c.dl],
        baseline: [base.radar, base.ul, base.dl],
        gamma_min: trace.records.iter().map(|r| r.gamma_min).collect(),
        gamma: trace.records.iter().map(|r| r.gamma).collect(),
        cwsr_trace: trace.records.iter().map(|r| r.cwsr).collect(),
        inner_iterations: trace
            .records
            .iter()
            .map(|r| r.inner_iterations.iter().sum::<usize>())
            .sum(),
        feasible: is_feasible(problem, &design, 1e-9),
    })
}

fn codesign_convergence(
    spec: &CodesignSpec,
    trials: usize,
    streams: &RngStreams,
) -> Result<RunOutput> {
    let (ok, failures) = par_trials(trials, |t| {
        let p = codesign_problem(Scenario::compact_cell(spec.targets), streams, t)?;
        spec.rules
            .iter()
            .map(|&r| codesign_run(&p, streams, t, r, spec.max_outer, spec.tol))
            .collect::<Result<Vec<_>>>()
    });
    let mut trace = Table::new(
        "codesign_trace",
        &["trial", "rule", "iteration", "cwsr", "gamma", "gamma_min"],
    );
    let mut summary = Table::new(
        "codesign_summary",
        &[
            "trial",
            "rule",
            "iterations_to_tol",
            "outer_iterations",
            "inner_iterations",
            "final_gamma_min",
            "monotone",
            "cwsr",
            "baseline_cwsr",
            "feasible",
        ],
    );
    for (t, runs) in &ok {
        for r in runs {
            for k in 0..r.gamma.len() {
                trace.rows.push(vec![
                    t.to_string(),
                    rule_name(r.rule).into(),
                    (k + 1).to_string(),
                    fmt_real(r.cwsr_trace[k]),
                    fmt_real(r.gamma[k]),
                    fmt_real(r.gamma_min[k]),
                ]);
            }
            let s = summarize_convergence(&r.gamma_min, spec.tol)?;
            summary.rows.push(vec![
                t.to_string(),
                rule_name(r.rule).into(),
                fmt_opt(s.iterations_to_tolerance),
                r.gamma_min.len().to_string(),
                r.inner_iterations.to_string(),
                fmt_real(s.final_value),
                s.monotone.to_string(),
                fmt_real(r.cwsr.iter().sum()),
                fmt_real(r.baseline.iter().sum()),
                r.feasible.to_string(),
            ]);
        }
    }
    Ok(RunOutput {
        tables: vec![trace, summary],
        failures,
    })
}

/// Scenario at one point of a sweep.
pub fn sweep_scenario(spec: &SweepSpec, value: f64) -> Scenario {
    let targets = if spec.axis == SweepAxis::Targets {
        value as usize
    } else {
        spec.targets
    };
    let mut sc = Scenario::compact_cell(targets);
    match spec.axis {
        SweepAxis::Snr => {
            let v = 10f64.powf(-value / 10.0);
            sc.noise_radar = v;
            sc.noise_ul = v;
            sc.noise_dl = v;
        }
        SweepAxis::Fd => sc.si_attenuation = 10f64.powf(value / 10.0),
        SweepAxis::Targets => {}
    }
    sc
}

fn system_sweep(spec: &SweepSpec, trials: usize, streams: &RngStreams) -> Result<RunOutput> {
    let axis = match spec.axis {
        SweepAxis::Snr => "snr",
        SweepAxis::Fd => "fd",
        SweepAxis::Targets => "targets",
    };
    let (ok, failures) = par_trials(trials, |t| {
        spec.values
            .iter()
            .map(|&v| {
                let p = codesign_problem(sweep_scenario(spec, v), streams, t)?;
                codesign_run(
                    &p,
                    streams,
                    t,
                    StepRule::BarzilaiBorwein,
                    spec.max_outer,
                    spec.tol,
                )
            })
            .collect::<Result<Vec<_>>>()
    });
    let cols = [
        "radar_mi",
        "ul_rate",
        "dl_rate",
        "cwsr",
        "baseline_radar_mi",
        "baseline_ul_rate",
        "baseline_dl_rate",
        "baseline_cwsr",
    ];
    let mut header = vec!["trial", "axis", "value"];
    header.extend(cols);
    let mut rows = Table::new("sweep", &header);
    let mut sums = vec![[0.0; 8]; spec.values.len()];
    for (t, runs) in &ok {
        for (k, (r, v)) in runs.iter().zip(&spec.values).enumerate() {
            let vals = [
                r.cwsr[0],
                r.cwsr[1],
                r.cwsr[2],
                r.cwsr.iter().sum(),
                r.baseline[0],
                r.baseline[1],
                r.baseline[2],
                r.baseline.iter().sum(),
            ];
            let mut row = vec![t.to_string(), axis.into(), fmt_real(*v)];
            row.extend(vals.iter().map(|x| fmt_real(*x)));
            rows.rows.push(row);
            for (s, x) in sums[k].iter_mut().zip(vals) {
                *s += x;
            }
        }
    }
    let mut header = vec!["axis", "value", "trials"];
    header.extend(cols);
    let mut summary = Table::new("sweep_summary", &header);
    if !ok.is_empty() {
        for (v, s) in spec.values.iter().zip(&sums) {
            let mut row = vec![axis.into(), fmt_real(*v), ok.len().to_string()];
            row.extend(s.iter().map(|x| fmt_real(x / ok.len() as f64)));
            summary.rows.push(row);
        }
    }
    Ok(RunOutput {
        tables: vec![rows, summary],
        failures,
    })
}

// ----------------------------------------------------------------------------
// Association experiment
// ----------------------------------------------------------------------------

/// Targets uniform in a disc with uniform speed in `[0, max]` m/s and
/// uniform heading.
pub fn random_targets<R: Rng + ?Sized>(
    n: usize,
    radius_km: f64,
    max_speed_m_s: f64,
    rng: &mut R,
) -> Vec<TargetState> {
    (0..n)
        .map(|_| {
            let r = radius_km * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            let v = max_speed_m_s * 1e-3 * rng.gen::<f64>();
            let h = rng.gen::<f64>() * std::f64::consts::TAU;
            TargetState::new(r * a.cos(), r * a.sin(), v * h.cos(), v * h.sin())
        })
        .collect()
}

/// Noise-free (delay bin, Doppler bin) of a target on one channel. Doppler
/// is folded into `[0, K)`: the slow-time samples only resolve `f T_r`
/// modulo one.
pub fn bin_measurement(
    tx: &Position,
    rx: &Position,
    s: &TargetState,
    radar: &RadarParams,
) -> Result<Vector2<f64>> {
    let o = observe(tx, rx, s, radar.wavelength_m())?;
    let k = radar.pulses as f64;
    Ok(Vector2::new(
        o.delay / radar.range_cell_s(),
        (o.doppler * radar.pri_s * k).rem_euclid(k),
    ))
}

/// Association score of one trial on one geometry: every channel returns
/// one noisy measurement per target in shuffled order, the permanent-based
/// marginals pick a measurement for every target, and picks are scored
/// against the true origins.
pub fn association_trial(
    spec: &AssociationSpec,
    geo: &RadarGeometry,
    targets: &[TargetState],
    rng: &mut impl Rng,
) -> Result<AssociationScore> {
    let model = MeasurementModel {
        sigma_t: spec.sigma_bins,
        sigma_p: spec.sigma_bins,
        delta_t: 1.0,
        delta_f: 1.0,
        doppler_period: Some(spec.radar.pulses as f64),
    };
    let k = spec.radar.pulses as f64;
    let mut assigned = Vec::new();
    let mut truth = Vec::new();
    for (m, tx) in geo.tx.iter().enumerate() {
        for (n, rx) in geo.rx.iter().enumerate() {
            let clean: Vec<Vector2<f64>> = targets
                .iter()
                .map(|s| bin_measurement(tx, rx, s, &spec.radar))
                .collect::<Result<_>>()?;
            let gains: Vec<f64> = targets
                .iter()
                .map(|s| {
                    let p = Position::new(s[0], s[1]);
                    let legs = (tx - p).norm() * (rx - p).norm();
                    let e: f64 = Exp1.sample(rng);
                    e / (legs * legs)
                })
                .collect();
            let phi = rcs_weights(&gains, spec.rcs_exponent);
            let mut origin: Vec<usize> = (0..targets.len()).collect();
            origin.shuffle(rng);
            let z: Vec<Vector2<f64>> = origin
                .iter()
                .map(|&t| {
                    let n1: f64 = rand_distr::StandardNormal.sample(rng);
                    let n2: f64 = rand_distr::StandardNormal.sample(rng);
                    let d = clean[t][1] + spec.sigma_bins * n2;
                    Vector2::new(clean[t][0] + spec.sigma_bins * n1, d.rem_euclid(k))
                })
                .collect();
            let lm = LikelihoodMatrix::from_mixture(&z, &clean, &phi, &model, m, n)?;
            let res = association_probabilities(&lm)?;
            for (t, &j) in res.assignment.iter().enumerate() {
                assigned.push(origin[j]);
                truth.push(t);
            }
        }
    }
    correct_association_probability(&assigned, &truth)
}

fn association_pc(
    spec: &AssociationSpec,
    trials: usize,
    streams: &RngStreams,
) -> Result<RunOutput> {
    let geos: Vec<RadarGeometry> = spec.geometries.iter().map(GeometrySpec::geometry).collect();
    // Targets and noise depend only on (target count, trial), so every
    // geometry sees the same draws.
    let (ok, failures) = par_trials(trials, |t| {
        let mut out = Vec::new();
        for &n in &spec.target_counts {
            let key = (n as u64) << 32 | t as u64;
            let targets = random_targets(
                n,
                spec.disc_radius_km,
                spec.max_speed_m_s,
                &mut streams.stream("pc-targets", key),
            );
            for g in &geos {
                let mut rng = streams.stream("pc-noise", key);
                out.push((
                    g.name.clone(),
                    n,
                    association_trial(spec, g, &targets, &mut rng)?,
                ));
            }
        }
        Ok(out)
    });
    let mut rows = Table::new("association", &["trial", "geometry", "n_targets", "p_c"]);
    let mut pooled: Vec<(String, usize, usize, usize)> = Vec::new();
    for (t, scores) in &ok {
        for (g, n, s) in scores {
            rows.rows.push(vec![
                t.to_string(),
                g.clone(),
                n.to_string(),
                fmt_real(s.p_c),
            ]);
            match pooled.iter_mut().find(|p| &p.0 == g && p.1 == *n) {
                Some(p) => {
                    p.2 += s.correct;
                    p.3 += s.total;
                }
                None => pooled.push((g.clone(), *n, s.correct, s.total)),
            }
        }
    }
    let mut summary = Table::new(
        "association_summary",
        &["geometry", "n_targets", "trials", "correct", "total", "p_c"],
    );
    for (g, n, c, d) in pooled {
        summary.rows.push(vec![
            g,
            n.to_string(),
            ok.len().to_string(),
            c.to_string(),
            d.to_string(),
            fmt_real(c as f64 / d as f64),
        ]);
    }
    Ok(RunOutput {
        tables: vec![rows, summary],
        failures,
    })
}

// ----------------------------------------------------------------------------
// Tracking experiment
// ----------------------------------------------------------------------------

/// Tracker settings for a tracking specification.
pub fn tracker_config(spec: &TrackingSpec, geo: &RadarGeometry) -> TrackerConfig {
    let r = &spec.radar;
    let omega = match spec.measurement_std {
        Some([sr, srr]) => Matrix2::new(sr * sr, 0.0, 0.0, srr * srr),
        None => MeasurementNoise::from_resolution(
            r.range_cell_s(),
            r.doppler_bin_hz(),
            r.wavelength_m(),
        ),
    };
    TrackerConfig {
        motion: MotionModel::new(
            r.pulses as f64 * r.pri_s,
            spec.process_noise,
            spec.process_noise,
        ),
        noise: MeasurementNoise::uniform(omega, geo.tx.len(), geo.rx.len()),
        p_d: spec.p_d,
        p_g: spec.p_g,
        p_fa: spec.p_fa,
        bins: r.range_cells,
        domain: MeasurementDomain {
            range_km: (0.0, SPEED_OF_LIGHT_KM_S * r.pri_s),
            range_rate_km_s: (-2.0, 2.0),
        },
        survival: spec.survival,
        miss_limit: spec.miss_limit,
        fusion: spec.fusion,
        event_limit: crate::associate::DEFAULT_EVENT_LIMIT,
        ekf_iterations: spec.gn_iterations,
    }
}

/// Per-CPI record of one target in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingPoint {
    pub cpi: usize,
    pub truth: TargetState,
    /// Tracker estimate and covariance while the track is alive.
    pub estimate: Option<(TargetState, Matrix4<f64>, f64)>,
    /// Range-only single-CPI fix, if one exists.
    pub baseline: Option<Position>,
}

/// One target over one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetOutcome {
    pub target: usize,
    pub points: Vec<TrackingPoint>,
    pub survived: bool,
    pub final_existence: f64,
}

impl TargetOutcome {
    /// Tracker position RMSE over the CPIs with an estimate.
    pub fn rmse(&self) -> f64 {
        let e: Vec<f64> = self
            .points
            .iter()
            .filter_map(|p| {
                p.estimate
                    .map(|(m, _, _)| (m[0] - p.truth[0]).powi(2) + (m[1] - p.truth[1]).powi(2))
            })
            .collect();
        if e.is_empty() {
            f64::INFINITY
        } else {
            (e.iter().sum::<f64>() / e.len() as f64).sqrt()
        }
    }

    /// Baseline position RMSE over the CPIs with a fix; infinite if there
    /// is none.
    pub fn baseline_rmse(&self) -> f64 {
        let e: Vec<f64> = self
            .points
            .iter()
            .filter_map(|p| {
                p.baseline
                    .map(|b| (b - Position::new(p.truth[0], p.truth[1])).norm_squared())
            })
            .collect();
        if e.is_empty() {
            f64::INFINITY
        } else {
            (e.iter().sum::<f64>() / e.len() as f64).sqrt()
        }
    }

    /// Normalised estimation error squared at each CPI with an estimate.
    pub fn nees(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter_map(|p| {
                let (m, c, _) = p.estimate?;
                let e: Vector4<f64> = m - p.truth;
                let inv = c.try_inverse()?;
                Some(e.dot(&(inv * e)))
            })
            .collect()
    }
}

/// Simulate and track one trial.
pub fn tracking_trial(
    spec: &TrackingSpec,
    streams: &RngStreams,
    trial: usize,
) -> Result<Vec<TargetOutcome>> {
    let geo = spec.geometry.geometry();
    let cfg = tracker_config(spec, &geo);
    let t = trial as u64;
    let initial: Vec<TargetState> = spec
        .targets
        .iter()
        .map(|s| TargetState::new(s[0], s[1], s[2], s[3]))
        .collect();
    let truth = simulate_truth(
        &initial,
        &cfg.motion,
        spec.cpis,
        &mut streams.stream("truth", t),
    );
    let mut scan_rng = streams.stream("scans", t);
    let scans = (0..spec.cpis)
        .map(|k| {
            let xs: Vec<TargetState> = truth.iter().map(|tr| tr[k]).collect();
            simulate_scans(&xs, &geo, &cfg, &mut scan_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let (sp, sv) = (spec.init_sigma_pos.powi(2), spec.init_sigma_vel.powi(2));
    let p0 = Matrix4::from_diagonal(&Vector4::new(sp, sp, sv, sv));
    let mut init_rng = streams.stream("init", t);
    let tracks: Vec<Track> = initial
        .iter()
        .enumerate()
        .map(|(i, x)| {
            Track::new(
                i,
                x + gaussian4(&p0, &mut init_rng),
                p0,
                spec.init_existence,
            )
        })
        .collect();
    let out = run_tracker(tracks, &scans, &geo, &cfg)?;
    Ok(out
        .iter()
        .map(|tr| {
            let points = (0..spec.cpis)
                .map(|k| {
                    let x = truth[tr.id][k];
                    let estimate = tr
                        .history
                        .iter()
                        .find(|h| h.cpi == k)
                        .map(|h| (h.mean, h.cov, h.existence));
                    let start = Position::new(x[0], x[1]);
                    let baseline = triangulation_fix(&scans[k], tr.id, &geo, &start, 50).ok();
                    TrackingPoint {
                        cpi: k,
                        truth: x,
                        estimate,
                        baseline,
                    }
                })
                .collect();
            TargetOutcome {
                target: tr.id,
                points,
                survived: tr.alive && tr.history.len() == spec.cpis && tr.existence > 0.5,
                final_existence: tr.existence,
            }
        })
        .collect())
}

fn tracking(spec: &TrackingSpec, trials: usize, streams: &RngStreams) -> Result<RunOutput> {
    let (ok, failures) = par_trials(trials, |t| tracking_trial(spec, streams, t));
    let mut rows = Table::new(
        "tracking",
        &[
            "trial",
            "cpi",
            "target_id",
            "truth_x",
            "truth_y",
            "est_x",
            "est_y",
            "existence",
        ],
    );
    let mut summary = Table::new(
        "tracking_summary",
        &[
            "trial",
            "target_id",
            "survived",
            "final_existence",
            "rmse",
            "baseline_rmse",
            "nees_in_band",
            "nees_count",
        ],
    );
    for (t, targets) in &ok {
        for o in targets {
            for p in &o.points {
                if let Some((m, _, e)) = p.estimate {
                    rows.rows.push(vec![
                        t.to_string(),
                        p.cpi.to_string(),
                        o.target.to_string(),
                        fmt_real(p.truth[0]),
                        fmt_real(p.truth[1]),
                        fmt_real(m[0]),
                        fmt_real(m[1]),
                        fmt_real(e),
                    ]);
                }
            }
            let nees = o.nees();
            let inside = nees
                .iter()
                .filter(|v| **v >= NEES_BAND_4.0 && **v <= NEES_BAND_4.1)
                .count();
            summary.rows.push(vec![
                t.to_string(),
                o.target.to_string(),
                o.survived.to_string(),
                fmt_real(o.final_existence),
                fmt_real(o.rmse()),
                fmt_real(o.baseline_rmse()),
                inside.to_string(),
                nees.len().to_string(),
            ]);
        }
    }
    Ok(RunOutput {
        tables: vec![rows, summary],
        failures,
    })
}
