//! Extended Kalman tracking with JPDA association across radar channels.
//!
//! Each target keeps a single Gaussian state `[x, y, vx, vy]`. Measurements
//! are handled in bistatic range (km) and range rate (km/s), which keeps the
//! innovation covariance well scaled; [`MeasurementNoise::from_resolution`]
//! converts delay and Doppler resolutions into these units.
//!
//! Per CPI the tracker predicts every track, then visits the `M_r N_r`
//! channels. On channel `(m_r, n_r)` the live tracks form the supertargets
//! `(n_t, m_r)`; they are gated against the common prediction, their
//! feasible joint events enumerated and marginalised. The marginals then
//! weight the measurement update, by default a single Gauss-Newton update
//! over all channels (see [`FusionMode`]). Existence is updated per channel
//! and averaged.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::associate::{enumerate_fje, gate, gate_threshold, marginalize, JointEventInput};
use crate::error::{Error, Result};
use crate::geometry::{
    bistatic_range, range_jacobian, range_rate, MotionModel, Position, RadarGeometry, TargetState,
    SPEED_OF_LIGHT_KM_S,
};

/// Bistatic range and range rate of a state.
pub fn predicted_measurement(
    tx: &Position,
    rx: &Position,
    x: &TargetState,
) -> Result<Vector2<f64>> {
    Ok(Vector2::new(
        bistatic_range(tx, rx, x),
        range_rate(tx, rx, x)?,
    ))
}

/// Convert a (delay s, Doppler Hz) pair into (range km, range rate km/s).
pub fn to_range_units(delay: f64, doppler: f64, wavelength_m: f64) -> Vector2<f64> {
    Vector2::new(delay * SPEED_OF_LIGHT_KM_S, doppler * wavelength_m * 1e-3)
}

// ----------------------------------------------------------------------------
// Tracks
// ----------------------------------------------------------------------------

/// Snapshot of a track after one CPI.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub cpi: usize,
    pub mean: TargetState,
    pub cov: Matrix4<f64>,
    pub existence: f64,
}

/// A single-Gaussian target track.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: usize,
    pub mean: TargetState,
    pub cov: Matrix4<f64>,
    pub existence: f64,
    pub history: Vec<TrackPoint>,
    /// Consecutive CPIs without any gated measurement.
    pub misses: usize,
    pub alive: bool,
}

impl Track {
    pub fn new(id: usize, mean: TargetState, cov: Matrix4<f64>, existence: f64) -> Self {
        Self {
            id,
            mean,
            cov,
            existence,
            history: Vec::new(),
            misses: 0,
            alive: true,
        }
    }

    fn record(&mut self, cpi: usize) {
        self.history.push(TrackPoint {
            cpi,
            mean: self.mean,
            cov: self.cov,
            existence: self.existence,
        });
    }
}

/// Measurement noise per channel in (range, range-rate) units.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementNoise {
    /// Indexed by `tx * n_rx + rx`.
    pub omega: Vec<Matrix2<f64>>,
    pub n_rx: usize,
}

impl MeasurementNoise {
    pub fn uniform(omega: Matrix2<f64>, n_tx: usize, n_rx: usize) -> Self {
        Self {
            omega: vec![omega; n_tx * n_rx],
            n_rx,
        }
    }

    /// `diag((c sigma_t)^2, (lambda sigma_p)^2)` for delay spread
    /// `sigma_t` (s) and Doppler spread `sigma_p` (Hz).
    pub fn from_resolution(sigma_t: f64, sigma_p: f64, wavelength_m: f64) -> Matrix2<f64> {
        let sr = SPEED_OF_LIGHT_KM_S * sigma_t;
        let srr = wavelength_m * 1e-3 * sigma_p;
        Matrix2::new(sr * sr, 0.0, 0.0, srr * srr)
    }

    pub fn get(&self, tx: usize, rx: usize) -> &Matrix2<f64> {
        &self.omega[tx * self.n_rx + rx]
    }
}

// ----------------------------------------------------------------------------
// EKF steps
// ----------------------------------------------------------------------------

/// `x = F x`, `P = F P F^T + Q`.
pub fn ekf_predict(track: &Track, model: &MotionModel) -> Track {
    let f = model.transition();
    let mut out = track.clone();
    out.mean = f * track.mean;
    out.cov = symmetrize(&(f * track.cov * f.transpose() + model.process_noise()));
    out
}

fn symmetrize(p: &Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

/// Kalman update with a given linearisation, Joseph form.
pub fn kalman_update(
    mean: &Vector4<f64>,
    cov: &Matrix4<f64>,
    innovation: &Vector2<f64>,
    h: &Matrix2x4<f64>,
    r: &Matrix2<f64>,
) -> Result<(Vector4<f64>, Matrix4<f64>)> {
    let s = h * cov * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    let k = cov * h.transpose() * s_inv;
    let ikh = Matrix4::identity() - k * h;
    let p = ikh * cov * ikh.transpose() + k * r * k.transpose();
    Ok((mean + k * innovation, symmetrize(&p)))
}

/// Innovation covariance `S = B P B^T + Omega` and Jacobian `B`.
pub fn innovation_covariance(
    tx: &Position,
    rx: &Position,
    mean: &TargetState,
    cov: &Matrix4<f64>,
    omega: &Matrix2<f64>,
) -> Result<(Matrix2<f64>, Matrix2x4<f64>)> {
    let b = range_jacobian(tx, rx, mean)?;
    Ok((b * cov * b.transpose() + omega, b))
}

/// EKF update of a predicted state with one (range, range-rate) measurement.
pub fn ekf_update(
    mean: &TargetState,
    cov: &Matrix4<f64>,
    z: &Vector2<f64>,
    tx: &Position,
    rx: &Position,
    omega: &Matrix2<f64>,
) -> Result<(TargetState, Matrix4<f64>)> {
    let zp = predicted_measurement(tx, rx, mean)?;
    let b = range_jacobian(tx, rx, mean)?;
    kalman_update(mean, cov, &(z - zp), &b, omega)
}

/// Iterated EKF update: Gauss-Newton on the MAP cost, relinearising
/// `iterations` times (one iteration is the plain EKF).
pub fn iekf_update(
    mean: &TargetState,
    cov: &Matrix4<f64>,
    z: &Vector2<f64>,
    tx: &Position,
    rx: &Position,
    omega: &Matrix2<f64>,
    iterations: usize,
) -> Result<(TargetState, Matrix4<f64>)> {
    let mut x = *mean;
    let mut out = (*mean, *cov);
    for _ in 0..iterations.max(1) {
        let b = range_jacobian(tx, rx, &x)?;
        let innovation = z - predicted_measurement(tx, rx, &x)? - b * (mean - x);
        out = kalman_update(mean, cov, &innovation, &b, omega)?;
        let step = (out.0 - x).norm();
        x = out.0;
        if step <= 1e-12 * (1.0 + x.norm()) {
            break;
        }
    }
    Ok(out)
}

/// Moment-matched Gaussian mixture. Weights are renormalised to sum to one.
pub fn fuse_jpda(
    components: &[(f64, TargetState, Matrix4<f64>)],
) -> Result<(TargetState, Matrix4<f64>)> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("no mixture components".into()));
    }
    let total: f64 = components.iter().map(|c| c.0).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical("mixture weights do not normalise".into()));
    }
    if components.len() == 1 {
        return Ok((components[0].1, components[0].2));
    }
    let mean: Vector4<f64> = components.iter().map(|(w, x, _)| x * (w / total)).sum();
    let mut cov = Matrix4::zeros();
    for (w, x, p) in components {
        let d = x - mean;
        cov += (p + d * d.transpose()) * (w / total);
    }
    Ok((mean, symmetrize(&cov)))
}

/// Arithmetic mean of the per-supertarget existence probabilities.
pub fn track_existence(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument(
            "no supertarget existence values".into(),
        ));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("existence outside [0, 1]".into()));
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

// ----------------------------------------------------------------------------
// Tracker loop
// ----------------------------------------------------------------------------

/// How per-channel posteriors are combined within one CPI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// All channels enter one iterated (Gauss-Newton) update. Each channel
    /// contributes its association-weighted mean measurement with its
    /// information scaled by the detection mass `1 - beta_0`.
    #[default]
    Batch,
    /// Channels update the track one after another, each relinearising at
    /// the previous posterior.
    Sequential,
    /// Every channel updates the common prediction and the channel
    /// posteriors are averaged as an equal-weight mixture.
    Parallel,
}

/// Measurement-space box in which false alarms fall uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementDomain {
    pub range_km: (f64, f64),
    pub range_rate_km_s: (f64, f64),
}

impl MeasurementDomain {
    pub fn volume(&self) -> f64 {
        (self.range_km.1 - self.range_km.0) * (self.range_rate_km_s.1 - self.range_rate_km_s.0)
    }
}

/// Tracker settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub motion: MotionModel,
    pub noise: MeasurementNoise,
    pub p_d: f64,
    pub p_g: f64,
    /// Per-bin false-alarm probability.
    pub p_fa: f64,
    /// Range bins per channel.
    pub bins: usize,
    pub domain: MeasurementDomain,
    /// Existence survival probability between CPIs.
    pub survival: f64,
    /// Consecutive empty-gate CPIs after which a track is dropped.
    pub miss_limit: usize,
    pub fusion: FusionMode,
    pub event_limit: usize,
    /// Gauss-Newton relinearisations per update; 1 is the plain EKF.
    pub ekf_iterations: usize,
}

impl TrackerConfig {
    /// Reference tracking setup on `geometry`: 12 GHz carrier, 200 ms PRI,
    /// K = 16 pulses, L = 32 range cells, `P_D = 0.9`, `P_fa = 10^-3`,
    /// `P_G = 0.99`, process noise `10^-4` and resolution-scale `Omega`.
    pub fn reference(geometry: &RadarGeometry) -> Self {
        let (pri, pulses, bins) = (0.2, 16usize, 32usize);
        let wavelength_m = SPEED_OF_LIGHT_KM_S * 1e3 / 12e9;
        let omega = MeasurementNoise::from_resolution(
            pri / bins as f64,
            1.0 / (pulses as f64 * pri),
            wavelength_m,
        );
        Self {
            motion: MotionModel::new(pulses as f64 * pri, 1e-4, 1e-4),
            noise: MeasurementNoise::uniform(omega, geometry.tx.len(), geometry.rx.len()),
            p_d: 0.9,
            p_g: 0.99,
            p_fa: 1e-3,
            bins,
            domain: MeasurementDomain {
                range_km: (0.0, SPEED_OF_LIGHT_KM_S * pri),
                range_rate_km_s: (-2.0, 2.0),
            },
            survival: 0.99,
            miss_limit: 3,
            fusion: FusionMode::Batch,
            event_limit: 1_000_000,
            ekf_iterations: 10,
        }
    }

    /// Expected false alarms per unit measurement volume on one channel.
    pub fn clutter_density(&self) -> f64 {
        self.p_fa * self.bins as f64 / self.domain.volume()
    }
}

/// Measurements of one channel in one CPI.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScan {
    pub tx: usize,
    pub rx: usize,
    /// (range km, range rate km/s).
    pub z: Vec<Vector2<f64>>,
    /// Originating target of each measurement, `None` for false alarms.
    /// Used only for evaluation.
    pub origin: Vec<Option<usize>>,
}

/// Per-track data on one channel.
struct ChannelView {
    gated: Vec<usize>,
    likelihood: Vec<Option<f64>>,
}

fn gaussian2(d: &Vector2<f64>, s: &Matrix2<f64>) -> Option<f64> {
    let inv = s.try_inverse()?;
    let det = s.determinant();
    (det > 0.0)
        .then(|| (-0.5 * d.dot(&(inv * d))).exp() / (2.0 * std::f64::consts::PI * det.sqrt()))
}

fn channel_view(
    track: &Track,
    scan: &ChannelScan,
    geometry: &RadarGeometry,
    cfg: &TrackerConfig,
    th: f64,
) -> ChannelView {
    let empty = ChannelView {
        gated: Vec::new(),
        likelihood: vec![None; scan.z.len()],
    };
    if !track.alive {
        return empty;
    }
    let (tx, rx) = (&geometry.tx[scan.tx], &geometry.rx[scan.rx]);
    let omega = cfg.noise.get(scan.tx, scan.rx);
    let (Ok(zp), Ok((s, _))) = (
        predicted_measurement(tx, rx, &track.mean),
        innovation_covariance(tx, rx, &track.mean, &track.cov, omega),
    ) else {
        return empty;
    };
    let Ok(gated) = gate(&scan.z, zp, &s, th) else {
        return empty;
    };
    let mut likelihood = vec![None; scan.z.len()];
    for &i in &gated {
        likelihood[i] = gaussian2(&(scan.z[i] - zp), &s).map(|p| p / cfg.p_g);
    }
    ChannelView { gated, likelihood }
}

/// Posterior mean/cov of one track on one channel given its marginals.
fn channel_posterior(
    mean: &TargetState,
    cov: &Matrix4<f64>,
    scan: &ChannelScan,
    beta: &[f64],
    geometry: &RadarGeometry,
    cfg: &TrackerConfig,
) -> Result<(TargetState, Matrix4<f64>)> {
    let (tx, rx) = (&geometry.tx[scan.tx], &geometry.rx[scan.rx]);
    let omega = cfg.noise.get(scan.tx, scan.rx);
    let mut comps = vec![(beta[0], *mean, *cov)];
    for (i, z) in scan.z.iter().enumerate() {
        let b = beta[i + 1];
        if b > 0.0 {
            let (m, p) = iekf_update(mean, cov, z, tx, rx, omega, cfg.ekf_iterations)?;
            comps.push((b, m, p));
        }
    }
    fuse_jpda(&comps)
}

/// Joint update with every channel's association-weighted measurement.
///
/// Minimises `|x - x0|^2_{P^-1} + sum_c w_c |z_c - h_c(x)|^2_{Omega^-1}` by
/// Gauss-Newton with step halving, where `z_c` is the beta-weighted mean of
/// the channel's measurements and `w_c = 1 - beta_0`. The covariance is the
/// inverse information at the optimum plus the spread of the individual
/// measurements around `z_c`.
pub fn batch_update(
    mean: &TargetState,
    cov: &Matrix4<f64>,
    scans: &[ChannelScan],
    betas: &[&[f64]],
    geometry: &RadarGeometry,
    cfg: &TrackerConfig,
) -> Result<(TargetState, Matrix4<f64>)> {
    // Square-root information form: stack whitened prior and measurement
    // rows and solve each Gauss-Newton step by SVD.
    let prior_w = inverse_sqrt4(cov)?;
    struct Term<'a> {
        tx: &'a Position,
        rx: &'a Position,
        z: Vector2<f64>,
        /// `sqrt(w) Omega^{-1/2}`.
        white: Matrix2<f64>,
        omega_inv: Matrix2<f64>,
        spread: Matrix2<f64>,
    }
    let mut terms = Vec::new();
    for (scan, beta) in scans.iter().zip(betas) {
        let w: f64 = beta[1..].iter().sum();
        if w <= 0.0 {
            continue;
        }
        let z: Vector2<f64> = scan
            .z
            .iter()
            .zip(&beta[1..])
            .map(|(z, b)| z * (b / w))
            .sum();
        let mut spread = Matrix2::zeros();
        for (zi, b) in scan.z.iter().zip(&beta[1..]) {
            let d = zi - z;
            spread += d * d.transpose() * *b;
        }
        let omega = cfg.noise.get(scan.tx, scan.rx);
        let omega_inv = omega
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular measurement noise".into()))?;
        let e = omega.symmetric_eigen();
        if e.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Numerical(
                "measurement noise is not positive definite".into(),
            ));
        }
        let inv_sqrt = e.eigenvectors
            * Matrix2::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * e.eigenvectors.transpose();
        terms.push(Term {
            tx: &geometry.tx[scan.tx],
            rx: &geometry.rx[scan.rx],
            z,
            white: inv_sqrt * w.sqrt(),
            omega_inv,
            spread,
        });
    }
    if terms.is_empty() {
        return Ok((*mean, *cov));
    }
    let n_rows = 4 + 2 * terms.len();
    let system = |x: &TargetState| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let mut a = DMatrix::zeros(n_rows, 4);
        let mut r = DVector::zeros(n_rows);
        a.fixed_view_mut::<4, 4>(0, 0).copy_from(&prior_w);
        r.fixed_rows_mut::<4>(0).copy_from(&(prior_w * (mean - x)));
        for (k, t) in terms.iter().enumerate() {
            let b = range_jacobian(t.tx, t.rx, x)?;
            let res = t.z - predicted_measurement(t.tx, t.rx, x)?;
            a.fixed_view_mut::<2, 4>(4 + 2 * k, 0)
                .copy_from(&(t.white * b));
            r.fixed_rows_mut::<2>(4 + 2 * k).copy_from(&(t.white * res));
        }
        Ok((a, r))
    };

    let mut x = *mean;
    let (mut a, mut r) = system(&x)?;
    let mut c = r.norm_squared();
    for _ in 0..cfg.ekf_iterations.max(1) {
        let step = a
            .clone()
            .svd(true, true)
            .solve(&r, 1e-14)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let step = Vector4::new(step[0], step[1], step[2], step[3]);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = x + step * scale;
            if let Ok((at, rt)) = system(&trial) {
                let ct = rt.norm_squared();
                if ct <= c {
                    x = trial;
                    (a, r, c) = (at, rt, ct);
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted || (step * scale).norm() <= 1e-12 * (1.0 + x.norm()) {
            break;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    if svd.singular_values.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Numerical("singular posterior information".into()));
    }
    let d = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let pd = v_t.transpose() * d * v_t;
    let p_info = symmetrize(&Matrix4::from_fn(|i, j| pd[(i, j)]));
    let mut p = p_info;
    for t in &terms {
        if t.spread.norm() > 0.0 {
            let b = range_jacobian(t.tx, t.rx, &x)?;
            let gain = p_info * b.transpose() * t.omega_inv;
            p += gain * t.spread * gain.transpose();
        }
    }
    Ok((x, symmetrize(&p)))
}

/// Symmetric `P^{-1/2}` of a positive-semidefinite 4x4 matrix.
fn inverse_sqrt4(p: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let e = symmetrize(p).symmetric_eigen();
    let top = e.eigenvalues.max();
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::Numerical(
            "covariance is not positive definite".into(),
        ));
    }
    // Round-off can push the smallest eigenvalue of a near-singular
    // covariance below zero; clamp it to a relative floor.
    let floor = top * 1e-15;
    let d = Matrix4::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.max(floor).sqrt()));
    Ok(e.eigenvectors * d * e.eigenvectors.transpose())
}

/// Process one CPI: predict, associate on every channel against the
/// prediction, then update.
pub fn tracker_step(
    tracks: &mut [Track],
    scans: &[ChannelScan],
    geometry: &RadarGeometry,
    cfg: &TrackerConfig,
    cpi: usize,
) -> Result<()> {
    let th = gate_threshold(cfg.p_g);
    let rho = cfg.clutter_density();
    for t in tracks.iter_mut().filter(|t| t.alive) {
        *t = ekf_predict(t, &cfg.motion);
        t.existence *= cfg.survival;
    }
    let live: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].alive).collect();
    let mut existence: Vec<Vec<f64>> = vec![Vec::new(); tracks.len()];
    let mut any_gated = vec![false; tracks.len()];

    // Association against the common prediction.
    let mut betas: Vec<Vec<Vec<f64>>> = Vec::with_capacity(scans.len());
    for scan in scans {
        let views: Vec<ChannelView> = live
            .iter()
            .map(|&i| channel_view(&tracks[i], scan, geometry, cfg, th))
            .collect();
        let input = JointEventInput {
            existence: live.iter().map(|&i| tracks[i].existence).collect(),
            p_d: cfg.p_d,
            p_g: cfg.p_g,
            clutter_density: rho,
            likelihood: views.iter().map(|v| v.likelihood.clone()).collect(),
        };
        let events = enumerate_fje(&input, cfg.event_limit)?;
        let marg = marginalize(&events, &input)?;
        for (k, &i) in live.iter().enumerate() {
            any_gated[i] |= !views[k].gated.is_empty();
            existence[i].push(marg.existence[k]);
        }
        betas.push(marg.beta);
    }

    for (k, &i) in live.iter().enumerate() {
        let prior = (tracks[i].mean, tracks[i].cov);
        let mut state = prior;
        let mut channel_states = Vec::with_capacity(scans.len());
        for (scan, beta) in scans.iter().zip(&betas) {
            match cfg.fusion {
                FusionMode::Sequential => {
                    state = channel_posterior(&state.0, &state.1, scan, &beta[k], geometry, cfg)?;
                }
                FusionMode::Batch => {}
                FusionMode::Parallel => {
                    let (m, p) =
                        channel_posterior(&prior.0, &prior.1, scan, &beta[k], geometry, cfg)?;
                    channel_states.push((1.0, m, p));
                }
            }
        }
        if cfg.fusion == FusionMode::Parallel && !channel_states.is_empty() {
            state = fuse_jpda(&channel_states)?;
        }
        if cfg.fusion == FusionMode::Batch {
            let per_channel: Vec<&[f64]> = betas.iter().map(|b| b[k].as_slice()).collect();
            state = batch_update(&prior.0, &prior.1, scans, &per_channel, geometry, cfg)?;
        }
        let t = &mut tracks[i];
        t.mean = state.0;
        t.cov = state.1;
        if !existence[i].is_empty() {
            t.existence = track_existence(&existence[i])?;
        }
        t.misses = if any_gated[i] { 0 } else { t.misses + 1 };
        if t.misses >= cfg.miss_limit {
            t.alive = false;
        }
        t.record(cpi);
    }
    Ok(())
}

/// Run the tracker over a stream of per-CPI channel scans.
pub fn run_tracker(
    initial: Vec<Track>,
    scans: &[Vec<ChannelScan>],
    geometry: &RadarGeometry,
    cfg: &TrackerConfig,
) -> Result<Vec<Track>> {
    let mut tracks = initial;
    for (cpi, cpi_scans) in scans.iter().enumerate() {
        tracker_step(&mut tracks, cpi_scans, geometry, cfg, cpi)?;
    }
    Ok(tracks)
}

// ----------------------------------------------------------------------------
// Scenario simulation
// ----------------------------------------------------------------------------

/// Draw `x ~ N(0, cov)` for a PSD 4x4 covariance.
pub fn gaussian4<R: Rng + ?Sized>(cov: &Matrix4<f64>, rng: &mut R) -> Vector4<f64> {
    let e = cov.symmetric_eigen();
    let w = Vector4::from_fn(|i, _| {
        let n: f64 = StandardNormal.sample(rng);
        n * e.eigenvalues[i].max(0.0).sqrt()
    });
    e.eigenvectors * w
}

fn gaussian2_draw<R: Rng + ?Sized>(cov: &Matrix2<f64>, rng: &mut R) -> Vector2<f64> {
    let e = cov.symmetric_eigen();
    let w = Vector2::from_fn(|i, _| {
        let n: f64 = StandardNormal.sample(rng);
        n * e.eigenvalues[i].max(0.0).sqrt()
    });
    e.eigenvectors * w
}

/// True trajectories: `n_cpi` states per target after the initial one,
/// following the motion model with process noise.
pub fn simulate_truth<R: Rng + ?Sized>(
    initial: &[TargetState],
    model: &MotionModel,
    n_cpi: usize,
    rng: &mut R,
) -> Vec<Vec<TargetState>> {
    let f = model.transition();
    let q = model.process_noise();
    initial
        .iter()
        .map(|x0| {
            let mut x = *x0;
            (0..n_cpi)
                .map(|_| {
                    x = f * x + gaussian4(&q, rng);
                    x
                })
                .collect()
        })
        .collect()
}

/// Channel scans for one CPI: each target is detected on each channel with
/// probability `P_D` and measured with noise `Omega`; false alarms are
/// Poisson with mean `P_fa L` and uniform over the measurement domain.
pub fn simulate_scans<R: Rng + ?Sized>(
    truth: &[TargetState],
    geometry: &RadarGeometry,
    cfg: &TrackerConfig,
    rng: &mut R,
) -> Result<Vec<ChannelScan>> {
    let mean_fa = cfg.p_fa * cfg.bins as f64;
    let poisson = if mean_fa > 0.0 {
        Some(Poisson::new(mean_fa).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(geometry.tx.len() * geometry.rx.len());
    for (m, tx) in geometry.tx.iter().enumerate() {
        for (n, rx) in geometry.rx.iter().enumerate() {
            let omega = cfg.noise.get(m, n);
            let mut z = Vec::new();
            let mut origin = Vec::new();
            for (t, x) in truth.iter().enumerate() {
                if rng.gen::<f64>() < cfg.p_d {
                    z.push(predicted_measurement(tx, rx, x)? + gaussian2_draw(omega, rng));
                    origin.push(Some(t));
                }
            }
            let n_fa = poisson.as_ref().map_or(0, |p| p.sample(rng) as usize);
            for _ in 0..n_fa {
                let d = &cfg.domain;
                z.push(Vector2::new(
                    rng.gen_range(d.range_km.0..d.range_km.1),
                    rng.gen_range(d.range_rate_km_s.0..d.range_rate_km_s.1),
                ));
                origin.push(None);
            }
            out.push(ChannelScan {
                tx: m,
                rx: n,
                z,
                origin,
            });
        }
    }
    Ok(out)
}

/// Single-CPI range-only triangulation of one target from the bistatic
/// ranges of its own detections: Gauss-Newton with step halving on the
/// position, started at `init`. This is the memoryless reference against
/// which the tracker is compared.
pub fn triangulation_fix(
    scans: &[ChannelScan],
    target: usize,
    geometry: &RadarGeometry,
    init: &Position,
    iterations: usize,
) -> Result<Position> {
    let mut own = Vec::new();
    for scan in scans {
        for (z, o) in scan.z.iter().zip(&scan.origin) {
            if *o == Some(target) {
                own.push((&geometry.tx[scan.tx], &geometry.rx[scan.rx], z[0]));
            }
        }
    }
    if own.len() < 2 {
        return Err(Error::Numerical("too few measurements for a fix".into()));
    }
    let cost = |p: &Position| -> f64 {
        let s = TargetState::new(p.x, p.y, 0.0, 0.0);
        own.iter()
            .map(|(tx, rx, z)| (z - bistatic_range(tx, rx, &s)).powi(2))
            .sum()
    };
    let mut p = *init;
    let mut c = cost(&p);
    for _ in 0..iterations {
        let state = TargetState::new(p.x, p.y, 0.0, 0.0);
        let mut info = Matrix2::<f64>::zeros();
        let mut grad = Vector2::<f64>::zeros();
        let mut on_node = false;
        for (tx, rx, z) in &own {
            let Ok(b) = range_jacobian(tx, rx, &state) else {
                on_node = true;
                break;
            };
            let g = Vector2::new(b[(0, 0)], b[(0, 1)]);
            info += g * g.transpose();
            grad += g * (z - bistatic_range(tx, rx, &state));
        }
        // The range gradient is undefined on a node and parallel gradients
        // leave the fix unobservable; stop at the last point in either case.
        if on_node {
            break;
        }
        let Some(chol) = info.cholesky() else { break };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial = p + step * scale;
            let ct = cost(&trial);
            if ct <= c {
                (p, c, moved) = (trial, ct, true);
                break;
            }
            scale *= 0.5;
        }
        if !moved || (step * scale).norm() < 1e-12 {
            break;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn predict_without_noise_or_time_is_identity() {
        let t = Track::new(
            0,
            TargetState::new(1.0, 2.0, 3.0, 4.0),
            Matrix4::identity(),
            1.0,
        );
        let p = ekf_predict(&t, &MotionModel::new(0.0, 0.0, 0.0));
        assert_eq!(p.mean, t.mean);
        assert_eq!(p.cov, t.cov);
    }

    #[test]
    fn existence_mean() {
        assert_eq!(track_existence(&[1.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(
            track_existence(&[0.2, 0.4, 0.6, 0.8]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert!(track_existence(&[]).is_err());
    }

    #[test]
    fn single_component_fusion_is_identity() {
        let x = TargetState::new(1.0, 2.0, 0.1, 0.2);
        let p = Matrix4::identity() * 0.3;
        assert_eq!(fuse_jpda(&[(1.0, x, p)]).unwrap(), (x, p));
        let (m, c) = fuse_jpda(&[(0.5, x, p), (0.5, x, p)]).unwrap();
        assert_relative_eq!((m - x).norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!((c - p).norm(), 0.0, epsilon = 1e-15);
        assert!(fuse_jpda(&[]).is_err());
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let tx = Position::new(0.0, 10.0);
        let rx = Position::new(10.0, -5.0);
        let x = TargetState::new(20.0, 5.0, -0.3, 0.1);
        let p = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 0.01, 0.01));
        let z = predicted_measurement(&tx, &rx, &x).unwrap();
        let omega = Matrix2::new(0.5, 0.0, 0.0, 1e-4);
        let (m, c) = ekf_update(&x, &p, &z, &tx, &rx, &omega).unwrap();
        assert_relative_eq!((m - x).norm(), 0.0, epsilon = 1e-12);
        assert!(c.trace() < p.trace());
    }
}
