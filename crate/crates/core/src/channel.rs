//! Seeded synthesis of radar, communication, cross and interference channels.
//!
//! Every coefficient is a small-scale draw `g ~ CN(0, 1)` scaled by a
//! distance-dependent path loss with exponent 2. Radar paths additionally
//! carry the carrier phase of the bistatic delay:
//!
//! ```text
//! h = r^-2 g exp(-j 2 pi f_c tau)
//! ```
//!
//! Randomness flows through [`RngStreams`]: a master seed derives one
//! independent ChaCha stream per named component, so toggling one stochastic
//! component never shifts the draws of another.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{
    bistatic_range, observe, Position, Scenario, TargetState, SPEED_OF_LIGHT_KM_S,
};

pub type C64 = Complex64;

// ----------------------------------------------------------------------------
// RNG streams
// ----------------------------------------------------------------------------

/// Derives independent named random streams from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    master: u64,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream for component `name`, sub-indexed by `index` (trial, CPI, ...).
    pub fn stream(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update(index.to_le_bytes());
        ChaCha8Rng::from_seed(hasher.finalize().into())
    }
}

/// One draw from `CN(0, variance)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Vector of i.i.d. `CN(0, variance)` draws.
pub fn complex_normal_vector<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    variance: f64,
) -> DVector<C64> {
    DVector::from_fn(n, |_, _| complex_normal(rng, variance))
}

fn carrier_phase(carrier_hz: f64, delay_s: f64) -> C64 {
    // Reduce the cycle count before forming the angle to keep precision.
    let cycles = (carrier_hz * delay_s).fract();
    C64::from_polar(1.0, -2.0 * std::f64::consts::PI * cycles)
}

/// Composite coefficient `r^-2 g exp(-j 2 pi f_c tau)`.
pub fn composite_coefficient(g: C64, range_km: f64, carrier_hz: f64, delay_s: f64) -> C64 {
    g * carrier_phase(carrier_hz, delay_s) / (range_km * range_km)
}

// ----------------------------------------------------------------------------
// Radar paths
// ----------------------------------------------------------------------------

/// The Tx -> target -> Rx channel of one radar path.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarPathChannel {
    pub tx: usize,
    pub target: usize,
    pub rx: usize,
    /// Small-scale reflectivity.
    pub g: C64,
    /// Bistatic range, km.
    pub range_km: f64,
    /// Delay, s.
    pub delay: f64,
    /// Doppler, Hz.
    pub doppler: f64,
    /// Composite coefficient.
    pub h: C64,
    /// `E|h|^2 = r^-4`.
    pub variance: f64,
}

impl RadarPathChannel {
    /// Rebuild the composite coefficient from its factors.
    pub fn reconstruct(&self, carrier_hz: f64) -> C64 {
        composite_coefficient(self.g, self.range_km, carrier_hz, self.delay)
    }

    /// Normalised Doppler `f T_r`.
    pub fn normalized_doppler(&self, pri_s: f64) -> f64 {
        self.doppler * pri_s
    }
}

/// Flat index of path `(m_r, n_t, n_r)`.
pub fn radar_path_index(
    tx: usize,
    target: usize,
    rx: usize,
    n_targets: usize,
    n_rx: usize,
) -> usize {
    (tx * n_targets + target) * n_rx + rx
}

/// Draw one reflectivity per (Tx, target, Rx) triple.
///
/// Paths are ordered Tx-major, then target, then receiver (see
/// [`radar_path_index`]).
pub fn draw_radar_paths<R: Rng + ?Sized>(
    tx: &[Position],
    rx: &[Position],
    targets: &[TargetState],
    carrier_hz: f64,
    rng: &mut R,
) -> Result<Vec<RadarPathChannel>> {
    let wavelength_m = SPEED_OF_LIGHT_KM_S * 1e3 / carrier_hz;
    let mut out = Vec::with_capacity(tx.len() * targets.len() * rx.len());
    for (m, t) in tx.iter().enumerate() {
        for (n, s) in targets.iter().enumerate() {
            for (k, r) in rx.iter().enumerate() {
                let obs = observe(t, r, s, wavelength_m)?;
                let range_km = bistatic_range(t, r, s);
                let g = complex_normal(rng, 1.0);
                out.push(RadarPathChannel {
                    tx: m,
                    target: n,
                    rx: k,
                    g,
                    range_km,
                    delay: obs.delay,
                    doppler: obs.doppler,
                    h: composite_coefficient(g, range_km, carrier_hz, obs.delay),
                    variance: range_km.powi(-4),
                });
            }
        }
    }
    Ok(out)
}

// ----------------------------------------------------------------------------
// Communication and cross channels
// ----------------------------------------------------------------------------

/// All channels seen by the C-RAN and its interaction with the radar.
#[derive(Debug, Clone, PartialEq)]
pub struct CommChannelSet {
    /// UL UE `i` to RRH `m`, `[i][m]`, length `M_c`.
    pub ul: Vec<Vec<DVector<C64>>>,
    /// RRH `m` to DL UE `j`, `[m][j]`, length `M_c`.
    pub dl: Vec<Vec<DVector<C64>>>,
    /// UL UE `i` to DL UE `j`, `I x J`.
    pub ue_cross: DMatrix<C64>,
    /// Self and inter-RRH interference channel, `M M_c x M M_c`.
    pub si: DMatrix<C64>,
    /// Radar Tx `m_r` via target `n_t` to all RRH antennas, `[m_r][n_t]`,
    /// stacked to length `M M_c`.
    pub radar_to_rrh: Vec<Vec<DVector<C64>>>,
    /// Radar Tx `m_r` via target `n_t` to DL UE `j`, `[m_r][n_t][j]`.
    pub radar_to_dl: Vec<Vec<Vec<C64>>>,
    /// RRH `m` to radar Rx `n_r`, `[m][n_r]`, length `M_c`.
    pub rrh_to_radar: Vec<Vec<DVector<C64>>>,
    /// UL UE `i` to radar Rx `n_r`, `I x N_r`.
    pub ul_to_radar: DMatrix<C64>,
}

impl CommChannelSet {
    /// UL channel of UE `i` stacked over all RRHs.
    pub fn ul_stacked(&self, i: usize) -> DVector<C64> {
        stack(&self.ul[i])
    }
}

fn stack(parts: &[DVector<C64>]) -> DVector<C64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut off = 0;
    for p in parts {
        out.rows_mut(off, p.len()).copy_from(p);
        off += p.len();
    }
    out
}

fn path_loss(a: &Position, b: &Position) -> Result<f64> {
    let d = (a - b).norm();
    if d < crate::geometry::DEGENERATE_EPS_KM {
        return Err(Error::DegenerateGeometry {
            leg_km: d,
            eps_km: crate::geometry::DEGENERATE_EPS_KM,
        });
    }
    Ok(1.0 / (d * d))
}

fn faded<R: Rng + ?Sized>(rng: &mut R, n: usize, gain: f64) -> DVector<C64> {
    complex_normal_vector(rng, n, 1.0) * C64::from(gain)
}

/// Rician self-interference channel with mean `sqrt(s K/(1+K))` on every
/// entry and scatter variance `s/(1+K)`.
pub fn si_channel<R: Rng + ?Sized>(
    n: usize,
    attenuation: f64,
    rician_k: f64,
    rng: &mut R,
) -> DMatrix<C64> {
    let mean = (attenuation * rician_k / (1.0 + rician_k)).sqrt();
    let var = attenuation / (1.0 + rician_k);
    DMatrix::from_fn(n, n, |_, _| C64::from(mean) + complex_normal(rng, var))
}

/// Draw every communication and cross channel of a scenario.
pub fn draw_comm_channels<R: Rng + ?Sized>(sc: &Scenario, rng: &mut R) -> Result<CommChannelSet> {
    let mc = sc.antennas_per_rrh;
    let mut ul = Vec::with_capacity(sc.ul_ue.len());
    for ue in &sc.ul_ue {
        let row: Result<Vec<_>> = sc
            .rrh
            .iter()
            .map(|r| Ok(faded(rng, mc, path_loss(ue, r)?)))
            .collect();
        ul.push(row?);
    }
    let mut dl = Vec::with_capacity(sc.rrh.len());
    for r in &sc.rrh {
        let row: Result<Vec<_>> = sc
            .dl_ue
            .iter()
            .map(|ue| Ok(faded(rng, mc, path_loss(r, ue)?)))
            .collect();
        dl.push(row?);
    }
    let mut ue_cross = DMatrix::zeros(sc.ul_ue.len(), sc.dl_ue.len());
    for (i, a) in sc.ul_ue.iter().enumerate() {
        for (j, b) in sc.dl_ue.iter().enumerate() {
            ue_cross[(i, j)] = complex_normal(rng, 1.0) * path_loss(a, b)?;
        }
    }
    let si = si_channel(sc.rrh.len() * mc, sc.si_attenuation, sc.si_rician_k, rng);

    let wavelength_m = sc.wavelength_m();
    let mut radar_to_rrh = Vec::with_capacity(sc.radar_tx.len());
    let mut radar_to_dl = Vec::with_capacity(sc.radar_tx.len());
    for t in &sc.radar_tx {
        let mut to_rrh = Vec::with_capacity(sc.targets.len());
        let mut to_dl = Vec::with_capacity(sc.targets.len());
        for s in &sc.targets {
            let mut parts = Vec::with_capacity(sc.rrh.len());
            for r in &sc.rrh {
                let obs = observe(t, r, s, wavelength_m)?;
                let range = bistatic_range(t, r, s);
                let g = complex_normal_vector(rng, mc, 1.0);
                parts.push(g.map(|g| composite_coefficient(g, range, sc.carrier_hz, obs.delay)));
            }
            to_rrh.push(stack(&parts));
            let mut row = Vec::with_capacity(sc.dl_ue.len());
            for ue in &sc.dl_ue {
                let obs = observe(t, ue, s, wavelength_m)?;
                let range = bistatic_range(t, ue, s);
                row.push(composite_coefficient(
                    complex_normal(rng, 1.0),
                    range,
                    sc.carrier_hz,
                    obs.delay,
                ));
            }
            to_dl.push(row);
        }
        radar_to_rrh.push(to_rrh);
        radar_to_dl.push(to_dl);
    }
    let mut rrh_to_radar = Vec::with_capacity(sc.rrh.len());
    for r in &sc.rrh {
        let row: Result<Vec<_>> = sc
            .radar_rx
            .iter()
            .map(|rx| Ok(faded(rng, mc, path_loss(r, rx)?)))
            .collect();
        rrh_to_radar.push(row?);
    }
    let mut ul_to_radar = DMatrix::zeros(sc.ul_ue.len(), sc.radar_rx.len());
    for (i, ue) in sc.ul_ue.iter().enumerate() {
        for (n, rx) in sc.radar_rx.iter().enumerate() {
            ul_to_radar[(i, n)] = complex_normal(rng, 1.0) * path_loss(ue, rx)?;
        }
    }
    Ok(CommChannelSet {
        ul,
        dl,
        ue_cross,
        si,
        radar_to_rrh,
        radar_to_dl,
        rrh_to_radar,
        ul_to_radar,
    })
}

// ----------------------------------------------------------------------------
// Interference statistics
// ----------------------------------------------------------------------------

/// Residual SI covariance `gamma diag(sum_j H v_j v_j^H H^H)`.
///
/// `precoders` are the per-user DL precoders stacked over all RRHs.
pub fn residual_si_covariance(
    precoders: &[DVector<C64>],
    gamma: f64,
    h_sr: &DMatrix<C64>,
) -> Result<DMatrix<C64>> {
    let n = h_sr.nrows();
    if h_sr.ncols() != n || precoders.iter().any(|v| v.len() != n) {
        return Err(Error::Dimension(
            "SI channel and precoder sizes disagree".into(),
        ));
    }
    let mut diag = DVector::<f64>::zeros(n);
    for v in precoders {
        let hv = h_sr * v;
        for (d, x) in diag.iter_mut().zip(hv.iter()) {
            *d += x.norm_sqr();
        }
    }
    Ok(DMatrix::from_diagonal(&diag.map(|d| C64::from(gamma * d))))
}

/// Co-channel interference power `sum_i |h_ud,ij|^2 P_u,i` at DL UE `j`.
pub fn cci_power(ul_powers: &[f64], ue_cross: &DMatrix<C64>, j: usize) -> f64 {
    ul_powers
        .iter()
        .enumerate()
        .map(|(i, p)| ue_cross[(i, j)].norm_sqr() * p)
        .sum()
}

/// Clutter covariance `sigma_c^2 sum_m a_m a_m^H` for the `M_r x K` code
/// matrix `A` whose rows are `a_m^T`.
pub fn clutter_covariance(code: &DMatrix<C64>, variance: f64) -> DMatrix<C64> {
    (code.transpose() * code.conjugate()) * C64::from(variance)
}

/// Synchronisation phase offsets per (Tx, Rx) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PhaseOffsets {
    /// Ideal coherence.
    #[default]
    Ideal,
    /// Zero-mean Gaussian offsets with the given standard deviation, rad.
    Gaussian { std_rad: f64 },
}

impl PhaseOffsets {
    /// Draw an `M_r x N_r` matrix of offsets.
    pub fn draw<R: Rng + ?Sized>(&self, n_tx: usize, n_rx: usize, rng: &mut R) -> DMatrix<f64> {
        match *self {
            PhaseOffsets::Ideal => DMatrix::zeros(n_tx, n_rx),
            PhaseOffsets::Gaussian { std_rad } => DMatrix::from_fn(n_tx, n_rx, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                std_rad * z
            }),
        }
    }
}
