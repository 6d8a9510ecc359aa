//! Node placement, target kinematics and the bistatic observation model.
//!
//! All distances are in kilometres, velocities in km/s, times in seconds and
//! Doppler shifts in Hz. A target state is the column `[x, y, vx, vy]`.
//!
//! For a radar transmitter at `t`, a receiver at `r` and a target at `p` with
//! velocity `v`, the bistatic range and observations are
//!
//! ```text
//! R      = |p - t| + |p - r|
//! delay  = R / c
//! f      = (v . (p - t)/|p - t| + v . (p - r)/|p - r|) / lambda
//! ```
//!
//! The Doppler projection is singular when the target sits on a node, so both
//! [`observe`] and [`observation_jacobian`] reject range legs shorter than
//! [`DEGENERATE_EPS_KM`].

use nalgebra::{Matrix2x4, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};

/// Speed of light in km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 3.0e5;

/// Range legs shorter than this (km) make the Doppler projection singular.
pub const DEGENERATE_EPS_KM: f64 = 1e-6;

/// A point in the plane, km.
pub type Position = Vector2<f64>;

/// Target state `[x, y, vx, vy]` in km and km/s.
pub type TargetState = Vector4<f64>;

/// Bistatic range of a target for a transmitter/receiver pair.
pub fn bistatic_range(tx: &Position, rx: &Position, s: &TargetState) -> f64 {
    let p = s.fixed_rows::<2>(0);
    (p - tx).norm() + (p - rx).norm()
}

/// Delay and Doppler of one target echo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationPair {
    /// Propagation delay, s.
    pub delay: f64,
    /// Doppler shift, Hz.
    pub doppler: f64,
}

/// Unit vectors and lengths of the two range legs.
fn legs(tx: &Position, rx: &Position, s: &TargetState) -> Result<[(Vector2<f64>, f64); 2]> {
    let p = Vector2::new(s[0], s[1]);
    let mut out = [(Vector2::zeros(), 0.0); 2];
    for (slot, node) in out.iter_mut().zip([tx, rx]) {
        let d = p - node;
        let r = d.norm();
        if r < DEGENERATE_EPS_KM {
            return Err(Error::DegenerateGeometry {
                leg_km: r,
                eps_km: DEGENERATE_EPS_KM,
            });
        }
        *slot = (d / r, r);
    }
    Ok(out)
}

/// Bistatic range rate in km/s.
pub fn range_rate(tx: &Position, rx: &Position, s: &TargetState) -> Result<f64> {
    let v = Vector2::new(s[2], s[3]);
    let [(u1, _), (u2, _)] = legs(tx, rx, s)?;
    Ok(v.dot(&u1) + v.dot(&u2))
}

/// Delay (s) and Doppler (Hz) of a target for one Tx/Rx pair.
///
/// `wavelength_m` is the carrier wavelength in metres.
pub fn observe(
    tx: &Position,
    rx: &Position,
    s: &TargetState,
    wavelength_m: f64,
) -> Result<ObservationPair> {
    let rr = range_rate(tx, rx, s)?;
    Ok(ObservationPair {
        delay: bistatic_range(tx, rx, s) / SPEED_OF_LIGHT_KM_S,
        doppler: rr * 1e3 / wavelength_m,
    })
}

/// Jacobian of the bistatic range and range rate with respect to the state.
///
/// Row 0 is `dR/dx`, row 1 is `dRdot/dx`, both in km-based units.
pub fn range_jacobian(tx: &Position, rx: &Position, s: &TargetState) -> Result<Matrix2x4<f64>> {
    let v = Vector2::new(s[2], s[3]);
    let mut jac = Matrix2x4::zeros();
    for (u, r) in legs(tx, rx, s)? {
        // d(v.u)/dp = (v - (v.u) u) / r
        let dp = (v - u * v.dot(&u)) / r;
        jac[(0, 0)] += u[0];
        jac[(0, 1)] += u[1];
        jac[(1, 0)] += dp[0];
        jac[(1, 1)] += dp[1];
        jac[(1, 2)] += u[0];
        jac[(1, 3)] += u[1];
    }
    Ok(jac)
}

/// Jacobian of [`observe`] with respect to `[x, y, vx, vy]`.
pub fn observation_jacobian(
    tx: &Position,
    rx: &Position,
    s: &TargetState,
    wavelength_m: f64,
) -> Result<Matrix2x4<f64>> {
    let mut jac = range_jacobian(tx, rx, s)?;
    jac.row_mut(0).scale_mut(1.0 / SPEED_OF_LIGHT_KM_S);
    jac.row_mut(1).scale_mut(1e3 / wavelength_m);
    Ok(jac)
}

// ----------------------------------------------------------------------------
// Kinematics
// ----------------------------------------------------------------------------

/// Nearly-constant-velocity motion with white acceleration noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    /// Time between updates, s (one CPI, `K * T_r`).
    pub dt: f64,
    /// Acceleration variance along x.
    pub nu_x2: f64,
    /// Acceleration variance along y.
    pub nu_y2: f64,
}

impl MotionModel {
    pub fn new(dt: f64, nu_x2: f64, nu_y2: f64) -> Self {
        Self { dt, nu_x2, nu_y2 }
    }

    /// State transition matrix `F`.
    pub fn transition(&self) -> Matrix4<f64> {
        let mut f = Matrix4::identity();
        f[(0, 2)] = self.dt;
        f[(1, 3)] = self.dt;
        f
    }

    /// Process noise covariance `Q`.
    pub fn process_noise(&self) -> Matrix4<f64> {
        let t = self.dt;
        let (a, b, c) = (t.powi(4) / 4.0, t.powi(3) / 2.0, t * t);
        let mut q = Matrix4::zeros();
        for (i, nu) in [self.nu_x2, self.nu_y2].into_iter().enumerate() {
            q[(i, i)] = a * nu;
            q[(i, i + 2)] = b * nu;
            q[(i + 2, i)] = b * nu;
            q[(i + 2, i + 2)] = c * nu;
        }
        q
    }
}

/// Advance a state by `dt` seconds of constant-velocity motion, then add
/// `noise` if given.
pub fn propagate(s: &TargetState, dt: f64, noise: Option<&Vector4<f64>>) -> TargetState {
    let mut out = *s;
    out[0] += s[2] * dt;
    out[1] += s[3] * dt;
    if let Some(w) = noise {
        out += w;
    }
    out
}

// ----------------------------------------------------------------------------
// Antenna geometries
// ----------------------------------------------------------------------------

/// Radar transmitter and receiver placement.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarGeometry {
    pub name: String,
    pub tx: Vec<Position>,
    pub rx: Vec<Position>,
}

impl RadarGeometry {
    /// Transmitters on the y axis, receivers on the line `y = -5`.
    pub fn lshape() -> Self {
        Self {
            name: "lshape".into(),
            tx: (0..4).map(|m| Position::new(0.0, 5.0 * m as f64)).collect(),
            rx: (1..=4)
                .map(|n| Position::new(5.0 * n as f64, -5.0))
                .collect(),
        }
    }

    pub fn circular() -> Self {
        Self {
            name: "circular".into(),
            tx: vec![
                Position::new(-10.0, 10.0),
                Position::new(0.0, 17.32),
                Position::new(20.0, 17.32),
                Position::new(30.0, 10.0),
            ],
            rx: vec![
                Position::new(-10.0, -10.0),
                Position::new(0.0, -17.32),
                Position::new(20.0, -17.32),
                Position::new(30.0, -10.0),
            ],
        }
    }

    pub fn random() -> Self {
        Self {
            name: "random".into(),
            tx: vec![
                Position::new(0.0, 0.0),
                Position::new(-10.0, -5.0),
                Position::new(-15.0, -5.0),
                Position::new(-20.0, -20.0),
            ],
            rx: vec![
                Position::new(-5.0, 0.0),
                Position::new(-10.0, -10.0),
                Position::new(-15.0, -5.0),
                Position::new(-20.0, -10.0),
            ],
        }
    }

    /// Look up a named geometry.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "lshape" => Ok(Self::lshape()),
            "circular" => Ok(Self::circular()),
            "random" => Ok(Self::random()),
            other => Err(Error::InvalidArgument(format!(
                "unknown geometry {other:?}"
            ))),
        }
    }
}

/// Initial states of the three-target tracking scenario.
pub fn reference_targets() -> Vec<TargetState> {
    vec![
        TargetState::new(25.0, 6.0, -0.4, -0.2),
        TargetState::new(15.0, 16.0, 0.4, -0.2),
        TargetState::new(10.0, 10.0, -0.1, 0.2),
    ]
}

// ----------------------------------------------------------------------------
// Scenario
// ----------------------------------------------------------------------------

/// Everything needed to synthesise one D-ISAC deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub radar_tx: Vec<Position>,
    pub radar_rx: Vec<Position>,
    pub rrh: Vec<Position>,
    pub ul_ue: Vec<Position>,
    pub dl_ue: Vec<Position>,
    pub targets: Vec<TargetState>,
    /// Carrier frequency, Hz.
    pub carrier_hz: f64,
    /// Pulse repetition interval `T_r`, s.
    pub pri_s: f64,
    /// Pulses per CPI `K`.
    pub pulses: usize,
    /// Symbols per frame `L`, equal to the number of range cells per PRI.
    pub symbols: usize,
    /// Antennas per RRH `M_c`.
    pub antennas_per_rrh: usize,
    pub p_ul_max: f64,
    pub p_dl_max: f64,
    /// Code energy `P_r` per radar transmitter.
    pub p_radar: Vec<f64>,
    /// Peak-to-average limit `gamma` per radar transmitter.
    pub par: Vec<f64>,
    pub noise_radar: f64,
    pub noise_ul: f64,
    pub noise_dl: f64,
    /// Self-interference attenuation `sigma_FD^2`.
    pub si_attenuation: f64,
    /// Rician factor of the self-interference channel.
    pub si_rician_k: f64,
    /// Scale of the residual SI covariance after cancellation.
    pub sr_gamma: f64,
    /// Clutter variance per radar receiver.
    pub clutter_variance: f64,
}

impl Scenario {
    /// Carrier wavelength in metres.
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_KM_S * 1e3 / self.carrier_hz
    }

    /// Duration of one range cell `T_p = T_r / L`, s.
    pub fn range_cell_s(&self) -> f64 {
        self.pri_s / self.symbols as f64
    }

    /// CPI duration `K T_r`, s.
    pub fn cpi_s(&self) -> f64 {
        self.pulses as f64 * self.pri_s
    }

    /// Check structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.pulses == 0 || self.symbols == 0 || self.antennas_per_rrh == 0 {
            return bad("K, L and M_c must be positive");
        }
        if self.radar_tx.is_empty() || self.radar_rx.is_empty() {
            return bad("need at least one radar Tx and Rx");
        }
        if self.p_radar.len() != self.radar_tx.len() || self.par.len() != self.radar_tx.len() {
            return bad("per-Tx radar energy and PAR lists must match the Tx count");
        }
        let budgets = [self.p_ul_max, self.p_dl_max];
        if budgets.iter().chain(&self.p_radar).any(|&p| !(p >= 0.0)) {
            return bad("power budgets must be nonnegative");
        }
        if self.par.iter().any(|&g| !(g >= 1.0)) {
            return Err(Error::Infeasible("PAR limit below 1".into()));
        }
        for v in [self.noise_radar, self.noise_ul, self.noise_dl] {
            if !(v > 0.0) {
                return bad("noise variances must be positive");
            }
        }
        if !(self.carrier_hz > 0.0 && self.pri_s > 0.0) {
            return bad("carrier and PRI must be positive");
        }
        if self.si_attenuation < 0.0 || self.sr_gamma < 0.0 || self.clutter_variance < 0.0 {
            return bad("SI and clutter parameters must be nonnegative");
        }
        Ok(())
    }

    /// A compact cell (sub-kilometre spacing) with the reference parameter
    /// set: 4 radar Tx/Rx, 4 RRHs with 2 antennas, 2 UL and 2 DL users,
    /// K = 16, L = 32, all noise variances 0.01, P_u = 1, P_d = 2, P_r = 1,
    /// PAR 2.
    pub fn compact_cell(n_targets: usize) -> Self {
        let ring = |n: usize, radius: f64, offset_deg: f64| -> Vec<Position> {
            (0..n)
                .map(|k| {
                    let a = (offset_deg + 360.0 * k as f64 / n as f64).to_radians();
                    Position::new(radius * a.cos(), radius * a.sin())
                })
                .collect()
        };
        let targets = (0..n_targets)
            .map(|t| {
                let a = (20.0 + 137.5 * t as f64).to_radians();
                let r = 0.55 + 0.1 * (t % 3) as f64;
                let heading = a + 1.9;
                TargetState::new(
                    r * a.cos(),
                    r * a.sin(),
                    0.02 * heading.cos(),
                    0.02 * heading.sin(),
                )
            })
            .collect();
        Self {
            radar_tx: ring(4, 1.2, 45.0),
            radar_rx: ring(4, 1.2, 0.0),
            rrh: ring(4, 0.4, 22.5),
            ul_ue: vec![Position::new(0.25, 0.15), Position::new(-0.2, -0.3)],
            dl_ue: vec![Position::new(-0.3, 0.2), Position::new(0.3, -0.2)],
            targets,
            carrier_hz: 12e9,
            pri_s: 0.2,
            pulses: 16,
            symbols: 32,
            antennas_per_rrh: 2,
            p_ul_max: 1.0,
            p_dl_max: 2.0,
            p_radar: vec![1.0; 4],
            par: vec![2.0; 4],
            noise_radar: 0.01,
            noise_ul: 0.01,
            noise_dl: 0.01,
            si_attenuation: 0.01,
            si_rician_k: 1.0,
            sr_gamma: 1.0,
            clutter_variance: 0.01,
        }
    }
}
