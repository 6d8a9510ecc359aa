//! Radar codes, slow-time matched filtering and the composite received signal.
//!
//! After matched filtering against transmitter `m_r`, the `K` slow-time
//! samples of the range cell holding a target are
//!
//! ```text
//! y = h (q ⊙ a) + y_in,      q_k = exp(j 2 pi k f'),  k = 0..K-1
//! ```
//!
//! where `f' = f T_r` is the normalised Doppler and `a` the code row of the
//! transmitter. The interference-plus-noise part `y_in` collects DL and UL
//! leakage, clutter and thermal noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::channel::{complex_normal, complex_normal_vector, C64};
use crate::error::{Error, Result};

/// Code matrix `A` (`M_r x K`); row `m` is the pulse code of transmitter `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCodeMatrix {
    pub a: DMatrix<C64>,
}

impl RadarCodeMatrix {
    pub fn new(a: DMatrix<C64>) -> Self {
        Self { a }
    }

    pub fn n_tx(&self) -> usize {
        self.a.nrows()
    }

    pub fn pulses(&self) -> usize {
        self.a.ncols()
    }

    /// Code row of transmitter `m` as a column vector.
    pub fn row(&self, m: usize) -> DVector<C64> {
        self.a.row(m).transpose()
    }

    pub fn set_row(&mut self, m: usize, v: &DVector<C64>) {
        self.a.row_mut(m).copy_from(&v.transpose());
    }

    /// Energy `||a_m||^2` of a row.
    pub fn row_energy(&self, m: usize) -> f64 {
        self.a.row(m).iter().map(|x| x.norm_sqr()).sum()
    }

    /// Peak-to-average ratio `K max|a_k|^2 / ||a||^2` of a row.
    pub fn row_par(&self, m: usize) -> f64 {
        par(&self.row(m))
    }

    /// Check energy and PAR of every row against the budgets.
    pub fn is_feasible(&self, energy: &[f64], par_limit: &[f64], tol: f64) -> bool {
        (0..self.n_tx()).all(|m| {
            (self.row_energy(m) - energy[m]).abs() <= tol * energy[m].max(1.0)
                && self.row_par(m) <= par_limit[m] + tol
        })
    }
}

/// Peak-to-average power ratio of a vector (zero for the zero vector).
pub fn par(v: &DVector<C64>) -> f64 {
    let e: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    if e == 0.0 {
        return 0.0;
    }
    let peak = v.iter().map(|x| x.norm_sqr()).fold(0.0, f64::max);
    v.len() as f64 * peak / e
}

/// Temporal steering vector `q_k = exp(j 2 pi k f')`, `k = 0..K-1`.
pub fn steering_vector(f_norm: f64, k: usize) -> DVector<C64> {
    DVector::from_fn(k, |i, _| {
        let cycles = (i as f64 * f_norm).fract();
        C64::from_polar(1.0, 2.0 * std::f64::consts::PI * cycles)
    })
}

/// Matched-filter output `h (q ⊙ a)` of one radar path.
pub fn matched_filter_echo(h: C64, f_norm: f64, code_row: &DVector<C64>) -> DVector<C64> {
    let q = steering_vector(f_norm, code_row.len());
    q.component_mul(code_row) * h
}

/// `P`-point DFT of the zero-padded slow-time vector and its peak bin.
///
/// Ties in magnitude resolve to the lowest bin, so an all-zero input peaks at
/// bin 0. For a pure tone at normalised Doppler `f'` the peak sits near
/// `floor(f' P)`.
pub fn doppler_spectrum(y: &DVector<C64>, p: usize) -> Result<(DVector<C64>, usize)> {
    if p < y.len() || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "DFT length {p} shorter than input length {}",
            y.len()
        )));
    }
    let spec = DVector::from_fn(p, |bin, _| {
        y.iter()
            .enumerate()
            .map(|(k, x)| {
                let cycles = ((k * bin) % p) as f64 / p as f64;
                x * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * cycles)
            })
            .sum::<C64>()
    });
    let mut peak = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, s) in spec.iter().enumerate() {
        let m = s.norm_sqr();
        if m > best {
            best = m;
            peak = i;
        }
    }
    Ok((spec, peak))
}

// ----------------------------------------------------------------------------
// Composite received signal
// ----------------------------------------------------------------------------

/// Received slow-time vector of one radar path and its components.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedPathSignal {
    pub y: DVector<C64>,
    pub echo: DVector<C64>,
    pub dl_leak: DVector<C64>,
    pub ul_leak: DVector<C64>,
    pub clutter: DVector<C64>,
    pub noise: DVector<C64>,
}

impl ReceivedPathSignal {
    /// Interference-plus-noise part, `y` minus the target echo.
    pub fn interference(&self) -> DVector<C64> {
        &self.y - &self.echo
    }
}

/// Sum the received components.
pub fn compose_received(
    echo: DVector<C64>,
    dl_leak: DVector<C64>,
    ul_leak: DVector<C64>,
    clutter: DVector<C64>,
    noise: DVector<C64>,
) -> Result<ReceivedPathSignal> {
    let k = echo.len();
    if [&dl_leak, &ul_leak, &clutter, &noise]
        .iter()
        .any(|v| v.len() != k)
    {
        return Err(Error::Dimension(
            "received components differ in length".into(),
        ));
    }
    let y = &echo + &dl_leak + &ul_leak + &clutter + &noise;
    Ok(ReceivedPathSignal {
        y,
        echo,
        dl_leak,
        ul_leak,
        clutter,
        noise,
    })
}

/// Interference-plus-noise covariance `R_dr + R_ur + R_c + sigma^2 I`.
///
/// With unit-power i.i.d. symbols the DL and UL leakage is white across
/// pulses, so each enters as a scalar power.
pub fn interference_covariance(
    dl_power: f64,
    ul_power: f64,
    clutter_cov: &DMatrix<C64>,
    noise: f64,
) -> DMatrix<C64> {
    let k = clutter_cov.nrows();
    clutter_cov + DMatrix::<C64>::identity(k, k) * C64::from(dl_power + ul_power + noise)
}

/// Draw one interference-plus-noise realisation consistent with
/// [`interference_covariance`]. Clutter is `A^T rho` with
/// `rho ~ CN(0, sigma_c^2 I)`.
pub fn draw_interference<R: Rng + ?Sized>(
    code: &RadarCodeMatrix,
    dl_power: f64,
    ul_power: f64,
    clutter_variance: f64,
    noise: f64,
    rng: &mut R,
) -> (DVector<C64>, DVector<C64>, DVector<C64>, DVector<C64>) {
    let k = code.pulses();
    let dl = complex_normal_vector(rng, k, dl_power);
    let ul = complex_normal_vector(rng, k, ul_power);
    let rho = DVector::from_fn(code.n_tx(), |_, _| complex_normal(rng, clutter_variance));
    let clutter = code.a.transpose() * rho;
    let n = complex_normal_vector(rng, k, noise);
    (dl, ul, clutter, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{clutter_covariance, RngStreams};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn steering_trivial_cases() {
        assert!(steering_vector(0.0, 5).iter().all(|x| *x == c(1.0, 0.0)));
        let q = steering_vector(0.5, 2);
        assert_relative_eq!(q[1].re, -1.0, epsilon = 1e-15);
        assert!(q[1].im.abs() < 1e-15);
        assert!(steering_vector(0.37, 16)
            .iter()
            .all(|x| (x.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn echo_cases() {
        let a = DVector::from_fn(4, |i, _| c(i as f64, 1.0));
        assert_eq!(matched_filter_echo(c(1.0, 0.0), 0.0, &a), a);
        assert!(matched_filter_echo(c(0.0, 0.0), 0.3, &a)
            .iter()
            .all(|x| x.norm() == 0.0));
        let y = matched_filter_echo(c(0.3, -0.4), 0.21, &a);
        for k in 0..4 {
            assert_relative_eq!(y[k].norm(), 0.5 * a[k].norm(), epsilon = 1e-14);
        }
    }

    #[test]
    fn dft_tone_and_zero() {
        let p = 32;
        let y = steering_vector(5.0 / p as f64, p);
        let (_, peak) = doppler_spectrum(&y, p).unwrap();
        assert_eq!(peak, 5);
        let (spec, peak) = doppler_spectrum(&DVector::zeros(16), 32).unwrap();
        assert_eq!(peak, 0);
        assert!(spec.iter().all(|x| x.norm() == 0.0));
        assert!(doppler_spectrum(&DVector::zeros(16), 8).is_err());
    }

    #[test]
    fn dft_parseval() {
        let mut rng = RngStreams::new(2).stream("dft", 0);
        let y = complex_normal_vector(&mut rng, 16, 1.0);
        let (spec, _) = doppler_spectrum(&y, 64).unwrap();
        let e_t: f64 = y.iter().map(|x| x.norm_sqr()).sum();
        let e_f: f64 = spec.iter().map(|x| x.norm_sqr()).sum::<f64>() / 64.0;
        assert_relative_eq!(e_t, e_f, max_relative = 1e-10);
    }

    #[test]
    fn compose_is_sum_and_checks_lengths() {
        let e = DVector::from_element(3, c(1.0, 0.0));
        let z = DVector::zeros(3);
        let r = compose_received(e.clone(), z.clone(), z.clone(), z.clone(), z.clone()).unwrap();
        assert_eq!(r.y, e);
        assert!(r.interference().iter().all(|x| x.norm() == 0.0));
        assert!(compose_received(e, z.clone(), z.clone(), z, DVector::zeros(2)).is_err());
    }

    #[test]
    fn covariance_floor_and_additivity() {
        let zero = DMatrix::<C64>::zeros(4, 4);
        let r = interference_covariance(0.0, 0.0, &zero, 0.01);
        assert_eq!(r, DMatrix::identity(4, 4) * c(0.01, 0.0));
        let code = RadarCodeMatrix::new(DMatrix::from_fn(2, 4, |i, j| {
            c(1.0 + i as f64, j as f64) * 0.3
        }));
        let rc = clutter_covariance(&code.a, 0.5);
        let with = interference_covariance(0.0, 0.0, &rc, 0.01);
        assert_relative_eq!((with - r - rc).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn par_of_constant_modulus_is_one() {
        let v = steering_vector(0.13, 8);
        assert_relative_eq!(par(&v), 1.0, epsilon = 1e-12);
        let mut code = RadarCodeMatrix::new(DMatrix::zeros(1, 8));
        code.set_row(0, &(v * c((1.0f64 / 32.0).sqrt(), 0.0)));
        assert!(code.is_feasible(&[0.25], &[1.0], 1e-9));
    }
}
