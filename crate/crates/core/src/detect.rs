//! Neyman-Pearson detection of occupied range bins and Doppler extraction.
//!
//! Per radar channel `(m_r, n_r)` and range bin, the slow-time vector is
//! whitened by the interference covariance, `ȳ = R_in^{-1/2} y`, so that
//! under H0 `ȳ ~ CN(0, I)` and under H1 `ȳ ~ CN(0, G + I)`. The likelihood
//! ratio reduces to
//!
//! ```text
//! T = ȳ^H (I - (G + I)^-1) ȳ = sum_k delta_k |v_k^H ȳ|^2 / (1 + delta_k)
//! ```
//!
//! with `G = V diag(delta) V^H`. Under H0 the statistic is a weighted sum of
//! unit exponentials, so the threshold for a target false-alarm rate is
//! taken as a Monte-Carlo quantile of that law.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::channel::{complex_normal_vector, C64};
use crate::error::{Error, Result};
use crate::waveform::doppler_spectrum;

// ----------------------------------------------------------------------------
// Whitening
// ----------------------------------------------------------------------------

/// Symmetric inverse square root `R^{-1/2}` of a positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub inv_sqrt: DMatrix<C64>,
}

impl Whitener {
    pub fn new(r_in: &DMatrix<C64>) -> Result<Self> {
        if !r_in.is_square() {
            return Err(Error::Dimension("covariance must be square".into()));
        }
        let herm = (r_in + r_in.adjoint()) * C64::from(0.5);
        let eig = herm.symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if eig
            .eigenvalues
            .iter()
            .any(|&l| !(l > 1e-14 * top.max(f64::MIN_POSITIVE)))
        {
            return Err(Error::Numerical(
                "covariance is not positive definite".into(),
            ));
        }
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from(1.0 / l.sqrt())));
        let inv_sqrt = &eig.eigenvectors * d * eig.eigenvectors.adjoint();
        Ok(Self { inv_sqrt })
    }

    pub fn apply(&self, y: &DVector<C64>) -> DVector<C64> {
        &self.inv_sqrt * y
    }
}

/// `R_in^{-1/2} y`.
pub fn whiten(y: &DVector<C64>, r_in: &DMatrix<C64>) -> Result<DVector<C64>> {
    Ok(Whitener::new(r_in)?.apply(y))
}

/// Slow-time signal covariance of one path with a Doppler that is unknown
/// and uniform over the ambiguity interval: `sigma^2 diag(|a_k|^2)`.
///
/// With a known normalised Doppler `f'` it is `sigma^2 s s^H`, `s = q ⊙ a`.
pub fn signal_covariance(
    code_row: &DVector<C64>,
    variance: f64,
    doppler: Option<f64>,
) -> DMatrix<C64> {
    match doppler {
        None => DMatrix::from_diagonal(&code_row.map(|a| C64::from(variance * a.norm_sqr()))),
        Some(f) => {
            let s = crate::waveform::steering_vector(f, code_row.len()).component_mul(code_row);
            &s * s.adjoint() * C64::from(variance)
        }
    }
}

// ----------------------------------------------------------------------------
// Detector
// ----------------------------------------------------------------------------

/// Whitened signal covariance, its eigendecomposition and the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSetup {
    pub g: DMatrix<C64>,
    /// Eigenvectors as columns, ordered like `eigvals`.
    pub eigvecs: DMatrix<C64>,
    /// Eigenvalues, descending and clamped at zero.
    pub eigvals: DVector<f64>,
    pub threshold: f64,
    pub pfa: f64,
}

impl DetectorSetup {
    /// Decompose `G`; the threshold is left at zero until calibrated.
    pub fn new(g: DMatrix<C64>, pfa: f64) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::Dimension("G must be square".into()));
        }
        if !(pfa > 0.0 && pfa <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "false-alarm rate {pfa} outside (0, 1]"
            )));
        }
        let herm = (&g + g.adjoint()) * C64::from(0.5);
        let eig = herm.symmetric_eigen();
        let mut order: Vec<usize> = (0..g.nrows()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigvals = DVector::from_iterator(
            order.len(),
            order.iter().map(|&i| eig.eigenvalues[i].max(0.0)),
        );
        let eigvecs = DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| eig.eigenvectors.column(i))
                .collect::<Vec<_>>(),
        );
        Ok(Self {
            g,
            eigvecs,
            eigvals,
            threshold: 0.0,
            pfa,
        })
    }

    /// Setup for a path with the given pre-whitening signal covariance.
    pub fn from_covariances(signal: &DMatrix<C64>, whitener: &Whitener, pfa: f64) -> Result<Self> {
        let w = &whitener.inv_sqrt;
        Self::new(w * signal * w.adjoint(), pfa)
    }

    /// Weights `delta_k / (1 + delta_k)` of the H0 exponential mixture.
    pub fn weights(&self) -> DVector<f64> {
        self.eigvals.map(|d| d / (1.0 + d))
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

/// Eigen-form likelihood-ratio statistic.
pub fn test_statistic(y_bar: &DVector<C64>, setup: &DetectorSetup) -> f64 {
    let proj = setup.eigvecs.adjoint() * y_bar;
    proj.iter()
        .zip(setup.eigvals.iter())
        .map(|(p, d)| d / (1.0 + d) * p.norm_sqr())
        .sum::<f64>()
        .max(0.0)
}

/// Matrix-inverse form `ȳ^H (I - (G + I)^-1) ȳ`.
pub fn test_statistic_direct(y_bar: &DVector<C64>, g: &DMatrix<C64>) -> Result<f64> {
    let k = g.nrows();
    let gi = g + DMatrix::<C64>::identity(k, k);
    let inv = gi
        .try_inverse()
        .ok_or_else(|| Error::Numerical("G + I is singular".into()))?;
    let m = DMatrix::<C64>::identity(k, k) - inv;
    Ok(y_bar.dotc(&(m * y_bar)).re)
}

/// Draw `n` statistics under H0: `T = sum_k w_k E_k`, `E_k ~ Exp(1)`.
pub fn sample_h0_statistics<R: Rng + ?Sized>(
    setup: &DetectorSetup,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let w = setup.weights();
    (0..n)
        .map(|_| {
            w.iter()
                .map(|wk| {
                    let e: f64 = Exp1.sample(rng);
                    wk * e
                })
                .sum()
        })
        .collect()
}

/// Empirical `(1 - P_fa)` quantile of the H0 statistic.
///
/// The quantile is the order statistic at index `floor((1 - P_fa) n)`,
/// clamped to the sample, so `P_fa = 1` returns the minimum.
pub fn calibrate_threshold<R: Rng + ?Sized>(
    setup: &DetectorSetup,
    pfa: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(pfa > 0.0 && pfa <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "false-alarm rate {pfa} outside (0, 1]"
        )));
    }
    if (n_samples as f64) < 10.0 / pfa {
        return Err(Error::InvalidArgument(format!(
            "{n_samples} calibration samples are fewer than 10 / P_fa"
        )));
    }
    let mut t = sample_h0_statistics(setup, n_samples, rng);
    t.sort_by(f64::total_cmp);
    let idx = (((1.0 - pfa) * n_samples as f64).floor() as usize).min(n_samples - 1);
    Ok(t[idx])
}

/// Detection probability of a Swerling-I target, `P_fa^{1/(1 + snr)}`.
pub fn swerling_pd(pfa: f64, snr: f64) -> f64 {
    pfa.powf(1.0 / (1.0 + snr.max(0.0)))
}

// ----------------------------------------------------------------------------
// Range-profile scan
// ----------------------------------------------------------------------------

/// One threshold crossing on one radar channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub tx: usize,
    pub rx: usize,
    pub range_bin: usize,
    pub doppler_bin: usize,
    pub statistic: f64,
}

/// A (delay, Doppler) observation on one channel, in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub tx: usize,
    pub rx: usize,
    /// Bistatic delay (s).
    pub delay: f64,
    /// Doppler shift (Hz).
    pub doppler: f64,
}

impl Detection {
    /// Convert bin indices to delay and Doppler. Doppler bins above half the
    /// DFT length map to negative frequencies.
    pub fn to_measurement(&self, cell_s: f64, pri_s: f64, dft_len: usize) -> Measurement {
        let p = dft_len as f64;
        let mut f = self.doppler_bin as f64 / p;
        if f >= 0.5 {
            f -= 1.0;
        }
        Measurement {
            tx: self.tx,
            rx: self.rx,
            delay: self.range_bin as f64 * cell_s,
            doppler: f / pri_s,
        }
    }
}

/// Scan every range bin of one channel.
///
/// `profile[l]` is the raw slow-time vector of bin `l`; `setups` holds one
/// entry per bin or a single entry shared by all bins. Doppler is read from
/// the `dft_len`-point spectrum of the code-stripped vector `y ⊙ conj(a)`.
pub fn detect_targets(
    tx: usize,
    rx: usize,
    profile: &[DVector<C64>],
    whitener: &Whitener,
    setups: &[DetectorSetup],
    code_row: &DVector<C64>,
    dft_len: usize,
) -> Result<Vec<Detection>> {
    if setups.len() != profile.len() && setups.len() != 1 {
        return Err(Error::Dimension(
            "one detector setup per bin or one shared".into(),
        ));
    }
    let mut out = Vec::new();
    for (l, y) in profile.iter().enumerate() {
        let setup = &setups[if setups.len() == 1 { 0 } else { l }];
        let t = test_statistic(&whitener.apply(y), setup);
        if t > setup.threshold {
            let stripped = y.component_mul(&code_row.conjugate());
            let (_, peak) = doppler_spectrum(&stripped, dft_len)?;
            out.push(Detection {
                tx,
                rx,
                range_bin: l,
                doppler_bin: peak,
                statistic: t,
            });
        }
    }
    Ok(out)
}

/// Synthesize a range profile: interference `CN(0, R_in)` in every bin plus
/// the given echoes `(bin, slow-time echo)`.
pub fn synthesize_profile<R: Rng + ?Sized>(
    bins: usize,
    echoes: &[(usize, DVector<C64>)],
    r_in: &DMatrix<C64>,
    rng: &mut R,
) -> Result<Vec<DVector<C64>>> {
    let k = r_in.nrows();
    let chol = r_in
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut out: Vec<DVector<C64>> = (0..bins)
        .map(|_| &l * complex_normal_vector(rng, k, 1.0))
        .collect();
    for (bin, echo) in echoes {
        if *bin >= bins || echo.len() != k {
            return Err(Error::Dimension("echo outside the profile".into()));
        }
        out[*bin] += echo;
    }
    Ok(out)
}
