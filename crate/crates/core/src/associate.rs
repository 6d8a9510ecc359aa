//! Measurement-to-target association.
//!
//! Two formulations are provided. The clutter-free one assumes every channel
//! returns exactly one measurement per target: the likelihood matrix `L`
//! (rows measurements, columns targets) is built from the posterior of each
//! target component under the measurement mixture, and the marginal
//! association probabilities follow from matrix permanents,
//!
//! ```text
//! beta[n][t] = L[n][t] perm(L without row n, column t) / perm(L).
//! ```
//!
//! The second formulation allows missed detections and false alarms. Each
//! (target, transmitter) pair is a supertarget; on a given channel the
//! feasible joint events assign at most one gated measurement to each
//! supertarget, and their posteriors yield marginal association and
//! existence probabilities.
//!
//! Measurements are (delay bin, Doppler bin) pairs throughout.

use nalgebra::{DMatrix, Matrix2, Vector2};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Largest matrix handled by [`permanent`].
pub const PERMANENT_MAX_N: usize = 12;

/// Default cap on the number of enumerated joint events.
pub const DEFAULT_EVENT_LIMIT: usize = 1_000_000;

// ----------------------------------------------------------------------------
// Measurement model
// ----------------------------------------------------------------------------

/// Spreads and resolutions of the separable Gaussian measurement model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementModel {
    /// Delay spread (bins).
    pub sigma_t: f64,
    /// Doppler spread (bins).
    pub sigma_p: f64,
    /// Delay resolution (bins).
    pub delta_t: f64,
    /// Doppler resolution (bins).
    pub delta_f: f64,
    /// Doppler period in bins, if Doppler wraps around.
    pub doppler_period: Option<f64>,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        Self {
            sigma_t: 1.0,
            sigma_p: 1.0,
            delta_t: 1.0,
            delta_f: 1.0,
            doppler_period: None,
        }
    }
}

/// Signed difference `a - b` folded into `[-period/2, period/2)`.
pub fn wrap_difference(d: f64, period: f64) -> f64 {
    (d + 0.5 * period).rem_euclid(period) - 0.5 * period
}

/// `Delta_t Delta_f / (2 pi sigma_t sigma_p) exp(-dt^2/2sigma_t^2 - dp^2/2sigma_p^2)`.
pub fn measurement_pdf(z: Vector2<f64>, truth: Vector2<f64>, m: &MeasurementModel) -> f64 {
    let dt = z[0] - truth[0];
    let mut dp = z[1] - truth[1];
    if let Some(p) = m.doppler_period {
        dp = wrap_difference(dp, p);
    }
    let norm = m.delta_t * m.delta_f / (2.0 * std::f64::consts::PI * m.sigma_t * m.sigma_p);
    norm * (-0.5 * (dt * dt / (m.sigma_t * m.sigma_t) + dp * dp / (m.sigma_p * m.sigma_p))).exp()
}

/// Posterior of each mixture component given one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPosterior {
    pub probs: Vec<f64>,
    /// Set when every component density underflowed and the posterior fell
    /// back to uniform.
    pub degenerate: bool,
}

/// `phi_t f(z | x_t) / sum_s phi_s f(z | x_s)`.
pub fn posterior_weighted_likelihood(
    z: Vector2<f64>,
    targets: &[Vector2<f64>],
    phi: &[f64],
    m: &MeasurementModel,
) -> Result<ComponentPosterior> {
    if targets.is_empty() || targets.len() != phi.len() {
        return Err(Error::Dimension("one mixture weight per target".into()));
    }
    if phi.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidArgument(
            "mixture weights must be nonnegative".into(),
        ));
    }
    let dens: Vec<f64> = targets
        .iter()
        .zip(phi)
        .map(|(x, p)| p * measurement_pdf(z, *x, m))
        .collect();
    let total: f64 = dens.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(ComponentPosterior {
            probs: dens.iter().map(|d| d / total).collect(),
            degenerate: false,
        })
    } else {
        let n = targets.len() as f64;
        Ok(ComponentPosterior {
            probs: vec![1.0 / n; targets.len()],
            degenerate: true,
        })
    }
}

/// Mixture weights `phi_t ∝ |h_t|^exponent`, normalised to sum to one.
pub fn rcs_weights(gains_sq: &[f64], exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = gains_sq.iter().map(|g| g.max(0.0).powf(exponent)).collect();
    let s: f64 = raw.iter().sum();
    if s > 0.0 {
        raw.iter().map(|r| r / s).collect()
    } else {
        vec![1.0 / gains_sq.len().max(1) as f64; gains_sq.len()]
    }
}

// ----------------------------------------------------------------------------
// Permanents and clutter-free association
// ----------------------------------------------------------------------------

/// Permanent by Ryser's inclusion-exclusion formula with Gray-code updates.
pub fn permanent(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension("permanent of a non-square matrix".into()));
    }
    if n > PERMANENT_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "permanent size {n} exceeds the exact limit {PERMANENT_MAX_N}"
        )));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let mut row_sums = vec![0.0; n];
    let mut total = 0.0;
    let mut gray: u32 = 0;
    for k in 1u32..(1 << n) {
        let next = k ^ (k >> 1);
        let col = (gray ^ next).trailing_zeros() as usize;
        let sign = if next & (1 << col) != 0 { 1.0 } else { -1.0 };
        for (i, s) in row_sums.iter_mut().enumerate() {
            *s += sign * m[(i, col)];
        }
        gray = next;
        let prod: f64 = row_sums.iter().product();
        let parity = if (n as u32 - next.count_ones()) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        total += parity * prod;
    }
    Ok(total)
}

/// Permanent as the sum over all permutations of entry products.
///
/// Exponential in `n!`; intended as a reference for small matrices.
pub fn permanent_by_permutations(m: &DMatrix<f64>) -> f64 {
    fn rec(m: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64) -> f64 {
        if row == m.nrows() {
            return acc;
        }
        let mut s = 0.0;
        for c in 0..m.ncols() {
            if !used[c] {
                used[c] = true;
                s += rec(m, row + 1, used, acc * m[(row, c)]);
                used[c] = false;
            }
        }
        s
    }
    rec(m, 0, &mut vec![false; m.ncols()], 1.0)
}

fn minor(m: &DMatrix<f64>, row: usize, col: usize) -> DMatrix<f64> {
    m.clone().remove_row(row).remove_column(col)
}

/// Nonnegative assignment likelihoods for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMatrix {
    /// Rows are measurements, columns targets.
    pub l: DMatrix<f64>,
    pub tx: usize,
    pub rx: usize,
}

impl LikelihoodMatrix {
    pub fn new(l: DMatrix<f64>, tx: usize, rx: usize) -> Result<Self> {
        if l.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidArgument(
                "likelihoods must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { l, tx, rx })
    }

    /// Build from component posteriors of every measurement.
    pub fn from_mixture(
        measurements: &[Vector2<f64>],
        targets: &[Vector2<f64>],
        phi: &[f64],
        model: &MeasurementModel,
        tx: usize,
        rx: usize,
    ) -> Result<Self> {
        let mut l = DMatrix::zeros(measurements.len(), targets.len());
        for (n, z) in measurements.iter().enumerate() {
            let post = posterior_weighted_likelihood(*z, targets, phi, model)?;
            for (t, p) in post.probs.iter().enumerate() {
                l[(n, t)] = *p;
            }
        }
        Self::new(l, tx, rx)
    }
}

/// Marginal association probabilities and hard assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    /// `beta[(n, t)]`: probability that measurement `n` belongs to target `t`.
    pub beta: DMatrix<f64>,
    /// Measurement index assigned to each target.
    pub assignment: Vec<usize>,
}

/// Permanent-ratio marginals for a square likelihood matrix.
pub fn association_probabilities(lm: &LikelihoodMatrix) -> Result<AssociationResult> {
    let n = lm.l.nrows();
    if lm.l.ncols() != n {
        return Err(Error::Dimension(
            "clutter-free association needs as many measurements as targets".into(),
        ));
    }
    let l = &balance(&lm.l);
    let total = permanent(l)?;
    if !(total > 0.0) {
        return Err(Error::Numerical(
            "likelihood matrix has zero permanent".into(),
        ));
    }
    let mut beta = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            if l[(r, c)] > 0.0 {
                beta[(r, c)] = l[(r, c)] * permanent(&minor(l, r, c))? / total;
            }
        }
    }
    let assignment = (0..n)
        .map(|c| argmax_lowest(beta.column(c).iter().cloned()))
        .collect();
    Ok(AssociationResult { beta, assignment })
}

/// Alternate row and column normalisation. Row and column scaling
/// multiplies the permanent and every minor by the same factor, so the
/// marginals are unchanged, while a near doubly stochastic matrix keeps the
/// inclusion-exclusion sum free of cancellation.
fn balance(l: &DMatrix<f64>) -> DMatrix<f64> {
    let mut b = l.clone();
    for _ in 0..50 {
        for mut r in b.row_iter_mut() {
            let s: f64 = r.sum();
            if s > 0.0 {
                r /= s;
            }
        }
        let mut worst: f64 = 0.0;
        for mut c in b.column_iter_mut() {
            let s: f64 = c.sum();
            if s > 0.0 {
                c /= s;
                worst = worst.max((s - 1.0).abs());
            }
        }
        if worst < 1e-12 {
            break;
        }
    }
    b
}

/// Index of the largest value; exact ties go to the lowest index.
fn argmax_lowest(it: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut val = f64::NEG_INFINITY;
    for (i, v) in it.enumerate() {
        if v > val {
            val = v;
            best = i;
        }
    }
    best
}

// ----------------------------------------------------------------------------
// Gating and joint events
// ----------------------------------------------------------------------------

/// Chi-square(2) quantile at gate probability `p_g`: `-2 ln(1 - p_g)`.
pub fn gate_threshold(p_g: f64) -> f64 {
    -2.0 * (1.0 - p_g).ln()
}

/// Indices of measurements with `(z - b)^T S^-1 (z - b) < th`.
pub fn gate(
    measurements: &[Vector2<f64>],
    predicted: Vector2<f64>,
    s: &Matrix2<f64>,
    th: f64,
) -> Result<Vec<usize>> {
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    Ok(measurements
        .iter()
        .enumerate()
        .filter(|(_, z)| {
            let d = *z - predicted;
            d.dot(&chol.solve(&d)) < th
        })
        .map(|(i, _)| i)
        .collect())
}

/// Inputs of the joint-event enumeration on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEventInput {
    /// Prior existence probability of each supertarget.
    pub existence: Vec<f64>,
    pub p_d: f64,
    pub p_g: f64,
    /// False-alarm density per unit measurement volume.
    pub clutter_density: f64,
    /// `likelihood[s][i]`: measurement likelihood of measurement `i` under
    /// supertarget `s`, or `None` when outside its gate.
    pub likelihood: Vec<Vec<Option<f64>>>,
}

impl JointEventInput {
    pub fn n_measurements(&self) -> usize {
        self.likelihood.first().map_or(0, |r| r.len())
    }
}

/// One feasible joint assignment with its posterior probability.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionJunctionEvent {
    /// Measurement assigned to each supertarget, if any.
    pub assignment: Vec<Option<usize>>,
    pub posterior: f64,
}

impl FusionJunctionEvent {
    /// No measurement is shared between supertargets.
    pub fn is_feasible(&self) -> bool {
        let mut seen: Vec<usize> = self.assignment.iter().flatten().cloned().collect();
        let n = seen.len();
        seen.sort_unstable();
        seen.dedup();
        seen.len() == n
    }
}

/// Enumerate every feasible joint event and normalise their posteriors.
///
/// Unnormalised weight: product over missed supertargets of
/// `1 - P_D P_G r` and over detected ones of `P_D P_G r p / rho`.
pub fn enumerate_fje(input: &JointEventInput, limit: usize) -> Result<Vec<FusionJunctionEvent>> {
    let ns = input.existence.len();
    if input.likelihood.len() != ns {
        return Err(Error::Dimension(
            "one likelihood row per supertarget".into(),
        ));
    }
    let nm = input.n_measurements();
    if input.likelihood.iter().any(|r| r.len() != nm) {
        return Err(Error::Dimension("likelihood rows differ in length".into()));
    }
    if !(input.clutter_density > 0.0) {
        return Err(Error::InvalidArgument(
            "clutter density must be positive".into(),
        ));
    }
    let q: Vec<f64> = input
        .existence
        .iter()
        .map(|r| input.p_d * input.p_g * r)
        .collect();

    let mut events = Vec::new();
    let mut current = vec![None; ns];
    let mut used = vec![false; nm];
    #[allow(clippy::too_many_arguments)]
    fn rec(
        s: usize,
        weight: f64,
        input: &JointEventInput,
        q: &[f64],
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        events: &mut Vec<FusionJunctionEvent>,
        limit: usize,
    ) -> Result<()> {
        if s == q.len() {
            if events.len() >= limit {
                return Err(Error::EnumerationBlowup { limit });
            }
            events.push(FusionJunctionEvent {
                assignment: current.clone(),
                posterior: weight,
            });
            return Ok(());
        }
        current[s] = None;
        rec(
            s + 1,
            weight * (1.0 - q[s]),
            input,
            q,
            current,
            used,
            events,
            limit,
        )?;
        for i in 0..used.len() {
            if let (false, Some(p)) = (used[i], input.likelihood[s][i]) {
                used[i] = true;
                current[s] = Some(i);
                let w = weight * q[s] * p / input.clutter_density;
                rec(s + 1, w, input, q, current, used, events, limit)?;
                used[i] = false;
            }
        }
        current[s] = None;
        Ok(())
    }
    rec(
        0,
        1.0,
        input,
        &q,
        &mut current,
        &mut used,
        &mut events,
        limit,
    )?;

    let total: f64 = events.iter().map(|e| e.posterior).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical(
            "joint-event weights do not normalise".into(),
        ));
    }
    for e in events.iter_mut() {
        e.posterior /= total;
    }
    Ok(events)
}

/// Per-supertarget association marginals and posterior existence.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    /// `beta[s][0]` is the miss probability, `beta[s][i + 1]` that of
    /// measurement `i`, all conditioned on existence.
    pub beta: Vec<Vec<f64>>,
    pub existence: Vec<f64>,
}

/// Sum event posteriors into association and existence probabilities.
///
/// A supertarget left unassigned by an event still exists with probability
/// `r (1 - P_D P_G) / (1 - P_D P_G r)` under that event.
pub fn marginalize(events: &[FusionJunctionEvent], input: &JointEventInput) -> Result<Marginals> {
    let ns = input.existence.len();
    let nm = input.n_measurements();
    let pdg = input.p_d * input.p_g;
    let mut joint = vec![vec![0.0; nm + 1]; ns];
    for e in events {
        for (s, a) in e.assignment.iter().enumerate() {
            match a {
                Some(i) => joint[s][i + 1] += e.posterior,
                None => {
                    let r = input.existence[s];
                    let denom = 1.0 - pdg * r;
                    let keep = if denom > 0.0 {
                        r * (1.0 - pdg) / denom
                    } else {
                        0.0
                    };
                    joint[s][0] += e.posterior * keep;
                }
            }
        }
    }
    let mut beta = Vec::with_capacity(ns);
    let mut existence = Vec::with_capacity(ns);
    for row in joint {
        let ex: f64 = row.iter().sum();
        if !(ex > 0.0) {
            return Err(Error::Numerical(
                "supertarget has zero existence probability".into(),
            ));
        }
        existence.push(ex.min(1.0));
        beta.push(row.iter().map(|v| v / ex).collect());
    }
    Ok(Marginals { beta, existence })
}

/// Poisson probability of `g` false alarms in a gate of volume `v`.
pub fn false_alarm_count_pmf(lambda: f64, v: f64, g: u64) -> f64 {
    let mu = lambda * v;
    if mu == 0.0 {
        return if g == 0 { 1.0 } else { 0.0 };
    }
    (-mu + g as f64 * mu.ln() - ln_factorial(g)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pdf_peak_and_offset() {
        let m = MeasurementModel::default();
        let x = Vector2::new(3.0, 4.0);
        let peak = measurement_pdf(x, x, &m);
        assert_relative_eq!(peak, 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-15);
        assert_relative_eq!(
            measurement_pdf(Vector2::new(4.0, 4.0), x, &m),
            peak * (-0.5f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn wrapped_doppler_is_periodic() {
        let m = MeasurementModel {
            doppler_period: Some(32.0),
            ..MeasurementModel::default()
        };
        let a = measurement_pdf(Vector2::new(0.0, 31.0), Vector2::new(0.0, 0.0), &m);
        let b = measurement_pdf(Vector2::new(0.0, -1.0), Vector2::new(0.0, 0.0), &m);
        assert_relative_eq!(a, b, epsilon = 1e-15);
    }

    #[test]
    fn posterior_cases() {
        let m = MeasurementModel::default();
        let p =
            posterior_weighted_likelihood(Vector2::new(1.0, 1.0), &[Vector2::zeros()], &[1.0], &m)
                .unwrap();
        assert_eq!(p.probs, vec![1.0]);
        let t = [Vector2::new(-1.0, 0.0), Vector2::new(1.0, 0.0)];
        let p = posterior_weighted_likelihood(Vector2::zeros(), &t, &[0.5, 0.5], &m).unwrap();
        assert_relative_eq!(p.probs[0], 0.5, epsilon = 1e-15);
        let far =
            posterior_weighted_likelihood(Vector2::new(1e6, 0.0), &t, &[0.5, 0.5], &m).unwrap();
        assert!(far.degenerate);
        assert_eq!(far.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn permanent_small_cases() {
        assert_eq!(permanent(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        assert_relative_eq!(
            permanent(&DMatrix::from_element(3, 3, 1.0)).unwrap(),
            6.0,
            epsilon = 1e-12
        );
        assert_eq!(permanent(&DMatrix::zeros(0, 0)).unwrap(), 1.0);
        assert!(permanent(&DMatrix::zeros(13, 13)).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(permanent(&m).unwrap(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_marginals() {
        let (a, b, c, d) = (0.7, 0.2, 0.4, 0.9);
        let lm = LikelihoodMatrix::new(DMatrix::from_row_slice(2, 2, &[a, b, c, d]), 0, 0).unwrap();
        let r = association_probabilities(&lm).unwrap();
        assert_relative_eq!(r.beta[(0, 0)], a * d / (a * d + b * c), epsilon = 1e-14);
        assert_eq!(r.assignment, vec![0, 1]);
    }

    #[test]
    fn gate_examples() {
        let z = [
            Vector2::new(0.0, 0.0),
            Vector2::new(2.0, 2.0),
            Vector2::new(3.0, 0.0),
        ];
        let g = gate(&z, Vector2::zeros(), &Matrix2::identity(), 9.0).unwrap();
        assert_eq!(g, vec![0, 1]);
        assert_eq!(
            gate(&z[..1], Vector2::zeros(), &Matrix2::identity(), 1e-9).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn fje_trivial_cases() {
        let input = JointEventInput {
            existence: vec![0.8],
            p_d: 0.9,
            p_g: 0.99,
            clutter_density: 0.5,
            likelihood: vec![vec![Some(2.0)]],
        };
        let ev = enumerate_fje(&input, DEFAULT_EVENT_LIMIT).unwrap();
        assert_eq!(ev.len(), 2);
        let q = 0.9 * 0.99 * 0.8;
        let r = 2.0 / 0.5;
        assert_relative_eq!(
            ev[0].posterior,
            (1.0 - q) / (1.0 - q + q * r),
            epsilon = 1e-14
        );

        let none = JointEventInput {
            likelihood: vec![vec![None]],
            ..input
        };
        let ev = enumerate_fje(&none, DEFAULT_EVENT_LIMIT).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].posterior, 1.0);
    }

    #[test]
    fn fje_blowup_is_reported() {
        let input = JointEventInput {
            existence: vec![0.5; 6],
            p_d: 0.9,
            p_g: 0.99,
            clutter_density: 1.0,
            likelihood: vec![vec![Some(1.0); 8]; 6],
        };
        assert_eq!(
            enumerate_fje(&input, 1000),
            Err(Error::EnumerationBlowup { limit: 1000 })
        );
    }

    #[test]
    fn poisson_pmf() {
        assert_eq!(false_alarm_count_pmf(0.0, 3.0, 0), 1.0);
        assert_relative_eq!(
            false_alarm_count_pmf(1.0, 1.0, 1),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        let s: f64 = (0..=50).map(|g| false_alarm_count_pmf(2.0, 1.0, g)).sum();
        assert!((s - 1.0).abs() < 1e-14);
    }
}
