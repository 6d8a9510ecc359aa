//! Compounded weighted sum-rate (CWSR) co-design of the radar code matrix and
//! the C-RAN powers.
//!
//! The objective adds the radar mutual information of every (Tx, target, Rx)
//! path to the UL and DL rates of every symbol that collides with a radar
//! echo. It is maximised through its weighted-MMSE equivalent
//!
//! ```text
//! Gamma = sum alpha W E
//! ```
//!
//! by block coordinate descent: MMSE filters `U`, weights `W = 1/E`, then one
//! block at a time for the UL powers, the DL powers of each RRH and each
//! radar code row. With `U` and `W` fixed, `Gamma` is a convex quadratic in
//! every block (in the square-root powers for the C-RAN blocks), so each
//! block is solved on its Lagrange dual: the primal minimiser is closed form
//! for a given multiplier, and the multiplier is driven by a projected
//! subgradient step with Barzilai-Borwein (or Polyak) step sizes. Code rows
//! are then pulled back onto the energy/PAR set by a nearest-vector
//! projection.
//!
//! Units: rates and mutual information are in bits.
//!
//! # Term layout
//!
//! UL terms are indexed `(i, k, m_r, n_t)`, DL terms `(j, k, m_r, n_t)` and
//! radar terms `(m_r, n_t, n_r)`, all flattened row-major. See
//! [`CodesignProblem::ul_term`], [`CodesignProblem::dl_term`] and
//! [`crate::channel::radar_path_index`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CommChannelSet, RadarPathChannel, C64};
use crate::error::{Error, Result};
use crate::geometry::{Scenario, SPEED_OF_LIGHT_KM_S};
use crate::waveform::{steering_vector, RadarCodeMatrix};

/// Conjugate-phase precoder `sqrt(P) conj(g) / ||g||`.
pub fn dcp_precoder(g: &DVector<C64>, power: f64) -> Result<DVector<C64>> {
    let n = g.norm();
    if n == 0.0 {
        return Err(Error::InvalidArgument("zero channel vector".into()));
    }
    Ok(g.conjugate() * C64::from(power.max(0.0).sqrt() / n))
}

fn unit_dcp(g: &DVector<C64>) -> DVector<C64> {
    dcp_precoder(g, 1.0).unwrap_or_else(|_| DVector::zeros(g.len()))
}

/// Radar mutual information `log2(1 + sigma_h^2 s^H R_in^-1 s)`.
pub fn radar_mi(s: &DVector<C64>, variance: f64, r_in: &DMatrix<C64>) -> Result<f64> {
    let chol = r_in.clone().cholesky().ok_or_else(|| {
        Error::Numerical("interference covariance is not positive definite".into())
    })?;
    let q = s.dotc(&chol.solve(s)).re;
    Ok((1.0 + variance * q).log2())
}

/// Barzilai-Borwein step `s^2 / (s y)` for scalar iterate change `s` and
/// gradient change `y`.
pub fn bb_step(s: f64, y: f64) -> Option<f64> {
    let sy = s * y;
    (sy != 0.0 && sy.is_finite()).then(|| s * s / sy)
}

// ----------------------------------------------------------------------------
// Problem data
// ----------------------------------------------------------------------------

/// Weights `alpha` of the three term families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub radar: f64,
    pub ul: f64,
    pub dl: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self {
            radar: 1.0,
            ul: 1.0,
            dl: 1.0,
        }
    }
}

/// Optimisation variables: code matrix and transmit powers.
///
/// DL precoders follow from the powers through [`dcp_precoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub code: RadarCodeMatrix,
    /// `P_u,i`, length `I`.
    pub ul_powers: Vec<f64>,
    /// `P_d,mj`, `M x J`.
    pub dl_powers: DMatrix<f64>,
}

/// Receive filters for every term.
#[derive(Debug, Clone, PartialEq)]
pub struct Filters {
    pub radar: Vec<DVector<C64>>,
    pub ul: Vec<DVector<C64>>,
    pub dl: Vec<C64>,
}

/// One value per term, used for MSEs and MMSE weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TermValues {
    pub radar: Vec<f64>,
    pub ul: Vec<f64>,
    pub dl: Vec<f64>,
}

/// Objective value split by family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cwsr {
    pub radar: f64,
    pub ul: f64,
    pub dl: f64,
}

impl Cwsr {
    pub fn total(&self) -> f64 {
        self.radar + self.ul + self.dl
    }
}

/// Channels, parameters and derived constants of one co-design instance.
#[derive(Debug, Clone)]
pub struct CodesignProblem {
    pub scenario: Scenario,
    pub radar: Vec<RadarPathChannel>,
    pub comm: CommChannelSet,
    pub alpha: TermWeights,
    n_tx: usize,
    n_rx: usize,
    n_targets: usize,
    n_rrh: usize,
    n_ul: usize,
    n_dl: usize,
    pulses: usize,
    /// Steering vector per radar path.
    steering: Vec<DVector<C64>>,
    /// Stacked UL channels per UE.
    ul_stacked: Vec<DVector<C64>>,
    /// Unit DCP directions per (m, j).
    dcp: Vec<Vec<DVector<C64>>>,
    /// `h_{d,mj}^T dcp_{mj'}`, `[m][j][j']`.
    kappa: Vec<Vec<Vec<C64>>>,
    /// SI channel columns of RRH `m` applied to `dcp_{mj}`, `[m][j]`.
    eta: Vec<Vec<DVector<C64>>>,
    /// `h_{dr,m n_r}^T dcp_{mj}`, `[m][n_r][j]`.
    zeta: Vec<Vec<Vec<C64>>>,
    /// RRHs whose DL symbols coincide in a radar path's range cell.
    dr_groups: Vec<Vec<Vec<usize>>>,
}

/// Quantities that depend on the current powers but not on the filters.
struct PowerState {
    /// Effective DL gains `c_{jj'}`.
    c: DMatrix<C64>,
    /// `H_SR v_j` per DL user.
    hv: Vec<DVector<C64>>,
    /// Diagonal of the residual SI covariance.
    r_sr: DVector<f64>,
    /// White interference-plus-noise power per radar path (DL + UL leak +
    /// noise).
    radar_floor: Vec<f64>,
    /// CCI power per DL user.
    cci: Vec<f64>,
}

impl CodesignProblem {
    /// Assemble a problem and precompute the power-independent constants.
    pub fn new(
        scenario: Scenario,
        radar: Vec<RadarPathChannel>,
        comm: CommChannelSet,
        alpha: TermWeights,
    ) -> Result<Self> {
        scenario.validate()?;
        let n_tx = scenario.radar_tx.len();
        let n_rx = scenario.radar_rx.len();
        let n_targets = scenario.targets.len();
        let n_rrh = scenario.rrh.len();
        let n_ul = scenario.ul_ue.len();
        let n_dl = scenario.dl_ue.len();
        let mc = scenario.antennas_per_rrh;
        let pulses = scenario.pulses;
        if radar.len() != n_tx * n_targets * n_rx {
            return Err(Error::Dimension("radar path count".into()));
        }
        if comm.ul.len() != n_ul || comm.dl.len() != n_rrh || comm.si.nrows() != n_rrh * mc {
            return Err(Error::Dimension("communication channel set".into()));
        }
        let steering = radar
            .iter()
            .map(|p| steering_vector(p.normalized_doppler(scenario.pri_s), pulses))
            .collect();
        let ul_stacked = (0..n_ul).map(|i| comm.ul_stacked(i)).collect();
        let dcp: Vec<Vec<DVector<C64>>> = comm
            .dl
            .iter()
            .map(|row| row.iter().map(unit_dcp).collect())
            .collect();
        let kappa = (0..n_rrh)
            .map(|m| {
                (0..n_dl)
                    .map(|j| (0..n_dl).map(|jp| comm.dl[m][j].dot(&dcp[m][jp])).collect())
                    .collect()
            })
            .collect();
        let eta = (0..n_rrh)
            .map(|m| {
                let cols = comm.si.columns(m * mc, mc);
                (0..n_dl).map(|j| &cols * &dcp[m][j]).collect()
            })
            .collect();
        let zeta = (0..n_rrh)
            .map(|m| {
                (0..n_rx)
                    .map(|n| {
                        (0..n_dl)
                            .map(|j| comm.rrh_to_radar[m][n].dot(&dcp[m][j]))
                            .collect()
                    })
                    .collect()
            })
            .collect();

        // DL symbols from RRHs whose delays to the radar receiver round to
        // the same cell land on the same symbol index and add coherently.
        let cell = scenario.range_cell_s();
        let l = scenario.symbols as i64;
        let dr_groups = radar
            .iter()
            .map(|p| {
                let target_cell = (p.delay / cell).round() as i64;
                let mut groups: Vec<(i64, Vec<usize>)> = Vec::new();
                for (m, pos) in scenario.rrh.iter().enumerate() {
                    let d = (pos - scenario.radar_rx[p.rx]).norm() / SPEED_OF_LIGHT_KM_S;
                    let idx = (target_cell - (d / cell).round() as i64).rem_euclid(l);
                    match groups.iter_mut().find(|(g, _)| *g == idx) {
                        Some((_, members)) => members.push(m),
                        None => groups.push((idx, vec![m])),
                    }
                }
                groups.into_iter().map(|(_, g)| g).collect()
            })
            .collect();

        Ok(Self {
            scenario,
            radar,
            comm,
            alpha,
            n_tx,
            n_rx,
            n_targets,
            n_rrh,
            n_ul,
            n_dl,
            pulses,
            steering,
            ul_stacked,
            dcp,
            kappa,
            eta,
            zeta,
            dr_groups,
        })
    }

    pub fn n_radar_terms(&self) -> usize {
        self.radar.len()
    }

    pub fn n_ul_terms(&self) -> usize {
        self.n_ul * self.pulses * self.n_tx * self.n_targets
    }

    pub fn n_dl_terms(&self) -> usize {
        self.n_dl * self.pulses * self.n_tx * self.n_targets
    }

    /// Flat index of UL term `(i, k, m_r, n_t)`.
    pub fn ul_term(&self, i: usize, k: usize, tx: usize, target: usize) -> usize {
        ((i * self.pulses + k) * self.n_tx + tx) * self.n_targets + target
    }

    /// Flat index of DL term `(j, k, m_r, n_t)`.
    pub fn dl_term(&self, j: usize, k: usize, tx: usize, target: usize) -> usize {
        ((j * self.pulses + k) * self.n_tx + tx) * self.n_targets + target
    }

    fn unflatten(&self, t: usize) -> (usize, usize, usize, usize) {
        let target = t % self.n_targets;
        let tx = (t / self.n_targets) % self.n_tx;
        let k = (t / (self.n_targets * self.n_tx)) % self.pulses;
        let user = t / (self.n_targets * self.n_tx * self.pulses);
        (user, k, tx, target)
    }

    /// DL precoders of a design, `[m][j]`.
    pub fn precoders(&self, d: &Design) -> Vec<Vec<DVector<C64>>> {
        (0..self.n_rrh)
            .map(|m| {
                (0..self.n_dl)
                    .map(|j| &self.dcp[m][j] * C64::from(d.dl_powers[(m, j)].max(0.0).sqrt()))
                    .collect()
            })
            .collect()
    }

    fn power_state(&self, d: &Design) -> PowerState {
        let sc = &self.scenario;
        let xd = d.dl_powers.map(|p| p.max(0.0).sqrt());
        let mut c = DMatrix::zeros(self.n_dl, self.n_dl);
        for m in 0..self.n_rrh {
            for j in 0..self.n_dl {
                for jp in 0..self.n_dl {
                    c[(j, jp)] += self.kappa[m][j][jp] * xd[(m, jp)];
                }
            }
        }
        let n = self.comm.si.nrows();
        let hv: Vec<DVector<C64>> = (0..self.n_dl)
            .map(|j| {
                let mut acc = DVector::zeros(n);
                for m in 0..self.n_rrh {
                    acc += &self.eta[m][j] * C64::from(xd[(m, j)]);
                }
                acc
            })
            .collect();
        let mut r_sr = DVector::zeros(n);
        for v in &hv {
            for (r, x) in r_sr.iter_mut().zip(v.iter()) {
                *r += sc.sr_gamma * x.norm_sqr();
            }
        }
        let r_ur: Vec<f64> = (0..self.n_rx)
            .map(|nr| {
                (0..self.n_ul)
                    .map(|i| self.comm.ul_to_radar[(i, nr)].norm_sqr() * d.ul_powers[i])
                    .sum()
            })
            .collect();
        let radar_floor = self
            .radar
            .iter()
            .enumerate()
            .map(|(p, path)| {
                let mut r_dr = 0.0;
                for g in &self.dr_groups[p] {
                    for j in 0..self.n_dl {
                        let s: C64 = g
                            .iter()
                            .map(|&m| self.zeta[m][path.rx][j] * xd[(m, j)])
                            .sum();
                        r_dr += s.norm_sqr();
                    }
                }
                r_dr + r_ur[path.rx] + sc.noise_radar
            })
            .collect();
        let cci = (0..self.n_dl)
            .map(|j| crate::channel::cci_power(&d.ul_powers, &self.comm.ue_cross, j))
            .collect();
        PowerState {
            c,
            hv,
            r_sr,
            radar_floor,
            cci,
        }
    }

    /// Eigen-decomposed clutter covariance: `R_in = rho I + V diag(mu) V^H`.
    fn clutter_eigen(&self, d: &Design) -> (DMatrix<C64>, DVector<f64>) {
        let rc = crate::channel::clutter_covariance(&d.code.a, self.scenario.clutter_variance);
        let eig = rc.symmetric_eigen();
        (eig.eigenvectors, eig.eigenvalues.map(|x| x.max(0.0)))
    }

    /// Interference-plus-noise covariance of radar path `p`.
    pub fn radar_interference(&self, d: &Design, p: usize) -> DMatrix<C64> {
        let st = self.power_state(d);
        let rc = crate::channel::clutter_covariance(&d.code.a, self.scenario.clutter_variance);
        crate::waveform::interference_covariance(0.0, 0.0, &rc, st.radar_floor[p])
    }

    /// Transmitted slow-time signature `s = q ⊙ a_{m_r}` of path `p`.
    pub fn radar_signature(&self, d: &Design, p: usize) -> DVector<C64> {
        self.steering[p].component_mul(&d.code.row(self.radar[p].tx))
    }

    /// UL interference-plus-signal covariance without the radar leak term.
    fn ul_base_covariance(&self, d: &Design, st: &PowerState) -> DMatrix<C64> {
        let n = self.comm.si.nrows();
        let mut r = DMatrix::<C64>::zeros(n, n);
        for (i, h) in self.ul_stacked.iter().enumerate() {
            r += h * h.adjoint() * C64::from(d.ul_powers[i]);
        }
        for k in 0..n {
            r[(k, k)] += C64::from(st.r_sr[k] + self.scenario.noise_ul);
        }
        r
    }

    fn dl_second_moment(
        &self,
        d: &Design,
        st: &PowerState,
        j: usize,
        k: usize,
        tx: usize,
        target: usize,
    ) -> f64 {
        let mui: f64 = (0..self.n_dl).map(|jp| st.c[(j, jp)].norm_sqr()).sum();
        let leak = self.comm.radar_to_dl[tx][target][j].norm_sqr() * d.code.a[(tx, k)].norm_sqr();
        mui + st.cci[j] + leak + self.scenario.noise_dl
    }

    // ------------------------------------------------------------------------
    // Filters, MSEs, SINRs
    // ------------------------------------------------------------------------

    /// MMSE receive filters for every term.
    pub fn mmse_filters(&self, d: &Design) -> Result<Filters> {
        let st = self.power_state(d);
        let sc = &self.scenario;

        // Radar: u = sigma^2 R^-1 s with R = sigma^2 s s^H + R_in.
        let (vc, mu) = self.clutter_eigen(d);
        let radar = (0..self.radar.len())
            .map(|p| {
                let s = self.radar_signature(d, p);
                let var = self.radar[p].variance;
                let rho = st.radar_floor[p];
                let w = vc.adjoint() * &s;
                let rin_inv_s = &vc * DVector::from_fn(w.len(), |k, _| w[k] / (rho + mu[k]));
                let q = s.dotc(&rin_inv_s).re;
                rin_inv_s * C64::from(var / (1.0 + var * q))
            })
            .collect();

        // UL: u = sqrt(P) R^-1 h; the radar leak is a rank-one update of the
        // base covariance.
        let base = self.ul_base_covariance(d, &st);
        let chol = base
            .cholesky()
            .ok_or_else(|| Error::Numerical("UL covariance is not positive definite".into()))?;
        let inv_h: Vec<DVector<C64>> = self.ul_stacked.iter().map(|h| chol.solve(h)).collect();
        let mut ul = vec![DVector::zeros(0); self.n_ul_terms()];
        for tx in 0..self.n_tx {
            for target in 0..self.n_targets {
                let g = &self.comm.radar_to_rrh[tx][target];
                let inv_g = chol.solve(g);
                let gig = g.dotc(&inv_g).re;
                for k in 0..self.pulses {
                    let a2 = d.code.a[(tx, k)].norm_sqr();
                    for i in 0..self.n_ul {
                        let gih = g.dotc(&inv_h[i]);
                        let rinv_h = &inv_h[i] - &inv_g * (gih * a2 / (1.0 + a2 * gig));
                        ul[self.ul_term(i, k, tx, target)] =
                            rinv_h * C64::from(d.ul_powers[i].max(0.0).sqrt());
                    }
                }
            }
        }

        // DL: scalar u = c_jj / sigma_d^2.
        let mut dl = vec![C64::new(0.0, 0.0); self.n_dl_terms()];
        for (t, u) in dl.iter_mut().enumerate() {
            let (j, k, tx, target) = self.unflatten(t);
            let m2 = self.dl_second_moment(d, &st, j, k, tx, target);
            *u = st.c[(j, j)] / m2;
        }
        let _ = sc;
        Ok(Filters { radar, ul, dl })
    }

    /// Mean-squared errors of all terms for arbitrary filters.
    pub fn mse_values(&self, d: &Design, f: &Filters) -> TermValues {
        let st = self.power_state(d);
        let sc = &self.scenario;
        let radar = (0..self.radar.len())
            .map(|p| {
                let u = &f.radar[p];
                let var = self.radar[p].variance;
                let s = self.radar_signature(d, p);
                let su = s.dotc(u);
                let clutter: f64 = (0..self.n_tx)
                    .map(|m| d.code.row(m).dotc(u).norm_sqr())
                    .sum();
                var - 2.0 * var * su.re
                    + var * su.norm_sqr()
                    + st.radar_floor[p] * u.norm_squared()
                    + sc.clutter_variance * clutter
            })
            .collect();
        let ul = (0..self.n_ul_terms())
            .map(|t| {
                let (i, k, tx, target) = self.unflatten(t);
                let u = &f.ul[t];
                let total = self.ul_quadratic(d, &st, u, k, tx, target);
                1.0 - 2.0 * d.ul_powers[i].max(0.0).sqrt() * u.dotc(&self.ul_stacked[i]).re + total
            })
            .collect();
        let dl = (0..self.n_dl_terms())
            .map(|t| {
                let (j, k, tx, target) = self.unflatten(t);
                let u = f.dl[t];
                let m2 = self.dl_second_moment(d, &st, j, k, tx, target);
                1.0 - 2.0 * (u.conj() * st.c[(j, j)]).re + u.norm_sqr() * m2
            })
            .collect();
        TermValues { radar, ul, dl }
    }

    /// `u^H R_u u` of a UL term.
    fn ul_quadratic(
        &self,
        d: &Design,
        st: &PowerState,
        u: &DVector<C64>,
        k: usize,
        tx: usize,
        target: usize,
    ) -> f64 {
        let mut total: f64 = (0..self.n_ul)
            .map(|q| d.ul_powers[q] * u.dotc(&self.ul_stacked[q]).norm_sqr())
            .sum();
        total += u
            .iter()
            .zip(st.r_sr.iter())
            .map(|(x, r)| r * x.norm_sqr())
            .sum::<f64>();
        total +=
            d.code.a[(tx, k)].norm_sqr() * u.dotc(&self.comm.radar_to_rrh[tx][target]).norm_sqr();
        total + self.scenario.noise_ul * u.norm_squared()
    }

    /// UL SINR of term `t` under filter `u`.
    pub fn ul_sinr(&self, d: &Design, u: &DVector<C64>, t: usize) -> f64 {
        let st = self.power_state(d);
        self.ul_sinr_with(d, &st, u, t)
    }

    fn ul_sinr_with(&self, d: &Design, st: &PowerState, u: &DVector<C64>, t: usize) -> f64 {
        let (i, k, tx, target) = self.unflatten(t);
        let sig = d.ul_powers[i] * u.dotc(&self.ul_stacked[i]).norm_sqr();
        if sig == 0.0 {
            return 0.0;
        }
        let mut interf: f64 = (0..self.n_ul)
            .filter(|&q| q != i)
            .map(|q| d.ul_powers[q] * u.dotc(&self.ul_stacked[q]).norm_sqr())
            .sum();
        interf += u
            .iter()
            .zip(st.r_sr.iter())
            .map(|(x, r)| r * x.norm_sqr())
            .sum::<f64>();
        interf +=
            d.code.a[(tx, k)].norm_sqr() * u.dotc(&self.comm.radar_to_rrh[tx][target]).norm_sqr();
        interf += self.scenario.noise_ul * u.norm_squared();
        sig / interf
    }

    /// DL SINR of term `t` (independent of the scalar receive filter).
    pub fn dl_sinr(&self, d: &Design, t: usize) -> f64 {
        let st = self.power_state(d);
        self.dl_sinr_with(d, &st, t)
    }

    fn dl_sinr_with(&self, d: &Design, st: &PowerState, t: usize) -> f64 {
        let (j, k, tx, target) = self.unflatten(t);
        let sig = st.c[(j, j)].norm_sqr();
        if sig == 0.0 {
            return 0.0;
        }
        let mui: f64 = (0..self.n_dl)
            .filter(|&jp| jp != j)
            .map(|jp| st.c[(j, jp)].norm_sqr())
            .sum();
        let leak = self.comm.radar_to_dl[tx][target][j].norm_sqr() * d.code.a[(tx, k)].norm_sqr();
        sig / (mui + st.cci[j] + leak + self.scenario.noise_dl)
    }

    /// Objective with MMSE-optimal UL filters.
    pub fn cwsr(&self, d: &Design) -> Result<Cwsr> {
        let f = self.mmse_filters(d)?;
        let st = self.power_state(d);
        let mut radar = 0.0;
        for p in 0..self.radar.len() {
            let s = self.radar_signature(d, p);
            let rc = crate::channel::clutter_covariance(&d.code.a, self.scenario.clutter_variance);
            let r_in = crate::waveform::interference_covariance(0.0, 0.0, &rc, st.radar_floor[p]);
            radar += self.alpha.radar * radar_mi(&s, self.radar[p].variance, &r_in)?;
        }
        let ul: f64 = (0..self.n_ul_terms())
            .map(|t| self.alpha.ul * (1.0 + self.ul_sinr_with(d, &st, &f.ul[t], t)).log2())
            .sum();
        let dl: f64 = (0..self.n_dl_terms())
            .map(|t| self.alpha.dl * (1.0 + self.dl_sinr_with(d, &st, t)).log2())
            .sum();
        Ok(Cwsr { radar, ul, dl })
    }

    /// `Gamma = sum alpha W E`.
    pub fn gamma(&self, d: &Design, f: &Filters, w: &TermValues) -> f64 {
        let e = self.mse_values(d, f);
        let a = self.alpha;
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        a.radar * dot(&w.radar, &e.radar) + a.ul * dot(&w.ul, &e.ul) + a.dl * dot(&w.dl, &e.dl)
    }

    /// WMMSE cost `sum alpha (W E - ln W)` over terms with positive weight.
    pub fn wmmse_cost(&self, d: &Design, f: &Filters, w: &TermValues) -> f64 {
        let e = self.mse_values(d, f);
        let a = self.alpha;
        let part = |alpha: f64, w: &[f64], e: &[f64]| {
            w.iter()
                .zip(e)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, e)| alpha * (w * e - w.ln()))
                .sum::<f64>()
        };
        part(a.radar, &w.radar, &e.radar) + part(a.ul, &w.ul, &e.ul) + part(a.dl, &w.dl, &e.dl)
    }

    // ------------------------------------------------------------------------
    // Block quadratics
    // ------------------------------------------------------------------------

    /// `Gamma` as a function of `x = sqrt(P_u,i)`: `c - 2 b x + d x^2`.
    pub fn ul_power_block(
        &self,
        d: &Design,
        f: &Filters,
        w: &TermValues,
        i: usize,
    ) -> ScalarQuadratic {
        let a = self.alpha;
        let h = &self.ul_stacked[i];
        let mut b = 0.0;
        let mut dd = 0.0;
        for t in 0..self.n_ul_terms() {
            let (q, ..) = self.unflatten(t);
            let wt = a.ul * w.ul[t];
            let uh = f.ul[t].dotc(h);
            if q == i {
                b += wt * uh.re;
            }
            dd += wt * uh.norm_sqr();
        }
        for t in 0..self.n_dl_terms() {
            let (j, ..) = self.unflatten(t);
            dd += a.dl * w.dl[t] * f.dl[t].norm_sqr() * self.comm.ue_cross[(i, j)].norm_sqr();
        }
        for (p, path) in self.radar.iter().enumerate() {
            dd += a.radar
                * w.radar[p]
                * f.radar[p].norm_squared()
                * self.comm.ul_to_radar[(i, path.rx)].norm_sqr();
        }
        let x0 = d.ul_powers[i].max(0.0).sqrt();
        let c = self.gamma(d, f, w) + 2.0 * b * x0 - dd * x0 * x0;
        ScalarQuadratic {
            c,
            b,
            d: dd,
            budget: self.scenario.p_ul_max,
        }
    }

    /// `Gamma` as a function of `x_j = sqrt(P_d,mj)` for RRH `m`:
    /// `c - 2 b^T x + sum_j d_j x_j^2`.
    pub fn dl_power_block(
        &self,
        d: &Design,
        f: &Filters,
        w: &TermValues,
        m: usize,
    ) -> DiagQuadratic {
        let a = self.alpha;
        let st = self.power_state(d);
        let nj = self.n_dl;
        let xm: Vec<f64> = (0..nj)
            .map(|j| d.dl_powers[(m, j)].max(0.0).sqrt())
            .collect();
        let mut b = vec![0.0; nj];
        let mut dd = vec![0.0; nj];

        for t in 0..self.n_dl_terms() {
            let (j, ..) = self.unflatten(t);
            let wt = a.dl * w.dl[t];
            let u = f.dl[t];
            let u2 = u.norm_sqr();
            b[j] += wt * (u.conj() * self.kappa[m][j][j]).re;
            for jp in 0..nj {
                let kap = self.kappa[m][j][jp];
                let rest = st.c[(j, jp)] - kap * xm[jp];
                dd[jp] += wt * u2 * kap.norm_sqr();
                b[jp] -= wt * u2 * (kap.conj() * rest).re;
            }
        }

        let n = self.comm.si.nrows();
        let mut uw = DVector::<f64>::zeros(n);
        for t in 0..self.n_ul_terms() {
            let wt = a.ul * w.ul[t];
            for (acc, x) in uw.iter_mut().zip(f.ul[t].iter()) {
                *acc += wt * x.norm_sqr();
            }
        }
        let gamma_sr = self.scenario.sr_gamma;
        for j in 0..nj {
            let eta = &self.eta[m][j];
            let rest = &st.hv[j] - eta * C64::from(xm[j]);
            for k in 0..n {
                dd[j] += gamma_sr * uw[k] * eta[k].norm_sqr();
                b[j] -= gamma_sr * uw[k] * (eta[k].conj() * rest[k]).re;
            }
        }

        for (p, path) in self.radar.iter().enumerate() {
            let wt = a.radar * w.radar[p] * f.radar[p].norm_squared();
            let group = self.dr_groups[p]
                .iter()
                .find(|g| g.contains(&m))
                .expect("every RRH is grouped");
            for j in 0..nj {
                let z = self.zeta[m][path.rx][j];
                let rest: C64 = group
                    .iter()
                    .filter(|&&mp| mp != m)
                    .map(|&mp| self.zeta[mp][path.rx][j] * d.dl_powers[(mp, j)].max(0.0).sqrt())
                    .sum();
                dd[j] += wt * z.norm_sqr();
                b[j] -= wt * (z.conj() * rest).re;
            }
        }

        let lin: f64 = b.iter().zip(&xm).map(|(b, x)| b * x).sum();
        let quad: f64 = dd.iter().zip(&xm).map(|(d, x)| d * x * x).sum();
        let c = self.gamma(d, f, w) + 2.0 * lin - quad;
        DiagQuadratic {
            c,
            b,
            d: dd,
            budget: self.scenario.p_dl_max,
        }
    }

    /// `Gamma` as a function of code row `a` of transmitter `tx`:
    /// `c - 2 Re(a^H b) + a^H Q a`.
    pub fn code_block(
        &self,
        d: &Design,
        f: &Filters,
        w: &TermValues,
        tx: usize,
    ) -> HermitianQuadratic {
        let a = self.alpha;
        let k = self.pulses;
        let mut q = DMatrix::<C64>::zeros(k, k);
        let mut b = DVector::<C64>::zeros(k);
        let sc = &self.scenario;
        for (p, path) in self.radar.iter().enumerate() {
            let wt = a.radar * w.radar[p];
            let u = &f.radar[p];
            q += u * u.adjoint() * C64::from(wt * sc.clutter_variance);
            if path.tx == tx {
                let var = path.variance;
                let wq = self.steering[p].conjugate().component_mul(u);
                b += &wq * C64::from(wt * var);
                q += &wq * wq.adjoint() * C64::from(wt * var);
            }
        }
        for target in 0..self.n_targets {
            let g = &self.comm.radar_to_rrh[tx][target];
            for kk in 0..k {
                let mut diag = 0.0;
                for i in 0..self.n_ul {
                    let t = self.ul_term(i, kk, tx, target);
                    diag += a.ul * w.ul[t] * f.ul[t].dotc(g).norm_sqr();
                }
                for j in 0..self.n_dl {
                    let t = self.dl_term(j, kk, tx, target);
                    diag += a.dl
                        * w.dl[t]
                        * f.dl[t].norm_sqr()
                        * self.comm.radar_to_dl[tx][target][j].norm_sqr();
                }
                q[(kk, kk)] += C64::from(diag);
            }
        }
        // Enforce exact Hermitian symmetry before the eigen-solve.
        let q = (&q + q.adjoint()) * C64::from(0.5);
        let a0 = d.code.row(tx);
        let c = self.gamma(d, f, w) + 2.0 * a0.dotc(&b).re - a0.dotc(&(&q * &a0)).re;
        HermitianQuadratic {
            c,
            b,
            q,
            budget: sc.p_radar[tx],
        }
    }
}

/// MMSE weights `W = 1/E`. Radar paths with zero channel variance carry no
/// information and get weight zero.
pub fn optimal_weights(problem: &CodesignProblem, e: &TermValues) -> Result<TermValues> {
    let inv = |x: f64| {
        if x > 0.0 && x.is_finite() {
            Ok(1.0 / x)
        } else {
            Err(Error::Numerical(format!("nonpositive MSE {x}")))
        }
    };
    let radar = e
        .radar
        .iter()
        .zip(&problem.radar)
        .map(|(&x, p)| if p.variance == 0.0 { Ok(0.0) } else { inv(x) })
        .collect::<Result<_>>()?;
    let ul = e.ul.iter().map(|&x| inv(x)).collect::<Result<_>>()?;
    let dl = e.dl.iter().map(|&x| inv(x)).collect::<Result<_>>()?;
    Ok(TermValues { radar, ul, dl })
}

// ----------------------------------------------------------------------------
// Dual block solver
// ----------------------------------------------------------------------------

/// A convex block problem `min f(x) s.t. energy(x) <= budget` whose
/// Lagrangian minimiser is available in closed form.
pub trait DualBlock {
    type X: Clone;
    /// Minimiser of `f(x) + lambda energy(x)`.
    fn primal(&self, lambda: f64) -> Self::X;
    fn energy(&self, x: &Self::X) -> f64;
    fn value(&self, x: &Self::X) -> f64;
    fn scale(&self, x: &Self::X, factor: f64) -> Self::X;
    fn budget(&self) -> f64;
}

const DENOM_FLOOR: f64 = 1e-300;

/// `c - 2 b x + d x^2` over `x >= 0` with `x^2 <= budget`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarQuadratic {
    pub c: f64,
    pub b: f64,
    pub d: f64,
    pub budget: f64,
}

impl DualBlock for ScalarQuadratic {
    type X = f64;
    fn primal(&self, lambda: f64) -> f64 {
        self.b.max(0.0) / (self.d + lambda).max(DENOM_FLOOR)
    }
    fn energy(&self, x: &f64) -> f64 {
        x * x
    }
    fn value(&self, x: &f64) -> f64 {
        self.c - 2.0 * self.b * x + self.d * x * x
    }
    fn scale(&self, x: &f64, factor: f64) -> f64 {
        x * factor
    }
    fn budget(&self) -> f64 {
        self.budget
    }
}

/// `c - 2 b^T x + sum d_j x_j^2` over `x >= 0` with `||x||^2 <= budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagQuadratic {
    pub c: f64,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
    pub budget: f64,
}

impl DualBlock for DiagQuadratic {
    type X = Vec<f64>;
    fn primal(&self, lambda: f64) -> Vec<f64> {
        self.b
            .iter()
            .zip(&self.d)
            .map(|(b, d)| b.max(0.0) / (d + lambda).max(DENOM_FLOOR))
            .collect()
    }
    fn energy(&self, x: &Vec<f64>) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn value(&self, x: &Vec<f64>) -> f64 {
        self.c
            + x.iter()
                .zip(self.b.iter().zip(&self.d))
                .map(|(x, (b, d))| -2.0 * b * x + d * x * x)
                .sum::<f64>()
    }
    fn scale(&self, x: &Vec<f64>, factor: f64) -> Vec<f64> {
        x.iter().map(|v| v * factor).collect()
    }
    fn budget(&self) -> f64 {
        self.budget
    }
}

/// `c - 2 Re(a^H b) + a^H Q a` with `||a||^2 <= budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianQuadratic {
    pub c: f64,
    pub b: DVector<C64>,
    pub q: DMatrix<C64>,
    pub budget: f64,
}

impl HermitianQuadratic {
    pub fn value_at(&self, a: &DVector<C64>) -> f64 {
        self.c - 2.0 * a.dotc(&self.b).re + a.dotc(&(&self.q * a)).re
    }

    /// The same problem in the eigenbasis of `Q`.
    pub fn diagonalize(&self) -> EigenQuadratic {
        let eig = self.q.clone().symmetric_eigen();
        let cb = eig.eigenvectors.adjoint() * &self.b;
        EigenQuadratic {
            c: self.c,
            mu: eig.eigenvalues.map(|x| x.max(0.0)),
            cb,
            basis: eig.eigenvectors,
            budget: self.budget,
        }
    }
}

/// [`HermitianQuadratic`] expressed in the eigenbasis of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenQuadratic {
    pub c: f64,
    pub mu: DVector<f64>,
    pub cb: DVector<C64>,
    pub basis: DMatrix<C64>,
    pub budget: f64,
}

impl EigenQuadratic {
    pub fn to_original(&self, w: &DVector<C64>) -> DVector<C64> {
        &self.basis * w
    }

    pub fn to_eigen(&self, a: &DVector<C64>) -> DVector<C64> {
        self.basis.adjoint() * a
    }
}

impl DualBlock for EigenQuadratic {
    type X = DVector<C64>;
    fn primal(&self, lambda: f64) -> DVector<C64> {
        DVector::from_fn(self.cb.len(), |k, _| {
            self.cb[k] / (self.mu[k] + lambda).max(DENOM_FLOOR)
        })
    }
    fn energy(&self, x: &DVector<C64>) -> f64 {
        x.norm_squared()
    }
    fn value(&self, x: &DVector<C64>) -> f64 {
        let lin: f64 = x
            .iter()
            .zip(self.cb.iter())
            .map(|(x, b)| (x.conj() * b).re)
            .sum();
        let quad: f64 = x
            .iter()
            .zip(self.mu.iter())
            .map(|(x, m)| m * x.norm_sqr())
            .sum();
        self.c - 2.0 * lin + quad
    }
    fn scale(&self, x: &DVector<C64>, factor: f64) -> DVector<C64> {
        x * C64::from(factor)
    }
    fn budget(&self) -> f64 {
        self.budget
    }
}

/// Step-size rule of the dual subgradient iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    #[default]
    BarzilaiBorwein,
    Polyak,
}

/// Settings of the dual block solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    pub max_iter: usize,
    /// Relative multiplier change that ends the iteration.
    pub tol: f64,
    pub rule: StepRule,
    /// Step used on the first iteration and whenever BB is undefined.
    pub fallback_step: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            rule: StepRule::BarzilaiBorwein,
            fallback_step: 1e-2,
        }
    }
}

/// Result of one block solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DualOutcome<X> {
    /// Best feasible point seen.
    pub x: X,
    pub value: f64,
    /// Final multiplier.
    pub lambda: f64,
    pub iterations: usize,
    /// Running minimum of the objective over feasible iterates.
    pub gamma_min: Vec<f64>,
    /// Step sizes used, one per iteration.
    pub steps: Vec<f64>,
    /// Iterations that fell back to the fixed step.
    pub fallbacks: usize,
}

/// Projected dual subgradient ascent on `lambda >= 0` for one block.
///
/// `entry` must be feasible; the returned point is never worse than it.
/// Each multiplier yields the closed-form primal minimiser; infeasible
/// minimisers are scaled back onto the budget before being scored.
pub fn solve_dual<B: DualBlock>(
    block: &B,
    entry: &B::X,
    opts: &DualOptions,
) -> Result<DualOutcome<B::X>> {
    let budget = block.budget();
    let mut best = entry.clone();
    let mut best_val = block.value(entry);
    if !best_val.is_finite() {
        return Err(Error::Numerical(
            "non-finite objective at block entry".into(),
        ));
    }
    let mut gamma_min = vec![best_val];
    let mut steps = Vec::new();
    let mut fallbacks = 0;

    let consider = |x: &B::X, best: &mut B::X, best_val: &mut f64| -> Result<f64> {
        let e = block.energy(x);
        if !e.is_finite() {
            return Err(Error::Numerical("non-finite primal iterate".into()));
        }
        let feasible = if e > budget {
            let f = if e > 0.0 { (budget / e).sqrt() } else { 0.0 };
            block.scale(x, f)
        } else {
            x.clone()
        };
        let v = block.value(&feasible);
        if v < *best_val {
            *best_val = v;
            *best = feasible;
        }
        Ok(e - budget)
    };

    let mut lambda = 0.0;
    let mut x = block.primal(lambda);
    let mut g = consider(&x, &mut best, &mut best_val)?;
    gamma_min.push(best_val);
    if g <= 0.0 {
        // Unconstrained minimiser is feasible: complementary slackness.
        return Ok(DualOutcome {
            x: best,
            value: best_val,
            lambda: 0.0,
            iterations: 0,
            gamma_min,
            steps,
            fallbacks,
        });
    }
    let mut beta = opts.fallback_step;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        steps.push(beta);
        let next = (lambda + beta * g).max(0.0);
        let x_next = block.primal(next);
        let g_next = consider(&x_next, &mut best, &mut best_val)?;
        gamma_min.push(best_val);
        if !g_next.is_finite() {
            return Err(Error::Numerical("non-finite dual subgradient".into()));
        }
        let s = next - lambda;
        let converged = s.abs() <= opts.tol * next.max(f64::MIN_POSITIVE)
            || g_next.abs() <= opts.tol * budget.max(1e-300);
        // The dual is concave; BB works on its negation, whose gradient
        // changes by -(g_next - g).
        let y = -(g_next - g);
        beta = match opts.rule {
            StepRule::BarzilaiBorwein => match bb_step(s, y) {
                Some(b) if s * y > 1e-12 => b,
                _ => {
                    fallbacks += 1;
                    opts.fallback_step
                }
            },
            StepRule::Polyak => {
                let dual = block.value(&x_next) + next * g_next;
                let gap = (best_val - dual).max(0.0);
                if g_next != 0.0 && gap > 0.0 {
                    gap / (g_next * g_next)
                } else {
                    fallbacks += 1;
                    opts.fallback_step
                }
            }
        };
        lambda = next;
        x = x_next;
        g = g_next;
        if converged {
            break;
        }
    }
    let _ = x;
    Ok(DualOutcome {
        x: best,
        value: best_val,
        lambda,
        iterations,
        gamma_min,
        steps,
        fallbacks,
    })
}

// ----------------------------------------------------------------------------
// PAR projection
// ----------------------------------------------------------------------------

/// Nearest vector to `z` with `||a||^2 = energy` and
/// `K max|a_k|^2 / energy <= par_limit`.
///
/// The minimiser keeps the phases of `z` and sets magnitudes
/// `min(c |z_k|, delta)` with `delta^2 = par_limit energy / K` and `c` chosen
/// to meet the energy exactly. Entries of `z` that vanish only receive energy
/// when the others cannot hold it.
pub fn par_project(z: &DVector<C64>, energy: f64, par_limit: f64) -> Result<DVector<C64>> {
    if !(par_limit >= 1.0) {
        return Err(Error::Infeasible(format!("PAR limit {par_limit} below 1")));
    }
    if !(energy > 0.0) {
        return Err(Error::Infeasible(format!(
            "code energy {energy} must be positive"
        )));
    }
    let k = z.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty code row".into()));
    }
    let delta2 = (par_limit * energy / k as f64).min(energy);
    let delta = delta2.sqrt();
    let mags: Vec<f64> = z.iter().map(|x| x.norm()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));

    let mut out_mag = vec![0.0; k];
    let mut rest: f64 = mags.iter().map(|m| m * m).sum();
    let mut done = false;
    for n in 0..=k {
        let need = energy - n as f64 * delta2;
        if need <= 0.0 {
            // n clipped entries already hold the energy (only when
            // energy = n delta^2 exactly, up to rounding).
            for &idx in &order[..n] {
                out_mag[idx] = delta;
            }
            done = true;
            break;
        }
        if n == k {
            break;
        }
        if rest > 0.0 {
            let c = (need / rest).sqrt();
            if c * mags[order[n]] <= delta * (1.0 + 1e-12) {
                for (pos, &idx) in order.iter().enumerate() {
                    out_mag[idx] = if pos < n {
                        delta
                    } else {
                        (c * mags[idx]).min(delta)
                    };
                }
                done = true;
                break;
            }
        } else {
            // The remaining entries are zero: spread the residual energy.
            let share = (need / (k - n) as f64).sqrt().min(delta);
            for (pos, &idx) in order.iter().enumerate() {
                out_mag[idx] = if pos < n { delta } else { share };
            }
            done = true;
            break;
        }
        rest -= mags[order[n]] * mags[order[n]];
        rest = rest.max(0.0);
    }
    if !done {
        return Err(Error::Infeasible(
            "energy and PAR limits are incompatible".into(),
        ));
    }
    Ok(DVector::from_fn(k, |i, _| {
        if mags[i] > 0.0 {
            z[i] * C64::from(out_mag[i] / mags[i])
        } else {
            C64::from(out_mag[i])
        }
    }))
}

// ----------------------------------------------------------------------------
// Block coordinate descent
// ----------------------------------------------------------------------------

/// Settings of the outer alternating loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    pub max_outer: usize,
    /// Relative decrease of the running minimum over `window` iterations
    /// below which the loop stops.
    pub tol: f64,
    pub window: usize,
    pub dual: DualOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            max_outer: 100,
            tol: 1e-6,
            window: 10,
            dual: DualOptions::default(),
        }
    }
}

/// One outer iteration of [`bcd_codesign`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub cwsr: f64,
    /// WMMSE cost after the filter and weight refresh.
    pub gamma: f64,
    pub gamma_min: f64,
    /// Final dual step of every block solved in this iteration.
    pub steps: Vec<f64>,
    /// Dual iterations spent on every block.
    pub inner_iterations: Vec<usize>,
}

/// Per-iteration history of the optimiser.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    pub records: Vec<IterationRecord>,
    pub fallbacks: usize,
}

impl ConvergenceTrace {
    /// First iteration at which the running minimum moved by less than
    /// `tol` (relative) over the preceding `window` iterations.
    pub fn iterations_to(&self, tol: f64, window: usize) -> Option<usize> {
        (window..self.records.len()).find(|&l| {
            let old = self.records[l - window].gamma_min;
            let new = self.records[l].gamma_min;
            (old - new).abs() <= tol * new.abs().max(1e-300)
        })
    }
}

/// Reference initialisation: full UL power, uniform DL power, random-phase
/// constant-modulus code rows projected onto the PAR set.
pub fn initial_design<R: Rng + ?Sized>(problem: &CodesignProblem, rng: &mut R) -> Result<Design> {
    let sc = &problem.scenario;
    let k = sc.pulses;
    let mut code = RadarCodeMatrix::new(DMatrix::zeros(sc.radar_tx.len(), k));
    for m in 0..sc.radar_tx.len() {
        let amp = (sc.p_radar[m] / k as f64).sqrt();
        let row = DVector::from_fn(k, |_, _| {
            C64::from_polar(amp, rng.gen::<f64>() * 2.0 * std::f64::consts::PI)
        });
        code.set_row(m, &par_project(&row, sc.p_radar[m], sc.par[m])?);
    }
    let n_dl = sc.dl_ue.len().max(1);
    Ok(Design {
        code,
        ul_powers: vec![sc.p_ul_max; sc.ul_ue.len()],
        dl_powers: DMatrix::from_element(sc.rrh.len(), sc.dl_ue.len(), sc.p_dl_max / n_dl as f64),
    })
}

/// Check every constraint of a design.
pub fn is_feasible(problem: &CodesignProblem, d: &Design, tol: f64) -> bool {
    let sc = &problem.scenario;
    let ul_ok = d
        .ul_powers
        .iter()
        .all(|&p| p >= 0.0 && p <= sc.p_ul_max * (1.0 + tol) + tol);
    let dl_ok = d.dl_powers.row_iter().all(|r| {
        r.iter().all(|&p| p >= 0.0) && r.iter().sum::<f64>() <= sc.p_dl_max * (1.0 + tol) + tol
    });
    ul_ok && dl_ok && d.code.is_feasible(&sc.p_radar, &sc.par, tol)
}

/// Alternate filters, weights, UL powers, DL powers and code rows.
///
/// Returns the iterate with the smallest WMMSE cost together with the
/// per-iteration trace.
pub fn bcd_codesign(
    problem: &CodesignProblem,
    init: Design,
    opts: &BcdOptions,
) -> Result<(Design, ConvergenceTrace)> {
    let sc = &problem.scenario;
    let mut design = init;
    let mut best = design.clone();
    let mut gamma_min = f64::INFINITY;
    let mut trace = ConvergenceTrace::default();

    for _ in 0..opts.max_outer {
        let f = problem.mmse_filters(&design)?;
        let e = problem.mse_values(&design, &f);
        let w = optimal_weights(problem, &e)?;
        let cost = problem.wmmse_cost(&design, &f, &w);
        if cost < gamma_min {
            gamma_min = cost;
            best = design.clone();
        }
        let cwsr = problem.cwsr(&design)?.total();
        trace.records.push(IterationRecord {
            cwsr,
            gamma: cost,
            gamma_min,
            steps: Vec::new(),
            inner_iterations: Vec::new(),
        });
        if trace.iterations_to(opts.tol, opts.window).is_some() {
            break;
        }
        let mut steps = Vec::new();
        let mut inner = Vec::new();

        for i in 0..sc.ul_ue.len() {
            let block = problem.ul_power_block(&design, &f, &w, i);
            let x0 = design.ul_powers[i].max(0.0).sqrt();
            let out = solve_dual(&block, &x0, &opts.dual)?;
            design.ul_powers[i] = (out.x * out.x).min(sc.p_ul_max);
            steps.push(out.steps.last().copied().unwrap_or(0.0));
            inner.push(out.iterations);
            trace.fallbacks += out.fallbacks;
        }
        for m in 0..sc.rrh.len() {
            let block = problem.dl_power_block(&design, &f, &w, m);
            let x0: Vec<f64> = (0..sc.dl_ue.len())
                .map(|j| design.dl_powers[(m, j)].max(0.0).sqrt())
                .collect();
            let out = solve_dual(&block, &x0, &opts.dual)?;
            let total: f64 = out.x.iter().map(|x| x * x).sum();
            let shrink = if total > sc.p_dl_max {
                sc.p_dl_max / total
            } else {
                1.0
            };
            for (j, x) in out.x.iter().enumerate() {
                design.dl_powers[(m, j)] = x * x * shrink;
            }
            steps.push(out.steps.last().copied().unwrap_or(0.0));
            inner.push(out.iterations);
            trace.fallbacks += out.fallbacks;
        }
        for m in 0..sc.radar_tx.len() {
            let block = problem.code_block(&design, &f, &w, m).diagonalize();
            let x0 = block.to_eigen(&design.code.row(m));
            let out = solve_dual(&block, &x0, &opts.dual)?;
            let relaxed = block.to_original(&out.x);
            let row = if relaxed.norm_squared() > 0.0 {
                par_project(&relaxed, sc.p_radar[m], sc.par[m])?
            } else {
                design.code.row(m)
            };
            design.code.set_row(m, &row);
            steps.push(out.steps.last().copied().unwrap_or(0.0));
            inner.push(out.iterations);
            trace.fallbacks += out.fallbacks;
        }
        let last = trace.records.last_mut().expect("record pushed above");
        last.steps = steps;
        last.inner_iterations = inner;
    }
    Ok((best, trace))
}
