//! Experiment metrics: probability of correct association, position RMSE
//! and convergence summaries.

use crate::error::{Error, Result};
use crate::geometry::Position;

// ----------------------------------------------------------------------------
// Association
// ----------------------------------------------------------------------------

/// Correct associations `d_c` out of `D`, with `P_c = d_c / D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationScore {
    pub correct: usize,
    pub total: usize,
    pub p_c: f64,
}

impl AssociationScore {
    pub fn new(correct: usize, total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::InvalidArgument("no associations to score".into()));
        }
        if correct > total {
            return Err(Error::InvalidArgument(
                "more correct associations than total".into(),
            ));
        }
        Ok(Self {
            correct,
            total,
            p_c: correct as f64 / total as f64,
        })
    }

    /// Pool two scores.
    pub fn merge(&self, other: &Self) -> Self {
        let (correct, total) = (self.correct + other.correct, self.total + other.total);
        Self {
            correct,
            total,
            p_c: correct as f64 / total as f64,
        }
    }
}

/// Score an assignment against the true labels, element by element.
pub fn correct_association_probability<T: PartialEq>(
    assigned: &[T],
    truth: &[T],
) -> Result<AssociationScore> {
    if assigned.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} assignments for {} true labels",
            assigned.len(),
            truth.len()
        )));
    }
    let correct = assigned.iter().zip(truth).filter(|(a, t)| a == t).count();
    AssociationScore::new(correct, truth.len())
}

// ----------------------------------------------------------------------------
// Tracking error
// ----------------------------------------------------------------------------

/// Position RMSE per CPI and over all CPIs.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionRmse {
    pub per_cpi: Vec<f64>,
    pub overall: f64,
}

/// RMS Euclidean position error. `estimates[r][k]` is run `r` (a trial or
/// a target) at CPI `k`; the per-CPI value averages over runs.
pub fn position_rmse(estimates: &[Vec<Position>], truth: &[Vec<Position>]) -> Result<PositionRmse> {
    if estimates.len() != truth.len() {
        return Err(Error::Dimension(
            "estimate and truth run counts differ".into(),
        ));
    }
    let Some(n_cpi) = truth.first().map(Vec::len) else {
        return Err(Error::InvalidArgument("no runs to score".into()));
    };
    if n_cpi == 0 {
        return Err(Error::InvalidArgument("no CPIs to score".into()));
    }
    let mut per_cpi = vec![0.0; n_cpi];
    for (e, t) in estimates.iter().zip(truth) {
        if e.len() != n_cpi || t.len() != n_cpi {
            return Err(Error::Dimension(
                "misaligned estimate and truth time bases".into(),
            ));
        }
        for (k, (a, b)) in e.iter().zip(t).enumerate() {
            per_cpi[k] += (a - b).norm_squared();
        }
    }
    let runs = truth.len() as f64;
    let overall = (per_cpi.iter().sum::<f64>() / (runs * n_cpi as f64)).sqrt();
    for v in &mut per_cpi {
        *v = (*v / runs).sqrt();
    }
    Ok(PositionRmse { per_cpi, overall })
}

// ----------------------------------------------------------------------------
// Convergence
// ----------------------------------------------------------------------------

/// Summary of an objective trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSummary {
    pub final_value: f64,
    /// First iteration `k >= 1` with `|v_k - v_{k-1}| <= tol |v_{k-1}|`;
    /// a single-entry trace counts as converged at 1.
    pub iterations_to_tolerance: Option<usize>,
    /// Whether the trace never increases.
    pub monotone: bool,
}

/// Summarise a trace such as the running minimum of the co-design cost.
pub fn summarize_convergence(trace: &[f64], tol: f64) -> Result<ConvergenceSummary> {
    let Some(&final_value) = trace.last() else {
        return Err(Error::InvalidArgument("empty convergence trace".into()));
    };
    let iterations_to_tolerance = if trace.len() == 1 {
        Some(1)
    } else {
        (1..trace.len()).find(|&k| (trace[k] - trace[k - 1]).abs() <= tol * trace[k - 1].abs())
    };
    let monotone = trace.windows(2).all(|w| w[1] <= w[0]);
    Ok(ConvergenceSummary {
        final_value,
        iterations_to_tolerance,
        monotone,
    })
}
