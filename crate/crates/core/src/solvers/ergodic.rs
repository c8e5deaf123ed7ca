use serde::{Deserialize, Serialize};

use super::Snapshots;
use crate::cones::f_value;
use crate::error::{Error, Result};
use crate::lifting::FeasibilityProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicRecord {
    pub iter: usize,
    /// `f` at the weighted average of the w iterates.
    pub f_value: f64,
    /// `||A v_avg + b - w_avg||`.
    pub residual: f64,
}

/// Weighted averages `(x^T + alpha sum_{t<T} x^t) / (1 + alpha (T - 1))` of the recorded
/// iterates for every horizon `T`, using the closing w-step for `x^T`.
pub fn ergodic_diagnostics(
    problem: &FeasibilityProblem,
    snapshots: Option<&Snapshots>,
) -> Result<Vec<ErgodicRecord>> {
    let snap = snapshots.ok_or(Error::MissingSnapshots)?;
    if snap.w.is_empty() || snap.w.len() != snap.v.len() || snap.w.len() != snap.w_final.len() {
        return Err(Error::MissingSnapshots);
    }
    let alpha = snap.alpha;
    let b = problem.offset();
    let mut sum_w = vec![0.0; problem.rows()];
    let mut sum_v = vec![0.0; problem.cols()];
    let mut w_avg = vec![0.0; problem.rows()];
    let mut v_avg = vec![0.0; problem.cols()];
    let mut out = Vec::with_capacity(snap.w.len());
    for t in 0..snap.w.len() {
        let denom = 1.0 + alpha * t as f64;
        for i in 0..w_avg.len() {
            w_avg[i] = (snap.w_final[t][i] + alpha * sum_w[i]) / denom;
        }
        for i in 0..v_avg.len() {
            v_avg[i] = (snap.v[t][i] + alpha * sum_v[i]) / denom;
        }
        let av = problem.apply(&v_avg)?;
        let residual = av
            .iter()
            .zip(&b)
            .zip(&w_avg)
            .map(|((a, b), w)| (a + b - w).powi(2))
            .sum::<f64>()
            .sqrt();
        out.push(ErgodicRecord {
            iter: t + 1,
            f_value: f_value(&w_avg, problem.layout())?,
            residual,
        });
        for (s, w) in sum_w.iter_mut().zip(&snap.w[t]) {
            *s += w;
        }
        for (s, v) in sum_v.iter_mut().zip(&snap.v[t]) {
            *s += v;
        }
    }
    Ok(out)
}
