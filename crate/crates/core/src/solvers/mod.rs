//! ADMM and randomized ADMM for `min f(w) s.t. w = A v + b`, where `f` is half the squared
//! distance to the product of cones and power balls, plus the min-power variant.

mod admm;
mod ergodic;
mod qos;

pub use admm::{randomized_admm, standard_admm, AdmmRun, Method, StepInfo};
pub use ergodic::{ergodic_diagnostics, ErgodicRecord};
pub use qos::{qos_admm, QosRun};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::FeasibilityProblem;
use crate::scenario::C64;

/// Iterations between full recomputations of the running sum `tau`.
pub const TAU_RESYNC_INTERVAL: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Penalty parameter.
    pub beta: f64,
    /// Per-block selection probability of the randomized method.
    pub alpha: f64,
    /// Proximal weight of the randomized w-step.
    pub alpha_bar: f64,
    pub max_iter: usize,
    /// Stop once the beamformer change falls to this level.
    pub opg_tol: f64,
    /// Feasible iff `f(A v + b) <= feas_tol * (1 + ||b||^2)` at exit.
    pub feas_tol: f64,
    pub seed: u64,
    /// Reject `alpha * alpha_bar < 1/alpha^2 - 1`.
    pub theory_mode: bool,
    /// Keep every iterate for ergodic diagnostics.
    pub record_snapshots: bool,
    /// Worker threads for the block solves.
    pub threads: usize,
    /// Start each bisection check from the previous check's iterates.
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            beta: 0.003,
            alpha: 0.05,
            alpha_bar: 0.01,
            max_iter: 5000,
            opg_tol: 1e-10,
            feas_tol: 1e-10,
            seed: 0,
            theory_mode: false,
            record_snapshots: false,
            threads: 1,
            warm_start: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be positive and finite"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1]"));
        }
        if !(self.alpha_bar >= 0.0 && self.alpha_bar.is_finite()) {
            return Err(Error::config("alpha_bar", "must be nonnegative and finite"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be positive"));
        }
        if !(self.opg_tol >= 0.0) {
            return Err(Error::config("opg_tol", "must be nonnegative"));
        }
        if !(self.feas_tol >= 0.0) {
            return Err(Error::config("feas_tol", "must be nonnegative"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        if self.theory_mode && self.alpha * self.alpha_bar < self.alpha.powi(-2) - 1.0 {
            return Err(Error::config(
                "alpha_bar",
                format!(
                    "theory mode needs alpha * alpha_bar >= alpha^-2 - 1 = {}",
                    self.alpha.powi(-2) - 1.0
                ),
            ));
        }
        Ok(())
    }

    /// Smallest `alpha_bar` admitted by theory mode for the given `alpha`.
    pub fn theory_alpha_bar(alpha: f64) -> f64 {
        (alpha.powi(-2) - 1.0) / alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    OpgTol,
    MaxIter,
}

/// Iterates of one run. `tau` is the running sum `sum_j A_j v_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub v: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub iter: usize,
}

impl SolverState {
    pub fn zeros(problem: &FeasibilityProblem) -> Self {
        SolverState {
            v: vec![vec![0.0; problem.block_len()]; problem.num_blocks()],
            w: vec![0.0; problem.rows()],
            lambda: vec![0.0; problem.rows()],
            tau: vec![0.0; problem.rows()],
            iter: 0,
        }
    }

    /// Reuses `v`, `w`, `lambda` from an earlier run on the same channels, recomputing `tau`
    /// for `problem` and restarting the counter.
    pub fn warm(problem: &FeasibilityProblem, previous: &SolverState) -> Result<Self> {
        let mut state = SolverState {
            v: previous.v.clone(),
            w: previous.w.clone(),
            lambda: previous.lambda.clone(),
            tau: Vec::new(),
            iter: 0,
        };
        if state.v.len() != problem.num_blocks()
            || state.v.iter().any(|b| b.len() != problem.block_len())
            || state.w.len() != problem.rows()
            || state.lambda.len() != problem.rows()
        {
            return Err(Error::DimensionMismatch {
                what: "warm-start state rows",
                expected: problem.rows(),
                actual: state.w.len(),
            });
        }
        state.tau = state.recompute_tau(problem);
        Ok(state)
    }

    pub fn recompute_tau(&self, problem: &FeasibilityProblem) -> Vec<f64> {
        let mut tau = vec![0.0; problem.rows()];
        let mut compact = vec![0.0; problem.compact_len()];
        for (j, v) in self.v.iter().enumerate() {
            problem.apply_block_compact(j, v, &mut compact);
            problem.scatter(j, &compact, &mut tau);
        }
        tau
    }

    /// Stacked real beamformer `[v_1; ...; v_K]`.
    pub fn stacked_v(&self) -> Vec<f64> {
        self.v.concat()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub f_value: f64,
    pub opg: f64,
    pub primal_residual: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_CSV_HEADER: &str = "iter,f_value,opg,primal_residual,wall_ms";

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:.6}",
                r.iter, r.f_value, r.opg, r.primal_residual, r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// Mean wall time per iteration in milliseconds.
    pub fn ms_per_iter(&self) -> f64 {
        match self.records.last() {
            Some(r) if r.iter > 0 => r.wall_ms / r.iter as f64,
            _ => 0.0,
        }
    }
}

/// Iterates kept in snapshot mode. `w_final[t]` is the w-step evaluated with the full penalty
/// and proximal weight `alpha * alpha_bar`, the variant that closes a run at iteration `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshots {
    pub alpha: f64,
    pub w: Vec<Vec<f64>>,
    pub w_final: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub verdict: Verdict,
    /// `f(A v + b)` at the returned beamformers.
    pub final_f: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// `v_k[m]` in the units of the problem that was solved.
    pub beamformers: Vec<C64>,
    pub trace: ConvergenceTrace,
    pub state: SolverState,
    pub snapshots: Option<Snapshots>,
}

/// The scale-aware threshold applied to `f` when deciding feasibility.
pub fn feasibility_threshold(problem: &FeasibilityProblem, feas_tol: f64) -> f64 {
    let b2: f64 = problem.noise_std().iter().map(|s| s * s).sum();
    feas_tol * (1.0 + b2)
}

/// Applies the verdict rule: feasible below threshold; otherwise undecided when the run hit
/// `max_iter` while `f` was still falling by more than 1% per 100 iterations.
pub fn decide(
    final_f: f64,
    threshold: f64,
    stop_reason: StopReason,
    trace: &ConvergenceTrace,
) -> Verdict {
    if final_f <= threshold {
        return Verdict::Feasible;
    }
    if stop_reason == StopReason::OpgTol {
        return Verdict::Infeasible;
    }
    let n = trace.records.len();
    if n <= 100 {
        return Verdict::Undecided;
    }
    let now = trace.records[n - 1].f_value;
    let before = trace.records[n - 101].f_value;
    if before - now > 0.01 * before {
        Verdict::Undecided
    } else {
        Verdict::Infeasible
    }
}
