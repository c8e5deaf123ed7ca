use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    decide, feasibility_threshold, ConvergenceTrace, Snapshots, SolveOutcome, SolverConfig,
    SolverState, StopReason, TraceRecord, TAU_RESYNC_INTERVAL,
};
use crate::cones::{f_value, prox_block_into};
use crate::error::{Error, Result};
use crate::lifting::{to_complex, Dims, FeasibilityProblem, Scratch, WoodburyFactors};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Every block every iteration, full dual step.
    Standard,
    /// Bernoulli block selection, damped dual step, proximal w-step.
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub iter: usize,
    pub selected: usize,
    pub opg: f64,
    pub f_value: f64,
    pub primal_residual: f64,
}

pub(super) struct BlockBuf {
    pub v_new: Vec<f64>,
    pub compact: Vec<f64>,
    pub scratch: Scratch,
}

/// Computes `-(A_j^T A_j)^{-1} A_j^T D_j r` into `buf.v_new` and `A_j` of it into `buf.compact`.
pub(super) fn block_update(
    problem: &FeasibilityProblem,
    factors: &WoodburyFactors,
    j: usize,
    r: &[f64],
    buf: &mut BlockBuf,
) {
    problem.gather(j, r, &mut buf.compact);
    factors.solve_compact(problem, j, &buf.compact, &mut buf.v_new, &mut buf.scratch);
    buf.v_new.iter_mut().for_each(|x| *x = -*x);
    problem.apply_block_compact(j, &buf.v_new, &mut buf.compact);
}

pub(super) fn build_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::config("threads", e.to_string()))
}

/// Runs the selected block updates, in parallel when a pool is present.
pub(super) fn update_blocks(
    pool: Option<&rayon::ThreadPool>,
    problem: &FeasibilityProblem,
    factors: &WoodburyFactors,
    selected: &[bool],
    r: &[f64],
    bufs: &mut [BlockBuf],
) {
    match pool {
        None => {
            for (j, buf) in bufs.iter_mut().enumerate() {
                if selected[j] {
                    block_update(problem, factors, j, r, buf);
                }
            }
        }
        Some(pool) => pool.install(|| {
            bufs.par_iter_mut().enumerate().for_each(|(j, buf)| {
                if selected[j] {
                    block_update(problem, factors, j, r, buf);
                }
            })
        }),
    }
}

/// Tracks `sqrt(sum opg^2)` over the last `len` iterations.
pub(super) struct OpgWindow {
    len: usize,
    pushed: usize,
    values: VecDeque<(f64, bool)>,
}

impl OpgWindow {
    pub fn new(alpha: f64) -> Self {
        OpgWindow {
            len: (1.0 / alpha).ceil().max(1.0) as usize,
            pushed: 0,
            values: VecDeque::new(),
        }
    }

    pub fn push(&mut self, opg: f64, updated: bool) {
        if self.values.len() == self.len {
            self.values.pop_front();
        }
        self.values.push_back((opg, updated));
        self.pushed += 1;
    }

    /// True once more than one window has elapsed, the current window saw a block update, and
    /// its change is within `tol`. The first iteration from zero never moves `v`.
    pub fn converged(&self, tol: f64) -> bool {
        self.pushed > self.len
            && self.values.iter().any(|(_, u)| *u)
            && self.values.iter().map(|(o, _)| o * o).sum::<f64>().sqrt() <= tol
    }
}

/// One ADMM or R-ADMM run with an explicit step API.
pub struct AdmmRun<'a> {
    problem: &'a FeasibilityProblem,
    factors: &'a WoodburyFactors,
    config: SolverConfig,
    method: Method,
    state: SolverState,
    b: Vec<f64>,
    r: Vec<f64>,
    center: Vec<f64>,
    w_prev: Vec<f64>,
    old: Vec<f64>,
    selected: Vec<bool>,
    bufs: Vec<BlockBuf>,
    rng: ChaCha8Rng,
    pool: Option<rayon::ThreadPool>,
    trace: ConvergenceTrace,
    snapshots: Option<Snapshots>,
    window: OpgWindow,
    start: Option<Instant>,
}

impl<'a> AdmmRun<'a> {
    pub fn new(
        problem: &'a FeasibilityProblem,
        factors: &'a WoodburyFactors,
        config: &SolverConfig,
        method: Method,
    ) -> Result<Self> {
        config.validate()?;
        if !problem.has_power_blocks() {
            return Err(Error::config("problem", "max-min solvers need the power-constrained instance"));
        }
        factors.check_compatible(problem, 1.0)?;
        let rows = problem.rows();
        let bufs = (0..problem.num_blocks())
            .map(|_| BlockBuf {
                v_new: vec![0.0; problem.block_len()],
                compact: vec![0.0; problem.compact_len()],
                scratch: factors.scratch(),
            })
            .collect();
        let alpha = match method {
            Method::Standard => 1.0,
            Method::Randomized => config.alpha,
        };
        Ok(AdmmRun {
            problem,
            factors,
            config: config.clone(),
            method,
            state: SolverState::zeros(problem),
            b: problem.offset(),
            r: vec![0.0; rows],
            center: vec![0.0; rows],
            w_prev: vec![0.0; rows],
            old: vec![0.0; problem.compact_len()],
            selected: vec![false; problem.num_blocks()],
            bufs,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            pool: build_pool(config.threads)?,
            trace: ConvergenceTrace::default(),
            snapshots: config.record_snapshots.then(|| Snapshots {
                alpha,
                ..Default::default()
            }),
            window: OpgWindow::new(alpha),
            start: None,
        })
    }

    /// Replaces the all-zero initialization.
    pub fn with_state(mut self, state: SolverState) -> Result<Self> {
        self.state = SolverState::warm(self.problem, &state)?;
        Ok(self)
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn trace(&self) -> &ConvergenceTrace {
        &self.trace
    }

    /// The w iterate before the most recent step.
    pub fn previous_w(&self) -> &[f64] {
        &self.w_prev
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn step(&mut self) -> Result<StepInfo> {
        let start = *self.start.get_or_insert_with(Instant::now);
        let beta = self.config.beta;
        let (alpha, alpha_bar) = match self.method {
            Method::Standard => (1.0, 0.0),
            Method::Randomized => (self.config.alpha, self.config.alpha_bar),
        };
        let k = self.problem.num_blocks();

        // block selection
        match self.method {
            Method::Standard => self.selected.fill(true),
            Method::Randomized => {
                for s in self.selected.iter_mut() {
                    *s = self.rng.random_bool(alpha);
                }
            }
        }
        let selected = self.selected.iter().filter(|s| **s).count();

        // v-step on r = b - w + lambda / beta
        let inv_beta = 1.0 / beta;
        for ((r, b), (w, l)) in self
            .r
            .iter_mut()
            .zip(&self.b)
            .zip(self.state.w.iter().zip(&self.state.lambda))
        {
            *r = b - w + l * inv_beta;
        }
        update_blocks(
            self.pool.as_ref(),
            self.problem,
            self.factors,
            &self.selected,
            &self.r,
            &mut self.bufs,
        );

        // running sum and optimality gap over the updated blocks
        let mut opg2 = 0.0;
        for j in 0..k {
            if !self.selected[j] {
                continue;
            }
            let buf = &mut self.bufs[j];
            let v = &mut self.state.v[j];
            opg2 += v.iter().zip(&buf.v_new).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            v.copy_from_slice(&buf.v_new);
            self.problem.gather(j, &self.state.tau, &mut self.old);
            for (o, n) in self.old.iter_mut().zip(&buf.compact) {
                *o += n - *o;
            }
            self.problem.scatter(j, &self.old, &mut self.state.tau);
        }
        let opg = opg2.sqrt();
        self.state.iter += 1;
        if self.state.iter.is_multiple_of(TAU_RESYNC_INTERVAL) {
            let exact = self.state.recompute_tau(self.problem);
            debug_assert!({
                let diff: f64 = exact.iter().zip(&self.state.tau).map(|(a, b)| (a - b).powi(2)).sum();
                let norm: f64 = exact.iter().map(|a| a * a).sum();
                diff.sqrt() <= 1e-9 * (1.0 + norm.sqrt())
            });
            self.state.tau = exact;
        }

        if let Some(snap) = self.snapshots.as_mut() {
            // closing w-step: full penalty, proximal weight alpha * alpha_bar
            let hat = alpha * alpha_bar;
            let mut w_final = vec![0.0; self.center.len()];
            for i in 0..w_final.len() {
                let d = self.state.tau[i] + self.b[i] + self.state.lambda[i] * inv_beta;
                self.center[i] = (d + hat * self.state.w[i]) / (1.0 + hat);
            }
            for (range, kind) in self.problem.layout().blocks() {
                prox_block_into(
                    &self.center[range.clone()],
                    (1.0 + hat) * beta,
                    kind,
                    &mut w_final[range],
                );
            }
            snap.w_final.push(w_final);
        }

        // w-step
        self.w_prev.copy_from_slice(&self.state.w);
        let prox_weight = match self.method {
            Method::Standard => {
                for i in 0..self.center.len() {
                    self.center[i] = self.state.tau[i] + self.b[i] + self.state.lambda[i] * inv_beta;
                }
                beta
            }
            Method::Randomized => {
                let inv_ab = 1.0 / (alpha * beta);
                let mix = 1.0 / (alpha + alpha_bar);
                for i in 0..self.center.len() {
                    let d = self.state.tau[i] + self.b[i] + self.state.lambda[i] * inv_ab;
                    self.center[i] = (alpha * d + alpha_bar * self.w_prev[i]) * mix;
                }
                (alpha + alpha_bar) * beta
            }
        };
        for (range, kind) in self.problem.layout().blocks() {
            prox_block_into(
                &self.center[range.clone()],
                prox_weight,
                kind,
                &mut self.state.w[range],
            );
        }

        // dual step
        let step = match self.method {
            Method::Standard => beta,
            Method::Randomized => alpha * beta,
        };
        let mut res2 = 0.0;
        let mut lambda_finite = true;
        for i in 0..self.state.lambda.len() {
            let res = self.state.tau[i] + self.b[i] - self.state.w[i];
            res2 += res * res;
            self.state.lambda[i] += step * res;
            lambda_finite &= self.state.lambda[i].is_finite();
        }
        let primal_residual = res2.sqrt();
        let f = f_value(&self.state.w, self.problem.layout())?;

        if !(f.is_finite() && opg.is_finite() && primal_residual.is_finite() && lambda_finite) {
            return Err(Error::Diverged {
                iteration: self.state.iter,
                beta,
            });
        }
        if let Some(snap) = self.snapshots.as_mut() {
            snap.w.push(self.state.w.clone());
            snap.v.push(self.state.stacked_v());
        }
        self.window.push(opg, selected > 0);
        self.trace.records.push(TraceRecord {
            iter: self.state.iter,
            f_value: f,
            opg,
            primal_residual,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(StepInfo {
            iter: self.state.iter,
            selected,
            opg,
            f_value: f,
            primal_residual,
        })
    }

    /// Iterates until the optimality gap criterion or `max_iter`, then applies the verdict rule.
    pub fn run(mut self) -> Result<SolveOutcome> {
        let stop_reason = loop {
            self.step()?;
            if self.window.converged(self.config.opg_tol) {
                break StopReason::OpgTol;
            }
            if self.state.iter >= self.config.max_iter {
                break StopReason::MaxIter;
            }
        };
        self.finish(stop_reason)
    }

    fn finish(self, stop_reason: StopReason) -> Result<SolveOutcome> {
        let mut out = self.state.tau.clone();
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
        let final_f = f_value(&out, self.problem.layout())?;
        let threshold = feasibility_threshold(self.problem, self.config.feas_tol);
        let verdict = decide(final_f, threshold, stop_reason, &self.trace);
        let dims = Dims {
            num_aps: self.problem.num_aps(),
            antennas: self.problem.antennas(),
            num_users: self.problem.num_users(),
        };
        let beamformers = to_complex(dims, &self.state.stacked_v())?;
        Ok(SolveOutcome {
            verdict,
            final_f,
            iterations: self.state.iter,
            stop_reason,
            beamformers,
            trace: self.trace,
            state: self.state,
            snapshots: self.snapshots,
        })
    }
}

pub fn standard_admm(
    problem: &FeasibilityProblem,
    factors: &WoodburyFactors,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    AdmmRun::new(problem, factors, config, Method::Standard)?.run()
}

pub fn randomized_admm(
    problem: &FeasibilityProblem,
    factors: &WoodburyFactors,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    AdmmRun::new(problem, factors, config, Method::Randomized)?.run()
}
