use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::admm::{build_pool, update_blocks, BlockBuf, OpgWindow};
use super::{
    feasibility_threshold, ConvergenceTrace, SolveOutcome, SolverConfig, SolverState, StopReason,
    TraceRecord, Verdict, TAU_RESYNC_INTERVAL,
};
use crate::cones::{f_value, project_block_into};
use crate::error::{Error, Result};
use crate::lifting::{to_complex, Dims, FeasibilityProblem, WoodburyFactors};

use super::admm::Method;

/// Min-power ADMM: `min sum ||v_i||^2 s.t. G v + e in cones`. The trace's `f_value` column holds
/// the objective `sum ||v_i||^2`.
pub struct QosRun<'a> {
    problem: &'a FeasibilityProblem,
    factors: &'a WoodburyFactors,
    config: SolverConfig,
    method: Method,
    power_cap: f64,
    state: SolverState,
    e: Vec<f64>,
    r: Vec<f64>,
    center: Vec<f64>,
    old: Vec<f64>,
    selected: Vec<bool>,
    bufs: Vec<BlockBuf>,
    rng: ChaCha8Rng,
    pool: Option<rayon::ThreadPool>,
    trace: ConvergenceTrace,
    window: OpgWindow,
    start: Option<Instant>,
}

impl<'a> QosRun<'a> {
    pub fn new(
        problem: &'a FeasibilityProblem,
        factors: &'a WoodburyFactors,
        config: &SolverConfig,
        method: Method,
        power_cap: f64,
    ) -> Result<Self> {
        config.validate()?;
        if problem.has_power_blocks() {
            return Err(Error::config("problem", "min-power solver needs the cone-only instance"));
        }
        if !(power_cap > 0.0) {
            return Err(Error::config("power_cap", "must be positive"));
        }
        factors.check_compatible(problem, 2.0 / config.beta)?;
        let rows = problem.rows();
        let alpha = match method {
            Method::Standard => 1.0,
            Method::Randomized => config.alpha,
        };
        Ok(QosRun {
            problem,
            factors,
            config: config.clone(),
            method,
            power_cap,
            state: SolverState::zeros(problem),
            e: problem.offset(),
            r: vec![0.0; rows],
            center: vec![0.0; rows],
            old: vec![0.0; problem.compact_len()],
            selected: vec![false; problem.num_blocks()],
            bufs: (0..problem.num_blocks())
                .map(|_| BlockBuf {
                    v_new: vec![0.0; problem.block_len()],
                    compact: vec![0.0; problem.compact_len()],
                    scratch: factors.scratch(),
                })
                .collect(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            pool: build_pool(config.threads)?,
            trace: ConvergenceTrace::default(),
            window: OpgWindow::new(alpha),
            start: None,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    /// One iteration; returns the objective `sum ||v_i||^2`.
    pub fn step(&mut self) -> Result<f64> {
        let start = *self.start.get_or_insert_with(Instant::now);
        let beta = self.config.beta;
        let (alpha, alpha_bar) = match self.method {
            Method::Standard => (1.0, 0.0),
            Method::Randomized => (self.config.alpha, self.config.alpha_bar),
        };
        match self.method {
            Method::Standard => self.selected.fill(true),
            Method::Randomized => {
                for s in self.selected.iter_mut() {
                    *s = self.rng.random_bool(alpha);
                }
            }
        }
        let inv_beta = 1.0 / beta;
        for i in 0..self.r.len() {
            self.r[i] = self.e[i] - self.state.w[i] + self.state.lambda[i] * inv_beta;
        }
        update_blocks(
            self.pool.as_ref(),
            self.problem,
            self.factors,
            &self.selected,
            &self.r,
            &mut self.bufs,
        );
        let mut opg2 = 0.0;
        let mut any = false;
        for j in 0..self.problem.num_blocks() {
            if !self.selected[j] {
                continue;
            }
            any = true;
            let buf = &self.bufs[j];
            let v = &mut self.state.v[j];
            opg2 += v.iter().zip(&buf.v_new).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            v.copy_from_slice(&buf.v_new);
            self.problem.gather(j, &self.state.tau, &mut self.old);
            for (o, n) in self.old.iter_mut().zip(&buf.compact) {
                *o += n - *o;
            }
            self.problem.scatter(j, &self.old, &mut self.state.tau);
        }
        self.state.iter += 1;
        if self.state.iter.is_multiple_of(TAU_RESYNC_INTERVAL) {
            self.state.tau = self.state.recompute_tau(self.problem);
        }

        // w-step: projection at the (possibly mixed) center
        match self.method {
            Method::Standard => {
                for i in 0..self.center.len() {
                    self.center[i] = self.state.tau[i] + self.e[i] + self.state.lambda[i] * inv_beta;
                }
            }
            Method::Randomized => {
                let inv_ab = 1.0 / (alpha * beta);
                let mix = 1.0 / (alpha + alpha_bar);
                for i in 0..self.center.len() {
                    let d = self.state.tau[i] + self.e[i] + self.state.lambda[i] * inv_ab;
                    self.center[i] = (alpha * d + alpha_bar * self.state.w[i]) * mix;
                }
            }
        }
        for (range, kind) in self.problem.layout().blocks() {
            project_block_into(&self.center[range.clone()], kind, &mut self.state.w[range]);
        }
        let step = alpha * beta;
        let mut res2 = 0.0;
        for i in 0..self.state.lambda.len() {
            let res = self.state.tau[i] + self.e[i] - self.state.w[i];
            res2 += res * res;
            self.state.lambda[i] += step * res;
        }
        let objective: f64 = self.state.v.iter().flatten().map(|x| x * x).sum();
        let opg = opg2.sqrt();
        if !(objective.is_finite() && res2.is_finite()) {
            return Err(Error::Diverged {
                iteration: self.state.iter,
                beta,
            });
        }
        if objective > self.power_cap {
            return Err(Error::QosInfeasible {
                iteration: self.state.iter,
                cap: self.power_cap,
            });
        }
        self.window.push(opg, any);
        self.trace.records.push(TraceRecord {
            iter: self.state.iter,
            f_value: objective,
            opg,
            primal_residual: res2.sqrt(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(objective)
    }

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
        let mut out = self.state.tau.clone();
        for (o, e) in out.iter_mut().zip(&self.e) {
            *o += e;
        }
        let final_f = f_value(&out, self.problem.layout())?;
        let verdict = if final_f <= feasibility_threshold(self.problem, self.config.feas_tol) {
            Verdict::Feasible
        } else {
            Verdict::Undecided
        };
        let dims = Dims {
            num_aps: self.problem.num_aps(),
            antennas: self.problem.antennas(),
            num_users: self.problem.num_users(),
        };
        Ok(SolveOutcome {
            verdict,
            final_f,
            iterations: self.state.iter,
            stop_reason,
            beamformers: to_complex(dims, &self.state.stacked_v())?,
            trace: self.trace,
            state: self.state,
            snapshots: None,
        })
    }
}

/// Runs min-power ADMM with every block updated each iteration (`alpha = 1`) or with
/// Bernoulli selection when `randomized` is set.
pub fn qos_admm(
    problem: &FeasibilityProblem,
    factors: &WoodburyFactors,
    config: &SolverConfig,
    randomized: bool,
    power_cap: f64,
) -> Result<SolveOutcome> {
    let method = if randomized {
        Method::Randomized
    } else {
        Method::Standard
    };
    QosRun::new(problem, factors, config, method, power_cap)?.run()
}
