//! Feasibility checks, max-min bisection, the min-power mode, and the single-user oracle.
//!
//! Every solve runs on a normalized copy of the scenario: user `k`'s channel is scaled by
//! `sqrt(p_ref) / sigma_k` and beamformers are expressed in units of `sqrt(p_ref)`, with
//! `p_ref` the largest per-AP budget. Rates are invariant under this change of units, and the
//! lifted quantities end up of order one so that a unit penalty works across deployments.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{
    achieved_rates, per_ap_powers, Dims, FeasibilityProblem, RealChannels, WoodburyFactors,
};
use crate::scenario::{Scenario, C64};
use crate::solvers::{
    qos_admm, AdmmRun, ConvergenceTrace, Method, SolveOutcome, SolverConfig, SolverState,
    StopReason, Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Standard,
    Randomized,
}

impl SolverKind {
    pub fn method(self) -> Method {
        match self {
            SolverKind::Standard => Method::Standard,
            SolverKind::Randomized => Method::Randomized,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Standard => "standard",
            SolverKind::Randomized => "randomized",
        }
    }
}

/// Unit change between a scenario and its normalized copy.
#[derive(Debug, Clone)]
pub struct Normalization {
    /// Reference power `p_ref`; normalized beamformers are physical ones divided by its root.
    pub power_scale: f64,
    pub scenario: Scenario,
}

impl Normalization {
    /// Uses the largest per-AP budget as `p_ref`.
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let p_ref = scenario.per_ap_power().iter().cloned().fold(0.0, f64::max);
        if !(p_ref > 0.0 && p_ref.is_finite()) {
            return Err(Error::config("per_ap_power", "needs a positive finite budget"));
        }
        Self::with_reference(scenario, p_ref)
    }

    pub fn with_reference(scenario: &Scenario, p_ref: f64) -> Result<Self> {
        if !(p_ref > 0.0 && p_ref.is_finite()) {
            return Err(Error::config("p_ref", "must be positive and finite"));
        }
        let (m, n, k) = (scenario.num_aps(), scenario.antennas_per_ap(), scenario.num_users());
        let mut channels = Vec::with_capacity(k * m * n);
        let mut noise = Vec::with_capacity(k);
        for user in 0..k {
            let sigma2 = scenario.noise_power[user];
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(Error::config("noise_power", "must be positive and finite"));
            }
            let scale = (p_ref / sigma2).sqrt();
            let gain = scenario.user_channel(user).iter().map(|h| h.norm_sqr()).sum::<f64>().sqrt() * scale;
            let d = if std::env::var("MMB_ROWSCALE").is_ok() && gain > 0.0 { 1.0 / gain } else { 1.0 };
            channels.extend(scenario.user_channel(user).iter().map(|h| h * scale * d));
            noise.push(d * d);
        }
        let power = scenario.per_ap_power().iter().map(|p| p / p_ref).collect();
        Ok(Normalization {
            power_scale: p_ref,
            scenario: Scenario::with_channels(power, n, k, channels, noise)?,
        })
    }

    /// Physical beamformers from normalized ones.
    pub fn denormalize(&self, beamformers: &[C64]) -> Vec<C64> {
        let s = self.power_scale.sqrt();
        beamformers.iter().map(|v| v * s).collect()
    }
}

/// Normalized channels and the rate-independent factorization, shared by all checks on one
/// scenario.
pub struct FeasibilityChecker {
    scenario: Scenario,
    norm: Normalization,
    channels: Arc<RealChannels>,
    factors: WoodburyFactors,
    setup_ms: f64,
}

impl FeasibilityChecker {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let start = Instant::now();
        let norm = Normalization::new(scenario)?;
        let channels = Arc::new(RealChannels::new(&norm.scenario));
        let factors = WoodburyFactors::new(&channels, 1.0)?;
        Ok(FeasibilityChecker {
            scenario: scenario.clone(),
            norm,
            channels,
            factors,
            setup_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Time spent normalizing and factoring, excluded from solve timings.
    pub fn setup_ms(&self) -> f64 {
        self.setup_ms
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn problem(&self, rate: f64) -> Result<FeasibilityProblem> {
        FeasibilityProblem::new(self.channels.clone(), &self.norm.scenario, rate, true)
    }

    /// Runs one check; `warm` seeds the iterates when given. Beamformers in the outcome are
    /// physical.
    pub fn check(
        &self,
        rate: f64,
        solver: SolverKind,
        config: &SolverConfig,
        warm: Option<&SolverState>,
    ) -> Result<SolveOutcome> {
        config.validate()?;
        if !rate.is_finite() {
            return Err(Error::config("rate", "must be finite"));
        }
        if rate <= 0.0 {
            return Ok(trivial_outcome(&self.scenario));
        }
        let problem = self.problem(rate)?;
        let mut run = AdmmRun::new(&problem, &self.factors, config, solver.method())?;
        if let Some(state) = warm {
            run = run.with_state(state.clone())?;
        }
        let mut outcome = run.run()?;
        outcome.beamformers = self.norm.denormalize(&outcome.beamformers);
        Ok(outcome)
    }
}

/// Rates are nonnegative, so a nonpositive target is met by zero beamformers.
fn trivial_outcome(scenario: &Scenario) -> SolveOutcome {
    let dims = Dims::of(scenario);
    SolveOutcome {
        verdict: Verdict::Feasible,
        final_f: 0.0,
        iterations: 0,
        stop_reason: StopReason::OpgTol,
        beamformers: vec![C64::new(0.0, 0.0); dims.mn() * dims.num_users],
        trace: ConvergenceTrace::default(),
        state: SolverState {
            v: vec![vec![0.0; 2 * dims.mn()]; dims.num_users],
            w: Vec::new(),
            lambda: Vec::new(),
            tau: Vec::new(),
            iter: 0,
        },
        snapshots: None,
    }
}

pub fn check_feasibility(
    scenario: &Scenario,
    rate: f64,
    solver: SolverKind,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    if rate <= 0.0 && rate.is_finite() {
        return Ok(trivial_outcome(scenario));
    }
    FeasibilityChecker::new(scenario)?.check(rate, solver, config, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisectionConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub s_ter: f64,
    pub solver: SolverKind,
    pub solver_config: SolverConfig,
    /// Return every check's convergence trace in [`MaxMinResult::traces`].
    pub keep_traces: bool,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        BisectionConfig {
            s_min: 0.0,
            s_max: 10.0,
            s_ter: 0.01,
            solver: SolverKind::Standard,
            solver_config: SolverConfig::default(),
            keep_traces: false,
        }
    }
}

impl BisectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_min >= 0.0 && self.s_min.is_finite()) {
            return Err(Error::config("s_min", "must be nonnegative and finite"));
        }
        if !(self.s_max > self.s_min && self.s_max.is_finite()) {
            return Err(Error::config("s_max", "must exceed s_min"));
        }
        if !(self.s_ter > 0.0) {
            return Err(Error::config("s_ter", "must be positive"));
        }
        self.solver_config.validate()
    }

    /// Number of checks the bracket needs: `ceil(log2((s_max - s_min) / s_ter))`.
    pub fn expected_checks(&self) -> usize {
        let mut width = self.s_max - self.s_min;
        let mut n = 0;
        while width > self.s_ter * (1.0 + 1e-12) {
            width *= 0.5;
            n += 1;
        }
        n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub rate: f64,
    pub verdict: Verdict,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub final_f: f64,
    pub solve_ms: f64,
    pub ms_per_iter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMinResult {
    pub solver: SolverKind,
    /// Final bracket `[s_min, s_max]`.
    pub rate_interval: [f64; 2],
    /// Largest target certified feasible (or the initial lower end).
    pub certified_rate: f64,
    /// `v_k[m][a]` as `[re, im]`, user-major then AP then antenna.
    pub beamformers: Vec<[f64; 2]>,
    pub per_user_rates: Vec<f64>,
    pub per_ap_powers: Vec<f64>,
    /// `certified_rate - min(per_user_rates)`, clamped at zero: the rate lost to the
    /// `feas_tol` cone violation and the power rescaling.
    pub rate_slack: f64,
    /// Uniform factor (at most 1) applied so every AP meets its budget.
    pub power_rescale: f64,
    pub checks_performed: usize,
    pub checks: Vec<CheckSummary>,
    /// The upper end of the initial bracket was never refuted.
    pub saturated: bool,
    pub setup_ms: f64,
    /// Per-check traces, in check order, when requested.
    #[serde(skip)]
    pub traces: Vec<ConvergenceTrace>,
}

impl MaxMinResult {
    pub fn complex_beamformers(&self) -> Vec<C64> {
        self.beamformers.iter().map(|[re, im]| C64::new(*re, *im)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn total_iterations(&self) -> usize {
        self.checks.iter().map(|c| c.iterations).sum()
    }

    pub fn solve_ms(&self) -> f64 {
        self.checks.iter().map(|c| c.solve_ms).sum()
    }
}

/// Largest uniform factor `c <= 1` with `c^2 * power_m <= p_m` for every AP.
fn power_rescale(scenario: &Scenario, beamformers: &[C64]) -> f64 {
    let powers = per_ap_powers(Dims::of(scenario), beamformers);
    powers
        .iter()
        .zip(scenario.per_ap_power())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, cap)| (cap / p).sqrt())
        .fold(1.0, f64::min)
}

/// Bisection on the common rate target with one feasibility check per step. Undecided checks
/// count as infeasible.
pub fn bisection_maxmin(scenario: &Scenario, config: &BisectionConfig) -> Result<MaxMinResult> {
    config.validate()?;
    let checker = FeasibilityChecker::new(scenario)?;
    let dims = Dims::of(scenario);
    let (mut lo, mut hi) = (config.s_min, config.s_max);
    let mut best = vec![C64::new(0.0, 0.0); dims.mn() * dims.num_users];
    let mut checks = Vec::new();
    let mut traces = Vec::new();
    let mut previous: Option<SolverState> = None;
    let mut saturated = true;
    while hi - lo > config.s_ter * (1.0 + 1e-12) {
        let rate = 0.5 * (lo + hi);
        let warm = if config.solver_config.warm_start {
            previous.as_ref()
        } else {
            None
        };
        let start = Instant::now();
        let outcome = checker.check(rate, config.solver, &config.solver_config, warm)?;
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;
        checks.push(CheckSummary {
            rate,
            verdict: outcome.verdict,
            iterations: outcome.iterations,
            stop_reason: outcome.stop_reason,
            final_f: outcome.final_f,
            solve_ms,
            ms_per_iter: outcome.trace.ms_per_iter(),
        });
        if config.keep_traces {
            traces.push(outcome.trace);
        }
        if outcome.verdict == Verdict::Feasible {
            lo = rate;
            best = outcome.beamformers;
        } else {
            hi = rate;
            saturated = false;
        }
        if !outcome.state.w.is_empty() {
            previous = Some(outcome.state);
        }
    }
    let rescale = power_rescale(scenario, &best);
    if rescale < 1.0 {
        best.iter_mut().for_each(|v| *v *= rescale);
    }
    let per_user_rates = achieved_rates(scenario, &best)?;
    let min_rate = per_user_rates.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(MaxMinResult {
        solver: config.solver,
        rate_interval: [lo, hi],
        certified_rate: lo,
        per_ap_powers: per_ap_powers(dims, &best),
        beamformers: best.iter().map(|z| [z.re, z.im]).collect(),
        per_user_rates,
        rate_slack: (lo - min_rate).max(0.0),
        power_rescale: rescale,
        checks_performed: checks.len(),
        checks,
        saturated,
        setup_ms: checker.setup_ms(),
        traces,
    })
}

/// `log2(1 + (sum_m sqrt(p_m) ||h[m]||)^2 / sigma^2)`: every AP at full power, phase-aligned
/// maximum-ratio transmission, no interference.
pub fn single_user_oracle(scenario: &Scenario) -> Result<f64> {
    if scenario.num_users() != 1 {
        return Err(Error::NotSingleUser {
            what: "single-user oracle",
            k: scenario.num_users(),
        });
    }
    let amplitude: f64 = (0..scenario.num_aps())
        .map(|m| {
            let h2: f64 = scenario.channel(0, m).iter().map(|z| z.norm_sqr()).sum();
            scenario.per_ap_power()[m].sqrt() * h2.sqrt()
        })
        .sum();
    Ok((1.0 + amplitude * amplitude / scenario.noise_power[0]).log2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QosConfig {
    pub solver: SolverKind,
    pub solver_config: SolverConfig,
    /// Bound on `sum ||v||^2` relative to the weakest user's single-user power before declaring
    /// infeasibility.
    pub power_cap: f64,
    /// Scale the converged beamformers up uniformly until every rate meets the target.
    pub restore_rates: bool,
}

impl Default for QosConfig {
    fn default() -> Self {
        QosConfig {
            solver: SolverKind::Standard,
            solver_config: SolverConfig {
                beta: 1.0,
                max_iter: 20000,
                opg_tol: 1e-12,
                ..SolverConfig::default()
            },
            power_cap: 1e8,
            restore_rates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosResult {
    pub rate: f64,
    pub verdict: Verdict,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub total_power: f64,
    pub per_user_rates: Vec<f64>,
    pub per_ap_powers: Vec<f64>,
    pub beamformers: Vec<[f64; 2]>,
    /// Uniform factor (at least 1) applied by rate restoration.
    pub rate_rescale: f64,
    pub solve_ms: f64,
    #[serde(skip)]
    pub trace: ConvergenceTrace,
}

impl QosResult {
    pub fn complex_beamformers(&self) -> Vec<C64> {
        self.beamformers.iter().map(|[re, im]| C64::new(*re, *im)).collect()
    }
}

/// Smallest uniform factor `c >= 1` such that every user's SINR reaches `2^rate - 1`, or 1 when
/// some user is interference-limited below the target.
fn rate_rescale(scenario: &Scenario, beamformers: &[C64], rate: f64) -> f64 {
    let dims = Dims::of(scenario);
    let mn = dims.mn();
    let gamma = rate.exp2() - 1.0;
    let mut c2: f64 = 1.0;
    for k in 0..dims.num_users {
        let h = scenario.user_channel(k);
        let gains: Vec<f64> = beamformers
            .chunks(mn)
            .map(|v| h.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>().norm_sqr())
            .collect();
        let signal = gains[k];
        let interference: f64 = gains.iter().sum::<f64>() - signal;
        let margin = signal - gamma * interference;
        if margin <= 0.0 {
            return 1.0;
        }
        c2 = c2.max(gamma * scenario.noise_power[k] / margin);
    }
    // nudge past round-off so the recomputed rates land on the target or above
    c2.sqrt() * (1.0 + 4.0 * f64::EPSILON)
}

/// Power the weakest user would need alone, `max_k sigma_k^2 (2^rate - 1) / ||h_k||^2`.
fn qos_reference_power(scenario: &Scenario, rate: f64) -> Result<f64> {
    let gamma = rate.exp2() - 1.0;
    let mut p_ref: f64 = 0.0;
    for k in 0..scenario.num_users() {
        let gain: f64 = scenario.user_channel(k).iter().map(|h| h.norm_sqr()).sum();
        if !(gain > 0.0) {
            return Err(Error::config("channels", "every user needs a nonzero channel"));
        }
        p_ref = p_ref.max(gamma * scenario.noise_power[k] / gain);
    }
    if !p_ref.is_finite() {
        return Err(Error::NonFinite("reference power"));
    }
    Ok(p_ref)
}

/// Minimum total power meeting every user's rate target, without per-AP budgets.
pub fn qos_min_power(scenario: &Scenario, rate: f64, config: &QosConfig) -> Result<QosResult> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::config("rate", "must be positive and finite"));
    }
    config.solver_config.validate()?;
    let norm = Normalization::with_reference(scenario, qos_reference_power(scenario, rate)?)?;
    let channels = Arc::new(RealChannels::new(&norm.scenario));
    let problem = FeasibilityProblem::new(channels, &norm.scenario, rate, false)?;
    let factors = problem.qos_factors(config.solver_config.beta)?;
    let start = Instant::now();
    let outcome = qos_admm(
        &problem,
        &factors,
        &config.solver_config,
        config.solver == SolverKind::Randomized,
        config.power_cap,
    )?;
    let solve_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut beamformers = norm.denormalize(&outcome.beamformers);
    let rescale = if config.restore_rates {
        rate_rescale(scenario, &beamformers, rate)
    } else {
        1.0
    };
    beamformers.iter_mut().for_each(|v| *v *= rescale);
    let dims = Dims::of(scenario);
    let per_ap = per_ap_powers(dims, &beamformers);
    Ok(QosResult {
        rate,
        verdict: outcome.verdict,
        iterations: outcome.iterations,
        stop_reason: outcome.stop_reason,
        total_power: per_ap.iter().sum(),
        per_user_rates: achieved_rates(scenario, &beamformers)?,
        per_ap_powers: per_ap,
        beamformers: beamformers.iter().map(|z| [z.re, z.im]).collect(),
        rate_rescale: rescale,
        solve_ms,
        trace: outcome.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioConfig};

    fn single_user(m: usize, n: usize, seed: u64) -> Scenario {
        generate_scenario(&ScenarioConfig::new(m, n, 1, 0.01).with_seed(seed)).unwrap()
    }

    #[test]
    fn oracle_examples() {
        let zero = Scenario::with_channels(vec![1.0], 1, 1, vec![C64::new(0.0, 0.0)], vec![1.0]).unwrap();
        assert_eq!(single_user_oracle(&zero).unwrap(), 0.0);
        let unit = Scenario::with_channels(vec![1.0], 1, 1, vec![C64::new(0.6, 0.8)], vec![1.0]).unwrap();
        assert_close!(single_user_oracle(&unit).unwrap(), 1.0, 1e-15);
        let multi = generate_scenario(&ScenarioConfig::new(2, 1, 2, 0.01)).unwrap();
        assert!(matches!(single_user_oracle(&multi), Err(Error::NotSingleUser { k: 2, .. })));
    }

    #[test]
    fn normalization_preserves_rates() {
        let s = generate_scenario(&ScenarioConfig::new(3, 2, 3, 0.02).with_seed(4)).unwrap();
        let norm = Normalization::new(&s).unwrap();
        let v: Vec<C64> = (0..18).map(|i| C64::new((i as f64).sin(), (i as f64).cos())).collect();
        let physical = norm.denormalize(&v);
        let a = achieved_rates(&norm.scenario, &v).unwrap();
        let b = achieved_rates(&s, &physical).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(norm.scenario.per_ap_power().iter().all(|p| (*p - 1.0).abs() < 1e-15));
    }

    #[test]
    fn nonpositive_rate_is_trivially_feasible() {
        let s = single_user(2, 2, 1);
        let out = check_feasibility(&s, 0.0, SolverKind::Standard, &SolverConfig::default()).unwrap();
        assert_eq!(out.verdict, Verdict::Feasible);
        assert_eq!(out.iterations, 0);
        assert!(out.beamformers.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn single_user_checks_bracket_the_oracle() {
        let s = single_user(2, 2, 3);
        let oracle = single_user_oracle(&s).unwrap();
        let cfg = SolverConfig::default();
        let below = check_feasibility(&s, oracle - 0.1, SolverKind::Standard, &cfg).unwrap();
        assert_eq!(below.verdict, Verdict::Feasible, "f = {}", below.final_f);
        let above = check_feasibility(&s, oracle + 0.1, SolverKind::Standard, &cfg).unwrap();
        assert_eq!(above.verdict, Verdict::Infeasible, "f = {}", above.final_f);
        let far = check_feasibility(&s, oracle + 1.0, SolverKind::Standard, &cfg).unwrap();
        assert_eq!(far.verdict, Verdict::Infeasible);
    }

    #[test]
    fn bracket_arithmetic() {
        assert_eq!(BisectionConfig::default().expected_checks(), 10);
        let coarse = BisectionConfig {
            s_max: 10.24,
            s_ter: 0.16,
            ..Default::default()
        };
        assert_eq!(coarse.expected_checks(), 6);
        let bad = BisectionConfig {
            s_min: 2.0,
            s_max: 1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig { field: "s_max", .. })));
    }

    #[test]
    fn bisection_single_user_hits_oracle() {
        let s = single_user(2, 1, 7);
        let oracle = single_user_oracle(&s).unwrap();
        let res = bisection_maxmin(&s, &BisectionConfig::default()).unwrap();
        assert_eq!(res.checks_performed, 10);
        assert!(res.rate_interval[1] - res.rate_interval[0] <= 0.01 + 1e-12);
        assert!((res.certified_rate - oracle).abs() <= 0.011, "{} vs {oracle}", res.certified_rate);
        for (p, cap) in res.per_ap_powers.iter().zip(s.per_ap_power()) {
            assert!(*p <= cap * (1.0 + 1e-8));
        }
        let back = MaxMinResult::from_json(&res.to_json().unwrap()).unwrap();
        assert_eq!(back, res);
    }

    #[test]
    fn qos_single_user_single_ap_closed_form() {
        let s = single_user(1, 2, 5);
        let rate = 2.0;
        let res = qos_min_power(&s, rate, &QosConfig::default()).unwrap();
        let h2: f64 = s.user_channel(0).iter().map(|z| z.norm_sqr()).sum();
        let expected = s.noise_power[0] * (rate.exp2() - 1.0) / h2;
        assert!(((res.total_power - expected) / expected).abs() < 1e-6, "{} vs {expected}", res.total_power);
        assert!(res.per_user_rates[0] >= rate - 1e-9);
    }
}
