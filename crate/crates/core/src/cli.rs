//! Command-line front end: argument parsing, result files, run manifests and replay.
//!
//! Exit codes: 0 success or feasible, 1 infeasible (or a replay mismatch), 2 invalid input or
//! I/O failure, 3 undecided.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::driver::{
    bisection_maxmin, qos_min_power, BisectionConfig, FeasibilityChecker, QosConfig, SolverKind,
};
use crate::error::{Error, Result};
use crate::scenario::{generate_scenario, Scenario, ScenarioConfig};
use crate::solvers::{SolverConfig, StopReason, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_UNDECIDED: i32 = 3;

pub const MANIFEST_SCHEMA: &str = "mmb-manifest/1";
pub const BENCH_SCHEMA: &str = "mmb-bench/1";
pub const BENCH_CSV_HEADER: &str =
    "M,N,K,p_mw,alpha,solver,seed,certified_rate,checks,iters_total,setup_ms,solve_ms";
pub const BISECT_TRACE_CSV_HEADER: &str = "check,iter,f_value,opg,primal_residual,wall_ms";

#[derive(Debug, Parser)]
#[command(name = "mmb", version, about = "Max-min fair downlink beamforming for cell-free massive MIMO")]
pub struct Cli {
    /// Write every wall-clock field as 0 so repeated runs produce byte-identical files.
    #[arg(long, global = true)]
    pub no_timings: bool,
    /// Manifest location; defaults to `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Draw a random deployment and its channels.
    Generate(GenerateArgs),
    /// Run one feasibility check at a fixed rate target.
    Check(CheckArgs),
    /// Bisect on the common rate to find the max-min rate.
    Bisect(BisectArgs),
    /// Minimum total power meeting a common rate target.
    Qos(QosArgs),
    /// Sweep dimensions, powers, sampling rates and seeds with both solvers.
    Bench(BenchArgs),
    /// Re-run a command from its manifest and compare the outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Scenario config JSON; replaces the dimension, power and seed flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "aps", short = 'm', default_value_t = 4)]
    pub num_aps: usize,
    #[arg(long = "antennas", short = 'n', default_value_t = 4)]
    pub antennas: usize,
    #[arg(long = "users", short = 'k', default_value_t = 8)]
    pub users: usize,
    /// Per-AP power budget in mW.
    #[arg(long, default_value_t = 10.0)]
    pub power_mw: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverChoice {
    Standard,
    Randomized,
}

impl From<SolverChoice> for SolverKind {
    fn from(c: SolverChoice) -> Self {
        match c {
            SolverChoice::Standard => SolverKind::Standard,
            SolverChoice::Randomized => SolverKind::Randomized,
        }
    }
}

/// Solver settings; unset flags keep the base configuration's values.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = SolverChoice::Standard)]
    pub solver: SolverChoice,
    /// SolverConfig JSON applied before the flags below.
    #[arg(long)]
    pub solver_config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub alpha_bar: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub opg_tol: Option<f64>,
    #[arg(long)]
    pub feas_tol: Option<f64>,
    /// Seed of the block-selection generator.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub theory_mode: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub warm_start: bool,
}

impl SolverArgs {
    fn resolve(&self, base: SolverConfig) -> Result<SolverConfig> {
        let mut c = match &self.solver_config {
            Some(path) => read_json::<SolverConfig>(path)?,
            None => base,
        };
        if let Some(x) = self.beta {
            c.beta = x;
        }
        if let Some(x) = self.alpha {
            c.alpha = x;
        }
        if let Some(x) = self.alpha_bar {
            c.alpha_bar = x;
        }
        if let Some(x) = self.max_iter {
            c.max_iter = x;
        }
        if let Some(x) = self.opg_tol {
            c.opg_tol = x;
        }
        if let Some(x) = self.feas_tol {
            c.feas_tol = x;
        }
        if let Some(x) = self.seed {
            c.seed = x;
        }
        if let Some(x) = self.threads {
            c.threads = x;
        }
        c.theory_mode |= self.theory_mode;
        c.warm_start |= self.warm_start;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Common rate target in bit/s/Hz.
    #[arg(long)]
    pub rate: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Convergence trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BisectArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub s_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub s_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub s_ter: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Per-check traces in one CSV with a leading `check` column.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct QosArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub rate: f64,
    /// Objective bound, relative to the weakest user's single-user power.
    #[arg(long)]
    pub power_cap: Option<f64>,
    /// Keep the raw solver output instead of rescaling it onto the rate targets.
    #[arg(long)]
    pub no_restore: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Sweep config JSON; replaces the grid flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "aps", value_delimiter = ',', default_value = "4")]
    pub aps: Vec<usize>,
    #[arg(long = "antennas", value_delimiter = ',', default_value = "4")]
    pub antennas: Vec<usize>,
    #[arg(long = "users", value_delimiter = ',', default_value = "8")]
    pub users: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub power_mw: Vec<f64>,
    /// R-ADMM sampling rates.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub alphas: Vec<f64>,
    /// Number of scenario seeds, starting at `--first-seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "standard,randomized")]
    pub solvers: Vec<SolverChoice>,
    #[arg(long, default_value_t = 0.0)]
    pub s_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub s_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub s_ter: f64,
    /// Give R-ADMM the same `max_iter` as ADMM instead of `max_iter / alpha`.
    #[arg(long)]
    pub same_max_iter: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Directory receiving the replayed outputs.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Sweep description for `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub schema: String,
    pub aps: Vec<usize>,
    pub antennas: Vec<usize>,
    pub users: Vec<usize>,
    pub power_mw: Vec<f64>,
    /// Sampling rates for R-ADMM rows; ADMM rows report `alpha = 1`.
    pub alpha: Vec<f64>,
    pub seeds: Vec<u64>,
    pub solvers: Vec<SolverKind>,
    /// Bracket and base solver settings; its `solver` field is ignored.
    #[serde(default)]
    pub bisection: BisectionConfig,
    /// R-ADMM gets `max_iter / alpha` iterations, the same expected number of block updates.
    #[serde(default = "default_true")]
    pub equal_work: bool,
}

fn default_true() -> bool {
    true
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != BENCH_SCHEMA {
            return Err(Error::config(
                "schema",
                format!("expected {BENCH_SCHEMA:?}, got {:?}", self.schema),
            ));
        }
        let empty = [
            ("aps", self.aps.is_empty()),
            ("antennas", self.antennas.is_empty()),
            ("users", self.users.is_empty()),
            ("power_mw", self.power_mw.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("solvers", self.solvers.is_empty()),
        ];
        if let Some((field, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::config(field, "must not be empty"));
        }
        if self.solvers.contains(&SolverKind::Randomized) && self.alpha.is_empty() {
            return Err(Error::config("alpha", "randomized rows need at least one value"));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::config("alpha", "every value must lie in (0, 1]"));
        }
        self.bisection.validate()
    }
}

/// Record of one CLI invocation, written next to its primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    /// Resolved configuration.
    pub config: Value,
    pub seed: u64,
    pub threads: usize,
    pub no_timings: bool,
    pub exit_code: i32,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub outputs: Vec<OutputRecord>,
    /// Per-row failures and other remarks.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub sha256: String,
    /// Digest with every wall-clock field blanked.
    pub sha256_without_timings: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = read_json(path)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::config("schema", format!("unsupported manifest {:?}", m.schema)));
        }
        Ok(m)
    }
}

/// Result of `check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub rate: f64,
    pub solver: SolverKind,
    pub verdict: Verdict,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub final_f: f64,
    pub setup_ms: f64,
    pub solve_ms: f64,
    /// Physical beamformers as `[re, im]`, user-major.
    pub beamformers: Vec<[f64; 2]>,
}

/// What a command produced.
struct Run {
    exit_code: i32,
    outputs: Vec<PathBuf>,
    config: Value,
    seed: u64,
    threads: usize,
    notes: Vec<String>,
}

struct Writer {
    no_timings: bool,
    written: Vec<PathBuf>,
}

impl Writer {
    fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if self.no_timings {
            scrub_json(&mut v, &Value::from(0.0));
        }
        self.raw(path, format!("{}\n", serde_json::to_string_pretty(&v)?).as_bytes())
    }

    fn csv(&mut self, path: &Path, text: &str) -> Result<()> {
        let text = if self.no_timings {
            scrub_csv(text, "0")
        } else {
            text.to_string()
        };
        self.raw(path, text.as_bytes())
    }

    fn raw(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }
}

fn is_timing_key(key: &str) -> bool {
    key.ends_with("_ms") || key.starts_with("ms_")
}

/// Replaces every number under a `*_ms` or `ms_*` key.
fn scrub_json(v: &mut Value, with: &Value) {
    match v {
        Value::Object(map) => {
            for (k, x) in map.iter_mut() {
                if is_timing_key(k) && x.is_number() {
                    *x = with.clone();
                } else {
                    scrub_json(x, with);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|x| scrub_json(x, with)),
        _ => {}
    }
}

/// Replaces every cell in a `*_ms` or `ms_*` column.
fn scrub_csv(text: &str, with: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let timing: Vec<bool> = header.split(',').map(is_timing_key).collect();
    let mut out = format!("{header}\n");
    for line in lines {
        let cells: Vec<&str> = line
            .split(',')
            .enumerate()
            .map(|(i, c)| if timing.get(i).copied().unwrap_or(false) { with } else { c })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a file with its wall-clock fields blanked, chosen by extension.
pub fn digest_without_timings(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let scrubbed = match ext {
        "json" => {
            let mut v: Value = serde_json::from_slice(&bytes)?;
            scrub_json(&mut v, &Value::Null);
            serde_json::to_vec(&v)?
        }
        "csv" => scrub_csv(&String::from_utf8_lossy(&bytes), "").into_bytes(),
        _ => bytes,
    };
    Ok(sha256_hex(&scrubbed))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn trace_csv(trace: &crate::solvers::ConvergenceTrace) -> Result<String> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Feasible => "feasible",
        Verdict::Infeasible => "infeasible",
        Verdict::Undecided => "undecided",
    }
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Feasible => EXIT_OK,
        Verdict::Infeasible => EXIT_NEGATIVE,
        Verdict::Undecided => EXIT_UNDECIDED,
    }
}

fn cmd_generate(a: &GenerateArgs, w: &mut Writer) -> Result<Run> {
    let config = match &a.config {
        Some(path) => read_json::<ScenarioConfig>(path)?,
        None => ScenarioConfig::new(a.num_aps, a.antennas, a.users, a.power_mw * 1e-3).with_seed(a.seed),
    };
    let scenario = generate_scenario(&config)?;
    w.raw(&a.out, format!("{}\n", scenario.to_json()?).as_bytes())?;
    Ok(Run {
        exit_code: EXIT_OK,
        outputs: vec![a.out.clone()],
        seed: config.seed,
        config: serde_json::to_value(&config)?,
        threads: 1,
        notes: Vec::new(),
    })
}

fn cmd_check(a: &CheckArgs, w: &mut Writer) -> Result<Run> {
    let scenario = Scenario::load(&a.scenario)?;
    let config = a.solver.resolve(SolverConfig::default())?;
    let kind = SolverKind::from(a.solver.solver);
    let checker = FeasibilityChecker::new(&scenario)?;
    let start = std::time::Instant::now();
    let outcome = checker.check(a.rate, kind, &config, None)?;
    let solve_ms = start.elapsed().as_secs_f64() * 1e3;
    let report = CheckReport {
        rate: a.rate,
        solver: kind,
        verdict: outcome.verdict,
        stop_reason: outcome.stop_reason,
        iterations: outcome.iterations,
        final_f: outcome.final_f,
        setup_ms: checker.setup_ms(),
        solve_ms,
        beamformers: outcome.beamformers.iter().map(|z| [z.re, z.im]).collect(),
    };
    w.json(&a.out, &report)?;
    if let Some(path) = &a.trace {
        w.csv(path, &trace_csv(&outcome.trace)?)?;
    }
    println!("{}", verdict_name(report.verdict));
    Ok(Run {
        exit_code: verdict_code(report.verdict),
        outputs: w.written.clone(),
        seed: config.seed,
        threads: config.threads,
        config: serde_json::json!({ "rate": a.rate, "solver": kind, "solver_config": config }),
        notes: Vec::new(),
    })
}

fn cmd_bisect(a: &BisectArgs, w: &mut Writer) -> Result<Run> {
    let scenario = Scenario::load(&a.scenario)?;
    let config = BisectionConfig {
        s_min: a.s_min,
        s_max: a.s_max,
        s_ter: a.s_ter,
        solver: a.solver.solver.into(),
        solver_config: a.solver.resolve(SolverConfig::default())?,
        keep_traces: a.trace.is_some(),
    };
    let result = bisection_maxmin(&scenario, &config)?;
    w.json(&a.out, &result)?;
    if let Some(path) = &a.trace {
        let mut text = format!("{BISECT_TRACE_CSV_HEADER}\n");
        for (i, trace) in result.traces.iter().enumerate() {
            for r in &trace.records {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    i + 1,
                    r.iter,
                    r.f_value,
                    r.opg,
                    r.primal_residual,
                    r.wall_ms
                ));
            }
        }
        w.csv(path, &text)?;
    }
    println!("{}", result.certified_rate);
    Ok(Run {
        exit_code: EXIT_OK,
        outputs: w.written.clone(),
        seed: config.solver_config.seed,
        threads: config.solver_config.threads,
        config: serde_json::to_value(&config)?,
        notes: Vec::new(),
    })
}

fn cmd_qos(a: &QosArgs, w: &mut Writer) -> Result<Run> {
    let scenario = Scenario::load(&a.scenario)?;
    let base = QosConfig::default();
    let config = QosConfig {
        solver: a.solver.solver.into(),
        solver_config: a.solver.resolve(base.solver_config)?,
        power_cap: a.power_cap.unwrap_or(base.power_cap),
        restore_rates: !a.no_restore,
    };
    let result = qos_min_power(&scenario, a.rate, &config)?;
    w.json(&a.out, &result)?;
    if let Some(path) = &a.trace {
        w.csv(path, &trace_csv(&result.trace)?)?;
    }
    println!("{}", result.total_power);
    Ok(Run {
        exit_code: verdict_code(result.verdict),
        outputs: w.written.clone(),
        seed: config.solver_config.seed,
        threads: config.solver_config.threads,
        config: serde_json::json!({
            "rate": a.rate,
            "solver": config.solver,
            "solver_config": config.solver_config,
            "power_cap": config.power_cap,
            "restore_rates": config.restore_rates,
        }),
        notes: Vec::new(),
    })
}

fn bench_config(a: &BenchArgs) -> Result<BenchConfig> {
    let config = match &a.config {
        Some(path) => read_json::<BenchConfig>(path)?,
        None => BenchConfig {
            schema: BENCH_SCHEMA.to_string(),
            aps: a.aps.clone(),
            antennas: a.antennas.clone(),
            users: a.users.clone(),
            power_mw: a.power_mw.clone(),
            alpha: a.alphas.clone(),
            seeds: (a.first_seed..a.first_seed + a.seeds).collect(),
            solvers: a.solvers.iter().map(|s| (*s).into()).collect(),
            bisection: BisectionConfig {
                s_min: a.s_min,
                s_max: a.s_max,
                s_ter: a.s_ter,
                solver_config: a.solver.resolve(SolverConfig::default())?,
                ..BisectionConfig::default()
            },
            equal_work: !a.same_max_iter,
        },
    };
    config.validate()?;
    Ok(config)
}

/// Runs the sweep; failed runs become rows with a NaN rate and a note.
pub fn run_bench(config: &BenchConfig) -> Result<(String, Vec<String>)> {
    config.validate()?;
    let mut text = format!("{BENCH_CSV_HEADER}\n");
    let mut notes = Vec::new();
    for &m in &config.aps {
        for &n in &config.antennas {
            for &k in &config.users {
                for &p_mw in &config.power_mw {
                    for &seed in &config.seeds {
                        let scenario =
                            generate_scenario(&ScenarioConfig::new(m, n, k, p_mw * 1e-3).with_seed(seed));
                        let mut runs: Vec<(SolverKind, f64)> = Vec::new();
                        for &solver in &config.solvers {
                            match solver {
                                SolverKind::Standard => runs.push((solver, 1.0)),
                                SolverKind::Randomized => {
                                    runs.extend(config.alpha.iter().map(|a| (solver, *a)))
                                }
                            }
                        }
                        for (solver, alpha) in runs {
                            let mut bc = config.bisection.clone();
                            bc.solver = solver;
                            bc.keep_traces = false;
                            if solver == SolverKind::Randomized {
                                bc.solver_config.alpha = alpha;
                                if config.equal_work {
                                    bc.solver_config.max_iter =
                                        (bc.solver_config.max_iter as f64 / alpha).ceil() as usize;
                                }
                            }
                            let row = scenario
                                .as_ref()
                                .map_err(|e| Error::config("scenario", e.to_string()))
                                .and_then(|s| bisection_maxmin(s, &bc));
                            let prefix = format!("{m},{n},{k},{p_mw},{alpha},{},{seed}", solver.name());
                            match row {
                                Ok(r) => text.push_str(&format!(
                                    "{prefix},{},{},{},{},{}\n",
                                    r.certified_rate,
                                    r.checks_performed,
                                    r.total_iterations(),
                                    r.setup_ms,
                                    r.solve_ms()
                                )),
                                Err(e) => {
                                    notes.push(format!("{prefix}: {e}"));
                                    text.push_str(&format!("{prefix},NaN,0,0,0,0\n"));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((text, notes))
}

fn cmd_bench(a: &BenchArgs, w: &mut Writer) -> Result<Run> {
    let config = bench_config(a)?;
    let (text, notes) = run_bench(&config)?;
    for note in &notes {
        eprintln!("warning: {note}");
    }
    w.csv(&a.out, &text)?;
    Ok(Run {
        exit_code: EXIT_OK,
        outputs: w.written.clone(),
        seed: config.bisection.solver_config.seed,
        threads: config.bisection.solver_config.threads,
        config: serde_json::to_value(&config)?,
        notes,
    })
}

fn primary_output(command: &Command) -> Option<&Path> {
    match command {
        Command::Generate(a) => Some(&a.out),
        Command::Check(a) => Some(&a.out),
        Command::Bisect(a) => Some(&a.out),
        Command::Qos(a) => Some(&a.out),
        Command::Bench(a) => Some(&a.out),
        Command::Replay(_) => None,
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Generate(_) => "generate",
        Command::Check(_) => "check",
        Command::Bisect(_) => "bisect",
        Command::Qos(_) => "qos",
        Command::Bench(_) => "bench",
        Command::Replay(_) => "replay",
    }
}

fn execute(command: &Command, no_timings: bool) -> Result<Run> {
    let mut w = Writer {
        no_timings,
        written: Vec::new(),
    };
    match command {
        Command::Generate(a) => cmd_generate(a, &mut w),
        Command::Check(a) => cmd_check(a, &mut w),
        Command::Bisect(a) => cmd_bisect(a, &mut w),
        Command::Qos(a) => cmd_qos(a, &mut w),
        Command::Bench(a) => cmd_bench(a, &mut w),
        Command::Replay(_) => Err(Error::config("command", "replay cannot be nested")),
    }
}

fn redirect(path: &mut PathBuf, dir: &Path) {
    let name = path.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("output"));
    *path = dir.join(name);
}

/// Points every output of `command` into `dir`, keeping file names.
fn redirect_outputs(command: &mut Command, dir: &Path) {
    match command {
        Command::Generate(a) => redirect(&mut a.out, dir),
        Command::Check(a) => {
            redirect(&mut a.out, dir);
            if let Some(t) = a.trace.as_mut() {
                redirect(t, dir);
            }
        }
        Command::Bisect(a) => {
            redirect(&mut a.out, dir);
            if let Some(t) = a.trace.as_mut() {
                redirect(t, dir);
            }
        }
        Command::Qos(a) => {
            redirect(&mut a.out, dir);
            if let Some(t) = a.trace.as_mut() {
                redirect(t, dir);
            }
        }
        Command::Bench(a) => redirect(&mut a.out, dir),
        Command::Replay(_) => {}
    }
}

fn output_record(path: &Path) -> Result<OutputRecord> {
    Ok(OutputRecord {
        path: path.to_path_buf(),
        sha256: sha256_hex(&fs::read(path)?),
        sha256_without_timings: digest_without_timings(path)?,
    })
}

/// Outcome of comparing a replay with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// `(recorded path, replayed path, identical bytes, identical apart from timings)`.
    pub files: Vec<(PathBuf, PathBuf, bool, bool)>,
    pub exit_code_matches: bool,
}

impl ReplayReport {
    pub fn reproduced(&self) -> bool {
        self.exit_code_matches && self.files.iter().all(|f| f.3)
    }
}

/// Re-runs the manifest's command with outputs redirected into `out_dir`.
pub fn replay(manifest: &RunManifest, out_dir: &Path) -> Result<ReplayReport> {
    let mut argv: Vec<OsString> = vec!["mmb".into()];
    argv.extend(manifest.args.iter().map(OsString::from));
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::config("args", e.to_string()))?;
    let mut command = cli.command;
    if matches!(command, Command::Replay(_)) {
        return Err(Error::config("command", "replay cannot be nested"));
    }
    fs::create_dir_all(out_dir)?;
    let out_dir = fs::canonicalize(out_dir)?;
    redirect_outputs(&mut command, &out_dir);
    let previous = std::env::current_dir()?;
    std::env::set_current_dir(&manifest.cwd)?;
    let run = execute(&command, manifest.no_timings);
    std::env::set_current_dir(previous)?;
    let run = run?;
    let mut files = Vec::new();
    for rec in &manifest.outputs {
        let mut replayed = rec.path.clone();
        redirect(&mut replayed, &out_dir);
        let now = output_record(&replayed)?;
        files.push((
            rec.path.clone(),
            replayed,
            now.sha256 == rec.sha256,
            now.sha256_without_timings == rec.sha256_without_timings,
        ));
    }
    Ok(ReplayReport {
        files,
        exit_code_matches: run.exit_code == manifest.exit_code,
    })
}

fn cmd_replay(a: &ReplayArgs) -> Result<i32> {
    let manifest = RunManifest::load(&a.manifest)?;
    let report = replay(&manifest, &a.out_dir)?;
    for (orig, new, bytes, timing_free) in &report.files {
        let status = match (bytes, timing_free) {
            (true, _) => "identical",
            (false, true) => "identical apart from timings",
            _ => "DIFFERENT",
        };
        println!("{} -> {}: {status}", orig.display(), new.display());
    }
    Ok(if report.reproduced() { EXIT_OK } else { EXIT_NEGATIVE })
}

fn write_manifest(cli: &Cli, args: Vec<String>, run: &Run, started: u64) -> Result<()> {
    let Some(primary) = primary_output(&cli.command) else {
        return Ok(());
    };
    let path = cli.manifest.clone().unwrap_or_else(|| {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    });
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        version: format!("mmb {}", env!("CARGO_PKG_VERSION")),
        command: command_name(&cli.command).to_string(),
        args,
        cwd: std::env::current_dir()?,
        config: run.config.clone(),
        seed: run.seed,
        threads: run.threads,
        no_timings: cli.no_timings,
        exit_code: run.exit_code,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        outputs: run.outputs.iter().map(|p| output_record(p)).collect::<Result<_>>()?,
        notes: run.notes.clone(),
    };
    fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&manifest)?))?;
    Ok(())
}

fn run_cli(cli: &Cli, args: Vec<String>) -> Result<i32> {
    if let Command::Replay(a) = &cli.command {
        return cmd_replay(a);
    }
    let started = unix_ms();
    let run = execute(&cli.command, cli.no_timings)?;
    write_manifest(cli, args, &run, started)?;
    Ok(run.exit_code)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let rest = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run_cli(&cli, rest) {
        Ok(code) => code,
        Err(Error::QosInfeasible { iteration, cap }) => {
            eprintln!("infeasible: transmit power exceeded cap {cap:e} at iteration {iteration}");
            EXIT_NEGATIVE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_definitions_are_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn csv_timing_columns_are_scrubbed() {
        let text = "iter,f_value,wall_ms\n1,0.5,3.25\n2,0.25,7\n";
        assert_eq!(scrub_csv(text, "0"), "iter,f_value,wall_ms\n1,0.5,0\n2,0.25,0\n");
    }

    #[test]
    fn json_timing_keys_are_scrubbed() {
        let mut v = serde_json::json!({"solve_ms": 3.5, "rate": 1.0, "checks": [{"ms_per_iter": 1, "solve_ms": 2.0}]});
        scrub_json(&mut v, &Value::Null);
        assert_eq!(v, serde_json::json!({"solve_ms": null, "rate": 1.0, "checks": [{"ms_per_iter": null, "solve_ms": null}]}));
    }

    #[test]
    fn solver_flags_override_base() {
        let cli = Cli::try_parse_from([
            "mmb", "check", "--scenario", "s.json", "--rate", "1", "--out", "o.json", "--beta", "0.5",
            "--max-iter", "7", "--solver", "randomized", "--alpha-bar", "0.2",
        ])
        .unwrap();
        let Command::Check(a) = cli.command else { panic!() };
        let c = a.solver.resolve(SolverConfig::default()).unwrap();
        assert_eq!((c.beta, c.max_iter, c.alpha_bar), (0.5, 7, 0.2));
        assert_eq!(c.alpha, SolverConfig::default().alpha);
        assert_eq!(a.solver.solver, SolverChoice::Randomized);
    }

    #[test]
    fn invalid_solver_flags_are_rejected() {
        let cli = Cli::try_parse_from([
            "mmb", "check", "--scenario", "s.json", "--rate", "1", "--out", "o.json", "--alpha", "0",
        ])
        .unwrap();
        let Command::Check(a) = cli.command else { panic!() };
        assert!(matches!(
            a.solver.resolve(SolverConfig::default()),
            Err(Error::InvalidConfig { field: "alpha", .. })
        ));
    }

    #[test]
    fn bench_config_checks_schema_and_lists() {
        let mut c = BenchConfig {
            schema: BENCH_SCHEMA.into(),
            aps: vec![2],
            antennas: vec![1],
            users: vec![2],
            power_mw: vec![10.0],
            alpha: vec![0.5],
            seeds: vec![0],
            solvers: vec![SolverKind::Standard, SolverKind::Randomized],
            bisection: BisectionConfig::default(),
            equal_work: true,
        };
        assert!(c.validate().is_ok());
        c.schema = "other".into();
        assert!(c.validate().is_err());
        c.schema = BENCH_SCHEMA.into();
        c.users.clear();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig { field: "users", .. })));
    }

    #[test]
    fn bench_rows_follow_the_grid() {
        let c = BenchConfig {
            schema: BENCH_SCHEMA.into(),
            aps: vec![1],
            antennas: vec![1],
            users: vec![1, 2],
            power_mw: vec![10.0],
            alpha: vec![0.5, 1.0],
            seeds: vec![3],
            solvers: vec![SolverKind::Standard, SolverKind::Randomized],
            bisection: BisectionConfig { s_ter: 1.0, ..BisectionConfig::default() },
            equal_work: true,
        };
        let (text, notes) = run_bench(&c).unwrap();
        assert!(notes.is_empty());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], BENCH_CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("1,1,1,10,1,standard,3,"));
        assert!(lines[2].starts_with("1,1,1,10,0.5,randomized,3,"));
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 12));
    }
}
