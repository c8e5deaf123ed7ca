//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stdout (bypassing the
//! harness capture) and then asserts.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use mmb_core::cones::{
    block_f, f_gradient, f_value, prox_f_block, project_power_block, project_soc, BlockKind,
    ConeLayout,
};
use mmb_core::driver::{
    bisection_maxmin, qos_min_power, single_user_oracle, BisectionConfig, Normalization,
    QosConfig, SolverKind,
};
use mmb_core::lifting::{build_problem, dense_matrix, e_factor, from_complex, Dims};
use mmb_core::scenario::{generate_scenario, Scenario, ScenarioConfig, C64};
use mmb_core::solvers::{
    ergodic_diagnostics, randomized_admm, standard_admm, AdmmRun, Method, SolverConfig, Verdict,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: &str, title: &str, ok: bool, detail: &str, start: Instant) {
    let line = format!(
        "[{}] {id} {title}: {detail} ({:.2} s)\n",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "{id} {title}: {detail}");
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn gauss(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn raw(m: usize, n: usize, k: usize, power_w: f64, seed: u64) -> Scenario {
    generate_scenario(&ScenarioConfig::new(m, n, k, power_w).with_seed(seed)).unwrap()
}

fn normalized(m: usize, n: usize, k: usize, seed: u64) -> Scenario {
    Normalization::new(&raw(m, n, k, 0.01, seed)).unwrap().scenario
}

fn random_kind(rng: &mut ChaCha8Rng) -> (usize, BlockKind) {
    if rng.random_bool(0.5) {
        (rng.random_range(2..10), BlockKind::Soc)
    } else {
        (rng.random_range(1..8), BlockKind::Ball { radius: rng.random_range(0.1..3.0) })
    }
}

fn project(x: &[f64], kind: BlockKind) -> Vec<f64> {
    match kind {
        BlockKind::Soc => project_soc(x),
        BlockKind::Ball { radius } => project_power_block(x, radius),
    }
}

#[test]
fn c01_projections_and_prox() {
    let _g = lock();
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut exact = |got: Vec<f64>, want: &[f64], what: &str| {
        if got != want {
            failures.push(format!("{what}: {got:?} != {want:?}"));
        }
    };
    exact(project_soc(&[3.0, 4.0, 5.0]), &[3.0, 4.0, 5.0], "soc interior");
    exact(project_soc(&[3.0, 4.0, -6.0]), &[0.0, 0.0, 0.0], "soc polar");
    exact(project_soc(&[3.0, 4.0, 0.0]), &[1.5, 2.0, 2.5], "soc boundary");
    exact(project_power_block(&[1.0, 1.0], 2.0), &[1.0, 1.0], "ball inside");
    exact(project_power_block(&[3.0, 4.0], 2.0), &[1.2, 1.6], "ball outside");
    exact(project_power_block(&[0.0, 0.0], 1.0), &[0.0, 0.0], "ball origin");
    exact(prox_f_block(&[3.0, 4.0, 0.0], 1.0, BlockKind::Soc).unwrap(), &[2.25, 3.0, 1.25], "prox beta 1");
    exact(prox_f_block(&[3.0, 4.0, 0.0], 3.0, BlockKind::Soc).unwrap(), &[2.625, 3.5, 0.625], "prox beta 3");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_firm: f64 = 0.0;
    let mut worst_stat: f64 = 0.0;
    let mut worst_opt: f64 = 0.0;
    for _ in 0..500 {
        let (n, kind) = random_kind(&mut rng);
        let x = gauss(&mut rng, n, 2.0);
        let y = gauss(&mut rng, n, 2.0);
        let (px, py) = (project(&x, kind), project(&y, kind));
        let dp: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a - b).collect();
        let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        worst_firm = worst_firm.max(dot(&dp, &dp) - dot(&dp, &dxy));

        let d = gauss(&mut rng, n, 2.0);
        let beta = 10f64.powf(rng.random_range(-2.0..2.0));
        let w = prox_f_block(&d, beta, kind).unwrap();
        let pw = project(&w, kind);
        let resid: Vec<f64> = (0..n).map(|i| (w[i] - pw[i]) + beta * (w[i] - d[i])).collect();
        worst_stat = worst_stat.max(norm(&resid));
        let obj = |z: &[f64]| {
            block_f(z, kind) + 0.5 * beta * z.iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let base = obj(&w);
        for _ in 0..100 {
            let eps = 10f64.powf(rng.random_range(-6.0..0.0));
            let z: Vec<f64> = w.iter().map(|wi| wi + eps * rng.sample::<f64, _>(StandardNormal)).collect();
            worst_opt = worst_opt.max(base - obj(&z));
        }
    }
    let ok = failures.is_empty() && worst_firm <= 1e-9 && worst_stat <= 1e-9 && worst_opt <= 1e-9;
    let detail = format!(
        "examples exact {}; firm nonexpansiveness excess {worst_firm:.1e}, prox stationarity {worst_stat:.1e}, prox objective decrease {worst_opt:.1e} over 500 random points",
        if failures.is_empty() { "yes".to_string() } else { failures.join("; ") }
    );
    report("C1", "projection and prox operators", ok, &detail, start);
}

#[test]
fn c02_gradient_matches_finite_differences() {
    let _g = lock();
    let start = Instant::now();
    let layout = ConeLayout::new(3, 2, &[1.0, 0.5, 2.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let w = gauss(&mut rng, layout.len(), 1.5);
        let g = f_gradient(&w, &layout).unwrap();
        for i in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let fd = (f_value(&wp, &layout).unwrap() - f_value(&wm, &layout).unwrap()) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs());
        }
    }
    let ok = worst <= 1e-6 && start.elapsed().as_secs_f64() < 60.0;
    report("C2", "gradient of f", ok, &format!("max |fd - grad| = {worst:.2e} over 50 points"), start);
}

#[test]
fn c03_lifting_operator() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_soc, mut worst_ball, mut worst_orth, mut worst_ls): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for inst in 0..20u64 {
        let m = rng.random_range(1..=3);
        let n = rng.random_range(1..=2);
        let k = rng.random_range(1..=4);
        let s = normalized(m, n, k, 300 + inst);
        let rate = rng.random_range(0.1..4.0);
        let p = build_problem(&s, rate).unwrap();
        let dims = Dims::of(&s);
        let mn = m * n;
        let v: Vec<C64> = (0..k * mn)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let real = from_complex(dims, &v).unwrap();
        let av = p.apply(&real).unwrap();
        let b = p.offset();
        let w: Vec<f64> = av.iter().zip(&b).map(|(a, c)| a + c).collect();
        let layout = p.layout();
        let sqrt_e = e_factor(rate).unwrap().sqrt();
        for user in 0..k {
            let h = s.user_channel(user);
            let inner = |j: usize| -> C64 { h.iter().zip(&v[j * mn..(j + 1) * mn]).map(|(x, y)| x.conj() * y).sum() };
            let mut want = Vec::new();
            for j in 0..k {
                let z = inner(j);
                want.extend([z.re, z.im]);
            }
            want.push(s.noise_power[user].sqrt());
            want.push(sqrt_e * inner(user).re);
            let got = &w[layout.soc_range(user)];
            worst_soc = worst_soc.max(max_diff(got, &want) / (1.0 + norm(&want)));
        }
        for ap in 0..m {
            let mut want = Vec::new();
            for j in 0..k {
                let blk = &v[j * mn + ap * n..j * mn + (ap + 1) * n];
                want.extend(blk.iter().map(|z| z.re));
                want.extend(blk.iter().map(|z| z.im));
            }
            worst_ball = worst_ball.max(max_diff(&w[layout.ball_range(ap)], &want));
        }

        let bl = p.block_len();
        let images: Vec<Vec<f64>> = (0..k)
            .map(|j| p.apply_block(j, &gauss(&mut rng, bl, 1.0)).unwrap())
            .collect();
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let c = dot(&images[i], &images[j]).abs() / (norm(&images[i]) * norm(&images[j]));
                    worst_orth = worst_orth.max(c);
                }
            }
        }

        let f = p.factors().unwrap();
        let a = dense_matrix(&s, rate).unwrap();
        let r = gauss(&mut rng, p.rows(), 1.0);
        let rv = DVector::from_vec(r.clone());
        for j in 0..k {
            let aj: DMatrix<f64> = a.columns(j * bl, bl).into_owned();
            let want = (aj.transpose() * &aj).cholesky().unwrap().solve(&(aj.transpose() * &rv));
            let got: Vec<f64> = p.solve_block_ls(&f, j, &r).unwrap().iter().map(|x| -x).collect();
            worst_ls = worst_ls.max(max_diff(&got, want.as_slice()) / want.norm().max(1e-300));
        }
    }
    let ok = worst_soc <= 1e-10 && worst_ball <= 1e-10 && worst_orth <= 1e-12 && worst_ls <= 1e-8;
    let detail = format!(
        "cone entries {worst_soc:.1e}, power entries {worst_ball:.1e}, block cross-correlation {worst_orth:.1e}, structured vs dense solve {worst_ls:.1e} over 20 instances"
    );
    report("C3", "lifted operator and block solves", ok, &detail, start);
}

#[test]
fn c04_full_selection_reproduces_standard_admm() {
    let _g = lock();
    let start = Instant::now();
    let cases = [(2, 2, 3, 11u64, 0.4), (1, 2, 2, 12, 1.0), (3, 1, 4, 13, 0.2), (2, 1, 1, 14, 2.5), (3, 2, 3, 15, 0.7)];
    let mut worst: f64 = 0.0;
    for (m, n, k, seed, rate) in cases {
        let s = normalized(m, n, k, seed);
        let p = build_problem(&s, rate).unwrap();
        let f = p.factors().unwrap();
        let cfg = SolverConfig { alpha: 1.0, alpha_bar: 0.0, ..Default::default() };
        let mut a = AdmmRun::new(&p, &f, &cfg, Method::Standard).unwrap();
        let mut b = AdmmRun::new(&p, &f, &cfg, Method::Randomized).unwrap();
        for _ in 0..200 {
            a.step().unwrap();
            b.step().unwrap();
            let (x, y) = (a.state(), b.state());
            worst = worst
                .max(max_diff(&x.stacked_v(), &y.stacked_v()))
                .max(max_diff(&x.w, &y.w))
                .max(max_diff(&x.lambda, &y.lambda));
        }
    }
    let ok = worst <= 1e-12;
    report("C4", "randomized method at alpha = 1", ok, &format!("max iterate difference {worst:.1e} over 5 instances x 200 iterations"), start);
}

#[test]
fn c05_single_user_matches_closed_form() {
    let _g = lock();
    let start = Instant::now();

    // Independent check of the closed form: brute-force grid over amplitudes and relative phase.
    let s2 = raw(2, 1, 1, 0.01, 77);
    let (h1, h2) = (s2.channel(0, 0)[0], s2.channel(0, 1)[0]);
    let (p1, p2) = (s2.per_ap_power()[0], s2.per_ap_power()[1]);
    let mut best: f64 = 0.0;
    let steps = 400;
    for ia in 0..=40 {
        for ib in 0..=40 {
            let a1 = p1.sqrt() * ia as f64 / 40.0;
            let a2 = p2.sqrt() * ib as f64 / 40.0;
            for ip in 0..steps {
                let phi = std::f64::consts::TAU * ip as f64 / steps as f64;
                let z = h1.conj() * a1 * h1 / h1.norm() + h2.conj() * a2 * h2 / h2.norm() * C64::from_polar(1.0, phi);
                best = best.max(z.norm_sqr());
            }
        }
    }
    let grid_rate = (1.0 + best / s2.noise_power[0]).log2();
    let oracle2 = single_user_oracle(&s2).unwrap();
    let grid_err = (grid_rate - oracle2).abs();

    let s_ter = 0.01;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let m = 1 + (seed % 4) as usize;
        let n = 1 + ((seed / 4) % 4) as usize;
        let s = raw(m, n, 1, 0.01, 100 + seed);
        let oracle = single_user_oracle(&s).unwrap();
        for (solver, max_iter) in [(SolverKind::Standard, 5000), (SolverKind::Randomized, 100_000)] {
            let cfg = BisectionConfig {
                s_ter,
                solver,
                solver_config: SolverConfig { max_iter, ..Default::default() },
                ..Default::default()
            };
            let r = bisection_maxmin(&s, &cfg).unwrap();
            worst = worst.max((r.certified_rate - oracle).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= s_ter + 1e-3 && grid_err <= 1e-3 && secs <= 120.0;
    let detail = format!(
        "max |certified - closed form| = {worst:.4} (limit {:.3}) over 20 scenarios x 2 solvers; grid search vs closed form {grid_err:.1e}",
        s_ter + 1e-3
    );
    report("C5", "single-user closed form", ok, &detail, start);
}

#[test]
fn c06_standard_and_randomized_agree() {
    let _g = lock();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut counts_ok = true;
    for seed in 0..10u64 {
        let s = raw(4, 4, 8, 0.01, seed);
        let std_cfg = BisectionConfig::default();
        let rnd_cfg = BisectionConfig {
            solver: SolverKind::Randomized,
            solver_config: SolverConfig { alpha: 0.05, alpha_bar: 0.01, max_iter: 100_000, ..Default::default() },
            ..Default::default()
        };
        let a = bisection_maxmin(&s, &std_cfg).unwrap();
        let b = bisection_maxmin(&s, &rnd_cfg).unwrap();
        counts_ok &= a.checks_performed == 10 && b.checks_performed == 10;
        worst = worst.max((a.certified_rate - b.certified_rate).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 0.01 && counts_ok && secs <= 600.0;
    let detail = format!("max rate difference {worst:.4} over 10 scenarios; 10 checks each: {counts_ok}");
    report("C6", "cross-solver agreement", ok, &detail, start);
}

fn seconds_per_step(run: &mut AdmmRun, steps: usize) -> f64 {
    let t = Instant::now();
    for _ in 0..steps {
        run.step().unwrap();
    }
    t.elapsed().as_secs_f64() / steps as f64
}

fn timing(k: usize) -> (f64, f64) {
    let s = normalized(8, 8, k, 40 + k as u64);
    let p = build_problem(&s, 1.0).unwrap();
    let f = p.factors().unwrap();
    let cfg = SolverConfig::default();
    let (mut std_best, mut rnd_best) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..5 {
        let mut a = AdmmRun::new(&p, &f, &cfg, Method::Standard).unwrap();
        a.step().unwrap();
        std_best = std_best.min(seconds_per_step(&mut a, 20));
        let mut b = AdmmRun::new(&p, &f, &cfg, Method::Randomized).unwrap();
        b.step().unwrap();
        rnd_best = rnd_best.min(seconds_per_step(&mut b, 200));
    }
    (std_best, rnd_best)
}

#[test]
fn c07_per_iteration_cost() {
    let _g = lock();
    let start = Instant::now();
    let (std32, rnd32) = timing(32);
    let (std64, _) = timing(64);
    let ratio = rnd32 / std32;
    let growth = std64 / std32;
    let ok = ratio <= 0.3 && growth >= 3.0;
    let detail = format!(
        "K=32: standard {:.3} ms/iter, randomized {:.3} ms/iter, ratio {ratio:.3}; K 32 -> 64 standard growth {growth:.2}x",
        std32 * 1e3,
        rnd32 * 1e3
    );
    report("C7", "per-iteration cost", ok, &detail, start);
}

#[test]
fn c08_ergodic_convergence() {
    let _g = lock();
    let start = Instant::now();
    let raw_s = raw(2, 2, 4, 0.01, 1);
    let certified = bisection_maxmin(&raw_s, &BisectionConfig::default()).unwrap().certified_rate;
    let s = Normalization::new(&raw_s).unwrap().scenario;
    let rate = 0.5 * certified;
    let p = build_problem(&s, rate).unwrap();
    let f = p.factors().unwrap();
    let cfg = SolverConfig { record_snapshots: true, opg_tol: 0.0, max_iter: 200, ..Default::default() };
    let beta = cfg.beta;

    let mut run = AdmmRun::new(&p, &f, &cfg, Method::Randomized).unwrap();
    let mut worst_stat: f64 = 0.0;
    for _ in 0..cfg.max_iter {
        run.step().unwrap();
        let st = run.state();
        let g = f_gradient(&st.w, p.layout()).unwrap();
        let w_prev = run.previous_w();
        for i in 0..p.rows() {
            let r = g[i] - st.lambda[i] + cfg.alpha_bar * beta * (st.w[i] - w_prev[i]);
            worst_stat = worst_stat.max(r.abs());
        }
    }
    let outcome = randomized_admm(&p, &f, &cfg).unwrap();
    let records = ergodic_diagnostics(&p, outcome.snapshots.as_ref()).unwrap();
    let t_bar = 20;
    let early = records[t_bar - 1].residual;
    let late = records[10 * t_bar - 1].residual;
    let feasible = standard_admm(&p, &f, &SolverConfig::default()).unwrap().verdict == Verdict::Feasible;
    let ok = certified > 0.0 && feasible && late <= early / 5.0 && worst_stat <= 1e-8;
    let detail = format!(
        "rate {rate:.3}: ergodic residual {early:.2e} at T={t_bar}, {late:.2e} at T={}; max w-step stationarity {worst_stat:.1e}",
        10 * t_bar
    );
    report("C8", "ergodic residual decay", ok, &detail, start);
}

#[test]
fn c09_qos_minimum_power() {
    let _g = lock();
    let start = Instant::now();
    let cfg = QosConfig { restore_rates: false, ..Default::default() };
    let mut worst_power: f64 = 0.0;
    for seed in 0..5u64 {
        let s = raw(1, 4, 1, 0.01, 500 + seed);
        let rate = 1.0 + 0.5 * seed as f64;
        let h2: f64 = s.user_channel(0).iter().map(|z| z.norm_sqr()).sum();
        let want = s.noise_power[0] * (rate.exp2() - 1.0) / h2;
        let r = qos_min_power(&s, rate, &cfg).unwrap();
        worst_power = worst_power.max((r.total_power - want).abs() / want);
    }
    let mut worst_short: f64 = f64::NEG_INFINITY;
    let mut all_feasible = true;
    for seed in 0..5u64 {
        let s = raw(2, 2, 4, 0.01, seed);
        let rate = 1.0;
        let r = qos_min_power(&s, rate, &cfg).unwrap();
        all_feasible &= r.verdict == Verdict::Feasible;
        for got in &r.per_user_rates {
            worst_short = worst_short.max(rate - got);
        }
    }
    let ok = worst_power <= 1e-6 && worst_short <= 1e-6 && all_feasible;
    let detail = format!(
        "single-user power relative error {worst_power:.1e}; K=4 worst rate shortfall {worst_short:.1e}, all feasible: {all_feasible}"
    );
    report("C9", "QoS minimum power", ok, &detail, start);
}

fn mmb(dir: &Path, args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_mmb"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap_or(-1)
}

#[test]
fn c10_runs_replay_byte_identically() {
    let _g = lock();
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let runs: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        ("generate", vec!["generate", "-m", "2", "-n", "2", "-k", "3", "--seed", "5", "--out", "scn.json"], vec!["scn.json"]),
        (
            "check",
            vec!["check", "--scenario", "scn.json", "--rate", "0.5", "--solver", "randomized", "--seed", "3", "--trace", "check.csv", "--out", "check.json"],
            vec!["check.json", "check.csv"],
        ),
        (
            "bisect",
            vec!["bisect", "--scenario", "scn.json", "--s-max", "4", "--s-ter", "0.1", "--trace", "bisect.csv", "--out", "bisect.json"],
            vec!["bisect.json", "bisect.csv"],
        ),
        ("qos", vec!["qos", "--scenario", "scn.json", "--rate", "0.5", "--trace", "qos.csv", "--out", "qos.json"], vec!["qos.json", "qos.csv"]),
        (
            "bench",
            vec!["bench", "--aps", "2", "--antennas", "1", "--users", "2", "--alphas", "0.5", "--seeds", "2", "--s-max", "4", "--s-ter", "0.5", "--out", "bench.csv"],
            vec!["bench.csv"],
        ),
    ];
    let mut failures = Vec::new();
    for (name, args, outputs) in &runs {
        let mut full = vec!["--no-timings"];
        full.extend(args.iter().copied());
        let code = mmb(dir, &full);
        if code == 2 || code < 0 {
            failures.push(format!("{name} exited {code}"));
            continue;
        }
        let manifest = format!("{}.manifest.json", outputs[0]);
        let replay_dir = dir.join(format!("replay-{name}"));
        let code = mmb(dir, &["replay", &manifest, "--out-dir", replay_dir.to_str().unwrap()]);
        if code != 0 {
            failures.push(format!("{name} replay exited {code}"));
        }
        for out in outputs {
            let a = std::fs::read(dir.join(out)).unwrap_or_default();
            let b = std::fs::read(replay_dir.join(out)).unwrap_or_default();
            if a.is_empty() || a != b {
                failures.push(format!("{name}: {out} differs"));
            }
        }
    }
    let ok = failures.is_empty();
    let detail = if ok {
        format!("{} commands replayed with byte-identical outputs", runs.len())
    } else {
        failures.join("; ")
    };
    report("C10", "run reproducibility", ok, &detail, start);
}
