//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use zohfl::data::DatasetShard;
use zohfl::harness::{
    asymptotic_check, execute, local_steps_desk, prepare, quick, rate_check, table1_desk, Instance, Method, RunConfig,
    HETEROGENEITY,
};
use zohfl::local_solver::{local_solve_observed, LocalSchedule};
use zohfl::numkit::{dist_sq, loglog_slope, norm, ConstraintSpec, RngStream, Role};
use zohfl::objectives::{f1_full_grad, f1_loss, QuadraticClient, QuadraticProblem};
use zohfl::oracles::validate_battery;

fn report(id: u8, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id} [{name}]: {verdict} ({:.1}s) {detail}",
        elapsed.as_secs_f64()
    );
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_1_oracle_battery() {
    let start = Instant::now();
    let reports = validate_battery(0).unwrap();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
    let elapsed = start.elapsed();
    let pass = failed.is_empty() && elapsed < Duration::from_secs(60);
    report(
        1,
        "oracle battery",
        pass,
        elapsed,
        &format!("{} checks, failed: {failed:?}", reports.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_2_local_solver_rate() {
    const N: usize = 20;
    const SEEDS: u64 = 200;
    const CHECKPOINTS: [usize; 3] = [100, 1_000, 10_000];
    let start = Instant::now();
    let schedule = LocalSchedule::new(2.0, 16.0).unwrap();
    let per_seed: Vec<[f64; 3]> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut rng = RngStream::for_role(seed, Role::Data, 0, 0, 7);
            let diag: Vec<f64> = (0..N).map(|_| rng.random_range(1.0..2.0)).collect();
            let b: Vec<f64> = (0..N).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..N).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y_star: Vec<f64> = diag.iter().zip(&b).map(|(a, b)| -b / a).collect();
            let client = QuadraticClient {
                problem: QuadraticProblem::diagonal(&diag, b, 1.0).unwrap(),
                mu: 0.0,
            };
            let mut errs = [0.0; 3];
            let mut solver_rng = RngStream::for_role(seed, Role::Client, 0, 0, 0);
            local_solve_observed(
                &client,
                &x,
                &x,
                &ConstraintSpec::Unconstrained,
                &schedule,
                CHECKPOINTS[2],
                &mut solver_rng,
                1,
                |t, y| {
                    if let Some(k) = CHECKPOINTS.iter().position(|&c| c == t) {
                        errs[k] = dist_sq(y, &y_star);
                    }
                },
            )
            .unwrap();
            errs
        })
        .collect();
    let means: Vec<f64> = (0..3)
        .map(|k| mean(&per_seed.iter().map(|e| e[k]).collect::<Vec<_>>()))
        .collect();
    let hs: Vec<f64> = CHECKPOINTS.iter().map(|&h| h as f64).collect();
    let slope = loglog_slope(&hs, &means);
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let elapsed = start.elapsed();
    let pass = monotone && (-1.3..=-0.7).contains(&slope) && elapsed < Duration::from_secs(120);
    report(
        2,
        "local solver rate",
        pass,
        elapsed,
        &format!("mean sq. errors {means:?}, slope {slope:.3}"),
    );
    assert!(pass);
}

/// Full-batch gradient descent on the pooled training data, which is the
/// sample-weighted combination of the server and client losses.
fn pooled_reference(cfg: &RunConfig) -> (Vec<f64>, DatasetShard) {
    let Instance::Softmax(part) = prepare(cfg).unwrap() else {
        panic!("softmax instance expected")
    };
    let mut shards: Vec<&DatasetShard> = vec![&part.server];
    shards.extend(part.clients.iter());
    let pooled = DatasetShard::concat(&shards).unwrap();
    let mut w = vec![0.0; pooled.num_classes() * pooled.feature_dim()];
    for _ in 0..20_000 {
        let g = f1_full_grad(&w, &pooled).unwrap();
        if norm(&g) < 1e-5 {
            break;
        }
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= 0.5 * gi);
    }
    (w, part.server)
}

#[test]
fn criterion_3_nonasymptotic_trend() {
    let start = Instant::now();
    let cfg = rate_check(0);
    assert_eq!(cfg.rounds, 2000);
    let out = execute(&cfg, None).unwrap();
    let mut running = Vec::with_capacity(out.records.len());
    let mut acc = 0.0;
    for (i, r) in out.records.iter().enumerate() {
        acc += r.grad_estimate_norm.powi(2);
        running.push(acc / (i + 1) as f64);
    }
    let points: Vec<usize> = (0..=20)
        .map(|k| (10.0 * (cfg.rounds as f64 / 10.0).powf(k as f64 / 20.0)).round() as usize)
        .collect();
    let xs: Vec<f64> = points.iter().map(|&p| p as f64).collect();
    let ys: Vec<f64> = points.iter().map(|&p| running[p - 1]).collect();
    let slope = loglog_slope(&xs, &ys);

    let (reference, server) = pooled_reference(&cfg);
    let f1_run = f1_loss(&out.final_model.weights, &server).unwrap();
    let f1_ref = f1_loss(&reference, &server).unwrap();
    let ratio = f1_run / f1_ref;
    let elapsed = start.elapsed();
    let pass = slope <= -0.3 && ratio <= 1.2 && elapsed < Duration::from_secs(300);
    report(
        3,
        "nonasymptotic trend",
        pass,
        elapsed,
        &format!("running-mean slope {slope:.3}, f1 {f1_run:.4} vs reference {f1_ref:.4} (ratio {ratio:.3})"),
    );
    assert!(pass);
}

fn trailing_mean(losses: &[f64], window: usize) -> Vec<f64> {
    (0..losses.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            mean(&losses[lo..=i])
        })
        .collect()
}

/// Fraction of the rounds `curve` needs to first reach `target`; infinite if never.
fn reach_fraction(curve: &[f64], target: f64) -> f64 {
    curve
        .iter()
        .position(|&v| v <= target)
        .map_or(f64::INFINITY, |p| (p + 1) as f64 / curve.len() as f64)
}

#[test]
fn criterion_4_local_steps_speedup() {
    const SEEDS: u64 = 3;
    const WINDOW: usize = 20;
    let start = Instant::now();
    let configs: Vec<RunConfig> = (0..SEEDS).flat_map(local_steps_desk).collect();
    let curves: Vec<(String, Vec<f64>)> = configs
        .par_iter()
        .map(|c| {
            let out = execute(c, None).unwrap();
            let losses: Vec<f64> = out.records.iter().map(|r| r.global_loss_f1).collect();
            (c.run_id.clone(), trailing_mean(&losses, WINDOW))
        })
        .collect();
    let curve = |tag: &str, tau: &str, seed: u64| {
        let id = format!("steps-{tag}-tau{tau}-s{seed}");
        &curves.iter().find(|(k, _)| *k == id).expect("run present").1
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, (alpha, beta)) in HETEROGENEITY.into_iter().enumerate() {
        let tag = format!("a{alpha}-b{}", (beta * 100.0).round());
        let ratios: Vec<f64> = (0..SEEDS)
            .map(|s| {
                let target = *curve(&tag, "5", s).last().unwrap();
                reach_fraction(curve(&tag, "50", s), target)
            })
            .collect();
        let extreme = k == HETEROGENEITY.len() - 1;
        let hits = ratios
            .iter()
            .filter(|&&r| if extreme { r >= 0.9 } else { r <= 0.6 })
            .count();
        let ok = 2 * hits > SEEDS as usize;
        pass &= ok;
        detail.push(format!("{tag} ratios {ratios:.3?} {}", if ok { "ok" } else { "miss" }));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    report(4, "local steps speedup", pass, elapsed, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_5_desk_accuracy() {
    const SEEDS: u64 = 3;
    let start = Instant::now();
    let configs: Vec<RunConfig> = (0..SEEDS).flat_map(table1_desk).collect();
    assert!(configs.iter().all(|c| c.rounds == 300 && c.clients == 10));
    let results: Vec<(f64, f64, Method, f64)> = configs
        .par_iter()
        .map(|c| {
            let out = execute(c, None).unwrap();
            (c.alpha, c.participation, c.method, out.summary.final_accuracy.unwrap())
        })
        .collect();
    let acc = |alpha: f64, method: Method| {
        let v: Vec<f64> = results
            .iter()
            .filter(|r| r.0 == alpha && r.2 == method)
            .map(|r| r.3)
            .collect();
        assert_eq!(v.len(), SEEDS as usize);
        100.0 * mean(&v)
    };
    let gap = acc(0.1, Method::Zohfl) - acc(0.1, Method::Fedavg);
    let best_iid = [Method::Fedavg, Method::Fedprox, Method::Scaffold]
        .into_iter()
        .map(|m| acc(1000.0, m))
        .fold(f64::MIN, f64::max);
    let iid_diff = best_iid - acc(1000.0, Method::Zohfl);
    let table: Vec<String> = HETEROGENEITY
        .iter()
        .map(|&(a, _)| {
            let row: Vec<String> = zohfl::harness::METHODS
                .iter()
                .map(|&m| format!("{}={:.1}", m.label(), acc(a, m)))
                .collect();
            format!("alpha={a}: {}", row.join(" "))
        })
        .collect();
    let elapsed = start.elapsed();
    let pass = gap >= 10.0 && iid_diff <= 5.0 && elapsed < Duration::from_secs(1200);
    report(
        5,
        "desk accuracy",
        pass,
        elapsed,
        &format!(
            "skewed gap {gap:.1} pts, homogeneous shortfall {iid_diff:.1} pts [{}]",
            table.join(" | ")
        ),
    );
    assert!(pass);
}

fn metric_bytes(cfg: &RunConfig) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let out = execute(cfg, Some(dir.path())).unwrap();
    std::fs::read(out.dir.unwrap().join("metrics.jsonl")).unwrap()
}

#[test]
fn criterion_6_determinism() {
    let start = Instant::now();
    let mut desk = table1_desk(4)
        .into_iter()
        .find(|c| c.method == Method::Zohfl && c.alpha == 0.1)
        .unwrap();
    desk.rounds = 60;
    desk.eval_every = 20;
    let mut baseline = table1_desk(4)
        .into_iter()
        .find(|c| c.method == Method::Scaffold)
        .unwrap();
    baseline.rounds = 60;
    let mut quad = asymptotic_check(4);
    quad.rounds = 500;
    let mut identical = true;
    let mut sizes = Vec::new();
    for mut cfg in [quick(4), desk, baseline, quad] {
        cfg.parallel = true;
        let a = metric_bytes(&cfg);
        let b = metric_bytes(&cfg);
        cfg.parallel = false;
        let c = metric_bytes(&cfg);
        identical &= !a.is_empty() && a == b && a == c;
        sizes.push(a.len());
    }
    let elapsed = start.elapsed();
    let pass = identical && elapsed < Duration::from_secs(120);
    report(6, "determinism", pass, elapsed, &format!("stream sizes {sizes:?}"));
    assert!(pass);
}

#[test]
fn criterion_7_asymptotic_trend() {
    let start = Instant::now();
    let cfg = asymptotic_check(0);
    assert_eq!(cfg.rounds, 10_000);
    assert_eq!(cfg.global_step_p, 0.75);
    let out = execute(&cfg, None).unwrap();
    let mut running_min = f64::INFINITY;
    let mut at_100 = f64::NAN;
    for r in &out.records {
        running_min = running_min.min(r.grad_estimate_norm);
        if r.round + 1 == 100 {
            at_100 = running_min;
        }
    }
    let ratio = running_min / at_100;
    let elapsed = start.elapsed();
    let pass = ratio < 0.1 && elapsed < Duration::from_secs(600);
    report(
        7,
        "asymptotic trend",
        pass,
        elapsed,
        &format!("running min {running_min:.3e} vs {at_100:.3e} at round 100 (ratio {ratio:.4})"),
    );
    assert!(pass);
}
