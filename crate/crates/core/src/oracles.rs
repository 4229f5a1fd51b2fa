//! Independent reference computations and the `validate` check battery.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::synth_blobs;
use crate::error::{Error, Result};
use crate::local_solver::{local_solve, LocalSchedule};
use crate::numkit::{
    dist, dot, norm, norm_sq, project, sample_unit_ball, sample_unit_sphere, ConstraintSpec, RngStream, RunningStats,
    VecStats,
};
use crate::objectives::{f1_full_grad, f1_loss, QuadraticClient, QuadraticProblem};
use crate::smoothing::{
    smoothed_grad_mc, smoothed_grad_one_point_mc, smoothed_quadratic_exact, smoothed_value_mc, SmoothingParams,
};

/// Outcome of one check. `pass` holds iff every coordinate satisfies
/// `|observed - expected| <= tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub check: String,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(check: impl Into<String>, observed: Vec<f64>, expected: Vec<f64>, tolerance: f64) -> Self {
        let pass = observed.len() == expected.len()
            && observed
                .iter()
                .zip(&expected)
                .all(|(o, e)| o.is_finite() && (o - e).abs() <= tolerance);
        Self {
            check: check.into(),
            observed,
            expected,
            tolerance,
            pass,
        }
    }

    pub fn scalar(check: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        Self::new(check, vec![observed], vec![expected], tolerance)
    }
}

/// `1/2 ||x + 1 - max(x, 0)||^2`, the implicit objective whose lower level is
/// the projection of `x` onto the nonnegative orthant.
pub fn relu_bilevel_implicit(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|&xi| (xi + 1.0 - xi.max(0.0)).powi(2)).sum::<f64>()
}

/// Solve the orthant lower level with the projected local solver and compare
/// the implicit value against [`relu_bilevel_implicit`].
pub fn check_bilevel_pipeline(x: &[f64], budget: usize) -> Result<OracleReport> {
    if budget == 0 {
        return Err(Error::param("pipeline check needs budget >= 1"));
    }
    if x.is_empty() {
        return Err(Error::dim("empty point"));
    }
    let n = x.len();
    // h(y) = 1/2 ||y - x||^2, noiseless
    let lower = QuadraticClient {
        problem: QuadraticProblem::diagonal(&vec![1.0; n], x.iter().map(|v| -v).collect(), 0.0)?,
        mu: 0.0,
    };
    let schedule = LocalSchedule::default();
    let mut rng = RngStream::new(0, 0);
    let out = local_solve(
        &lower,
        x,
        x,
        &ConstraintSpec::NonnegativeOrthant,
        &schedule,
        budget,
        &mut rng,
        1,
    )?;
    let observed = 0.5
        * x.iter()
            .zip(&out.final_iterate)
            .map(|(xi, yi)| (xi + 1.0 - yi).powi(2))
            .sum::<f64>();
    let tolerance = (0.1 * out.last_step_size).max(1e-8);
    Ok(OracleReport::scalar(
        format!("relu_pipeline{x:?}_H{budget}"),
        observed,
        relu_bilevel_implicit(x),
        tolerance,
    ))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param(format!("difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    Ok((0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect())
}

/// Rows `(x1, x2, f)` of the implicit ReLU objective on `[-2, 2]^2`.
pub fn relu_grid(spacing: f64) -> Result<Vec<[f64; 3]>> {
    if !(spacing > 0.0 && spacing <= 4.0) {
        return Err(Error::param(format!("grid spacing must be in (0, 4], got {spacing}")));
    }
    let steps = (4.0 / spacing + 1e-9).floor() as usize;
    let coord = |i: usize| -2.0 + i as f64 * spacing;
    let mut rows = Vec::with_capacity((steps + 1) * (steps + 1));
    for i in 0..=steps {
        for j in 0..=steps {
            let x = [coord(i), coord(j)];
            rows.push([x[0], x[1], relu_bilevel_implicit(&x)]);
        }
    }
    Ok(rows)
}

pub fn write_relu_grid(path: &Path, spacing: f64) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["x1", "x2", "f"])?;
    for row in relu_grid(spacing)? {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn random_point(rng: &mut RngStream, n: usize, scale: f64) -> Result<Vec<f64>> {
    let u = sample_unit_ball(rng, n)?;
    Ok(u.into_iter().map(|v| v * scale).collect())
}

fn z_scores(mean: &[f64], se: &[f64], expected: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(se)
        .zip(expected)
        .map(|((m, s), e)| {
            if *s > 0.0 {
                (m - e).abs() / s
            } else if m == e {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

fn projection_checks(rng: &mut RngStream, out: &mut Vec<OracleReport>) -> Result<()> {
    let n = 5;
    let specs = [
        ("unconstrained", ConstraintSpec::Unconstrained),
        ("ball", ConstraintSpec::BallAroundAnchor { radius: 0.8 }),
        ("orthant", ConstraintSpec::NonnegativeOrthant),
    ];
    for (name, spec) in specs {
        let mut idem = 0.0f64;
        let mut expansion = 0.0f64;
        for _ in 0..200 {
            let anchor = random_point(rng, n, 1.0)?;
            let a = random_point(rng, n, 3.0)?;
            let b = random_point(rng, n, 3.0)?;
            let pa = project(&a, &spec, &anchor)?;
            let pb = project(&b, &spec, &anchor)?;
            idem = idem.max(dist(&project(&pa, &spec, &anchor)?, &pa));
            expansion = expansion.max(dist(&pa, &pb) - dist(&a, &b));
        }
        out.push(OracleReport::scalar(
            format!("projection_idempotent_{name}"),
            idem,
            0.0,
            1e-12,
        ));
        out.push(OracleReport::scalar(
            format!("projection_nonexpansive_{name}"),
            expansion.max(0.0),
            0.0,
            1e-12,
        ));
    }
    Ok(())
}

fn sampler_checks(rng: &mut RngStream, out: &mut Vec<OracleReport>) -> Result<()> {
    let n = 6;
    let samples = 50_000;
    let mut first = VecStats::new(n);
    let mut second = VecStats::new(n);
    let mut max_norm_err = 0.0f64;
    for _ in 0..samples {
        let v = sample_unit_sphere(rng, n)?;
        max_norm_err = max_norm_err.max((norm(&v) - 1.0).abs());
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        first.push(&v);
        second.push(&sq);
    }
    out.push(OracleReport::scalar("sphere_unit_norm", max_norm_err, 0.0, 1e-12));
    out.push(OracleReport::new(
        "sphere_mean_z",
        z_scores(&first.mean(), &first.std_error(), &vec![0.0; n]),
        vec![0.0; n],
        3.0,
    ));
    out.push(OracleReport::new(
        "sphere_second_moment_z",
        z_scores(&second.mean(), &second.std_error(), &vec![1.0 / n as f64; n]),
        vec![0.0; n],
        3.0,
    ));

    let mut radius_sq = RunningStats::new();
    let mut max_norm = 0.0f64;
    for _ in 0..samples {
        let u = sample_unit_ball(rng, n)?;
        let r2 = norm_sq(&u);
        max_norm = max_norm.max(r2.sqrt());
        radius_sq.push(r2);
    }
    out.push(OracleReport::scalar(
        "ball_inside",
        (max_norm - 1.0).max(0.0),
        0.0,
        1e-12,
    ));
    let expected = n as f64 / (n as f64 + 2.0);
    out.push(OracleReport::scalar(
        "ball_second_moment_z",
        (radius_sq.mean() - expected).abs() / radius_sq.std_error(),
        0.0,
        3.0,
    ));
    Ok(())
}

fn smoothing_checks(rng: &mut RngStream, out: &mut Vec<OracleReport>) -> Result<()> {
    // smoothed quadratic gradient
    let a = [2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 1.5];
    let b = [0.2, -0.4, 1.0];
    let x = [0.5, -1.0, 0.25];
    let p = SmoothingParams::new(0.1, 3)?;
    let q = |y: &[f64]| {
        let ay = crate::numkit::matvec(&a, y);
        0.5 * dot(y, &ay) + dot(&b, y)
    };
    let (_, exact) = smoothed_quadratic_exact(&a, &b, &x, &p)?;
    let est = smoothed_grad_mc(q, &x, &p, rng, 20_000)?;
    out.push(OracleReport::new(
        "smoothed_quadratic_grad_z",
        z_scores(&est.mean, &est.std_error, &exact),
        vec![0.0; 3],
        3.0,
    ));

    // |h_eta(x) - h(x)| <= L0 eta for h = ||x||, L0 = 1
    let p = SmoothingParams::new(0.2, 4)?;
    let mut excess = Vec::with_capacity(100);
    for _ in 0..100 {
        let x = random_point(rng, 4, 2.0)?;
        let est = smoothed_value_mc(norm, &x, &p, rng, 2_000)?;
        excess.push(((est.value - norm(&x)).abs() - 3.0 * est.std_error).max(0.0));
    }
    out.push(OracleReport::new(
        "smoothing_value_bound",
        excess,
        vec![0.0; 100],
        p.eta,
    ));

    // one-point and two-point estimators share a mean
    let f = |x: &[f64]| (x[0] - 0.3).abs() + (x[1] * x[0]).sin();
    let p = SmoothingParams::new(0.5, 2)?;
    let x = [0.2, -0.4];
    let one = smoothed_grad_one_point_mc(f, &x, &p, rng, 200_000)?;
    let two = smoothed_grad_mc(f, &x, &p, rng, 200_000)?;
    let z: Vec<f64> = (0..2)
        .map(|i| {
            let se = (one.std_error[i].powi(2) + two.std_error[i].powi(2)).sqrt();
            (one.mean[i] - two.mean[i]).abs() / se
        })
        .collect();
    out.push(OracleReport::new("one_vs_two_point_z", z, vec![0.0; 2], 3.0));
    Ok(())
}

fn relu_checks(rng: &mut RngStream, out: &mut Vec<OracleReport>) -> Result<()> {
    out.push(check_bilevel_pipeline(&[-5.0, -5.0], 1000)?);
    let mut r = check_bilevel_pipeline(&[-5.0, -5.0], 1000)?;
    r.check = "relu_pipeline_abs_1e-4".into();
    r.tolerance = 1e-4;
    r.pass = (r.observed[0] - r.expected[0]).abs() <= 1e-4;
    out.push(r);
    out.push(check_bilevel_pipeline(&[1.5, 2.0], 1)?);
    out.push(check_bilevel_pipeline(&[1e-9, -1e-9], 10)?);
    out.push(check_bilevel_pipeline(&[-0.7, 0.4, 2.0], 200)?);

    out.push(OracleReport::new(
        "relu_closed_form",
        vec![
            relu_bilevel_implicit(&[1.0, 1.0]),
            relu_bilevel_implicit(&[-1.0, -1.0]),
            relu_bilevel_implicit(&[-2.0, 3.0]),
        ],
        vec![1.0, 0.0, 1.0],
        1e-15,
    ));

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = random_point(rng, 3, 3.0)?;
        let d = random_point(rng, 3, 1e-6)?;
        let nd = norm(&d);
        if nd == 0.0 {
            continue;
        }
        let xd: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let ratio = (relu_bilevel_implicit(&xd) - relu_bilevel_implicit(&x)).abs() / (nd * (norm(&x) + 3f64.sqrt()));
        worst = worst.max(ratio);
    }
    out.push(OracleReport::scalar("relu_continuity_ratio", worst, 0.0, 10.0));

    // f(h) = 1/2 and f(-h) = 1/2 (1 - h)^2, so D_{+1} f(0) = 0 and D_{-1} f(0) = -1
    let h = 1e-6;
    let f0 = relu_bilevel_implicit(&[0.0]);
    let forward = (relu_bilevel_implicit(&[h]) - f0) / h;
    let backward = (relu_bilevel_implicit(&[-h]) - f0) / h;
    out.push(OracleReport::scalar(
        "relu_kink_asymmetry",
        (forward + backward).abs(),
        1.0,
        0.5,
    ));
    Ok(())
}

fn finite_diff_checks(rng: &mut RngStream, out: &mut Vec<OracleReport>) -> Result<()> {
    let a = [0.5, -1.0, 2.0];
    let g = finite_diff_grad(|x| dot(&a, x), &[0.3, 0.1, -0.2], 1e-3)?;
    out.push(OracleReport::new("finite_diff_linear", g, a.to_vec(), 1e-9));
    let g = finite_diff_grad(|x| 0.5 * norm_sq(x), &[1.0, 2.0], 1e-5)?;
    out.push(OracleReport::new("finite_diff_quadratic", g, vec![1.0, 2.0], 1e-8));

    let shard = synth_blobs(rng, 3, 4, 10, 1.0)?;
    let w = random_point(rng, 12, 1.0)?;
    let analytic = f1_full_grad(&w, &shard)?;
    let numeric = finite_diff_grad(|x| f1_loss(x, &shard).unwrap_or(f64::NAN), &w, 1e-5)?;
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let rel: Vec<f64> = numeric.iter().zip(&analytic).map(|(n, a)| (n - a) / scale).collect();
    out.push(OracleReport::new("f1_grad_vs_finite_diff", rel, vec![0.0; 12], 1e-5));
    Ok(())
}

/// The full check battery behind `validate`.
pub fn validate_battery(seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = RngStream::for_role(seed, crate::numkit::Role::Oracle, 0, 0, 0);
    let mut out = Vec::new();
    projection_checks(&mut rng, &mut out)?;
    sampler_checks(&mut rng, &mut out)?;
    smoothing_checks(&mut rng, &mut out)?;
    relu_checks(&mut rng, &mut out)?;
    finite_diff_checks(&mut rng, &mut out)?;
    Ok(out)
}
