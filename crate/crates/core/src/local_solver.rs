//! Client-side inexact lower-level solver: projected SGD with step
//! `gamma0 / (t + offset)`, a fixed step budget per call, and warm-start caches
//! for the `+` and `-` perturbation branches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{axpy, check_same_dim, dist, ConstraintSpec, RngStream};
use crate::objectives::LowerObjective;

/// Diminishing step size `gamma0 / (t + offset)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSchedule {
    pub gamma0: f64,
    pub offset: f64,
}

impl Default for LocalSchedule {
    fn default() -> Self {
        Self {
            gamma0: 0.1,
            offset: 1.0,
        }
    }
}

impl LocalSchedule {
    pub fn new(gamma0: f64, offset: f64) -> Result<Self> {
        let s = Self { gamma0, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::param(format!(
                "local gamma0 must be positive, got {}",
                self.gamma0
            )));
        }
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return Err(Error::param(format!(
                "local step offset must be positive, got {}",
                self.offset
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn step(&self, t: usize) -> f64 {
        self.gamma0 / (t as f64 + self.offset)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalRunReport {
    pub final_iterate: Vec<f64>,
    pub steps_taken: usize,
    /// Step size used on the last step; zero when no step was taken.
    pub last_step_size: f64,
    /// Per-sample gradient evaluations (`steps * batch`, batch capped at the sample count).
    pub grad_eval_count: usize,
}

/// Run `budget` projected-SGD steps on `h(x_input, .)` from `init`.
#[allow(clippy::too_many_arguments)]
pub fn local_solve<O: LowerObjective + ?Sized>(
    objective: &O,
    x_input: &[f64],
    init: &[f64],
    spec: &ConstraintSpec,
    schedule: &LocalSchedule,
    budget: usize,
    rng: &mut RngStream,
    batch: usize,
) -> Result<LocalRunReport> {
    local_solve_observed(objective, x_input, init, spec, schedule, budget, rng, batch, |_, _| {})
}

/// [`local_solve`] with a callback receiving `(t + 1, y_{t+1})` after every step.
#[allow(clippy::too_many_arguments)]
pub fn local_solve_observed<O, F>(
    objective: &O,
    x_input: &[f64],
    init: &[f64],
    spec: &ConstraintSpec,
    schedule: &LocalSchedule,
    budget: usize,
    rng: &mut RngStream,
    batch: usize,
    mut observe: F,
) -> Result<LocalRunReport>
where
    O: LowerObjective + ?Sized,
    F: FnMut(usize, &[f64]),
{
    check_same_dim("local solve init", x_input, init)?;
    if x_input.len() != objective.dim() {
        return Err(Error::dim(format!(
            "input has dim {}, objective expects {}",
            x_input.len(),
            objective.dim()
        )));
    }
    if batch == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    spec.validate()?;
    schedule.validate()?;
    let mut y = init.to_vec();
    let mut grad = vec![0.0; y.len()];
    let mut last_step = 0.0;
    for t in 0..budget {
        objective.stoch_grad_into(x_input, &y, rng, batch, &mut grad)?;
        last_step = schedule.step(t);
        axpy(-last_step, &grad, &mut y);
        spec.project_in_place(&mut y, x_input);
        debug_assert!(spec.contains(&y, x_input, 1e-9));
        observe(t + 1, &y);
    }
    if !crate::numkit::all_finite(&y) {
        return Err(Error::Numerics("local iterate diverged".into()));
    }
    Ok(LocalRunReport {
        final_iterate: y,
        steps_taken: budget,
        last_step_size: last_step,
        grad_eval_count: budget * batch.min(objective.num_samples().max(1)),
    })
}

/// A client's warm-start cache for the two perturbation branches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalState {
    pub plus: Option<Vec<f64>>,
    pub minus: Option<Vec<f64>>,
}

/// Inputs shared by both branches of a `+/-` solve.
#[derive(Clone, Copy, Debug)]
pub struct PairRequest<'a> {
    pub x: &'a [f64],
    pub direction: &'a [f64],
    pub eta: f64,
    pub spec: &'a ConstraintSpec,
    pub schedule: &'a LocalSchedule,
    pub budget: usize,
    pub batch: usize,
    pub warm_start: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairOutcome {
    pub plus: LocalRunReport,
    pub minus: LocalRunReport,
    /// `||init - input||` for the `+` and `-` branches.
    pub init_offsets: (f64, f64),
}

fn branch_init(cached: Option<&Vec<f64>>, input: &[f64], spec: &ConstraintSpec, warm: bool) -> Vec<f64> {
    match cached {
        Some(prev) if warm && prev.len() == input.len() => {
            let mut y = prev.clone();
            spec.project_in_place(&mut y, input);
            y
        }
        _ => input.to_vec(),
    }
}

/// Solve the lower level at `x + eta v` and `x - eta v` with the same budget.
///
/// Each branch consumes its own stream; pass clones of one stream to share
/// samples between the branches.
pub fn solve_pm_pair<O: LowerObjective + ?Sized>(
    objective: &O,
    req: &PairRequest<'_>,
    state: &mut LocalState,
    rng_plus: &mut RngStream,
    rng_minus: &mut RngStream,
) -> Result<PairOutcome> {
    check_same_dim("direction", req.x, req.direction)?;
    let norm_v = crate::numkit::norm(req.direction);
    if (norm_v - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("direction must be unit norm, got {norm_v}")));
    }
    if !(req.eta >= 0.0) {
        return Err(Error::param("eta must be nonnegative"));
    }
    let x_plus: Vec<f64> = req.x.iter().zip(req.direction).map(|(x, v)| x + req.eta * v).collect();
    let x_minus: Vec<f64> = req.x.iter().zip(req.direction).map(|(x, v)| x - req.eta * v).collect();
    let init_plus = branch_init(state.plus.as_ref(), &x_plus, req.spec, req.warm_start);
    let init_minus = branch_init(state.minus.as_ref(), &x_minus, req.spec, req.warm_start);
    let init_offsets = (dist(&init_plus, &x_plus), dist(&init_minus, &x_minus));

    let plus = local_solve(
        objective,
        &x_plus,
        &init_plus,
        req.spec,
        req.schedule,
        req.budget,
        rng_plus,
        req.batch,
    )?;
    let minus = local_solve(
        objective,
        &x_minus,
        &init_minus,
        req.spec,
        req.schedule,
        req.budget,
        rng_minus,
        req.batch,
    )?;
    if req.budget > 0 {
        state.plus = Some(plus.final_iterate.clone());
        state.minus = Some(minus.final_iterate.clone());
    }
    Ok(PairOutcome {
        plus,
        minus,
        init_offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{dist_sq, norm, sample_unit_sphere};
    use crate::objectives::{QuadraticClient, QuadraticProblem};

    fn iso_quadratic(center: &[f64], noise: f64) -> QuadraticClient {
        // 1/2 ||y - c||^2 = 1/2 y^T y - c^T y + const
        let n = center.len();
        let b = center.iter().map(|c| -c).collect();
        QuadraticClient {
            problem: QuadraticProblem::diagonal(&vec![1.0; n], b, noise).unwrap(),
            mu: 0.0,
        }
    }

    #[test]
    fn zero_budget_returns_init() {
        let obj = iso_quadratic(&[1.0, 2.0], 0.0);
        let mut rng = RngStream::new(0, 0);
        let r = local_solve(
            &obj,
            &[0.0, 0.0],
            &[5.0, -5.0],
            &ConstraintSpec::Unconstrained,
            &LocalSchedule::default(),
            0,
            &mut rng,
            1,
        )
        .unwrap();
        assert_eq!(r.final_iterate, vec![5.0, -5.0]);
        assert_eq!(r.steps_taken, 0);
        assert_eq!(r.last_step_size, 0.0);
    }

    #[test]
    fn noiseless_error_strictly_decreases() {
        let c = [1.0, -2.0, 0.5];
        let obj = iso_quadratic(&c, 0.0);
        let mut rng = RngStream::new(0, 0);
        let schedule = LocalSchedule::new(0.9, 1.0).unwrap();
        let mut prev = dist_sq(&[0.0; 3], &c);
        local_solve_observed(
            &obj,
            &[0.0; 3],
            &[0.0; 3],
            &ConstraintSpec::Unconstrained,
            &schedule,
            50,
            &mut rng,
            1,
            |_, y| {
                let e = dist_sq(y, &c);
                assert!(e < prev);
                prev = e;
            },
        )
        .unwrap();
        assert!(prev < 1e-2);
    }

    #[test]
    fn ball_iterates_stay_feasible() {
        let obj = iso_quadratic(&[10.0, 10.0], 1.0);
        let mut rng = RngStream::new(1, 0);
        let spec = ConstraintSpec::BallAroundAnchor { radius: 0.5 };
        let anchor = [1.0, 1.0];
        local_solve_observed(
            &obj,
            &anchor,
            &anchor,
            &spec,
            &LocalSchedule::default(),
            200,
            &mut rng,
            1,
            |_, y| {
                assert!(dist(y, &anchor) <= 0.5 + 1e-12);
            },
        )
        .unwrap();
    }

    #[test]
    fn dimension_mismatch() {
        let obj = iso_quadratic(&[1.0, 2.0], 0.0);
        let mut rng = RngStream::new(0, 0);
        let res = local_solve(
            &obj,
            &[0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0],
            &ConstraintSpec::Unconstrained,
            &LocalSchedule::default(),
            3,
            &mut rng,
            1,
        );
        assert!(matches!(res, Err(Error::InvalidDimension(_))));
    }

    fn pair_req<'a>(
        x: &'a [f64],
        v: &'a [f64],
        eta: f64,
        spec: &'a ConstraintSpec,
        schedule: &'a LocalSchedule,
        budget: usize,
    ) -> PairRequest<'a> {
        PairRequest {
            x,
            direction: v,
            eta,
            spec,
            schedule,
            budget,
            batch: 1,
            warm_start: false,
        }
    }

    #[test]
    fn zero_eta_shared_stream_is_bitwise_equal() {
        let obj = QuadraticClient {
            problem: QuadraticProblem::diagonal(&[1.0, 3.0], vec![0.5, -1.0], 1.0).unwrap(),
            mu: 0.5,
        };
        let spec = ConstraintSpec::Unconstrained;
        let schedule = LocalSchedule::default();
        let x = [0.3, 0.1];
        let v = [0.6, 0.8];
        let req = pair_req(&x, &v, 0.0, &spec, &schedule, 100);
        let shared = RngStream::new(9, 3);
        let out = solve_pm_pair(
            &obj,
            &req,
            &mut LocalState::default(),
            &mut shared.clone(),
            &mut shared.clone(),
        )
        .unwrap();
        assert_eq!(out.plus.final_iterate, out.minus.final_iterate);
    }

    #[test]
    fn symmetric_problem_mirrors() {
        // h(x, y) = 1/2 ||y||^2 + mu/2 ||y - x||^2 -> y*(x) = mu x / (1 + mu), odd in x
        let obj = QuadraticClient {
            problem: QuadraticProblem::diagonal(&[1.0, 1.0], vec![0.0, 0.0], 0.0).unwrap(),
            mu: 1.0,
        };
        let spec = ConstraintSpec::Unconstrained;
        let schedule = LocalSchedule::new(0.5, 1.0).unwrap();
        let x = [0.0, 0.0];
        let v = [1.0, 0.0];
        let req = pair_req(&x, &v, 0.1, &spec, &schedule, 2000);
        let mut r1 = RngStream::new(1, 1);
        let mut r2 = RngStream::new(1, 2);
        let out = solve_pm_pair(&obj, &req, &mut LocalState::default(), &mut r1, &mut r2).unwrap();
        for (p, m) in out.plus.final_iterate.iter().zip(&out.minus.final_iterate) {
            assert!((p + m).abs() < 1e-9);
        }
        assert!((out.plus.final_iterate[0] - 0.05).abs() < 1e-6);
    }

    #[test]
    fn zero_budget_pair_returns_inputs() {
        let obj = iso_quadratic(&[1.0, 1.0], 0.0);
        let spec = ConstraintSpec::Unconstrained;
        let schedule = LocalSchedule::default();
        let x = [1.0, 2.0];
        let v = [0.0, 1.0];
        let req = pair_req(&x, &v, 0.5, &spec, &schedule, 0);
        let mut state = LocalState::default();
        let out = solve_pm_pair(
            &obj,
            &req,
            &mut state,
            &mut RngStream::new(0, 0),
            &mut RngStream::new(0, 1),
        )
        .unwrap();
        assert_eq!(out.plus.final_iterate, vec![1.0, 2.5]);
        assert_eq!(out.minus.final_iterate, vec![1.0, 1.5]);
        assert_eq!(state, LocalState::default());
    }

    #[test]
    fn warm_start_uses_previous_iterate() {
        let obj = iso_quadratic(&[3.0, 3.0], 0.0);
        let spec = ConstraintSpec::Unconstrained;
        let schedule = LocalSchedule::new(0.5, 1.0).unwrap();
        let x = [0.0, 0.0];
        let mut rng = RngStream::new(3, 0);
        let v = sample_unit_sphere(&mut rng, 2).unwrap();
        let mut req = pair_req(&x, &v, 0.1, &spec, &schedule, 30);
        req.warm_start = true;
        let mut state = LocalState::default();
        let first = solve_pm_pair(&obj, &req, &mut state, &mut rng.clone(), &mut rng.clone()).unwrap();
        assert_eq!(first.init_offsets, (0.0, 0.0));
        let second = solve_pm_pair(&obj, &req, &mut state, &mut rng.clone(), &mut rng.clone()).unwrap();
        assert!(second.init_offsets.0 > 1.0);
        assert!(dist(&second.plus.final_iterate, &[3.0, 3.0]) < dist(&first.plus.final_iterate, &[3.0, 3.0]));
    }

    #[test]
    fn rejects_non_unit_direction() {
        let obj = iso_quadratic(&[1.0, 1.0], 0.0);
        let spec = ConstraintSpec::Unconstrained;
        let schedule = LocalSchedule::default();
        let x = [0.0, 0.0];
        let v = [1.0, 1.0];
        let req = pair_req(&x, &v, 0.1, &spec, &schedule, 1);
        let res = solve_pm_pair(
            &obj,
            &req,
            &mut LocalState::default(),
            &mut RngStream::new(0, 0),
            &mut RngStream::new(0, 1),
        );
        assert!(res.is_err());
        assert!(norm(&v) > 1.0);
    }
}
