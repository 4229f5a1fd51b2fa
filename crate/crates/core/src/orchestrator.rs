//! The server loop: per round, sample participants and sphere directions,
//! collect each participant's `+/-` lower-level solutions, form the
//! zeroth-order penalty terms, add a stochastic server gradient, and take a
//! global step.

use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_solver::{local_solve, solve_pm_pair, LocalSchedule, LocalState, PairRequest};
use crate::numkit::{all_finite, dist, norm, sample_unit_sphere, ConstraintSpec, RngStream, Role};
use crate::objectives::{penalty_value, LowerObjective, UpperObjective};
use crate::smoothing::{zo_term, SmoothingParams};

/// Global step `c / (r + 1)^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalStepSchedule {
    pub c: f64,
    pub p: f64,
}

impl Default for GlobalStepSchedule {
    fn default() -> Self {
        Self { c: 0.01, p: 0.5 }
    }
}

impl GlobalStepSchedule {
    pub fn step(&self, round: usize) -> f64 {
        self.c / ((round + 1) as f64).powf(self.p)
    }
}

/// How client terms are averaged when only a subset participates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipationMode {
    /// Divide by the number of participants.
    #[default]
    Renormalize,
    /// Divide by the total number of clients; absentees count as zero.
    FixedTotal,
}

/// Whether the `+` and `-` local solves draw the same samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSharing {
    #[default]
    Independent,
    Shared,
}

/// Local budget `ceil(tau * sqrt(r + 1))`.
pub fn local_budget(tau: f64, round: usize) -> usize {
    (tau * ((round + 1) as f64).sqrt()).ceil() as usize
}

/// `max(1, ceil(beta * m))`, robust to rounding in `beta * m`.
pub fn participant_count(beta: f64, m: usize) -> usize {
    ((beta * m as f64 - 1e-9).ceil() as usize).clamp(1, m)
}

/// Algorithm parameters of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ZoHflParams {
    pub rounds: usize,
    pub eta: f64,
    pub global_step: GlobalStepSchedule,
    /// Per-client budget scale.
    pub taus: Vec<f64>,
    pub local_schedule: LocalSchedule,
    pub lambda: f64,
    /// Per-client penalty weights `w_i` of `sum_i w_i (lambda/2) ||x - y_i(x)||^2`.
    pub weights: Vec<f64>,
    pub participation: f64,
    pub participation_mode: ParticipationMode,
    pub sample_sharing: SampleSharing,
    pub server_batch: usize,
    pub client_batch: usize,
    pub warm_start: bool,
    pub seed: u64,
    pub parallel: bool,
    /// Evaluate the implicit objective every this many rounds; 0 disables.
    pub eval_every: usize,
    pub eval_budget: usize,
}

impl ZoHflParams {
    /// Default schedules for `m` clients with a uniform `tau`.
    pub fn defaults(m: usize, tau: f64) -> Self {
        Self {
            rounds: 100,
            eta: 0.1,
            global_step: GlobalStepSchedule::default(),
            taus: vec![tau; m],
            local_schedule: LocalSchedule::default(),
            lambda: 1.0,
            weights: vec![1.0 / m as f64; m],
            participation: 1.0,
            participation_mode: ParticipationMode::Renormalize,
            sample_sharing: SampleSharing::Independent,
            server_batch: 1,
            client_batch: 1,
            warm_start: false,
            seed: 0,
            parallel: true,
            eval_every: 0,
            eval_budget: 500,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.taus.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.taus.len();
        if m == 0 {
            return Err(Error::param("need at least one client"));
        }
        if self.weights.len() != m {
            return Err(Error::param(format!("{} weights for {m} clients", self.weights.len())));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::param(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::param(format!(
                "participation must be in (0,1], got {}",
                self.participation
            )));
        }
        if !(self.global_step.c > 0.0) || !(self.global_step.p >= 0.0) {
            return Err(Error::param("global step needs c > 0 and p >= 0"));
        }
        if self.taus.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::param("tau must be nonnegative"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::param("client weights must be nonnegative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda must be nonnegative"));
        }
        if self.server_batch == 0 || self.client_batch == 0 {
            return Err(Error::param("batch sizes must be positive"));
        }
        self.local_schedule.validate()
    }
}

/// Work assigned to the participants of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundPlan {
    pub round: usize,
    /// Ascending client ids.
    pub participants: Vec<usize>,
    pub directions: Vec<Vec<f64>>,
    pub budgets: Vec<usize>,
    pub global_step: f64,
}

/// Sample participants and directions for round `round`.
///
/// Every draw comes from a stream keyed by `(seed, role, client, round)`.
pub fn plan_round(round: usize, params: &ZoHflParams, dim: usize) -> Result<RoundPlan> {
    if !(params.participation > 0.0 && params.participation <= 1.0) {
        return Err(Error::param(format!(
            "participation must be in (0,1], got {}",
            params.participation
        )));
    }
    let m = params.num_clients();
    let k = participant_count(params.participation, m);
    let participants: Vec<usize> = if k == m {
        (0..m).collect()
    } else {
        let mut rng = RngStream::for_role(params.seed, Role::Participation, 0, round as u64, 0);
        let mut ids = index::sample(&mut rng, m, k).into_vec();
        ids.sort_unstable();
        ids
    };
    let directions = participants
        .iter()
        .map(|&i| {
            let mut rng = RngStream::for_role(params.seed, Role::Direction, i as u64, round as u64, 0);
            sample_unit_sphere(&mut rng, dim)
        })
        .collect::<Result<Vec<_>>>()?;
    let budgets = participants
        .iter()
        .map(|&i| local_budget(params.taus[i], round))
        .collect();
    Ok(RoundPlan {
        round,
        participants,
        directions,
        budgets,
        global_step: params.global_step.step(round),
    })
}

/// `f1_grad + (1/|S|) sum_i g_i`.
pub fn assemble_gradient(f1_grad: &[f64], client_terms: &[Vec<f64>]) -> Result<Vec<f64>> {
    assemble_gradient_with(f1_grad, client_terms, client_terms.len())
}

/// `f1_grad + (1/denominator) sum_i g_i`.
pub fn assemble_gradient_with(f1_grad: &[f64], client_terms: &[Vec<f64>], denominator: usize) -> Result<Vec<f64>> {
    if client_terms.is_empty() || denominator == 0 {
        return Err(Error::EmptyRound);
    }
    let mut g = f1_grad.to_vec();
    let scale = 1.0 / denominator as f64;
    for t in client_terms {
        crate::numkit::check_same_dim("client term", f1_grad, t)?;
        crate::numkit::axpy(scale, t, &mut g);
    }
    Ok(g)
}

/// `x - gamma * g`; aborts on a non-finite gradient.
pub fn global_step(x: &[f64], g: &[f64], gamma: f64) -> Result<Vec<f64>> {
    crate::numkit::check_same_dim("global step", x, g)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param(format!("global step size must be positive, got {gamma}")));
    }
    if !all_finite(g) {
        return Err(Error::Numerics(format!(
            "non-finite gradient estimate (norm {})",
            norm(g)
        )));
    }
    Ok(x.iter().zip(g).map(|(xi, gi)| xi - gamma * gi).collect())
}

/// Implicit-objective evaluation at a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub f1_loss: f64,
    /// `f1(x) + sum_i w_i (lambda/2) ||x - y_i(x)||^2` with `y_i` from an eval-budget solve.
    pub implicit_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_accuracy: Option<f64>,
}

/// Per-round metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Full-batch `f1` after this round's update.
    pub global_loss_f1: f64,
    /// Participant average of `(P+ + P-)/2`, the sampled penalty level.
    pub penalty_f2: f64,
    pub grad_estimate_norm: f64,
    pub step_size: f64,
    pub participants: Vec<usize>,
    pub budgets: Vec<usize>,
    /// `||y+ - y-||` per participant.
    pub pm_gaps: Vec<f64>,
    /// `||init - input||` per participant and branch; nonzero only under warm starts.
    pub init_offsets: Vec<(f64, f64)>,
    pub client_grad_evals: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval: Option<EvalRecord>,
    /// Seconds spent in the round. Kept out of the serialized stream so that
    /// metric files are reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Consumer of round records.
pub trait MetricSink {
    fn record(&mut self, rec: &RoundRecord) -> Result<()>;
}

impl MetricSink for Vec<RoundRecord> {
    fn record(&mut self, rec: &RoundRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _: &RoundRecord) -> Result<()> {
        Ok(())
    }
}

/// One client: its lower-level objective and feasible set.
pub struct ClientSlot<'a> {
    pub objective: &'a (dyn LowerObjective + 'a),
    pub constraint: ConstraintSpec,
}

pub type AccuracyFn<'a> = dyn Fn(&[f64]) -> Result<f64> + Sync + 'a;

/// Problem instance for [`run_zohfl`].
pub struct ZoHflProblem<'a> {
    pub upper: &'a (dyn UpperObjective + 'a),
    pub clients: Vec<ClientSlot<'a>>,
    pub initial: Vec<f64>,
    /// Test accuracy hook used at eval checkpoints.
    pub accuracy: Option<&'a AccuracyFn<'a>>,
}

struct ParticipantResult {
    term: Vec<f64>,
    penalty_mid: f64,
    pm_gap: f64,
    init_offsets: (f64, f64),
    grad_evals: usize,
}

#[allow(clippy::too_many_arguments)]
fn participant_work(
    client: usize,
    slot: &ClientSlot<'_>,
    state: &mut LocalState,
    x: &[f64],
    direction: &[f64],
    budget: usize,
    params: &ZoHflParams,
    smoothing: &SmoothingParams,
    round: usize,
) -> Result<ParticipantResult> {
    let m = params.num_clients() as f64;
    let mut rng_plus = RngStream::for_role(params.seed, Role::Client, client as u64, round as u64, 0);
    let mut rng_minus = match params.sample_sharing {
        SampleSharing::Shared => rng_plus.clone(),
        SampleSharing::Independent => RngStream::for_role(params.seed, Role::Client, client as u64, round as u64, 1),
    };
    let req = PairRequest {
        x,
        direction,
        eta: params.eta,
        spec: &slot.constraint,
        schedule: &params.local_schedule,
        budget,
        batch: params.client_batch,
        warm_start: params.warm_start,
    };
    let out = solve_pm_pair(slot.objective, &req, state, &mut rng_plus, &mut rng_minus)?;
    let x_plus: Vec<f64> = x.iter().zip(direction).map(|(a, v)| a + params.eta * v).collect();
    let x_minus: Vec<f64> = x.iter().zip(direction).map(|(a, v)| a - params.eta * v).collect();
    // m * w_i keeps the participant average unbiased for sum_i w_i f2_i.
    let weight = m * params.weights[client];
    let p_plus = penalty_value(&x_plus, &out.plus.final_iterate, params.lambda, weight)?;
    let p_minus = penalty_value(&x_minus, &out.minus.final_iterate, params.lambda, weight)?;
    let term = zo_term(p_plus, p_minus, direction, smoothing)?;
    Ok(ParticipantResult {
        term,
        penalty_mid: 0.5 * (p_plus + p_minus),
        pm_gap: dist(&out.plus.final_iterate, &out.minus.final_iterate),
        init_offsets: out.init_offsets,
        grad_evals: out.plus.grad_eval_count + out.minus.grad_eval_count,
    })
}

/// `f1(x) + sum_i w_i (lambda/2) ||x - y_i(x)||^2` with `y_i` from `eval_budget` local steps.
pub fn implicit_objective(problem: &ZoHflProblem<'_>, params: &ZoHflParams, x: &[f64], round: usize) -> Result<f64> {
    let f1 = problem.upper.loss(x)?;
    let penalties = problem
        .clients
        .par_iter()
        .enumerate()
        .map(|(i, slot)| {
            let mut rng = RngStream::for_role(params.seed, Role::Eval, i as u64, round as u64, 0);
            let y = local_solve(
                slot.objective,
                x,
                x,
                &slot.constraint,
                &params.local_schedule,
                params.eval_budget,
                &mut rng,
                params.client_batch,
            )?;
            penalty_value(x, &y.final_iterate, params.lambda, params.weights[i])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(f1 + penalties.iter().sum::<f64>())
}

/// Run the ZO-HFL loop for `params.rounds` rounds and return the final model.
pub fn run_zohfl(problem: &ZoHflProblem<'_>, params: &ZoHflParams, sink: &mut dyn MetricSink) -> Result<Vec<f64>> {
    params.validate()?;
    let m = params.num_clients();
    if problem.clients.len() != m {
        return Err(Error::param(format!(
            "{} client objectives for {m} configured clients",
            problem.clients.len()
        )));
    }
    let dim = problem.upper.dim();
    if problem.initial.len() != dim {
        return Err(Error::dim(format!(
            "initial model dim {} vs objective dim {dim}",
            problem.initial.len()
        )));
    }
    for (i, c) in problem.clients.iter().enumerate() {
        if c.objective.dim() != dim {
            return Err(Error::dim(format!(
                "client {i} objective dim {} vs {dim}",
                c.objective.dim()
            )));
        }
        c.constraint.validate()?;
    }
    let smoothing = SmoothingParams::new(params.eta, dim)?;
    let mut x = problem.initial.clone();
    let mut states = vec![LocalState::default(); m];

    for r in 0..params.rounds {
        let started = Instant::now();
        let plan = plan_round(r, params, dim).map_err(|e| e.at_round(r))?;

        let mut work: Vec<(usize, &mut LocalState, &[f64], usize)> = Vec::with_capacity(plan.participants.len());
        {
            let mut slot_iter = states.iter_mut().enumerate();
            for (k, &i) in plan.participants.iter().enumerate() {
                let state = loop {
                    let (j, s) = slot_iter.next().expect("participants are sorted client ids");
                    if j == i {
                        break s;
                    }
                };
                work.push((i, state, &plan.directions[k], plan.budgets[k]));
            }
        }
        let run_one = |(i, state, v, budget): (usize, &mut LocalState, &[f64], usize)| {
            participant_work(i, &problem.clients[i], state, &x, v, budget, params, &smoothing, r)
        };
        let results: Vec<ParticipantResult> = if params.parallel {
            work.into_par_iter().map(run_one).collect::<Result<_>>()
        } else {
            work.into_iter().map(run_one).collect::<Result<_>>()
        }
        .map_err(|e| e.at_round(r))?;

        let mut server_rng = RngStream::for_role(params.seed, Role::Server, 0, r as u64, 0);
        let f1_grad = problem
            .upper
            .stoch_grad(&x, &mut server_rng, params.server_batch)
            .map_err(|e| e.at_round(r))?;
        let denominator = match params.participation_mode {
            ParticipationMode::Renormalize => results.len(),
            ParticipationMode::FixedTotal => m,
        };
        let terms: Vec<Vec<f64>> = results.iter().map(|p| p.term.clone()).collect();
        let g = assemble_gradient_with(&f1_grad, &terms, denominator).map_err(|e| e.at_round(r))?;
        let grad_norm = norm(&g);
        x = global_step(&x, &g, plan.global_step).map_err(|e| e.at_round(r))?;

        let global_loss_f1 = problem.upper.loss(&x).map_err(|e| e.at_round(r))?;
        let eval = if params.eval_every > 0 && (r + 1) % params.eval_every == 0 {
            let implicit_loss = implicit_objective(problem, params, &x, r).map_err(|e| e.at_round(r))?;
            let test_accuracy = problem.accuracy.map(|f| f(&x)).transpose().map_err(|e| e.at_round(r))?;
            Some(EvalRecord {
                f1_loss: global_loss_f1,
                implicit_loss,
                test_accuracy,
            })
        } else {
            None
        };
        let record = RoundRecord {
            round: r,
            global_loss_f1,
            penalty_f2: results.iter().map(|p| p.penalty_mid).sum::<f64>() / denominator as f64,
            grad_estimate_norm: grad_norm,
            step_size: plan.global_step,
            participants: plan.participants,
            budgets: plan.budgets,
            pm_gaps: results.iter().map(|p| p.pm_gap).collect(),
            init_offsets: results.iter().map(|p| p.init_offsets).collect(),
            client_grad_evals: results.iter().map(|p| p.grad_evals).sum(),
            eval,
            wall_time: started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
        };
        if !record.global_loss_f1.is_finite() || !record.penalty_f2.is_finite() {
            return Err(Error::Numerics("non-finite round metric".into()).at_round(r));
        }
        sink.record(&record)?;
    }
    Ok(x)
}
