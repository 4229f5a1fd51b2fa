//! FedAvg, FedProx and SCAFFOLD on the client cross-entropy losses.
//!
//! Baselines train only on client data; the server shard is used for the
//! reported `f1` loss so that metrics line up with ZO-HFL runs.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetShard;
use crate::error::{Error, Result};
use crate::numkit::{all_finite, axpy, norm, sub, RngStream, Role};
use crate::objectives::{f1_loss, f1_stoch_grad};
use crate::orchestrator::{local_budget, participant_count, AccuracyFn, EvalRecord, MetricSink, RoundRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineMethod {
    FedAvg,
    FedProx,
    Scaffold,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FedAvg => "FedAvg",
            Self::FedProx => "FedProx",
            Self::Scaffold => "Scaffold",
        }
    }
}

/// Number of local SGD steps per participant and round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalSteps {
    Fixed {
        steps: usize,
    },
    /// `2 ceil(tau sqrt(r + 1))`, the gradient count of a ZO-HFL `+/-` pair.
    Matched {
        tau: f64,
    },
}

impl LocalSteps {
    pub fn at(&self, round: usize) -> usize {
        match *self {
            Self::Fixed { steps } => steps,
            Self::Matched { tau } => 2 * local_budget(tau, round),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub local_steps: LocalSteps,
    pub local_lr: f64,
    pub prox_mu: f64,
    pub rounds: usize,
    pub participation: f64,
    pub batch: usize,
    pub seed: u64,
    pub parallel: bool,
    pub eval_every: usize,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod, local_steps: LocalSteps, local_lr: f64, rounds: usize) -> Self {
        Self {
            method,
            local_steps,
            local_lr,
            prox_mu: if method == BaselineMethod::FedProx { 0.01 } else { 0.0 },
            rounds,
            participation: 1.0,
            batch: 1,
            seed: 0,
            parallel: true,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.local_lr > 0.0 && self.local_lr.is_finite()) {
            return Err(Error::param(format!(
                "local_lr must be positive, got {}",
                self.local_lr
            )));
        }
        match self.method {
            BaselineMethod::FedProx if !(self.prox_mu > 0.0 && self.prox_mu.is_finite()) => {
                return Err(Error::param("FedProx needs prox_mu > 0"));
            }
            BaselineMethod::FedAvg | BaselineMethod::Scaffold if self.prox_mu != 0.0 => {
                return Err(Error::param(format!(
                    "prox_mu is only valid for FedProx, got {}",
                    self.prox_mu
                )));
            }
            _ => {}
        }
        if let LocalSteps::Fixed { steps: 0 } = self.local_steps {
            return Err(Error::param("local_steps must be positive"));
        }
        if let LocalSteps::Matched { tau } = self.local_steps {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::param("matched tau must be positive"));
            }
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::param(format!(
                "participation must be in (0,1], got {}",
                self.participation
            )));
        }
        if self.batch == 0 {
            return Err(Error::param("batch must be positive"));
        }
        Ok(())
    }
}

pub struct BaselineProblem<'a> {
    pub clients: &'a [DatasetShard],
    /// Shard on which the reported `f1` loss is computed.
    pub loss_shard: &'a DatasetShard,
    pub initial: Vec<f64>,
    pub accuracy: Option<&'a AccuracyFn<'a>>,
}

/// Sample-count weights over the participants; they sum to 1.
pub fn aggregation_weights(clients: &[DatasetShard], participants: &[usize]) -> Result<Vec<f64>> {
    if participants.is_empty() {
        return Err(Error::EmptyRound);
    }
    let total: usize = participants.iter().map(|&i| clients[i].len()).sum();
    if total == 0 {
        return Err(Error::EmptyData("participating clients hold no samples".into()));
    }
    Ok(participants
        .iter()
        .map(|&i| clients[i].len() as f64 / total as f64)
        .collect())
}

fn sample_participants(seed: u64, round: usize, m: usize, beta: f64) -> Vec<usize> {
    let k = participant_count(beta, m);
    if k == m {
        return (0..m).collect();
    }
    let mut rng = RngStream::for_role(seed, Role::Participation, 0, round as u64, 0);
    let mut ids = rand::seq::index::sample(&mut rng, m, k).into_vec();
    ids.sort_unstable();
    ids
}

struct ClientUpdate {
    model: Vec<f64>,
    control_delta: Option<Vec<f64>>,
    grad_evals: usize,
}

#[allow(clippy::too_many_arguments)]
fn client_update(
    cfg: &BaselineConfig,
    prox_mu: f64,
    shard: &DatasetShard,
    x: &[f64],
    steps: usize,
    control: Option<(&[f64], &[f64])>,
    update_control: bool,
    rng: &mut RngStream,
) -> Result<ClientUpdate> {
    let batch = cfg.batch.min(shard.len().max(1));
    let mut y = x.to_vec();
    for _ in 0..steps {
        let mut g = f1_stoch_grad(&y, shard, rng, batch)?;
        if prox_mu != 0.0 {
            for ((gj, yj), xj) in g.iter_mut().zip(&y).zip(x) {
                *gj += prox_mu * (yj - xj);
            }
        }
        if let Some((c_global, c_local)) = control {
            for ((gj, cg), cl) in g.iter_mut().zip(c_global).zip(c_local) {
                *gj += cg - cl;
            }
        }
        axpy(-cfg.local_lr, &g, &mut y);
    }
    if !all_finite(&y) {
        return Err(Error::Numerics("non-finite local model".into()));
    }
    // option II: c_i+ = c_i - c + (x - y) / (K lr), reported as c_i+ - c_i
    let control_delta = match control {
        Some((c_global, _)) if update_control && steps > 0 => {
            let scale = 1.0 / (steps as f64 * cfg.local_lr);
            Some(
                x.iter()
                    .zip(&y)
                    .zip(c_global)
                    .map(|((xj, yj), cg)| (xj - yj) * scale - cg)
                    .collect(),
            )
        }
        _ => None,
    };
    Ok(ClientUpdate {
        model: y,
        control_delta,
        grad_evals: steps * batch,
    })
}

/// Run a baseline for `cfg.rounds` rounds and return the final model.
pub fn run_baseline(
    problem: &BaselineProblem<'_>,
    cfg: &BaselineConfig,
    sink: &mut dyn MetricSink,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    run_inner(problem, cfg, cfg.prox_mu, false, sink)
}

pub(crate) fn run_inner(
    problem: &BaselineProblem<'_>,
    cfg: &BaselineConfig,
    prox_mu: f64,
    freeze_variates: bool,
    sink: &mut dyn MetricSink,
) -> Result<Vec<f64>> {
    let m = problem.clients.len();
    if m == 0 {
        return Err(Error::param("need at least one client"));
    }
    let dim = problem.initial.len();
    for (i, c) in problem.clients.iter().enumerate() {
        if c.is_empty() {
            return Err(Error::EmptyData(format!("client {i} has no samples")));
        }
        if c.feature_dim() * c.num_classes() != dim {
            return Err(Error::dim(format!("client {i} shard does not match model dim {dim}")));
        }
    }
    let scaffold = cfg.method == BaselineMethod::Scaffold;
    let mut x = problem.initial.clone();
    let mut c_global = vec![0.0; dim];
    let mut c_local = vec![vec![0.0; dim]; if scaffold { m } else { 0 }];

    for r in 0..cfg.rounds {
        let started = Instant::now();
        let participants = sample_participants(cfg.seed, r, m, cfg.participation);
        let weights = aggregation_weights(problem.clients, &participants).map_err(|e| e.at_round(r))?;
        let steps = cfg.local_steps.at(r);

        let run_one = |&i: &usize| {
            let mut rng = RngStream::for_role(cfg.seed, Role::Client, i as u64, r as u64, 0);
            let control = scaffold.then(|| (c_global.as_slice(), c_local[i].as_slice()));
            client_update(
                cfg,
                prox_mu,
                &problem.clients[i],
                &x,
                steps,
                control,
                !freeze_variates,
                &mut rng,
            )
        };
        let updates: Vec<ClientUpdate> = if cfg.parallel {
            participants.par_iter().map(run_one).collect::<Result<_>>()
        } else {
            participants.iter().map(run_one).collect::<Result<_>>()
        }
        .map_err(|e| e.at_round(r))?;

        let mut next = vec![0.0; dim];
        for (u, w) in updates.iter().zip(&weights) {
            axpy(*w, &u.model, &mut next);
        }
        if scaffold && !freeze_variates {
            let mut dc = vec![0.0; dim];
            for (u, &i) in updates.iter().zip(&participants) {
                if let Some(delta) = &u.control_delta {
                    axpy(1.0 / m as f64, delta, &mut dc);
                    axpy(1.0, delta, &mut c_local[i]);
                }
            }
            axpy(1.0, &dc, &mut c_global);
        }
        let pseudo_grad = sub(&x, &next);
        x = next;

        let global_loss_f1 = f1_loss(&x, problem.loss_shard).map_err(|e| e.at_round(r))?;
        if !global_loss_f1.is_finite() {
            return Err(Error::Numerics("non-finite loss".into()).at_round(r));
        }
        let eval = if cfg.eval_every > 0 && (r + 1) % cfg.eval_every == 0 {
            let test_accuracy = problem.accuracy.map(|f| f(&x)).transpose().map_err(|e| e.at_round(r))?;
            Some(EvalRecord {
                f1_loss: global_loss_f1,
                implicit_loss: global_loss_f1,
                test_accuracy,
            })
        } else {
            None
        };
        let record = RoundRecord {
            round: r,
            global_loss_f1,
            penalty_f2: 0.0,
            grad_estimate_norm: norm(&pseudo_grad),
            step_size: cfg.local_lr,
            budgets: vec![steps; participants.len()],
            participants,
            pm_gaps: Vec::new(),
            init_offsets: Vec::new(),
            client_grad_evals: updates.iter().map(|u| u.grad_evals).sum(),
            eval,
            wall_time: started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
        };
        sink.record(&record)?;
    }
    Ok(x)
}
