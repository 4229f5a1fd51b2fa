use std::path::{Path, PathBuf};

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, PenaltyWeights, RunConfig};
use super::eval::evaluate_accuracy;
use super::metrics::{save_summary, write_timing, RecordingSink, SummaryRow};
use crate::baselines::{run_baseline, BaselineProblem};
use crate::data::{emit_partition_histogram, load_csv, load_idx, partition, synth_blobs, DatasetShard, Partition};
use crate::error::{Error, Result};
use crate::numkit::{RngStream, Role};
use crate::objectives::{
    ProxSoftmaxClient, QuadraticClient, QuadraticProblem, QuadraticServer, SoftmaxModel, SoftmaxServer,
};
use crate::orchestrator::{run_zohfl, AccuracyFn, ClientSlot, RoundRecord, ZoHflProblem};

/// Server and client quadratics generated from the data seed.
#[derive(Clone, Debug)]
pub struct QuadraticInstance {
    pub server: QuadraticServer,
    pub clients: Vec<QuadraticClient>,
}

pub enum Instance {
    Softmax(Partition),
    Quadratic(QuadraticInstance),
}

pub fn load_dataset(source: &DatasetSource, seed: u64) -> Result<DatasetShard> {
    match source {
        DatasetSource::Synth {
            classes,
            feature_dim,
            per_class,
            spread,
            offset,
        } => {
            let mut rng = RngStream::for_role(seed, Role::Data, 0, 0, 0);
            let blobs = synth_blobs(&mut rng, *classes, *feature_dim, *per_class, *spread)?;
            if *offset == 0.0 {
                return Ok(blobs);
            }
            let shifted = blobs.features().iter().map(|v| v + offset).collect();
            DatasetShard::new(shifted, blobs.labels().to_vec(), *feature_dim, *classes)
        }
        DatasetSource::Idx { images, labels } => load_idx(images, labels),
        DatasetSource::Csv { path } => load_csv(path),
        DatasetSource::Quadratic { .. } => Err(Error::config("dataset", "quadratic instances carry no samples")),
    }
}

pub fn quadratic_instance(
    dim: usize,
    m: usize,
    server_noise: f64,
    client_noise: f64,
    mu: f64,
    seed: u64,
) -> Result<QuadraticInstance> {
    let mut rng = RngStream::for_role(seed, Role::Data, 0, 0, 1);
    let draw = |rng: &mut RngStream, noise: f64| -> Result<QuadraticProblem> {
        let diag: Vec<f64> = (0..dim).map(|_| rng.random_range(1.0..2.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        QuadraticProblem::diagonal(&diag, b, noise)
    };
    let server = QuadraticServer {
        problem: draw(&mut rng, server_noise)?,
    };
    let clients = (0..m)
        .map(|_| {
            Ok(QuadraticClient {
                problem: draw(&mut rng, client_noise)?,
                mu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuadraticInstance { server, clients })
}

pub fn prepare(cfg: &RunConfig) -> Result<Instance> {
    match &cfg.dataset {
        DatasetSource::Quadratic {
            dim,
            server_noise,
            client_noise,
        } => Ok(Instance::Quadratic(quadratic_instance(
            *dim,
            cfg.clients,
            *server_noise,
            *client_noise,
            cfg.mu,
            cfg.data_seed,
        )?)),
        source => {
            let data = load_dataset(source, cfg.data_seed)?;
            Ok(Instance::Softmax(partition(
                &data,
                cfg.alpha,
                cfg.clients,
                cfg.server_fraction,
                cfg.test_fraction,
                cfg.data_seed,
            )?))
        }
    }
}

/// Final weights as persisted next to the metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistedModel {
    pub num_classes: Option<usize>,
    pub feature_dim: Option<usize>,
    pub weights: Vec<f64>,
}

impl PersistedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct RunOutput {
    pub final_model: PersistedModel,
    pub records: Vec<RoundRecord>,
    pub summary: SummaryRow,
    pub dir: Option<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run one configuration. With `out`, artifacts go to `out/<run_id>/`.
pub fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = match out {
        Some(root) => {
            let d = root.join(&cfg.run_id);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            std::fs::write(d.join("config.json"), cfg.to_json()?).map_err(|e| Error::io(d.join("config.json"), e))?;
            Some(d)
        }
        None => None,
    };
    let mut sink = match &dir {
        Some(d) => RecordingSink::to_file(&cfg.run_id, &d.join("metrics.jsonl"))?,
        None => RecordingSink::in_memory(&cfg.run_id),
    };
    info!("run {} ({}) for {} rounds", cfg.run_id, cfg.method.label(), cfg.rounds);

    let instance = prepare(cfg)?;
    let (final_model, accuracy) = match &instance {
        Instance::Quadratic(q) => {
            let problem = ZoHflProblem {
                upper: &q.server,
                clients: q
                    .clients
                    .iter()
                    .enumerate()
                    .map(|(i, c)| ClientSlot {
                        objective: c,
                        constraint: cfg.client_constraint(i),
                    })
                    .collect(),
                initial: vec![0.0; q.server.problem.dim()],
                accuracy: None,
            };
            let weights = vec![1.0 / cfg.clients as f64; cfg.clients];
            let x = run_zohfl(&problem, &cfg.zohfl_params(weights), &mut sink)?;
            (
                PersistedModel {
                    num_classes: None,
                    feature_dim: None,
                    weights: x,
                },
                None,
            )
        }
        Instance::Softmax(part) => {
            if let Some(d) = &dir {
                write_json(&d.join("partition.json"), &part.plan)?;
            }
            let classes = part.test.num_classes();
            let feature_dim = part.test.feature_dim();
            let initial = SoftmaxModel::zeros(classes, feature_dim).weights;
            let test = &part.test;
            let acc_fn = |w: &[f64]| evaluate_accuracy(w, test);
            let acc_ref: &AccuracyFn<'_> = &acc_fn;
            let x = match cfg.method.baseline() {
                None => {
                    let server = SoftmaxServer { shard: &part.server };
                    let lowers: Vec<ProxSoftmaxClient<'_>> = part
                        .clients
                        .iter()
                        .map(|shard| ProxSoftmaxClient { shard, mu: cfg.mu })
                        .collect();
                    let problem = ZoHflProblem {
                        upper: &server,
                        clients: lowers
                            .iter()
                            .enumerate()
                            .map(|(i, c)| ClientSlot {
                                objective: c,
                                constraint: cfg.client_constraint(i),
                            })
                            .collect(),
                        initial,
                        accuracy: Some(acc_ref),
                    };
                    let weights = match cfg.penalty_weights {
                        PenaltyWeights::Samples => part.client_weights(),
                        PenaltyWeights::Uniform => vec![1.0 / cfg.clients as f64; cfg.clients],
                    };
                    run_zohfl(&problem, &cfg.zohfl_params(weights), &mut sink)?
                }
                Some(method) => {
                    let problem = BaselineProblem {
                        clients: &part.clients,
                        loss_shard: &part.server,
                        initial,
                        accuracy: Some(acc_ref),
                    };
                    run_baseline(&problem, &cfg.baseline_config(method), &mut sink)?
                }
            };
            let accuracy = evaluate_accuracy(&x, test)?;
            (
                PersistedModel {
                    num_classes: Some(classes),
                    feature_dim: Some(feature_dim),
                    weights: x,
                },
                Some(accuracy),
            )
        }
    };
    let records = sink.finish()?;
    let final_loss = match records.last() {
        Some(r) => r.global_loss_f1,
        None => match &instance {
            Instance::Quadratic(q) => q.server.problem.value(&final_model.weights),
            Instance::Softmax(p) => crate::objectives::f1_loss(&final_model.weights, &p.server)?,
        },
    };
    let summary = SummaryRow {
        run_id: cfg.run_id.clone(),
        method: cfg.method.label().into(),
        alpha: cfg.alpha,
        beta: cfg.participation,
        tau: cfg.tau.mean(),
        final_loss,
        final_accuracy: accuracy,
        wall_time: records.iter().map(|r| r.wall_time).sum::<f64>().max(f64::MIN_POSITIVE),
    };
    if let Some(d) = &dir {
        write_json(&d.join("model.json"), &final_model)?;
        write_timing(&d.join("timing.csv"), &records)?;
    }
    Ok(RunOutput {
        final_model,
        records,
        summary,
        dir,
    })
}

/// Run several configurations and write `out/summary.csv`.
pub fn execute_all(configs: &[RunConfig], out: &Path, parallel: bool) -> Result<Vec<SummaryRow>> {
    use rayon::prelude::*;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut seen = std::collections::HashSet::new();
    for c in configs {
        if !seen.insert(c.run_id.as_str()) {
            return Err(Error::config("run_id", format!("duplicate run id {}", c.run_id)));
        }
    }
    let rows: Vec<SummaryRow> = if parallel {
        configs
            .par_iter()
            .map(|c| execute(c, Some(out)).map(|o| o.summary))
            .collect::<Result<_>>()?
    } else {
        configs
            .iter()
            .map(|c| execute(c, Some(out)).map(|o| o.summary))
            .collect::<Result<_>>()?
    };
    save_summary(&out.join("summary.csv"), &rows)?;
    Ok(rows)
}

/// Write the partition plan and its client-by-class histogram.
pub fn write_partition(cfg: &RunConfig, out: &Path) -> Result<Partition> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset, cfg.data_seed)?;
    let part = partition(
        &data,
        cfg.alpha,
        cfg.clients,
        cfg.server_fraction,
        cfg.test_fraction,
        cfg.data_seed,
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("partition.json"), &part.plan)?;
    emit_partition_histogram(&part.plan, &data).save_csv(&out.join("histogram.csv"))?;
    write_shard_csv(&out.join("server.csv"), &part.server)?;
    write_shard_csv(&out.join("test.csv"), &part.test)?;
    for (i, c) in part.clients.iter().enumerate() {
        write_shard_csv(&out.join(format!("client_{i}.csv")), c)?;
    }
    Ok(part)
}

/// Headerless `label,f1,...,fn` rows, the format read by `load_csv`.
pub fn write_shard_csv(path: &Path, shard: &DatasetShard) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for j in 0..shard.len() {
        let (u, label) = shard.sample(j);
        let mut row = Vec::with_capacity(u.len() + 1);
        row.push(label.to_string());
        row.extend(u.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
