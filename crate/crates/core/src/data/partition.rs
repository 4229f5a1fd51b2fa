use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatasetShard;
use crate::error::{Error, Result};
use crate::numkit::{dirichlet, RngStream};

/// Bounded resampling when a Dirichlet routing leaves some client empty.
const MAX_ROUTING_RETRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Server,
    Client(usize),
    Test,
}

/// Reproducible record of how a dataset was split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub seed: u64,
    pub alpha: f64,
    pub m: usize,
    pub server_fraction: f64,
    pub test_fraction: f64,
    /// Number of rejected routings before every client held a sample.
    pub retries: usize,
    /// Owner of each sample, indexed by position in the source dataset.
    pub assignment: Vec<Owner>,
}

impl PartitionPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug)]
pub struct Partition {
    pub server: DatasetShard,
    pub clients: Vec<DatasetShard>,
    pub test: DatasetShard,
    pub plan: PartitionPlan,
}

impl Partition {
    /// Training samples across server and clients.
    pub fn train_len(&self) -> usize {
        self.server.len() + self.clients.iter().map(DatasetShard::len).sum::<usize>()
    }

    /// `N_i / N_tr` with `N_tr` counting server and client training data.
    pub fn client_weights(&self) -> Vec<f64> {
        let total = self.train_len() as f64;
        self.clients.iter().map(|c| c.len() as f64 / total).collect()
    }
}

fn categorical(rng: &mut RngStream, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the total mass; take the last nonzero entry.
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

/// Split `shard` into test, server and `m` Dirichlet-skewed client shards.
///
/// Steps: a uniform test split of `test_fraction`; a uniform server share of
/// `server_fraction` of the remaining training data; then, per class, client
/// proportions `p ~ Dir(alpha 1_m)` and an independent categorical draw of the
/// owner of each class sample.
pub fn partition(
    shard: &DatasetShard,
    alpha: f64,
    m: usize,
    server_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if m == 0 {
        return Err(Error::param("need at least one client"));
    }
    if !(0.0..1.0).contains(&server_fraction) {
        return Err(Error::param(format!(
            "server_fraction must be in [0,1), got {server_fraction}"
        )));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::param(format!("alpha must be positive, got {alpha}")));
    }
    let n = shard.len();
    let mut rng = RngStream::new(seed, crate::numkit::stream_id(crate::numkit::Role::Data, 0, 0, 0));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let n_test = (test_fraction * n as f64).round() as usize;
    let n_train = n - n_test;
    let n_server = (server_fraction * n_train as f64).round() as usize;
    let mut assignment = vec![Owner::Test; n];
    for &j in &order[n_test..n_test + n_server] {
        assignment[j] = Owner::Server;
    }
    let pool = &order[n_test + n_server..];

    let classes = shard.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &j in pool {
        by_class[shard.labels()[j]].push(j);
    }
    for c in 0..classes {
        by_class[c].sort_unstable();
        if shard.class_counts()[c] > 0 && by_class[c].is_empty() {
            return Err(Error::PartitionInfeasible(format!(
                "class {c} has no samples left for clients after the test/server split"
            )));
        }
    }

    let mut retries = 0;
    let routed = loop {
        let mut owner_of = Vec::with_capacity(pool.len());
        let mut sizes = vec![0usize; m];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let p = dirichlet(&mut rng, alpha, m)?;
            for &j in members {
                let client = categorical(&mut rng, &p);
                sizes[client] += 1;
                owner_of.push((j, client));
            }
        }
        if sizes.iter().all(|&s| s > 0) {
            break owner_of;
        }
        retries += 1;
        if retries > MAX_ROUTING_RETRIES {
            return Err(Error::PartitionInfeasible(format!(
                "some client stayed empty after {MAX_ROUTING_RETRIES} Dirichlet routings"
            )));
        }
    };
    if retries > 0 {
        log::info!("partition: {retries} routing(s) rejected for empty clients");
    }
    for (j, client) in routed {
        assignment[j] = Owner::Client(client);
    }

    let rows_of = |pred: &dyn Fn(Owner) -> bool| -> Vec<usize> { (0..n).filter(|&j| pred(assignment[j])).collect() };
    let server = shard.subset(&rows_of(&|o| o == Owner::Server));
    let test = shard.subset(&rows_of(&|o| o == Owner::Test));
    let clients = (0..m)
        .map(|i| shard.subset(&rows_of(&|o| o == Owner::Client(i))))
        .collect();
    Ok(Partition {
        server,
        clients,
        test,
        plan: PartitionPlan {
            seed,
            alpha,
            m,
            server_fraction,
            test_fraction,
            retries,
            assignment,
        },
    })
}

/// Client-by-class sample counts.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionHistogram {
    pub counts: Vec<Vec<usize>>,
}

impl PartitionHistogram {
    pub fn client_sizes(&self) -> Vec<usize> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn class_totals(&self) -> Vec<usize> {
        let classes = self.counts.first().map_or(0, Vec::len);
        (0..classes)
            .map(|c| self.counts.iter().map(|row| row[c]).sum())
            .collect()
    }

    /// Each client's class distribution.
    pub fn normalized_rows(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total = row.iter().sum::<usize>().max(1) as f64;
                row.iter().map(|&k| k as f64 / total).collect()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let classes = self.counts.first().map_or(0, Vec::len);
        let mut header = vec!["client".to_string()];
        header.extend((0..classes).map(|c| format!("class_{c}")));
        w.write_record(&header)?;
        for (i, row) in self.counts.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

/// Client-by-class count table for plotting.
pub fn emit_partition_histogram(plan: &PartitionPlan, source: &DatasetShard) -> PartitionHistogram {
    let mut counts = vec![vec![0; source.num_classes()]; plan.m];
    for (j, owner) in plan.assignment.iter().enumerate() {
        if let Owner::Client(i) = owner {
            counts[*i][source.labels()[j]] += 1;
        }
    }
    PartitionHistogram { counts }
}
