use std::path::PathBuf;

use super::config::{BaselineSettings, DatasetSource, Method, PenaltyWeights, RunConfig, TauSpec};
use crate::baselines::LocalSteps;
use crate::error::{Error, Result};
use crate::orchestrator::SampleSharing;

pub const PRESETS: [&str; 6] = [
    "quick",
    "table1-desk",
    "local-steps-desk",
    "rate-check",
    "asymptotic",
    "table1-full",
];

/// `(alpha, beta)` heterogeneity settings, mildest first.
pub const HETEROGENEITY: [(f64, f64); 3] = [(1000.0, 0.9), (1.0, 0.5), (0.1, 0.1)];

pub const METHODS: [Method; 4] = [Method::Zohfl, Method::Fedavg, Method::Fedprox, Method::Scaffold];

fn setting_tag(alpha: f64, beta: f64) -> String {
    format!("a{alpha}-b{}", (beta * 100.0).round())
}

fn with_method(mut cfg: RunConfig, method: Method) -> RunConfig {
    cfg.method = method;
    cfg.baseline.prox_mu = if method == Method::Fedprox { 0.01 } else { 0.0 };
    cfg
}

/// Small synthetic run for smoke tests.
pub fn quick(seed: u64) -> RunConfig {
    RunConfig {
        run_id: "quick".into(),
        clients: 4,
        rounds: 20,
        global_step_c: 0.5,
        tau: TauSpec::Uniform(2.0),
        dataset: DatasetSource::Synth {
            classes: 4,
            feature_dim: 5,
            per_class: 50,
            spread: 1.0,
            offset: 0.0,
        },
        server_batch: 8,
        client_batch: 4,
        eval_every: 10,
        eval_budget: 50,
        participation: 0.5,
        ..RunConfig::default()
    }
    .with_seed(seed)
}

/// Shared base of the desk-scale heterogeneity presets.
pub fn desk_base(seed: u64) -> RunConfig {
    RunConfig {
        clients: 10,
        rounds: 300,
        eta: 0.1,
        global_step_c: 0.5,
        global_step_p: 0.5,
        tau: TauSpec::Uniform(20.0),
        local_gamma0: 0.5,
        local_offset: 1.0,
        lambda: 0.1,
        mu: 0.1,
        penalty_weights: PenaltyWeights::Samples,
        sample_sharing: SampleSharing::Shared,
        server_batch: 16,
        client_batch: 4,
        dataset: DatasetSource::Synth {
            classes: 10,
            feature_dim: 10,
            per_class: 500,
            spread: 1.0,
            offset: 2.0,
        },
        eval_every: 50,
        eval_budget: 200,
        baseline: BaselineSettings {
            local_steps: LocalSteps::Matched { tau: 20.0 },
            local_lr: 0.01,
            prox_mu: 0.0,
        },
        ..RunConfig::default()
    }
    .with_seed(seed)
}

/// Three heterogeneity settings times four methods.
pub fn table1_desk(seed: u64) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for (alpha, beta) in HETEROGENEITY {
        for method in METHODS {
            let mut cfg = with_method(desk_base(seed), method);
            cfg.alpha = alpha;
            cfg.participation = beta;
            cfg.run_id = format!("table1-{}-{:?}-s{seed}", setting_tag(alpha, beta), method).to_lowercase();
            out.push(cfg);
        }
    }
    out
}

/// Penalty strength of the local-steps study.
pub const LOCAL_STEPS_LAMBDA: f64 = 3.0;

/// ZO-HFL with `tau` in {5, 20, 50} under each heterogeneity setting.
pub fn local_steps_desk(seed: u64) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for (alpha, beta) in HETEROGENEITY {
        for tau in [5.0, 20.0, 50.0] {
            let mut cfg = desk_base(seed);
            cfg.alpha = alpha;
            cfg.participation = beta;
            cfg.tau = TauSpec::Uniform(tau);
            cfg.lambda = LOCAL_STEPS_LAMBDA;
            cfg.eval_every = 0;
            cfg.run_id = format!("steps-{}-tau{tau}-s{seed}", setting_tag(alpha, beta));
            out.push(cfg);
        }
    }
    out
}

/// Rate check on a 10-class, 20-feature instance with full participation.
pub fn rate_check(seed: u64) -> RunConfig {
    RunConfig {
        run_id: format!("rate-check-s{seed}"),
        clients: 10,
        rounds: 2000,
        participation: 1.0,
        alpha: 1000.0,
        tau: TauSpec::Uniform(20.0),
        global_step_c: 0.5,
        eval_every: 0,
        dataset: DatasetSource::Synth {
            classes: 10,
            feature_dim: 20,
            per_class: 100,
            spread: 1.0,
            offset: 0.0,
        },
        ..desk_base(seed)
    }
}

/// Long run on a small quadratic instance with a square-summable step.
pub fn asymptotic_check(seed: u64) -> RunConfig {
    RunConfig {
        run_id: format!("asymptotic-s{seed}"),
        clients: 4,
        rounds: 10_000,
        participation: 1.0,
        eta: 0.1,
        global_step_c: 0.05,
        global_step_p: 0.75,
        asymptotic: true,
        tau: TauSpec::Uniform(2.0),
        local_gamma0: 0.5,
        local_offset: 1.0,
        lambda: 1.0,
        mu: 1.0,
        penalty_weights: PenaltyWeights::Uniform,
        sample_sharing: SampleSharing::Shared,
        dataset: DatasetSource::Quadratic {
            dim: 2,
            server_noise: 0.01,
            client_noise: 0.01,
        },
        eval_every: 0,
        ..RunConfig::default()
    }
    .with_seed(seed)
}

/// Full-scale MNIST grid; reads IDX files from `data_dir`.
pub fn table1_full(seed: u64, data_dir: PathBuf) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for (alpha, beta) in HETEROGENEITY {
        for method in METHODS {
            let mut cfg = with_method(
                RunConfig {
                    clients: 10,
                    rounds: 500,
                    tau: TauSpec::Uniform(5.0),
                    alpha,
                    participation: beta,
                    dataset: DatasetSource::Idx {
                        images: data_dir.join("train-images-idx3-ubyte"),
                        labels: data_dir.join("train-labels-idx1-ubyte"),
                    },
                    eval_every: 50,
                    ..RunConfig::default()
                }
                .with_seed(seed),
                method,
            );
            cfg.run_id = format!("table1-full-{}-{:?}-s{seed}", setting_tag(alpha, beta), method).to_lowercase();
            out.push(cfg);
        }
    }
    out
}

/// Expand a preset name. `table1-full` reads from `$ZOHFL_MNIST_DIR` or `data/mnist`.
pub fn preset(name: &str, seed: u64) -> Result<Vec<RunConfig>> {
    let configs = match name {
        "quick" => vec![quick(seed)],
        "table1-desk" => table1_desk(seed),
        "local-steps-desk" => local_steps_desk(seed),
        "rate-check" => vec![rate_check(seed)],
        "asymptotic" => vec![asymptotic_check(seed)],
        "table1-full" => {
            let dir = std::env::var_os("ZOHFL_MNIST_DIR").map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from);
            table1_full(seed, dir)
        }
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")),
            ))
        }
    };
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}
