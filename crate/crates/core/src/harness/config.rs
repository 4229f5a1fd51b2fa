use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineMethod, LocalSteps};
use crate::error::{Error, Result};
use crate::local_solver::LocalSchedule;
use crate::numkit::ConstraintSpec;
use crate::orchestrator::{GlobalStepSchedule, ParticipationMode, SampleSharing, ZoHflParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Zohfl,
    Fedavg,
    Fedprox,
    Scaffold,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Zohfl => "ZO-HFL",
            Self::Fedavg => "FedAvg",
            Self::Fedprox => "FedProx",
            Self::Scaffold => "SCAFFOLD",
        }
    }

    pub fn baseline(&self) -> Option<BaselineMethod> {
        match self {
            Self::Zohfl => None,
            Self::Fedavg => Some(BaselineMethod::FedAvg),
            Self::Fedprox => Some(BaselineMethod::FedProx),
            Self::Scaffold => Some(BaselineMethod::Scaffold),
        }
    }
}

/// Budget scale: one value for every client or one per client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Uniform(f64),
    PerClient(Vec<f64>),
}

impl TauSpec {
    pub fn expand(&self, m: usize) -> Vec<f64> {
        match self {
            Self::Uniform(t) => vec![*t; m],
            Self::PerClient(v) => v.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Uniform(t) => *t,
            Self::PerClient(v) if v.is_empty() => 0.0,
            Self::PerClient(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

/// How the per-client penalty weights `w_i` are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyWeights {
    /// `w_i = N_i / N_tr` with `N_tr` counting server and client training data.
    Samples,
    /// `w_i = 1 / m`.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synth {
        classes: usize,
        feature_dim: usize,
        per_class: usize,
        spread: f64,
        /// Constant added to every feature, so that classes share a common
        /// nonzero mean as pixel data does.
        #[serde(default)]
        offset: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
    /// Random strongly convex quadratics for the server and every client.
    Quadratic {
        dim: usize,
        server_noise: f64,
        client_noise: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    pub local_steps: LocalSteps,
    pub local_lr: f64,
    pub prox_mu: f64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            local_steps: LocalSteps::Matched { tau: 5.0 },
            local_lr: 0.05,
            prox_mu: 0.0,
        }
    }
}

/// One experiment, serialized as a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub method: Method,
    pub clients: usize,
    pub rounds: usize,
    pub eta: f64,
    pub global_step_c: f64,
    pub global_step_p: f64,
    /// Require `p` in `(0.5, 1]`.
    pub asymptotic: bool,
    pub tau: TauSpec,
    pub local_gamma0: f64,
    pub local_offset: f64,
    pub lambda: f64,
    pub mu: f64,
    pub constraint: ConstraintSpec,
    /// Per-client radii replacing the radius of a ball constraint.
    pub radii: Option<Vec<f64>>,
    pub alpha: f64,
    pub participation: f64,
    pub participation_mode: ParticipationMode,
    pub sample_sharing: SampleSharing,
    pub warm_start: bool,
    pub penalty_weights: PenaltyWeights,
    pub server_batch: usize,
    pub client_batch: usize,
    pub data_seed: u64,
    pub algo_seed: u64,
    pub dataset: DatasetSource,
    pub server_fraction: f64,
    pub test_fraction: f64,
    pub eval_every: usize,
    pub eval_budget: usize,
    pub baseline: BaselineSettings,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            method: Method::Zohfl,
            clients: 10,
            rounds: 500,
            eta: 0.1,
            global_step_c: 0.01,
            global_step_p: 0.5,
            asymptotic: false,
            tau: TauSpec::Uniform(5.0),
            local_gamma0: 0.1,
            local_offset: 1.0,
            lambda: 1.0,
            mu: 1.0,
            constraint: ConstraintSpec::Unconstrained,
            radii: None,
            alpha: 1000.0,
            participation: 0.9,
            participation_mode: ParticipationMode::Renormalize,
            sample_sharing: SampleSharing::Independent,
            warm_start: false,
            penalty_weights: PenaltyWeights::Samples,
            server_batch: 1,
            client_batch: 1,
            data_seed: 0,
            algo_seed: 0,
            dataset: DatasetSource::Synth {
                classes: 10,
                feature_dim: 20,
                per_class: 100,
                spread: 1.0,
                offset: 0.0,
            },
            server_fraction: 0.3,
            test_fraction: 0.1,
            eval_every: 0,
            eval_budget: 500,
            baseline: BaselineSettings::default(),
            parallel: true,
        }
    }
}

fn check(ok: bool, field: &str, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, msg))
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl RunConfig {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parse and validate; errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data_seed = seed;
        self.algo_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check(!self.run_id.is_empty(), "run_id", "must not be empty")?;
        check(
            self.run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)),
            "run_id",
            "use only ASCII letters, digits, '-', '_' and '.'",
        )?;
        check(self.clients >= 1, "clients", "need at least one client")?;
        check(positive(self.eta), "eta", "must be positive")?;
        check(positive(self.global_step_c), "global_step_c", "must be positive")?;
        check(
            self.global_step_p >= 0.0 && self.global_step_p.is_finite(),
            "global_step_p",
            "must be nonnegative",
        )?;
        if self.asymptotic {
            check(
                self.global_step_p > 0.5 && self.global_step_p <= 1.0,
                "global_step_p",
                "asymptotic mode needs p in (0.5, 1]",
            )?;
        }
        let taus = self.tau.expand(self.clients);
        check(
            taus.len() == self.clients,
            "tau",
            format!("expected {} entries", self.clients),
        )?;
        check(
            taus.iter().all(|t| *t >= 0.0 && t.is_finite()),
            "tau",
            "entries must be nonnegative",
        )?;
        check(positive(self.local_gamma0), "local_gamma0", "must be positive")?;
        check(positive(self.local_offset), "local_offset", "must be positive")?;
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda",
            "must be nonnegative",
        )?;
        check(
            positive(self.mu),
            "mu",
            "must be positive for a strongly convex lower level",
        )?;
        self.constraint
            .validate()
            .map_err(|e| Error::config("constraint", e.to_string()))?;
        if let Some(radii) = &self.radii {
            check(
                matches!(self.constraint, ConstraintSpec::BallAroundAnchor { .. }),
                "radii",
                "only valid with a ball constraint",
            )?;
            check(
                radii.len() == self.clients,
                "radii",
                format!("expected {} entries", self.clients),
            )?;
            check(radii.iter().all(|r| positive(*r)), "radii", "entries must be positive")?;
        }
        check(positive(self.alpha), "alpha", "must be positive")?;
        check(
            self.participation > 0.0 && self.participation <= 1.0,
            "participation",
            "must be in (0, 1]",
        )?;
        check(self.server_batch >= 1, "server_batch", "must be positive")?;
        check(self.client_batch >= 1, "client_batch", "must be positive")?;
        check(
            (0.0..1.0).contains(&self.server_fraction),
            "server_fraction",
            "must be in [0, 1)",
        )?;
        check(
            self.test_fraction > 0.0 && self.test_fraction < 1.0,
            "test_fraction",
            "must be in (0, 1)",
        )?;
        if self.eval_every > 0 {
            check(self.eval_budget >= 1, "eval_budget", "must be positive when evaluating")?;
        }
        match &self.dataset {
            DatasetSource::Synth {
                classes,
                feature_dim,
                per_class,
                spread,
                offset,
            } => {
                check(offset.is_finite(), "dataset.offset", "must be finite")?;
                check(*classes >= 2, "dataset.classes", "need at least two classes")?;
                check(*feature_dim >= 2, "dataset.feature_dim", "need at least two features")?;
                check(*per_class >= 1, "dataset.per_class", "must be positive")?;
                check(positive(*spread), "dataset.spread", "must be positive")?;
            }
            DatasetSource::Quadratic {
                dim,
                server_noise,
                client_noise,
            } => {
                check(*dim >= 1, "dataset.dim", "must be positive")?;
                check(*server_noise >= 0.0, "dataset.server_noise", "must be nonnegative")?;
                check(*client_noise >= 0.0, "dataset.client_noise", "must be nonnegative")?;
                check(
                    self.method == Method::Zohfl,
                    "method",
                    "quadratic instances support only zohfl",
                )?;
            }
            DatasetSource::Idx { .. } | DatasetSource::Csv { .. } => {}
        }
        if let Some(method) = self.method.baseline() {
            self.baseline_config(method)
                .validate()
                .map_err(|e| Error::config("baseline", e.to_string()))?;
        }
        Ok(())
    }

    pub fn local_schedule(&self) -> LocalSchedule {
        LocalSchedule {
            gamma0: self.local_gamma0,
            offset: self.local_offset,
        }
    }

    /// Constraint of client `i`, with its radius override applied.
    pub fn client_constraint(&self, i: usize) -> ConstraintSpec {
        match (&self.constraint, &self.radii) {
            (ConstraintSpec::BallAroundAnchor { .. }, Some(r)) => ConstraintSpec::BallAroundAnchor { radius: r[i] },
            (spec, _) => *spec,
        }
    }

    pub fn zohfl_params(&self, weights: Vec<f64>) -> ZoHflParams {
        ZoHflParams {
            rounds: self.rounds,
            eta: self.eta,
            global_step: GlobalStepSchedule {
                c: self.global_step_c,
                p: self.global_step_p,
            },
            taus: self.tau.expand(self.clients),
            local_schedule: self.local_schedule(),
            lambda: self.lambda,
            weights,
            participation: self.participation,
            participation_mode: self.participation_mode,
            sample_sharing: self.sample_sharing,
            server_batch: self.server_batch,
            client_batch: self.client_batch,
            warm_start: self.warm_start,
            seed: self.algo_seed,
            parallel: self.parallel,
            eval_every: self.eval_every,
            eval_budget: self.eval_budget,
        }
    }

    pub fn baseline_config(&self, method: BaselineMethod) -> BaselineConfig {
        BaselineConfig {
            method,
            local_steps: self.baseline.local_steps,
            local_lr: self.baseline.local_lr,
            prox_mu: self.baseline.prox_mu,
            rounds: self.rounds,
            participation: self.participation,
            batch: self.client_batch,
            seed: self.algo_seed,
            parallel: self.parallel,
            eval_every: self.eval_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let mut cfg = RunConfig::default();
        cfg.tau = TauSpec::PerClient((0..10).map(|i| 0.1 * i as f64 + 1.0 / 3.0).collect());
        cfg.eta = 0.1 + 0.2;
        cfg.constraint = ConstraintSpec::BallAroundAnchor { radius: 1.5 };
        cfg.radii = Some(vec![0.7; 10]);
        let a = cfg.to_json().unwrap();
        let parsed = RunConfig::from_json(&a).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_json().unwrap(), a);
    }

    #[test]
    fn errors_name_fields() {
        let mut cfg = RunConfig::default();
        cfg.eta = -1.0;
        let text = cfg.to_json().unwrap();
        match RunConfig::from_json(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "eta"),
            other => panic!("{other:?}"),
        }
        let text = RunConfig::default()
            .to_json()
            .unwrap()
            .replace("\"rounds\": 500", "\"rounds\": \"many\"");
        match RunConfig::from_json(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "rounds"),
            other => panic!("{other:?}"),
        }
        let text = RunConfig::default()
            .to_json()
            .unwrap()
            .replace("\"per_class\": 100", "\"per_class\": -3");
        match RunConfig::from_json(&text) {
            Err(Error::Config { field, .. }) => assert!(field.starts_with("dataset"), "{field}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn asymptotic_exponent_range() {
        let mut cfg = RunConfig {
            asymptotic: true,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.global_step_p = 0.75;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn baseline_prox_rule() {
        let mut cfg = RunConfig {
            method: Method::Fedprox,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.baseline.prox_mu = 0.1;
        assert!(cfg.validate().is_ok());
        cfg.method = Method::Fedavg;
        assert!(cfg.validate().is_err());
    }
}
