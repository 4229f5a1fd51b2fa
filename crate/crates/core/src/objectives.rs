//! Upper- and lower-level objectives: softmax cross-entropy for the server
//! loss, the proximal client loss, the distance penalty, and quadratic test
//! problems with closed-form minimizers.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::DatasetShard;
use crate::error::{Error, Result};
use crate::numkit::{cholesky_solve, dist, dist_sq, matvec, ConstraintSpec, RngStream};

/// Linear softmax classifier; `weights[c * n + k]` is feature `k` of class `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub weights: Vec<f64>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl SoftmaxModel {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            weights: vec![0.0; num_classes * feature_dim],
            num_classes,
            feature_dim,
        }
    }

    pub fn from_weights(weights: Vec<f64>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes < 2 || feature_dim == 0 {
            return Err(Error::param("softmax model needs C >= 2 and n >= 1"));
        }
        if weights.len() != num_classes * feature_dim {
            return Err(Error::dim(format!(
                "{} weights for C={num_classes}, n={feature_dim}",
                weights.len()
            )));
        }
        if !crate::numkit::all_finite(&weights) {
            return Err(Error::Numerics("non-finite model weight".into()));
        }
        Ok(Self {
            weights,
            num_classes,
            feature_dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, features: &[f64]) -> usize {
        predict(&self.weights, self.num_classes, features)
    }
}

pub fn predict(weights: &[f64], num_classes: usize, u: &[f64]) -> usize {
    let n = u.len();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for c in 0..num_classes {
        let s = crate::numkit::dot(&weights[c * n..(c + 1) * n], u);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best
}

fn check_model(weights: &[f64], shard: &DatasetShard) -> Result<()> {
    let expected = shard.num_classes() * shard.feature_dim();
    if weights.len() != expected {
        return Err(Error::dim(format!(
            "model has {} weights, shard needs C*n = {expected}",
            weights.len()
        )));
    }
    Ok(())
}

/// Stable log-softmax pieces: fills `probs` and returns `logsumexp - logit[label]`.
#[inline]
fn softmax_ce(weights: &[f64], u: &[f64], label: usize, probs: &mut [f64]) -> f64 {
    let n = u.len();
    let mut max = f64::NEG_INFINITY;
    for (c, p) in probs.iter_mut().enumerate() {
        *p = crate::numkit::dot(&weights[c * n..(c + 1) * n], u);
        max = max.max(*p);
    }
    let label_logit = probs[label];
    let mut total = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        total += *p;
    }
    probs.iter_mut().for_each(|p| *p /= total);
    max + total.ln() - label_logit
}

/// Mean cross-entropy of the softmax model over the shard.
pub fn f1_loss(weights: &[f64], shard: &DatasetShard) -> Result<f64> {
    check_model(weights, shard)?;
    if shard.is_empty() {
        return Err(Error::EmptyData("cross-entropy over an empty shard".into()));
    }
    let mut probs = vec![0.0; shard.num_classes()];
    let total: f64 = (0..shard.len())
        .map(|j| {
            let (u, label) = shard.sample(j);
            softmax_ce(weights, u, label, &mut probs)
        })
        .sum();
    Ok(total / shard.len() as f64)
}

/// `out = (1/|rows|) sum_j grad CE_j(weights)` over the given rows.
fn ce_grad_rows(weights: &[f64], shard: &DatasetShard, rows: impl ExactSizeIterator<Item = usize>, out: &mut [f64]) {
    let n = shard.feature_dim();
    let scale = 1.0 / rows.len() as f64;
    let mut probs = vec![0.0; shard.num_classes()];
    out.iter_mut().for_each(|g| *g = 0.0);
    for j in rows {
        let (u, label) = shard.sample(j);
        softmax_ce(weights, u, label, &mut probs);
        probs[label] -= 1.0;
        for (c, &p) in probs.iter().enumerate() {
            let coef = p * scale;
            for (g, &uk) in out[c * n..(c + 1) * n].iter_mut().zip(u) {
                *g += coef * uk;
            }
        }
    }
}

/// Full-batch gradient of [`f1_loss`].
pub fn f1_full_grad(weights: &[f64], shard: &DatasetShard) -> Result<Vec<f64>> {
    check_model(weights, shard)?;
    if shard.is_empty() {
        return Err(Error::EmptyData("gradient over an empty shard".into()));
    }
    let mut out = vec![0.0; weights.len()];
    ce_grad_rows(weights, shard, 0..shard.len(), &mut out);
    Ok(out)
}

fn stoch_ce_grad_into(
    weights: &[f64],
    shard: &DatasetShard,
    rng: &mut RngStream,
    batch: usize,
    out: &mut [f64],
) -> Result<()> {
    if batch == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    if shard.is_empty() {
        return Err(Error::EmptyData("stochastic gradient over an empty shard".into()));
    }
    if batch > shard.len() {
        return Err(Error::param(format!(
            "batch {batch} exceeds shard size {}",
            shard.len()
        )));
    }
    if batch == shard.len() {
        ce_grad_rows(weights, shard, 0..shard.len(), out);
    } else if batch == 1 {
        let j = rng.random_range(0..shard.len());
        ce_grad_rows(weights, shard, std::iter::once(j), out);
    } else {
        let rows = index::sample(rng, shard.len(), batch);
        ce_grad_rows(weights, shard, rows.into_iter(), out);
    }
    Ok(())
}

/// Cross-entropy gradient on a batch drawn uniformly without replacement.
pub fn f1_stoch_grad(weights: &[f64], shard: &DatasetShard, rng: &mut RngStream, batch: usize) -> Result<Vec<f64>> {
    check_model(weights, shard)?;
    let mut out = vec![0.0; weights.len()];
    stoch_ce_grad_into(weights, shard, rng, batch, &mut out)?;
    Ok(out)
}

/// `grad_y [CE_batch(y) + mu/2 ||y - x||^2]`.
pub fn local_objective_grad(
    x: &[f64],
    y: &[f64],
    shard: &DatasetShard,
    mu: f64,
    rng: &mut RngStream,
    batch: usize,
) -> Result<Vec<f64>> {
    crate::numkit::check_same_dim("local objective", x, y)?;
    check_model(y, shard)?;
    let mut out = vec![0.0; y.len()];
    stoch_ce_grad_into(y, shard, rng, batch, &mut out)?;
    add_prox(&mut out, x, y, mu);
    Ok(out)
}

#[inline]
fn add_prox(out: &mut [f64], x: &[f64], y: &[f64], mu: f64) {
    if mu != 0.0 {
        for ((g, &yi), &xi) in out.iter_mut().zip(y).zip(x) {
            *g += mu * (yi - xi);
        }
    }
}

/// `(lambda / 2) * weight * ||x - y||^2`
pub fn penalty_value(x: &[f64], y: &[f64], lambda: f64, weight: f64) -> Result<f64> {
    crate::numkit::check_same_dim("penalty", x, y)?;
    Ok(0.5 * lambda * weight * dist_sq(x, y))
}

/// Penalty coupling the global model to the client solutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda: f64,
    pub mu: f64,
    /// Per-client weight `w_i` in `sum_i w_i (lambda/2) ||x - y_i(x)||^2`.
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::param(format!("mu must be nonnegative, got {}", self.mu)));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::param(format!("client weight must be nonnegative, got {w}")));
        }
        Ok(())
    }
}

/// Server-side loss `f1`.
pub trait UpperObjective: Sync {
    fn dim(&self) -> usize;
    fn loss(&self, x: &[f64]) -> Result<f64>;
    fn stoch_grad(&self, x: &[f64], rng: &mut RngStream, batch: usize) -> Result<Vec<f64>>;
}

/// Client-side lower-level loss `h_i(x, y)`.
pub trait LowerObjective: Sync {
    fn dim(&self) -> usize;
    /// Writes a stochastic `grad_y h_i(anchor, y)` into `out`.
    fn stoch_grad_into(
        &self,
        anchor: &[f64],
        y: &[f64],
        rng: &mut RngStream,
        batch: usize,
        out: &mut [f64],
    ) -> Result<()>;
    /// Number of local samples (for sample-count weighting).
    fn num_samples(&self) -> usize;
}

/// `f1(x)` = mean cross-entropy on the server shard.
#[derive(Clone, Copy, Debug)]
pub struct SoftmaxServer<'a> {
    pub shard: &'a DatasetShard,
}

impl UpperObjective for SoftmaxServer<'_> {
    fn dim(&self) -> usize {
        self.shard.num_classes() * self.shard.feature_dim()
    }

    fn loss(&self, x: &[f64]) -> Result<f64> {
        f1_loss(x, self.shard)
    }

    fn stoch_grad(&self, x: &[f64], rng: &mut RngStream, batch: usize) -> Result<Vec<f64>> {
        f1_stoch_grad(x, self.shard, rng, batch)
    }
}

/// `h_i(x, y) = CE_i(y) + mu/2 ||x - y||^2`.
#[derive(Clone, Copy, Debug)]
pub struct ProxSoftmaxClient<'a> {
    pub shard: &'a DatasetShard,
    pub mu: f64,
}

impl LowerObjective for ProxSoftmaxClient<'_> {
    fn dim(&self) -> usize {
        self.shard.num_classes() * self.shard.feature_dim()
    }

    fn stoch_grad_into(
        &self,
        anchor: &[f64],
        y: &[f64],
        rng: &mut RngStream,
        batch: usize,
        out: &mut [f64],
    ) -> Result<()> {
        stoch_ce_grad_into(y, self.shard, rng, batch.min(self.shard.len().max(1)), out)?;
        add_prox(out, anchor, y, self.mu);
        Ok(())
    }

    fn num_samples(&self) -> usize {
        self.shard.len()
    }
}

/// `1/2 y^T A y + b^T y` with additive Gaussian gradient noise of scale `noise_sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProblem {
    a: Vec<f64>,
    b: Vec<f64>,
    noise_sigma: f64,
}

impl QuadraticProblem {
    /// `a` is row-major `n x n`; must be symmetric positive definite.
    pub fn new(a: Vec<f64>, b: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        let n = b.len();
        if n == 0 || a.len() != n * n {
            return Err(Error::dim(format!("A has {} entries for b of dim {n}", a.len())));
        }
        for i in 0..n {
            for j in 0..i {
                if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 * (1.0 + a[i * n + j].abs()) {
                    return Err(Error::param("A must be symmetric"));
                }
            }
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::param("noise_sigma must be nonnegative"));
        }
        // positive definiteness witness
        cholesky_solve(&a, &vec![0.0; n]).map_err(|_| Error::param("A must be positive definite"))?;
        Ok(Self { a, b, noise_sigma })
    }

    pub fn diagonal(diag: &[f64], b: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            a[i * n + i] = d;
        }
        Self::new(a, b, noise_sigma)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        0.5 * crate::numkit::dot(y, &matvec(&self.a, y)) + crate::numkit::dot(&self.b, y)
    }

    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        let mut g = matvec(&self.a, y);
        crate::numkit::axpy(1.0, &self.b, &mut g);
        g
    }

    fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.a[i * n + j] == 0.0))
    }

    /// The problem plus `mu/2 ||y - anchor||^2`.
    pub fn with_prox(&self, mu: f64, anchor: &[f64]) -> Result<QuadraticProblem> {
        let n = self.dim();
        let mut a = self.a.clone();
        for i in 0..n {
            a[i * n + i] += mu;
        }
        let b = self.b.iter().zip(anchor).map(|(bi, xi)| bi - mu * xi).collect();
        QuadraticProblem::new(a, b, self.noise_sigma)
    }

    fn noisy_grad_into(&self, y: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            *o = crate::numkit::dot(&self.a[i * n..(i + 1) * n], y) + self.b[i];
        }
        if self.noise_sigma > 0.0 {
            for o in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *o += self.noise_sigma * z;
            }
        }
    }
}

/// Minimizer of `q` over the set `spec` anchored at `anchor`.
///
/// Ball constraints solve for the KKT multiplier by bisection; the orthant is
/// supported for diagonal `A` only.
pub fn quad_solution(q: &QuadraticProblem, spec: &ConstraintSpec, anchor: &[f64]) -> Result<Vec<f64>> {
    crate::numkit::check_same_dim("quad_solution anchor", q.b(), anchor)?;
    spec.validate()?;
    let n = q.dim();
    let neg_b: Vec<f64> = q.b.iter().map(|v| -v).collect();
    let free = cholesky_solve(&q.a, &neg_b)?;
    match *spec {
        ConstraintSpec::Unconstrained => Ok(free),
        ConstraintSpec::BallAroundAnchor { radius } => {
            if dist(&free, anchor) <= radius {
                return Ok(free);
            }
            // y(l) = (A + l I)^{-1} (l anchor - b); ||y(l) - anchor|| decreases in l.
            let solve_at = |l: f64| -> Result<Vec<f64>> {
                let mut a = q.a.clone();
                for i in 0..n {
                    a[i * n + i] += l;
                }
                let rhs: Vec<f64> = anchor.iter().zip(&q.b).map(|(x, b)| l * x - b).collect();
                cholesky_solve(&a, &rhs)
            };
            let mut lo = 0.0;
            let mut hi = 1.0;
            while dist(&solve_at(hi)?, anchor) > radius {
                hi *= 2.0;
                if hi > 1e300 {
                    return Err(Error::Numerics("ball multiplier bracket diverged".into()));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if dist(&solve_at(mid)?, anchor) > radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-12 * hi.max(1.0) {
                    break;
                }
            }
            let mut y = solve_at(hi)?;
            // land exactly on the sphere
            spec.project_in_place(&mut y, anchor);
            Ok(y)
        }
        ConstraintSpec::NonnegativeOrthant => {
            if !q.is_diagonal() {
                return Err(Error::UnsupportedOracle(
                    "orthant-constrained oracle needs a diagonal A".into(),
                ));
            }
            Ok((0..n).map(|i| (-q.b[i] / q.a[i * n + i]).max(0.0)).collect())
        }
    }
}

/// Quadratic server loss `f1(x) = 1/2 x^T A x + b^T x`.
#[derive(Clone, Debug)]
pub struct QuadraticServer {
    pub problem: QuadraticProblem,
}

impl UpperObjective for QuadraticServer {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(self.problem.value(x))
    }

    fn stoch_grad(&self, x: &[f64], rng: &mut RngStream, batch: usize) -> Result<Vec<f64>> {
        if batch == 0 {
            return Err(Error::param("batch size must be positive"));
        }
        let mut out = vec![0.0; x.len()];
        self.problem.noisy_grad_into(x, rng, &mut out);
        Ok(out)
    }
}

/// Quadratic client loss `h(x, y) = 1/2 y^T A y + b^T y + mu/2 ||y - x||^2`.
#[derive(Clone, Debug)]
pub struct QuadraticClient {
    pub problem: QuadraticProblem,
    pub mu: f64,
}

impl QuadraticClient {
    /// Exact lower-level solution at `x` over `spec`.
    pub fn solution(&self, x: &[f64], spec: &ConstraintSpec) -> Result<Vec<f64>> {
        quad_solution(&self.problem.with_prox(self.mu, x)?, spec, x)
    }
}

impl LowerObjective for QuadraticClient {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn stoch_grad_into(
        &self,
        anchor: &[f64],
        y: &[f64],
        rng: &mut RngStream,
        _batch: usize,
        out: &mut [f64],
    ) -> Result<()> {
        self.problem.noisy_grad_into(y, rng, out);
        add_prox(out, anchor, y, self.mu);
        Ok(())
    }

    fn num_samples(&self) -> usize {
        1
    }
}
