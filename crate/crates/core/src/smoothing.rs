//! Randomized spherical smoothing.
//!
//! For a radius `eta`, `h_eta(x) = E_{u ~ Ball}[h(x + eta u)]` and its gradient
//! equals `(n / 2 eta) E_{v ~ Sphere}[(h(x + eta v) - h(x - eta v)) v]`.
//! The Monte Carlo estimators here report standard errors so callers can test
//! against `k * SE` bands.

use crate::error::{Error, Result};
use crate::numkit::{dot, matvec, sample_unit_ball, sample_unit_sphere, RngStream, RunningStats, VecStats};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingParams {
    pub eta: f64,
    pub dim: usize,
}

impl SmoothingParams {
    pub fn new(eta: f64, dim: usize) -> Result<Self> {
        let p = Self { eta, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::param(format!(
                "smoothing radius must be positive, got {}",
                self.eta
            )));
        }
        if self.dim == 0 {
            return Err(Error::dim("smoothing dimension must be positive"));
        }
        Ok(())
    }
}

/// Monte Carlo scalar estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte Carlo vector estimate with per-coordinate standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct McVecEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl From<VecStats> for McVecEstimate {
    fn from(s: VecStats) -> Self {
        Self {
            mean: s.mean(),
            std_error: s.std_error(),
        }
    }
}

/// Two-point zeroth-order term `(dim / (2 eta)) (f_plus - f_minus) v`.
pub fn zo_term(f_plus: f64, f_minus: f64, v: &[f64], params: &SmoothingParams) -> Result<Vec<f64>> {
    params.validate()?;
    if v.len() != params.dim {
        return Err(Error::dim(format!(
            "direction has dim {}, expected {}",
            v.len(),
            params.dim
        )));
    }
    if !f_plus.is_finite() || !f_minus.is_finite() {
        return Err(Error::Numerics("non-finite function value in zeroth-order term".into()));
    }
    let coef = params.dim as f64 / (2.0 * params.eta) * (f_plus - f_minus);
    Ok(v.iter().map(|vi| coef * vi).collect())
}

fn shifted(x: &[f64], dir: &[f64], s: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, d)| a + s * d).collect()
}

/// Monte Carlo estimate of `h_eta(x)` over uniform ball perturbations.
pub fn smoothed_value_mc<F>(
    f: F,
    x: &[f64],
    params: &SmoothingParams,
    rng: &mut RngStream,
    samples: usize,
) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    params.validate()?;
    if samples == 0 {
        return Err(Error::param("need at least one sample"));
    }
    let mut stats = RunningStats::new();
    for _ in 0..samples {
        let u = sample_unit_ball(rng, params.dim)?;
        stats.push(f(&shifted(x, &u, params.eta)));
    }
    Ok(McEstimate {
        value: stats.mean(),
        std_error: stats.std_error(),
    })
}

/// Monte Carlo mean of [`zo_term`] over fresh sphere directions.
pub fn smoothed_grad_mc<F>(
    f: F,
    x: &[f64],
    params: &SmoothingParams,
    rng: &mut RngStream,
    samples: usize,
) -> Result<McVecEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    params.validate()?;
    if samples == 0 {
        return Err(Error::param("need at least one sample"));
    }
    let mut stats = VecStats::new(params.dim);
    for _ in 0..samples {
        let v = sample_unit_sphere(rng, params.dim)?;
        let fp = f(&shifted(x, &v, params.eta));
        let fm = f(&shifted(x, &v, -params.eta));
        stats.push(&zo_term(fp, fm, &v, params)?);
    }
    Ok(stats.into())
}

/// One-point form `(n / eta) h(x + eta v) v`; same mean as [`smoothed_grad_mc`].
pub fn smoothed_grad_one_point_mc<F>(
    f: F,
    x: &[f64],
    params: &SmoothingParams,
    rng: &mut RngStream,
    samples: usize,
) -> Result<McVecEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    params.validate()?;
    if samples == 0 {
        return Err(Error::param("need at least one sample"));
    }
    let mut stats = VecStats::new(params.dim);
    let scale = params.dim as f64 / params.eta;
    for _ in 0..samples {
        let v = sample_unit_sphere(rng, params.dim)?;
        let coef = scale * f(&shifted(x, &v, params.eta));
        stats.push(&v.iter().map(|vi| coef * vi).collect::<Vec<_>>());
    }
    Ok(stats.into())
}

/// Exact smoothed value and gradient of `1/2 x^T A x + b^T x`.
///
/// `E||u||^2 = n/(n+2)` on the unit ball, so smoothing adds the constant
/// `eta^2 tr(A) / (2(n+2))` and leaves the gradient unchanged.
pub fn smoothed_quadratic_exact(a: &[f64], b: &[f64], x: &[f64], params: &SmoothingParams) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let n = x.len();
    if n != params.dim || b.len() != n || a.len() != n * n {
        return Err(Error::dim("smoothed quadratic shapes disagree"));
    }
    let ax = matvec(a, x);
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let value = 0.5 * dot(x, &ax) + dot(b, x) + params.eta * params.eta * trace / (2.0 * (n as f64 + 2.0));
    let grad = ax.iter().zip(b).map(|(g, bi)| g + bi).collect();
    Ok((value, grad))
}
