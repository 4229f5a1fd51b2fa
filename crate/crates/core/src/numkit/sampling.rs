use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{norm, RngStream};
use crate::error::{Error, Result};

/// Uniform draw on the unit sphere in `dim` dimensions (normalized Gaussian).
pub fn sample_unit_sphere(rng: &mut RngStream, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::dim("sphere dimension must be positive"));
    }
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm(&v);
        // A zero draw has probability zero but would produce NaN.
        if r > f64::MIN_POSITIVE {
            v.iter_mut().for_each(|x| *x /= r);
            return Ok(v);
        }
    }
}

/// Uniform draw in the unit ball: a sphere direction scaled by `U^{1/dim}`.
pub fn sample_unit_ball(rng: &mut RngStream, dim: usize) -> Result<Vec<f64>> {
    let mut v = sample_unit_sphere(rng, dim)?;
    let u: f64 = rng.random();
    let scale = u.powf(1.0 / dim as f64);
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(v)
}

/// Symmetric Dirichlet draw `Dir(alpha * 1_m)` via normalized Gamma variates.
pub fn dirichlet(rng: &mut RngStream, alpha: f64, m: usize) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("dirichlet alpha must be positive, got {alpha}")));
    }
    if m == 0 {
        return Err(Error::dim("dirichlet dimension must be positive"));
    }
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::param(e.to_string()))?;
    loop {
        let mut p: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
        let total: f64 = p.iter().sum();
        // Tiny alpha can underflow every variate; redraw.
        if total > 0.0 && total.is_finite() {
            p.iter_mut().for_each(|x| *x /= total);
            return Ok(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_rejects_zero_dim() {
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            sample_unit_sphere(&mut rng, 0),
            Err(Error::InvalidDimension(_))
        ));
        assert!(sample_unit_ball(&mut rng, 0).is_err());
    }

    #[test]
    fn sphere_dim_one_is_sign() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            let v = sample_unit_sphere(&mut rng, 1).unwrap();
            assert!(v[0] == 1.0 || v[0] == -1.0);
        }
    }

    #[test]
    fn sphere_unit_norm() {
        let mut rng = RngStream::new(42, 0);
        let v = sample_unit_sphere(&mut rng, 3).unwrap();
        assert!((norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_mean_near_zero() {
        let mut rng = RngStream::new(5, 0);
        let n = 100_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let v = sample_unit_sphere(&mut rng, 2).unwrap();
            mean[0] += v[0];
            mean[1] += v[1];
        }
        let band = 3.0 / (n as f64).sqrt();
        for m in mean {
            assert!((m / n as f64).abs() < band);
        }
    }

    #[test]
    fn sphere_covariance_is_identity_over_dim() {
        let mut rng = RngStream::new(6, 0);
        let (dim, n) = (4, 100_000);
        let mut cov = vec![0.0; dim * dim];
        for _ in 0..n {
            let v = sample_unit_sphere(&mut rng, dim).unwrap();
            for i in 0..dim {
                for j in 0..dim {
                    cov[i * dim + j] += v[i] * v[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let expected = if i == j { 1.0 / dim as f64 } else { 0.0 };
                assert!((cov[i * dim + j] / n as f64 - expected).abs() < 0.01);
            }
        }
    }

    #[test]
    fn ball_statistics() {
        let mut rng = RngStream::new(9, 0);
        let n = 100_000;
        let mean_abs: f64 = (0..n)
            .map(|_| sample_unit_ball(&mut rng, 1).unwrap()[0].abs())
            .sum::<f64>()
            / n as f64;
        assert!((mean_abs - 0.5).abs() < 0.02);

        let inside = (0..n)
            .filter(|_| norm(&sample_unit_ball(&mut rng, 2).unwrap()) <= 0.5)
            .count() as f64
            / n as f64;
        assert!((inside - 0.25).abs() < 0.02);
    }

    #[test]
    fn ball_support() {
        let mut rng = RngStream::new(10, 0);
        for dim in 1..8 {
            for _ in 0..1000 {
                assert!(norm(&sample_unit_ball(&mut rng, dim).unwrap()) <= 1.0);
            }
        }
    }

    #[test]
    fn dirichlet_rejects_bad_alpha() {
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(dirichlet(&mut rng, 0.0, 3), Err(Error::InvalidParameter(_))));
        assert!(dirichlet(&mut rng, -1.0, 3).is_err());
    }

    #[test]
    fn dirichlet_on_simplex() {
        let mut rng = RngStream::new(2, 0);
        assert_eq!(dirichlet(&mut rng, 0.7, 1).unwrap(), vec![1.0]);
        for alpha in [0.01, 0.1, 1.0, 1000.0] {
            let p = dirichlet(&mut rng, alpha, 10).unwrap();
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_concentration_regimes() {
        let mut rng = RngStream::new(3, 0);
        let max_of = |p: Vec<f64>| p.into_iter().fold(0.0, f64::max);
        for _ in 0..100 {
            assert!(max_of(dirichlet(&mut rng, 1000.0, 10).unwrap()) < 0.2);
        }
        let mut maxes: Vec<f64> = (0..100)
            .map(|_| max_of(dirichlet(&mut rng, 0.1, 10).unwrap()))
            .collect();
        maxes.sort_by(f64::total_cmp);
        assert!(maxes[50] > 0.5);
    }
}
