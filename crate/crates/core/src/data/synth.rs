use rand_distr::{Distribution, StandardNormal};

use super::DatasetShard;
use crate::error::{Error, Result};
use crate::numkit::{sample_unit_sphere, RngStream};

/// Minimum pairwise distance between class centers, in units of `max(spread, 1)`.
const CENTER_SEPARATION: f64 = 4.0;

/// Class centers: vertices of a regular simplex (Helmert coordinates) when
/// `classes <= dim + 1`, otherwise random directions on a sphere.
fn class_centers(rng: &mut RngStream, classes: usize, dim: usize, distance: f64) -> Result<Vec<Vec<f64>>> {
    if classes <= dim + 1 {
        // Centered basis vectors e_c - 1/C have pairwise distance sqrt(2) and
        // live in the (C-1)-dim sum-zero subspace; express them in the
        // Helmert orthonormal basis of that subspace.
        let c = classes;
        let scale = distance / std::f64::consts::SQRT_2;
        let centers = (0..c)
            .map(|vertex| {
                let mut p = vec![0.0; dim];
                for (k, coord) in p.iter_mut().enumerate().take(c - 1) {
                    // k-th Helmert row: (1,...,1,-(k+1),0,...)/sqrt((k+1)(k+2))
                    let norm = (((k + 1) * (k + 2)) as f64).sqrt();
                    let entry = if vertex <= k {
                        1.0
                    } else if vertex == k + 1 {
                        -((k + 1) as f64)
                    } else {
                        0.0
                    };
                    *coord = scale * entry / norm;
                }
                p
            })
            .collect();
        Ok(centers)
    } else {
        log::warn!("{classes} classes do not fit a simplex in {dim} dims; using random centers");
        let radius = distance / std::f64::consts::SQRT_2;
        (0..classes)
            .map(|_| Ok(sample_unit_sphere(rng, dim)?.into_iter().map(|v| v * radius).collect()))
            .collect()
    }
}

/// Balanced Gaussian blobs: `per_class` samples of each of `classes` classes
/// drawn from `N(center_c, spread^2 I)`. Samples are interleaved by class.
pub fn synth_blobs(
    rng: &mut RngStream,
    classes: usize,
    feature_dim: usize,
    per_class: usize,
    spread: f64,
) -> Result<DatasetShard> {
    if classes < 2 {
        return Err(Error::param("synth_blobs needs at least two classes"));
    }
    if feature_dim < 2 {
        return Err(Error::dim("synth_blobs needs feature_dim >= 2"));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::param(format!("spread must be nonnegative, got {spread}")));
    }
    let distance = CENTER_SEPARATION * spread.max(1.0);
    let centers = class_centers(rng, classes, feature_dim, distance)?;
    let mut features = Vec::with_capacity(classes * per_class * feature_dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            for &mu in center {
                let z: f64 = StandardNormal.sample(rng);
                features.push(mu + spread * z);
            }
            labels.push(c);
        }
    }
    DatasetShard::new(features, labels, feature_dim, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{dist, norm};

    #[test]
    fn simplex_centers_equidistant() {
        let mut rng = RngStream::new(0, 0);
        for (c, n) in [(10, 20), (10, 9), (3, 2), (2, 2)] {
            let centers = class_centers(&mut rng, c, n, 4.0).unwrap();
            let r0 = norm(&centers[0]);
            for i in 0..c {
                assert!((norm(&centers[i]) - r0).abs() < 1e-12);
                for j in 0..i {
                    assert!((dist(&centers[i], &centers[j]) - 4.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn balanced_counts() {
        let mut rng = RngStream::new(1, 0);
        let s = synth_blobs(&mut rng, 4, 3, 25, 0.5).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.class_counts(), &[25, 25, 25, 25]);
    }

    #[test]
    fn too_many_classes_falls_back() {
        let mut rng = RngStream::new(2, 0);
        let s = synth_blobs(&mut rng, 6, 2, 3, 0.1).unwrap();
        assert_eq!(s.class_counts(), &[3; 6]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = RngStream::new(3, 0);
        assert!(synth_blobs(&mut rng, 1, 3, 5, 1.0).is_err());
        assert!(synth_blobs(&mut rng, 3, 1, 5, 1.0).is_err());
    }
}
