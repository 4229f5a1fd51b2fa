use crate::data::DatasetShard;
use crate::error::{Error, Result};
use crate::objectives::predict;

/// Fraction of `test` samples whose arg-max class (lowest index on ties)
/// matches the label.
pub fn evaluate_accuracy(weights: &[f64], test: &DatasetShard) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyData("test set is empty".into()));
    }
    let c = test.num_classes();
    if weights.len() != c * test.feature_dim() {
        return Err(Error::dim(format!(
            "model has {} weights, test set needs {}",
            weights.len(),
            c * test.feature_dim()
        )));
    }
    let hits = (0..test.len())
        .filter(|&j| {
            let (u, label) = test.sample(j);
            predict(weights, c, u) == label
        })
        .count();
    Ok(hits as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::numkit::{axpy, RngStream};
    use crate::objectives::f1_full_grad;

    #[test]
    fn zero_model_predicts_class_zero() {
        let mut rng = RngStream::new(1, 0);
        let shard = synth_blobs(&mut rng, 10, 12, 20, 1.0).unwrap();
        let acc = evaluate_accuracy(&vec![0.0; 120], &shard).unwrap();
        assert!((acc - 0.1).abs() < 1e-12);
    }

    #[test]
    fn trained_model_on_separable_blobs() {
        let mut rng = RngStream::new(2, 0);
        let shard = synth_blobs(&mut rng, 4, 6, 50, 0.05).unwrap();
        let mut w = vec![0.0; 24];
        for _ in 0..300 {
            let g = f1_full_grad(&w, &shard).unwrap();
            axpy(-1.0, &g, &mut w);
        }
        assert!(evaluate_accuracy(&w, &shard).unwrap() >= 0.99);
    }

    #[test]
    fn class_centers_as_weights() {
        let mut rng = RngStream::new(3, 0);
        let shard = synth_blobs(&mut rng, 5, 8, 40, 0.05).unwrap();
        // per-class feature means stand in for the centers
        let mut w = vec![0.0; 40];
        for j in 0..shard.len() {
            let (u, c) = shard.sample(j);
            axpy(1.0 / 40.0, u, &mut w[c * 8..(c + 1) * 8]);
        }
        assert!(evaluate_accuracy(&w, &shard).unwrap() >= 0.99);
    }

    #[test]
    fn errors() {
        let mut rng = RngStream::new(4, 0);
        let shard = synth_blobs(&mut rng, 2, 2, 5, 1.0).unwrap();
        assert!(matches!(
            evaluate_accuracy(&[0.0; 3], &shard),
            Err(Error::InvalidDimension(_))
        ));
        let empty = shard.subset(&[]);
        assert!(matches!(evaluate_accuracy(&[0.0; 4], &empty), Err(Error::EmptyData(_))));
    }
}
