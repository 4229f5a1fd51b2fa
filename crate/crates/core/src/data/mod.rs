//! Datasets: the shard type, IDX/CSV ingestion, synthetic Gaussian blobs and
//! Dirichlet non-iid partitioning.

mod idx;
mod partition;
mod synth;

pub use idx::{load_csv, load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{emit_partition_histogram, partition, Owner, Partition, PartitionHistogram, PartitionPlan};
pub use synth::synth_blobs;

use crate::error::{Error, Result};

/// Labelled samples owned by the server, one client, or the test split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetShard {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
    class_counts: Vec<usize>,
    /// Index of each sample in the dataset this shard was cut from.
    origin: Vec<usize>,
}

impl DatasetShard {
    /// Build a shard from row-major features.
    pub fn new(features: Vec<f64>, labels: Vec<usize>, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::dim("feature dimension must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::param("need at least two classes"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::dim(format!(
                "{} feature values for {} samples of dim {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::param(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !crate::numkit::all_finite(&features) {
            return Err(Error::Numerics("non-finite feature value".into()));
        }
        let mut class_counts = vec![0; num_classes];
        labels.iter().for_each(|&l| class_counts[l] += 1);
        let origin = (0..labels.len()).collect();
        Ok(Self {
            features,
            labels,
            feature_dim,
            num_classes,
            class_counts,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    #[inline]
    pub fn sample(&self, j: usize) -> (&[f64], usize) {
        let n = self.feature_dim;
        (&self.features[j * n..(j + 1) * n], self.labels[j])
    }

    /// Shard holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> DatasetShard {
        let n = self.feature_dim;
        let mut features = Vec::with_capacity(rows.len() * n);
        let mut labels = Vec::with_capacity(rows.len());
        let mut origin = Vec::with_capacity(rows.len());
        let mut class_counts = vec![0; self.num_classes];
        for &j in rows {
            features.extend_from_slice(&self.features[j * n..(j + 1) * n]);
            labels.push(self.labels[j]);
            origin.push(self.origin[j]);
            class_counts[self.labels[j]] += 1;
        }
        DatasetShard {
            features,
            labels,
            feature_dim: n,
            num_classes: self.num_classes,
            class_counts,
            origin,
        }
    }

    /// Concatenate shards sharing a schema.
    pub fn concat(parts: &[&DatasetShard]) -> Result<DatasetShard> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyData("nothing to concatenate".into()))?;
        let mut out = DatasetShard {
            features: Vec::new(),
            labels: Vec::new(),
            feature_dim: first.feature_dim,
            num_classes: first.num_classes,
            class_counts: vec![0; first.num_classes],
            origin: Vec::new(),
        };
        for p in parts {
            if p.feature_dim != out.feature_dim || p.num_classes != out.num_classes {
                return Err(Error::dim("shards disagree on feature dim or class count"));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
            out.origin.extend_from_slice(&p.origin);
            for (c, k) in p.class_counts.iter().enumerate() {
                out.class_counts[c] += k;
            }
        }
        Ok(out)
    }
}
