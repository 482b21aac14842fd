//! Long-tailed, label-noised datasets: Gaussian-mixture synthesis,
//! exponential class-size decay, symmetric/asymmetric corruption, and
//! JSON Lines persistence.

mod io;
mod longtail;
mod noise;
mod synth;

pub use io::{import_embeddings, load_dataset, load_noise_mask, save_dataset, save_noise_mask};
pub use longtail::{longtail_counts, LongTailSpec};
pub use noise::{
    apply_noise, cifar10_flip_map, inject_asymmetric, inject_symmetric, FlipPair, NoiseKind, NoiseMask, NoiseSpec,
};
pub use synth::{synth_dataset, synth_train_test, MixtureSpec};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub observed_label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        ensure!(!samples.is_empty(), InvalidInput, "dataset has no samples");
        ensure!(num_classes >= 1, InvalidInput, "dataset needs at least one class");
        let feature_dim = samples[0].features.len();
        ensure!(feature_dim > 0, InvalidInput, "samples have empty feature vectors");
        let mut ids = std::collections::HashSet::with_capacity(samples.len());
        for s in &samples {
            ensure!(ids.insert(s.id), InvalidInput, "duplicate sample id {}", s.id);
            ensure!(
                s.features.len() == feature_dim,
                InvalidInput,
                "sample {} has dimension {}, expected {feature_dim}",
                s.id,
                s.features.len()
            );
            ensure!(
                s.features.iter().all(|x| x.is_finite()),
                InvalidInput,
                "sample {} has non-finite features",
                s.id
            );
            ensure!(
                s.observed_label < num_classes,
                InvalidInput,
                "sample {} observed label {} out of range for {num_classes} classes",
                s.id,
                s.observed_label
            );
            if let Some(t) = s.true_label {
                ensure!(
                    t < num_classes,
                    InvalidInput,
                    "sample {} true label {t} out of range for {num_classes} classes",
                    s.id
                );
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn has_true_labels(&self) -> bool {
        self.samples.iter().all(|s| s.true_label.is_some())
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.observed_label).collect()
    }

    /// Per-class counts of observed labels.
    pub fn observed_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for s in &self.samples {
            c[s.observed_label] += 1;
        }
        c
    }

    /// Per-class counts of true labels, falling back to observed labels
    /// when any sample lacks ground truth.
    pub fn class_sizes(&self) -> Vec<usize> {
        if !self.has_true_labels() {
            return self.observed_counts();
        }
        let mut c = vec![0; self.num_classes];
        for s in &self.samples {
            c[s.true_label.expect("checked")] += 1;
        }
        c
    }

    /// Fraction of samples whose observed label differs from the true label.
    pub fn noise_rate(&self) -> Option<f64> {
        if !self.has_true_labels() {
            return None;
        }
        let noisy = self
            .samples
            .iter()
            .filter(|s| s.true_label != Some(s.observed_label))
            .count();
        Some(noisy as f64 / self.len() as f64)
    }

    pub(crate) fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}
