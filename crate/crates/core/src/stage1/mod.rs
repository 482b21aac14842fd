//! Stage 1: contrastive representation learning with a feature queue and a
//! stop-gradient query branch, plus a pre-screening classifier trained on
//! detached features.

mod contrastive;
mod io;
mod queue;
mod train;

pub use contrastive::{contrastive_loss, ContrastiveLoss};
pub use io::{
    load_checkpoint, load_predictions, save_checkpoint, save_predictions, PredictionRecord, Stage1Checkpoint,
};
pub use queue::FeatureQueue;
pub use train::{batch_gradients, train_stage1, BatchStep, EpochLog, Stage1Output};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::loss::ClassifierLoss;
use crate::numerics::{argmax, softmax, Activation, LrSchedule, Mlp, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    /// Contrastive temperature.
    pub tau: f64,
    /// Blend weight of the classifier loss against the contrastive loss.
    pub alpha: f64,
    /// BANC scaling coefficient.
    pub c: f64,
    pub queue_capacity: usize,
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub representation_dim: usize,
    pub projection_hidden: usize,
    pub activation: Activation,
    pub classifier_loss: ClassifierLoss,
    /// Put the positive pair in the contrastive denominator (InfoNCE).
    pub include_positive: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Base rate for the classifier head; `None` uses `lr`. The head is
    /// detached and linear, so it tolerates much larger steps than the
    /// encoder, which matters when the epoch budget is small.
    pub classifier_lr: Option<f64>,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub aug_noise_stddev: f64,
    pub aug_dropout_prob: f64,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            tau: 0.2,
            alpha: 0.2,
            c: 6.0,
            queue_capacity: 1024,
            embed_dim: 16,
            encoder_hidden: vec![64],
            representation_dim: 32,
            projection_hidden: 32,
            activation: Activation::Tanh,
            classifier_loss: ClassifierLoss::Banc,
            include_positive: false,
            epochs: 200,
            batch_size: 128,
            lr: 0.02,
            classifier_lr: None,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 5e-4,
            aug_noise_stddev: 0.1,
            aug_dropout_prob: 0.1,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn head_lr(&self) -> f64 {
        self.classifier_lr.unwrap_or(self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tau > 0.0 && self.tau.is_finite(),
            InvalidSpec,
            "tau must be positive"
        );
        ensure!(
            (0.0..=1.0).contains(&self.alpha),
            InvalidSpec,
            "alpha must lie in [0, 1]"
        );
        ensure!(self.c >= 0.0 && self.c.is_finite(), InvalidSpec, "c must be >= 0");
        ensure!(self.queue_capacity > 0, InvalidSpec, "queue_capacity must be positive");
        ensure!(self.embed_dim > 0, InvalidSpec, "embed_dim must be positive");
        ensure!(
            self.representation_dim > 0,
            InvalidSpec,
            "representation_dim must be positive"
        );
        ensure!(
            self.projection_hidden > 0,
            InvalidSpec,
            "projection_hidden must be positive"
        );
        ensure!(
            self.encoder_hidden.iter().all(|&h| h > 0),
            InvalidSpec,
            "encoder_hidden dims must be positive"
        );
        ensure!(self.batch_size >= 2, InvalidSpec, "batch_size must be at least 2");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), InvalidSpec, "lr must be positive");
        ensure!(
            self.classifier_lr.is_none_or(|r| r > 0.0 && r.is_finite()),
            InvalidSpec,
            "classifier_lr must be positive"
        );
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            InvalidSpec,
            "momentum must lie in [0, 1)"
        );
        ensure!(self.weight_decay >= 0.0, InvalidSpec, "weight_decay must be >= 0");
        ensure!(
            self.aug_noise_stddev >= 0.0,
            InvalidSpec,
            "aug_noise_stddev must be >= 0"
        );
        ensure!(
            (0.0..=1.0).contains(&self.aug_dropout_prob),
            InvalidSpec,
            "aug_dropout_prob must lie in [0, 1]"
        );
        Ok(())
    }
}

/// Classifier output for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Argmax of the logits, ties to the lowest index.
    pub predicted_class: usize,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        let probs = softmax(&logits)?;
        let predicted_class = argmax(&logits);
        Ok(Self {
            logits,
            probs,
            predicted_class,
        })
    }

    /// Fusion output that has probabilities but no single logit vector;
    /// `logits` holds log-probabilities.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let predicted_class = argmax(&probs);
        let logits = probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect();
        Self {
            logits,
            probs,
            predicted_class,
        }
    }
}

/// Shared encoder (query and key branches use the same weights), a two-layer
/// projection head and a linear classifier on encoder features.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Model {
    pub encoder: Mlp,
    pub projection: Mlp,
    pub classifier: Mlp,
}

impl Stage1Model {
    pub fn init(cfg: &Stage1Config, input_dim: usize, num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut enc_dims = vec![input_dim];
        enc_dims.extend(&cfg.encoder_hidden);
        enc_dims.push(cfg.representation_dim);
        let encoder = Mlp::new(&enc_dims, cfg.activation, rng)?;
        let projection = Mlp::new(
            &[cfg.representation_dim, cfg.projection_hidden, cfg.embed_dim],
            cfg.activation,
            rng,
        )?;
        let classifier = Mlp::new(&[cfg.representation_dim, num_classes], cfg.activation, rng)?;
        Self::from_parts(encoder, projection, classifier)
    }

    pub fn from_parts(encoder: Mlp, projection: Mlp, classifier: Mlp) -> Result<Self> {
        ensure!(
            classifier.input_dim() == encoder.output_dim(),
            InvalidInput,
            "classifier input {} != encoder output {}",
            classifier.input_dim(),
            encoder.output_dim()
        );
        ensure!(
            projection.input_dim() == encoder.output_dim(),
            InvalidInput,
            "projection input {} != encoder output {}",
            projection.input_dim(),
            encoder.output_dim()
        );
        Ok(Self {
            encoder,
            projection,
            classifier,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        predict(self, features)
    }
}

/// `logits = classifier(encoder(x))`, `probs = softmax(logits)`.
pub fn predict(model: &Stage1Model, features: &[f64]) -> Result<Prediction> {
    let v = model.encoder.forward(features)?;
    Prediction::from_logits(model.classifier.forward(&v)?)
}

/// `(1 − α) · contrastive + α · classifier`.
pub fn stage1_loss(contrastive: f64, classifier: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * contrastive + alpha * classifier
}

/// Feature-space view: additive Gaussian noise, then each coordinate zeroed
/// independently with probability `aug_dropout_prob`.
pub fn augment(features: &[f64], cfg: &Stage1Config, rng: &mut SeededRng) -> Vec<f64> {
    features
        .iter()
        .map(|&x| {
            let noisy = x + cfg.aug_noise_stddev * rng.normal();
            if rng.uniform() < cfg.aug_dropout_prob {
                0.0
            } else {
                noisy
            }
        })
        .collect()
}
