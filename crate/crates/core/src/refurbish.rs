//! Soft-label refurbishment weighted by prediction confidence and class rarity.
//!
//! For a sample whose predicted class disagrees with its observed label `y`,
//! the new target is `(p + w·e_y) / (1 + w)` where `p` is the predicted
//! probability vector and `w = ρ·γ`: `ρ = p_y` is the confidence in the
//! observed label and `γ = exp(−h_y²/σ²)` is the rarity of class `y` given
//! its share `h_y` of the training set. Agreeing samples keep their one-hot
//! label. No sample is ever dropped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{ensure, Result};
use crate::jsonl;
use crate::numerics::one_hot;
use crate::par;
use crate::stage1::{Prediction, PredictionRecord};

/// Per-class sizes `n_k`, their total `N` and proportions `h_k = n_k / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub counts: Vec<f64>,
    pub total: f64,
    pub proportions: Vec<f64>,
}

impl ClassStats {
    pub fn from_counts(counts: Vec<f64>) -> Result<Self> {
        ensure!(!counts.is_empty(), InvalidInput, "no classes");
        ensure!(
            counts.iter().all(|c| c.is_finite() && *c >= 0.0),
            InvalidInput,
            "class counts must be finite and non-negative"
        );
        let total: f64 = counts.iter().sum();
        ensure!(total > 0.0, InvalidInput, "class counts sum to zero");
        let proportions = counts.iter().map(|c| c / total).collect();
        Ok(Self {
            counts,
            total,
            proportions,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

/// Hard counts of observed labels.
pub fn class_proportions(ds: &Dataset) -> ClassStats {
    ClassStats::from_counts(ds.observed_counts().into_iter().map(|c| c as f64).collect())
        .expect("datasets are non-empty")
}

/// `γ = exp(−h² / σ²)`.
pub fn rarity(h: f64, sigma: f64) -> f64 {
    (-(h * h) / (sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefurbishConfig {
    pub sigma: f64,
}

impl Default for RefurbishConfig {
    fn default() -> Self {
        Self { sigma: 0.2 }
    }
}

impl RefurbishConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sigma > 0.0 && self.sigma.is_finite(),
            InvalidSpec,
            "sigma must be positive"
        );
        Ok(())
    }
}

/// A probability vector used as a training target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        ensure!(!weights.is_empty(), InvalidInput, "empty soft label");
        ensure!(
            weights.iter().all(|w| w.is_finite() && *w >= 0.0),
            InvalidInput,
            "soft label has negative or non-finite entries"
        );
        let s: f64 = weights.iter().sum();
        ensure!((s - 1.0).abs() <= 1e-9, InvalidInput, "soft label sums to {s}");
        Ok(Self(weights))
    }

    pub fn one_hot(class: usize, k: usize) -> Self {
        Self(one_hot(class, k))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefurbishRecord {
    pub id: u64,
    pub soft_label: SoftLabel,
    /// Predicted class differs from the observed label.
    pub changed: bool,
    pub rho: f64,
    pub gamma: f64,
    pub weight: f64,
}

fn check_probs(probs: &[f64]) -> Result<()> {
    ensure!(
        probs.iter().all(|p| p.is_finite() && *p >= 0.0),
        InvalidInput,
        "probabilities must be finite and non-negative"
    );
    let s: f64 = probs.iter().sum();
    ensure!((s - 1.0).abs() <= 1e-6, InvalidInput, "probabilities sum to {s}");
    Ok(())
}

pub fn refurbish_one(
    id: u64,
    pred: &Prediction,
    observed: usize,
    stats: &ClassStats,
    cfg: &RefurbishConfig,
) -> Result<RefurbishRecord> {
    let k = stats.num_classes();
    ensure!(
        pred.probs.len() == k,
        InvalidInput,
        "prediction has {} classes, stats have {k}",
        pred.probs.len()
    );
    ensure!(observed < k, InvalidInput, "observed label {observed} out of range");
    check_probs(&pred.probs)?;

    let rho = pred.probs[observed];
    let gamma = rarity(stats.proportions[observed], cfg.sigma);
    let weight = rho * gamma;
    let changed = pred.predicted_class != observed;
    let soft_label = if changed {
        let mut s = pred.probs.clone();
        s[observed] += weight;
        let total: f64 = s.iter().sum();
        s.iter_mut().for_each(|x| *x /= total);
        SoftLabel(s)
    } else {
        SoftLabel::one_hot(observed, k)
    };
    Ok(RefurbishRecord {
        id,
        soft_label,
        changed,
        rho,
        gamma,
        weight,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefurbishSummary {
    pub num_samples: usize,
    pub num_changed: usize,
    pub fraction_changed: f64,
    /// Mean `w` over changed samples (0 when nothing changed).
    pub mean_weight_changed: f64,
}

#[derive(Debug, Clone)]
pub struct RefurbishOutput {
    pub records: Vec<RefurbishRecord>,
    pub summary: RefurbishSummary,
}

impl RefurbishOutput {
    pub fn soft_labels(&self) -> Vec<SoftLabel> {
        self.records.iter().map(|r| r.soft_label.clone()).collect()
    }
}

fn summarize(records: &[RefurbishRecord]) -> RefurbishSummary {
    let changed: Vec<&RefurbishRecord> = records.iter().filter(|r| r.changed).collect();
    let mean_weight_changed = if changed.is_empty() {
        0.0
    } else {
        changed.iter().map(|r| r.weight).sum::<f64>() / changed.len() as f64
    };
    RefurbishSummary {
        num_samples: records.len(),
        num_changed: changed.len(),
        fraction_changed: changed.len() as f64 / records.len().max(1) as f64,
        mean_weight_changed,
    }
}

/// Refurbishes every sample. `preds` must list the dataset's ids in order.
pub fn refurbish_dataset(ds: &Dataset, preds: &[PredictionRecord], cfg: &RefurbishConfig) -> Result<RefurbishOutput> {
    cfg.validate()?;
    ensure!(
        preds.len() == ds.len(),
        InvalidInput,
        "{} predictions for {} samples",
        preds.len(),
        ds.len()
    );
    for (s, p) in ds.samples().iter().zip(preds) {
        ensure!(
            s.id == p.id,
            InvalidInput,
            "prediction id {} does not match sample id {}",
            p.id,
            s.id
        );
    }
    let stats = class_proportions(ds);
    let records = par::map_range(ds.len(), |i| {
        let s = &ds.samples()[i];
        refurbish_one(s.id, &preds[i].prediction(), s.observed_label, &stats, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records);
    Ok(RefurbishOutput { records, summary })
}

/// One-hot observed labels in record form, for runs without refurbishment.
pub fn observed_as_soft_labels(ds: &Dataset) -> Vec<RefurbishRecord> {
    ds.samples()
        .iter()
        .map(|s| RefurbishRecord {
            id: s.id,
            soft_label: SoftLabel::one_hot(s.observed_label, ds.num_classes()),
            changed: false,
            rho: 1.0,
            gamma: 1.0,
            weight: 1.0,
        })
        .collect()
}

pub fn save_refurbished(path: &Path, records: &[RefurbishRecord]) -> Result<()> {
    jsonl::write_lines(path, records)
}

pub fn load_refurbished(path: &Path) -> Result<Vec<RefurbishRecord>> {
    jsonl::read_lines(path, |r: &RefurbishRecord| {
        SoftLabel::new(r.soft_label.weights().to_vec())
            .map(|_| ())
            .map_err(|e| e.to_string())
    })
}
