use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{ensure, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipPair {
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flip_map: Vec<FlipPair>,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64) -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            rate,
            flip_map: Vec::new(),
        }
    }

    pub fn asymmetric(rate: f64, flip_map: Vec<FlipPair>) -> Self {
        Self {
            kind: NoiseKind::Asymmetric,
            rate,
            flip_map,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        validate_rate(self.rate)?;
        if self.kind == NoiseKind::Asymmetric {
            validate_flip_map(&self.flip_map, num_classes)?;
        }
        Ok(())
    }
}

/// The four CIFAR-10 flips: truck→automobile, bird→airplane, deer→horse, cat→dog.
pub fn cifar10_flip_map() -> Vec<FlipPair> {
    [(9, 1), (2, 0), (4, 7), (3, 5)]
        .into_iter()
        .map(|(source, target)| FlipPair { source, target })
        .collect()
}

/// Which samples had their label altered, aligned with dataset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseMask {
    pub ids: Vec<u64>,
    pub noisy: Vec<bool>,
}

impl NoiseMask {
    fn clean(ds: &Dataset) -> Self {
        Self {
            ids: ds.samples().iter().map(|s| s.id).collect(),
            noisy: vec![false; ds.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.noisy.iter().filter(|&&b| b).count()
    }
}

fn validate_rate(rate: f64) -> Result<()> {
    ensure!(
        (0.0..1.0).contains(&rate),
        InvalidSpec,
        "noise rate must lie in [0, 1), got {rate}"
    );
    Ok(())
}

fn validate_flip_map(map: &[FlipPair], k: usize) -> Result<()> {
    ensure!(
        !map.is_empty(),
        InvalidSpec,
        "asymmetric noise needs a non-empty flip map"
    );
    let mut seen = std::collections::HashSet::new();
    for p in map {
        ensure!(
            p.source < k && p.target < k,
            InvalidSpec,
            "flip {}->{} references a class outside [0, {k})",
            p.source,
            p.target
        );
        ensure!(
            p.source != p.target,
            InvalidSpec,
            "flip {}->{} maps a class onto itself",
            p.source,
            p.target
        );
        ensure!(
            seen.insert(p.source),
            InvalidSpec,
            "class {} appears twice as a flip source",
            p.source
        );
    }
    Ok(())
}

/// Corrupts exactly `round(rate · N)` uniformly chosen samples, each to a
/// uniformly random label different from its current one.
pub fn inject_symmetric(ds: &Dataset, rate: f64, rng: &mut SeededRng) -> Result<(Dataset, NoiseMask)> {
    validate_rate(rate)?;
    let k = ds.num_classes();
    let n_noisy = (rate * ds.len() as f64).round() as usize;
    let mut mask = NoiseMask::clean(ds);
    if n_noisy == 0 {
        return Ok((ds.clone(), mask));
    }
    ensure!(k >= 2, InvalidSpec, "symmetric noise needs at least two classes");
    let mut samples = ds.clone().into_samples();
    for idx in rng.sample_indices(samples.len(), n_noisy) {
        let current = samples[idx].observed_label;
        let mut label = rng.below(k - 1);
        if label >= current {
            label += 1;
        }
        samples[idx].observed_label = label;
        mask.noisy[idx] = true;
    }
    Ok((Dataset::new(samples, k)?, mask))
}

/// Within each flip source class, relabels `round(rate · n_source)`
/// uniformly chosen samples to the mapped target. Source membership is read
/// from the labels before any flip, so chained maps never double-flip.
pub fn inject_asymmetric(
    ds: &Dataset,
    rate: f64,
    flip_map: &[FlipPair],
    rng: &mut SeededRng,
) -> Result<(Dataset, NoiseMask)> {
    validate_rate(rate)?;
    validate_flip_map(flip_map, ds.num_classes())?;
    let original = ds.observed_labels();
    let mut samples = ds.clone().into_samples();
    let mut mask = NoiseMask::clean(ds);
    for pair in flip_map {
        let members: Vec<usize> = original
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == pair.source)
            .map(|(i, _)| i)
            .collect();
        let n_flip = (rate * members.len() as f64).round() as usize;
        for pick in rng.sample_indices(members.len(), n_flip) {
            let idx = members[pick];
            samples[idx].observed_label = pair.target;
            mask.noisy[idx] = true;
        }
    }
    Ok((Dataset::new(samples, ds.num_classes())?, mask))
}

pub fn apply_noise(ds: &Dataset, spec: &NoiseSpec, rng: &mut SeededRng) -> Result<(Dataset, NoiseMask)> {
    spec.validate(ds.num_classes())?;
    match spec.kind {
        NoiseKind::Symmetric => inject_symmetric(ds, spec.rate, rng),
        NoiseKind::Asymmetric => inject_asymmetric(ds, spec.rate, &spec.flip_map, rng),
    }
}
