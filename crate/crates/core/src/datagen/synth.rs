use serde::{Deserialize, Serialize};

use super::{longtail_counts, Dataset, LongTailSpec, Sample};
use crate::error::{ensure, Result};
use crate::numerics::SeededRng;

/// Isotropic Gaussian blobs: class centers have i.i.d. `N(0, scale²)`
/// coordinates, samples are `center + N(0, stddev²)` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureSpec {
    pub feature_dim: usize,
    pub class_center_scale: f64,
    pub within_class_stddev: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            class_center_scale: 1.0,
            within_class_stddev: 0.3,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.feature_dim > 0, InvalidSpec, "feature_dim must be positive");
        ensure!(
            self.class_center_scale > 0.0 && self.class_center_scale.is_finite(),
            InvalidSpec,
            "class_center_scale must be positive"
        );
        ensure!(
            self.within_class_stddev >= 0.0 && self.within_class_stddev.is_finite(),
            InvalidSpec,
            "within_class_stddev must be non-negative"
        );
        Ok(())
    }

    fn centers(&self, k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| {
                (0..self.feature_dim)
                    .map(|_| self.class_center_scale * rng.normal())
                    .collect()
            })
            .collect()
    }

    fn draw(&self, center: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        center
            .iter()
            .map(|c| c + self.within_class_stddev * rng.normal())
            .collect()
    }
}

fn draw_dataset(mix: &MixtureSpec, centers: &[Vec<f64>], counts: &[usize], rng: &mut SeededRng) -> Result<Dataset> {
    let mut rows = Vec::with_capacity(counts.iter().sum());
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            rows.push((mix.draw(&centers[class], rng), class));
        }
    }
    rng.shuffle(&mut rows);
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, (features, class))| Sample {
            id: i as u64,
            features,
            observed_label: class,
            true_label: Some(class),
        })
        .collect();
    Dataset::new(samples, counts.len())
}

/// Clean long-tailed training set; labels are still uncorrupted.
pub fn synth_dataset(lt: &LongTailSpec, mix: &MixtureSpec, rng: &mut SeededRng) -> Result<Dataset> {
    mix.validate()?;
    let counts = longtail_counts(lt)?;
    let centers = mix.centers(lt.num_classes, rng);
    draw_dataset(mix, &centers, &counts, rng)
}

/// Long-tailed training set plus a balanced, clean test set drawn from the
/// same class centers.
pub fn synth_train_test(
    lt: &LongTailSpec,
    mix: &MixtureSpec,
    test_per_class: usize,
    rng: &mut SeededRng,
) -> Result<(Dataset, Dataset)> {
    mix.validate()?;
    ensure!(test_per_class > 0, InvalidSpec, "test_per_class must be positive");
    let counts = longtail_counts(lt)?;
    let centers = mix.centers(lt.num_classes, rng);
    let train = draw_dataset(mix, &centers, &counts, rng)?;
    let test = draw_dataset(mix, &centers, &vec![test_per_class; lt.num_classes], rng)?;
    Ok((train, test))
}
