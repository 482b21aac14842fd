use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fuse, EnsembleModel, Expert, Fusion};
use crate::datagen::Dataset;
use crate::error::{ensure, Result};
use crate::par;
use crate::refurbish::ClassStats;

/// Shot-group boundaries on training class size: many is `> many_min`,
/// few is `< few_max`, medium is everything in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubgroupThresholds {
    pub many_min: u64,
    pub few_max: u64,
}

impl Default for SubgroupThresholds {
    fn default() -> Self {
        Self {
            many_min: 100,
            few_max: 20,
        }
    }
}

impl SubgroupThresholds {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.few_max <= self.many_min,
            InvalidSpec,
            "few_max {} exceeds many_min {}",
            self.few_max,
            self.many_min
        );
        Ok(())
    }

    /// Both boundaries multiplied by `factor` and rounded.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: u64| (v as f64 * factor).round().max(0.0) as u64;
        Self {
            many_min: s(self.many_min),
            few_max: s(self.few_max),
        }
    }

    pub fn classify(&self, count: f64) -> Subgroup {
        if count > self.many_min as f64 {
            Subgroup::Many
        } else if count < self.few_max as f64 {
            Subgroup::Few
        } else {
            Subgroup::Medium
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgroup {
    Many,
    Medium,
    Few,
}

pub fn subgroups_for(train_counts: &ClassStats, thresholds: &SubgroupThresholds) -> Vec<Subgroup> {
    train_counts.counts.iter().map(|&c| thresholds.classify(c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubgroupSizes {
    pub many: usize,
    pub medium: usize,
    pub few: usize,
}

impl SubgroupSizes {
    fn bump(&mut self, g: Subgroup) {
        match g {
            Subgroup::Many => self.many += 1,
            Subgroup::Medium => self.medium += 1,
            Subgroup::Few => self.few += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.many + self.medium + self.few
    }
}

/// Accuracy per shot group; `None` when the group has no test samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub model: String,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
    pub all: f64,
}

impl AccuracyRow {
    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.6}",
            self.model,
            f(self.many),
            f(self.medium),
            f(self.few),
            self.all
        )
    }
}

/// Scores hard predictions against ground truth, grouped by the class
/// subgroup of the true label.
pub fn score(model: &str, predicted: &[usize], truth: &[usize], groups: &[Subgroup]) -> AccuracyRow {
    let mut hit = [0usize; 3];
    let mut seen = [0usize; 3];
    for (&p, &t) in predicted.iter().zip(truth) {
        let g = groups[t] as usize;
        seen[g] += 1;
        hit[g] += usize::from(p == t);
    }
    let acc = |g: usize| (seen[g] > 0).then(|| hit[g] as f64 / seen[g] as f64);
    let total: usize = seen.iter().sum();
    AccuracyRow {
        model: model.to_string(),
        many: acc(0),
        medium: acc(1),
        few: acc(2),
        all: hit.iter().sum::<usize>() as f64 / total.max(1) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Run label, e.g. "full" or "w/o re-label".
    pub label: String,
    pub thresholds: SubgroupThresholds,
    pub fusion: Fusion,
    pub num_samples: usize,
    pub subgroup_classes: SubgroupSizes,
    pub subgroup_samples: SubgroupSizes,
    pub class_subgroups: Vec<Subgroup>,
    pub overall_accuracy: f64,
    pub ensemble: AccuracyRow,
    pub experts: Vec<AccuracyRow>,
    /// Ensemble confusion counts, `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn rows(&self) -> impl Iterator<Item = &AccuracyRow> {
        self.experts.iter().chain(std::iter::once(&self.ensemble))
    }

    pub fn expert(&self, e: Expert) -> &AccuracyRow {
        &self.experts[e as usize]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,many,medium,few,all\n");
        for r in self.rows() {
            let _ = writeln!(s, "{}", r.csv_line());
        }
        s
    }
}

/// True labels where known, otherwise observed labels.
pub fn truth_labels(ds: &Dataset) -> Vec<usize> {
    ds.samples()
        .iter()
        .map(|s| s.true_label.unwrap_or(s.observed_label))
        .collect()
}

pub fn evaluate(
    model: &EnsembleModel,
    test: &Dataset,
    train_counts: &ClassStats,
    thresholds: &SubgroupThresholds,
    fusion: Fusion,
    label: &str,
) -> Result<EvalReport> {
    thresholds.validate()?;
    let k = model.num_classes();
    ensure!(
        test.num_classes() == k,
        InvalidInput,
        "test set has {} classes, model {k}",
        test.num_classes()
    );
    ensure!(
        train_counts.num_classes() == k,
        InvalidInput,
        "training counts cover {} classes, model {k}",
        train_counts.num_classes()
    );
    let truth = truth_labels(test);
    for &t in &truth {
        ensure!(
            train_counts.counts[t] > 0.0,
            InvalidInput,
            "test class {t} is absent from the training counts"
        );
    }
    let groups = subgroups_for(train_counts, thresholds);

    let outputs = par::map(test.samples(), |s| -> Result<_> {
        let h = model.features(&s.features)?;
        let logits = model.expert_logits_from_features(&h)?;
        let fused = fuse(&logits, fusion)?;
        let experts = logits.map(|l| crate::numerics::argmax(&l));
        Ok((fused.predicted_class, experts))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let fused: Vec<usize> = outputs.iter().map(|o| o.0).collect();
    let experts = Expert::ALL
        .iter()
        .enumerate()
        .map(|(e, x)| {
            let pred: Vec<usize> = outputs.iter().map(|o| o.1[e]).collect();
            score(x.name(), &pred, &truth, &groups)
        })
        .collect();
    let ensemble = score("Ensemble", &fused, &truth, &groups);

    let mut confusion = vec![vec![0u64; k]; k];
    let mut subgroup_samples = SubgroupSizes::default();
    for (&p, &t) in fused.iter().zip(&truth) {
        confusion[t][p] += 1;
        subgroup_samples.bump(groups[t]);
    }
    let mut subgroup_classes = SubgroupSizes::default();
    groups.iter().for_each(|&g| subgroup_classes.bump(g));

    Ok(EvalReport {
        label: label.to_string(),
        thresholds: *thresholds,
        fusion,
        num_samples: test.len(),
        subgroup_classes,
        subgroup_samples,
        class_subgroups: groups,
        overall_accuracy: ensemble.all,
        ensemble,
        experts,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Sample;
    use crate::numerics::{Activation, Layer, Mlp};

    #[test]
    fn threshold_application() {
        let t = SubgroupThresholds::default();
        let stats = ClassStats::from_counts(vec![5000.0, 60.0, 5.0]).unwrap();
        assert_eq!(
            subgroups_for(&stats, &t),
            vec![Subgroup::Many, Subgroup::Medium, Subgroup::Few]
        );
        assert_eq!(t.classify(100.0), Subgroup::Medium);
        assert_eq!(t.classify(101.0), Subgroup::Many);
        assert_eq!(t.classify(20.0), Subgroup::Medium);
        assert_eq!(t.classify(19.0), Subgroup::Few);
        let s = t.scaled(1.2);
        assert_eq!((s.many_min, s.few_max), (120, 24));
        assert!(SubgroupThresholds {
            many_min: 5,
            few_max: 6
        }
        .validate()
        .is_err());
    }

    #[test]
    fn scoring_groups() {
        let groups = [Subgroup::Many, Subgroup::Few];
        let r = score("m", &[0, 0, 1, 0], &[0, 0, 1, 1], &groups);
        assert_eq!(r.many, Some(1.0));
        assert_eq!(r.few, Some(0.5));
        assert_eq!(r.medium, None);
        assert_eq!(r.all, 0.75);
        assert_eq!(r.csv_line(), "m,1.000000,,0.500000,0.750000");
    }

    fn identity(d: usize) -> Mlp {
        let mut w = vec![0.0; d * d];
        (0..d).for_each(|i| w[i * d + i] = 1.0);
        Mlp::from_layers(
            vec![Layer {
                in_dim: d,
                out_dim: d,
                weights: w,
                bias: vec![0.0; d],
            }],
            Activation::Tanh,
        )
        .unwrap()
    }

    fn test_set(k: usize, per_class: usize) -> Dataset {
        let mut samples = Vec::new();
        for c in 0..k {
            for j in 0..per_class {
                let mut x = vec![0.0; k];
                x[c] = 1.0;
                samples.push(Sample {
                    id: (c * per_class + j) as u64,
                    features: x,
                    observed_label: c,
                    true_label: Some(c),
                });
            }
        }
        Dataset::new(samples, k).unwrap()
    }

    #[test]
    fn perfect_predictor() {
        let m = EnsembleModel::from_parts(identity(3), [identity(3), identity(3), identity(3)]).unwrap();
        let stats = ClassStats::from_counts(vec![500.0, 50.0, 5.0]).unwrap();
        let r = evaluate(
            &m,
            &test_set(3, 4),
            &stats,
            &SubgroupThresholds::default(),
            Fusion::ProbMean,
            "full",
        )
        .unwrap();
        for row in r.rows() {
            assert_eq!(
                (row.many, row.medium, row.few, row.all),
                (Some(1.0), Some(1.0), Some(1.0), 1.0)
            );
        }
        assert_eq!(r.subgroup_samples.total(), 12);
        assert_eq!(r.confusion[1], vec![0, 4, 0]);
        assert!(r.to_csv().starts_with("model,many,medium,few,all\nE1,"));
    }

    #[test]
    fn constant_predictor() {
        let k = 4;
        let constant = Mlp::from_layers(
            vec![Layer {
                in_dim: k,
                out_dim: k,
                weights: vec![0.0; k * k],
                bias: vec![1.0, 0.0, 0.0, 0.0],
            }],
            Activation::Tanh,
        )
        .unwrap();
        let m = EnsembleModel::from_parts(identity(k), [constant.clone(), constant.clone(), constant]).unwrap();
        let stats = ClassStats::from_counts(vec![10.0; k]).unwrap();
        let r = evaluate(
            &m,
            &test_set(k, 5),
            &stats,
            &SubgroupThresholds::default(),
            Fusion::ProbMean,
            "c",
        )
        .unwrap();
        assert!((r.overall_accuracy - 0.25).abs() < 1e-15);
    }

    #[test]
    fn absent_training_class_rejected() {
        let m = EnsembleModel::from_parts(identity(3), [identity(3), identity(3), identity(3)]).unwrap();
        let stats = ClassStats::from_counts(vec![5.0, 0.0, 5.0]).unwrap();
        assert!(evaluate(
            &m,
            &test_set(3, 2),
            &stats,
            &SubgroupThresholds::default(),
            Fusion::ProbMean,
            "x"
        )
        .is_err());
    }
}
