//! Stage 2: three linear expert heads over the frozen stage-1 encoder, each
//! trained with a soft cross-entropy over logits shifted by `m · ln n_k`
//! (`m` = 0, 1, 2), then fused into a single prediction.

mod eval;
mod io;
mod train;

pub use eval::{
    evaluate, score, subgroups_for, truth_labels, AccuracyRow, EvalReport, Subgroup, SubgroupSizes, SubgroupThresholds,
};
pub use io::{load_ensemble, save_ensemble, EnsembleCheckpoint};
pub use train::{train_stage2, Stage2EpochLog, Stage2Output};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::loss::{cross_entropy_unchecked, LossGrad};
use crate::numerics::{softmax_unchecked, Activation, LrSchedule, Mlp, SeededRng};
use crate::refurbish::SoftLabel;
use crate::stage1::Prediction;

/// Counts below this are raised to it before taking the logarithm.
pub const COUNT_FLOOR: f64 = 1e-3;

/// Soft class sizes `n_k = Σ_i ŷ_i^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftClassStats {
    pub counts: Vec<f64>,
}

impl SoftClassStats {
    pub fn new(counts: Vec<f64>) -> Result<Self> {
        ensure!(!counts.is_empty(), InvalidInput, "no classes");
        ensure!(
            counts.iter().all(|c| c.is_finite() && *c >= 0.0),
            DegenerateCounts,
            "class counts must be finite and non-negative: {counts:?}"
        );
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// `ln max(n_k, COUNT_FLOOR)` per class.
    pub fn log_counts(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c.max(COUNT_FLOOR).ln()).collect()
    }
}

pub fn soft_class_counts(labels: &[SoftLabel]) -> Result<SoftClassStats> {
    ensure!(!labels.is_empty(), InvalidInput, "no soft labels");
    let k = labels[0].len();
    let mut counts = vec![0.0; k];
    for (i, y) in labels.iter().enumerate() {
        ensure!(
            y.len() == k,
            InvalidInput,
            "soft label {i} has {} classes, expected {k}",
            y.len()
        );
        for (c, w) in counts.iter_mut().zip(y.weights()) {
            *c += w;
        }
    }
    SoftClassStats::new(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expert {
    E1,
    E2,
    E3,
}

impl Expert {
    pub const ALL: [Expert; 3] = [Expert::E1, Expert::E2, Expert::E3];

    /// Multiplier on `ln n` added to the logits during training.
    pub fn shift_power(self) -> f64 {
        match self {
            Expert::E1 => 0.0,
            Expert::E2 => 1.0,
            Expert::E3 => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Expert::E1 => "E1",
            Expert::E2 => "E2",
            Expert::E3 => "E3",
        }
    }
}

fn check_target(logits: &[f64], y: &SoftLabel) -> Result<()> {
    ensure!(
        logits.len() == y.len(),
        InvalidInput,
        "logits have length {}, soft label {}",
        logits.len(),
        y.len()
    );
    ensure!(logits.iter().all(|z| z.is_finite()), InvalidInput, "non-finite logits");
    Ok(())
}

/// Soft cross-entropy over `logits + power · log_counts`; the gradient is
/// with respect to the unshifted logits, which is the same vector.
fn shifted_loss(logits: &[f64], y: &SoftLabel, log_counts: &[f64], power: f64) -> LossGrad {
    if power == 0.0 {
        return cross_entropy_unchecked(logits, y.weights());
    }
    let shifted: Vec<f64> = logits.iter().zip(log_counts).map(|(z, l)| z + power * l).collect();
    cross_entropy_unchecked(&shifted, y.weights())
}

pub fn e1_loss(logits: &[f64], y: &SoftLabel) -> Result<LossGrad> {
    check_target(logits, y)?;
    Ok(shifted_loss(logits, y, &[], 0.0))
}

pub fn e2_loss(logits: &[f64], y: &SoftLabel, counts: &SoftClassStats) -> Result<LossGrad> {
    expert_loss(Expert::E2, logits, y, counts)
}

pub fn e3_loss(logits: &[f64], y: &SoftLabel, counts: &SoftClassStats) -> Result<LossGrad> {
    expert_loss(Expert::E3, logits, y, counts)
}

pub fn expert_loss(expert: Expert, logits: &[f64], y: &SoftLabel, counts: &SoftClassStats) -> Result<LossGrad> {
    check_target(logits, y)?;
    ensure!(
        counts.num_classes() == logits.len(),
        InvalidInput,
        "counts have {} classes, logits {}",
        counts.num_classes(),
        logits.len()
    );
    Ok(shifted_loss(logits, y, &counts.log_counts(), expert.shift_power()))
}

/// How expert outputs are combined at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Mean of the experts' softmax outputs.
    #[default]
    ProbMean,
    /// Softmax of the mean logit vector.
    LogitMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub fusion: Fusion,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 512,
            lr: 0.1,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 5e-4,
            fusion: Fusion::ProbMean,
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, InvalidSpec, "batch_size must be positive");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), InvalidSpec, "lr must be positive");
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            InvalidSpec,
            "momentum must lie in [0, 1)"
        );
        ensure!(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            InvalidSpec,
            "weight_decay must be non-negative"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    /// Frozen copy of the stage-1 encoder.
    pub backbone: Mlp,
    pub experts: [Mlp; 3],
}

impl EnsembleModel {
    /// Fresh heads with `N(0, 1/fan_in)` weights over `backbone`.
    pub fn init(backbone: Mlp, num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        let dims = [backbone.output_dim(), num_classes];
        let experts = [
            Mlp::new(&dims, Activation::Tanh, &mut rng.fork("E1"))?,
            Mlp::new(&dims, Activation::Tanh, &mut rng.fork("E2"))?,
            Mlp::new(&dims, Activation::Tanh, &mut rng.fork("E3"))?,
        ];
        Self::from_parts(backbone, experts)
    }

    pub fn from_parts(backbone: Mlp, experts: [Mlp; 3]) -> Result<Self> {
        let rep = backbone.output_dim();
        let k = experts[0].output_dim();
        for (e, head) in Expert::ALL.iter().zip(&experts) {
            ensure!(
                head.layers().len() == 1,
                InvalidInput,
                "expert {} is not a linear head",
                e.name()
            );
            ensure!(
                head.input_dim() == rep && head.output_dim() == k,
                InvalidInput,
                "expert {} has shape {}->{}, expected {rep}->{k}",
                e.name(),
                head.input_dim(),
                head.output_dim()
            );
        }
        Ok(Self { backbone, experts })
    }

    pub fn num_classes(&self) -> usize {
        self.experts[0].output_dim()
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.backbone.forward(x)
    }

    /// Raw logits of each expert for backbone features `h`.
    pub fn expert_logits_from_features(&self, h: &[f64]) -> Result<[Vec<f64>; 3]> {
        Ok([
            self.experts[0].forward(h)?,
            self.experts[1].forward(h)?,
            self.experts[2].forward(h)?,
        ])
    }

    pub fn expert_predictions(&self, x: &[f64]) -> Result<[Prediction; 3]> {
        let h = self.features(x)?;
        let [a, b, c] = self.expert_logits_from_features(&h)?;
        Ok([
            Prediction::from_logits(a)?,
            Prediction::from_logits(b)?,
            Prediction::from_logits(c)?,
        ])
    }
}

/// Fuses three experts' raw logits.
pub fn fuse(logits: &[Vec<f64>; 3], fusion: Fusion) -> Result<Prediction> {
    let k = logits[0].len();
    ensure!(
        logits.iter().all(|l| l.len() == k && l.iter().all(|z| z.is_finite())),
        InvalidInput,
        "expert logits must be finite and of equal length"
    );
    match fusion {
        Fusion::ProbMean => {
            let mut probs = vec![0.0; k];
            for l in logits {
                for (p, q) in probs.iter_mut().zip(softmax_unchecked(l)) {
                    *p += q / 3.0;
                }
            }
            Ok(Prediction::from_probs(probs))
        }
        Fusion::LogitMean => {
            let mean = (0..k).map(|j| logits.iter().map(|l| l[j]).sum::<f64>() / 3.0).collect();
            Prediction::from_logits(mean)
        }
    }
}

pub fn ensemble_predict(model: &EnsembleModel, x: &[f64], fusion: Fusion) -> Result<Prediction> {
    let h = model.features(x)?;
    fuse(&model.expert_logits_from_features(&h)?, fusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradient, finite_diff_grad, Layer};
    use proptest::prelude::*;

    fn soft(w: &[f64]) -> SoftLabel {
        SoftLabel::new(w.to_vec()).unwrap()
    }

    fn counts(c: &[f64]) -> SoftClassStats {
        SoftClassStats::new(c.to_vec()).unwrap()
    }

    #[test]
    fn soft_counts_examples() {
        let c = soft_class_counts(&[soft(&[0.7, 0.3]), soft(&[0.2, 0.8])]).unwrap();
        assert!((c.counts[0] - 0.9).abs() < 1e-15);
        assert!((c.counts[1] - 1.1).abs() < 1e-15);
        let hard = soft_class_counts(&[
            SoftLabel::one_hot(0, 3),
            SoftLabel::one_hot(2, 3),
            SoftLabel::one_hot(2, 3),
        ])
        .unwrap();
        assert_eq!(hard.counts, vec![1.0, 0.0, 2.0]);
        assert!(soft_class_counts(&[]).is_err());
        assert!(soft_class_counts(&[SoftLabel::one_hot(0, 2), SoftLabel::one_hot(0, 3)]).is_err());
    }

    #[test]
    fn negative_counts_are_degenerate() {
        assert!(matches!(
            SoftClassStats::new(vec![1.0, -1.0]),
            Err(crate::Error::DegenerateCounts(_))
        ));
        // Zero counts are floored rather than rejected.
        let c = counts(&[0.0, 4.0]);
        assert_eq!(c.log_counts()[0], COUNT_FLOOR.ln());
        let l = e2_loss(&[0.0, 0.0], &soft(&[1.0, 0.0]), &c).unwrap();
        assert!(l.value.is_finite());
    }

    #[test]
    fn closed_forms() {
        let n = counts(&[3.0, 1.0]);
        let z = [0.0, 0.0];
        let a = soft(&[1.0, 0.0]);
        let b = soft(&[0.0, 1.0]);
        assert!((e1_loss(&z, &a).unwrap().value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((e2_loss(&z, &a, &n).unwrap().value - 0.2876820724517809).abs() < 1e-12);
        assert!((e2_loss(&z, &b, &n).unwrap().value - 1.3862943611198906).abs() < 1e-12);
        assert!((e3_loss(&z, &a, &n).unwrap().value - 0.10536051565782628).abs() < 1e-12);
        assert!((e3_loss(&z, &b, &n).unwrap().value - 2.3025850929940455).abs() < 1e-12);
    }

    #[test]
    fn e1_at_softmax_target_is_entropy() {
        let z = [0.3, -1.2, 0.8];
        let p = crate::numerics::softmax(&z).unwrap();
        let y = SoftLabel::new(p.clone()).unwrap();
        let entropy = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        let l = e1_loss(&z, &y).unwrap();
        assert!((l.value - entropy).abs() < 1e-12);
        assert!(l.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn e1_gradient_is_p_minus_y() {
        let z = [0.5, -0.25, 1.0];
        let y = soft(&[0.2, 0.5, 0.3]);
        let p = crate::numerics::softmax(&z).unwrap();
        let l = e1_loss(&z, &y).unwrap();
        for ((g, p), y) in l.grad.iter().zip(&p).zip(y.weights()) {
            assert!((g - (p - y)).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_difference_all_experts() {
        let mut rng = SeededRng::new(91);
        for trial in 0..100 {
            let k = 2 + trial % 4;
            let z: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
            let raw: Vec<f64> = (0..k).map(|_| rng.uniform() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            let y = SoftLabel::new(raw.iter().map(|r| r / s).collect()).unwrap();
            let n = counts(&(0..k).map(|_| 1.0 + 100.0 * rng.uniform()).collect::<Vec<_>>());
            for e in Expert::ALL {
                let analytic = expert_loss(e, &z, &y, &n).unwrap().grad;
                let numeric = finite_diff_grad(|x| expert_loss(e, x, &y, &n).unwrap().value, &z, 1e-5).unwrap();
                let r = check_gradient(&analytic, &numeric, 1e-4);
                assert!(r.passed, "{} trial {trial}: {r:?}", e.name());
            }
        }
    }

    proptest! {
        #[test]
        fn uniform_counts_reduce_to_e1(
            z in prop::collection::vec(-5.0f64..5.0, 4),
            raw in prop::collection::vec(0.01f64..1.0, 4),
            n in 0.5f64..1000.0,
        ) {
            let s: f64 = raw.iter().sum();
            let y = SoftLabel::new(raw.iter().map(|r| r / s).collect()).unwrap();
            let c = counts(&[n; 4]);
            let base = e1_loss(&z, &y).unwrap();
            for l in [e2_loss(&z, &y, &c).unwrap(), e3_loss(&z, &y, &c).unwrap()] {
                prop_assert!((l.value - base.value).abs() < 1e-9);
                for (a, b) in l.grad.iter().zip(&base.grad) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn rare_targets_ordered(
            big in 2.0f64..1000.0,
            frac in 0.001f64..0.99,
            z0 in -3.0f64..3.0,
        ) {
            let c = counts(&[big, big * frac]);
            let y = soft(&[0.0, 1.0]);
            let z = [z0, z0];
            let e1 = e1_loss(&z, &y).unwrap().value;
            let e2 = e2_loss(&z, &y, &c).unwrap().value;
            let e3 = e3_loss(&z, &y, &c).unwrap().value;
            prop_assert!(e3 >= e2 && e2 >= e1);
        }

        #[test]
        fn soft_counts_conserve_mass(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 1..60),
        ) {
            let labels: Vec<SoftLabel> = rows
                .iter()
                .map(|r| {
                    let s: f64 = r.iter().sum::<f64>() + 1e-9;
                    let mut w: Vec<f64> = r.iter().map(|x| x / s).collect();
                    let rest = 1.0 - w.iter().sum::<f64>();
                    w[0] += rest;
                    SoftLabel::new(w).unwrap()
                })
                .collect();
            let c = soft_class_counts(&labels).unwrap();
            prop_assert!((c.total() - labels.len() as f64).abs() < 1e-6);
        }
    }

    fn linear_head(weights: Vec<f64>, bias: Vec<f64>, in_dim: usize) -> Mlp {
        let out_dim = bias.len();
        Mlp::from_layers(
            vec![Layer {
                in_dim,
                out_dim,
                weights,
                bias,
            }],
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn fusion_arithmetic() {
        let la = vec![0.6f64.ln(), 0.4f64.ln()];
        let lb = vec![0.2f64.ln(), 0.8f64.ln()];
        let p = fuse(&[la.clone(), la.clone(), lb], Fusion::ProbMean).unwrap();
        assert!((p.probs[0] - 1.4 / 3.0).abs() < 1e-12);
        assert!((p.probs[1] - 1.6 / 3.0).abs() < 1e-12);
        assert_eq!(p.predicted_class, 1);
        let same = fuse(&[la.clone(), la.clone(), la.clone()], Fusion::ProbMean).unwrap();
        assert!((same.probs[0] - 0.6).abs() < 1e-12);
        let lm = fuse(&[la.clone(), la.clone(), la], Fusion::LogitMean).unwrap();
        assert!((lm.probs[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ensemble_predict_checks_dims() {
        let backbone = linear_head(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2);
        let head = linear_head(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![0.0; 3], 2);
        let m = EnsembleModel::from_parts(backbone, [head.clone(), head.clone(), head]).unwrap();
        let p = ensemble_predict(&m, &[0.1, 0.2], Fusion::ProbMean).unwrap();
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ensemble_predict(&m, &[0.1], Fusion::ProbMean).is_err());
    }
}
