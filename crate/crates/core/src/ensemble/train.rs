use serde::{Deserialize, Serialize};

use super::{expert_loss, soft_class_counts, EnsembleModel, Expert, SoftClassStats, Stage2Config};
use crate::datagen::Dataset;
use crate::error::{ensure, Result};
use crate::numerics::{Mlp, MlpGrad, SeededRng, Sgd};
use crate::par;
use crate::refurbish::SoftLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss of E1, E2, E3.
    pub expert_losses: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub model: EnsembleModel,
    pub counts: SoftClassStats,
    pub log: Vec<Stage2EpochLog>,
}

/// Trains the three heads jointly (losses summed per batch) over features
/// of the frozen `backbone`. Soft class counts are computed once up front.
pub fn train_stage2(
    ds: &Dataset,
    soft_labels: &[SoftLabel],
    backbone: &Mlp,
    cfg: &Stage2Config,
) -> Result<Stage2Output> {
    cfg.validate()?;
    ensure!(
        soft_labels.len() == ds.len(),
        InvalidInput,
        "{} soft labels for {} samples",
        soft_labels.len(),
        ds.len()
    );
    ensure!(
        soft_labels.iter().all(|y| y.len() == ds.num_classes()),
        InvalidInput,
        "soft labels must have {} classes",
        ds.num_classes()
    );
    ensure!(
        backbone.input_dim() == ds.feature_dim(),
        InvalidInput,
        "backbone expects {} features, dataset has {}",
        backbone.input_dim(),
        ds.feature_dim()
    );
    let counts = soft_class_counts(soft_labels)?;
    let root = SeededRng::new(cfg.seed);
    let mut model = EnsembleModel::init(backbone.clone(), ds.num_classes(), &mut root.fork("init"))?;
    let mut rng = root.fork("train");

    let features = par::map(ds.samples(), |s| model.backbone.forward(&s.features))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut opts: [Sgd; 3] = std::array::from_fn(|_| Sgd::new(cfg.momentum, cfg.weight_decay));
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.rate(cfg.lr, epoch, cfg.epochs);
        rng.shuffle(&mut order);
        let mut sums = [0.0; 3];
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for (e, expert) in Expert::ALL.into_iter().enumerate() {
                let head = &model.experts[e];
                let per_sample = par::map(batch, |&i| -> Result<(f64, MlpGrad)> {
                    let logits = head.forward(&features[i])?;
                    let l = expert_loss(expert, &logits, &soft_labels[i], &counts)?;
                    let (g, _) = head.backward_from_input(&features[i], &l.grad)?;
                    Ok((l.value, g))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                let mut grad = MlpGrad::sum(head, per_sample.iter().map(|(_, g)| g));
                grad.scale(scale);
                let loss: f64 = per_sample.iter().map(|(v, _)| v).sum();
                if !loss.is_finite() {
                    return Err(crate::Error::Numeric(format!(
                        "expert {} loss diverged at epoch {epoch}",
                        expert.name()
                    )));
                }
                sums[e] += loss;
                opts[e].step(&mut model.experts[e], &grad, lr);
            }
        }
        let n = ds.len() as f64;
        log.push(Stage2EpochLog {
            epoch,
            lr,
            expert_losses: sums.map(|s| s / n),
        });
    }
    Ok(Stage2Output { model, counts, log })
}
