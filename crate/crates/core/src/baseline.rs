//! Plain cross-entropy reference: the stage-1 encoder architecture plus a
//! linear classifier, trained end to end on observed labels with the stage-1
//! optimizer settings and no augmentation.

use crate::datagen::Dataset;
use crate::error::{ensure, Result};
use crate::loss::cross_entropy_unchecked;
use crate::numerics::{one_hot, Mlp, MlpGrad, SeededRng, Sgd};
use crate::par;
use crate::stage1::{Prediction, Stage1Config};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub encoder: Mlp,
    pub classifier: Mlp,
}

impl BaselineModel {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Prediction::from_logits(self.classifier.forward(&self.encoder.forward(x)?)?)
    }
}

pub fn train_baseline(ds: &Dataset, cfg: &Stage1Config) -> Result<BaselineModel> {
    cfg.validate()?;
    ensure!(
        cfg.batch_size <= ds.len(),
        InvalidSpec,
        "batch_size exceeds dataset size"
    );
    let root = SeededRng::new(cfg.seed);
    let mut init = root.fork("baseline-init");
    let mut dims = vec![ds.feature_dim()];
    dims.extend(&cfg.encoder_hidden);
    dims.push(cfg.representation_dim);
    let mut model = BaselineModel {
        encoder: Mlp::new(&dims, cfg.activation, &mut init)?,
        classifier: Mlp::new(&[cfg.representation_dim, ds.num_classes()], cfg.activation, &mut init)?,
    };
    let mut rng = root.fork("baseline-train");
    let mut opt_enc = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut opt_cls = Sgd::new(cfg.momentum, cfg.weight_decay);
    let samples = ds.samples();
    let k = ds.num_classes();
    let mut order: Vec<usize> = (0..ds.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.rate(cfg.lr, epoch, cfg.epochs);
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let grads = par::map(batch, |&i| -> Result<(f64, MlpGrad, MlpGrad)> {
                let s = &samples[i];
                let et = model.encoder.forward_trace(&s.features)?;
                let ct = model.classifier.forward_trace(&et.output)?;
                let l = cross_entropy_unchecked(&ct.output, &one_hot(s.observed_label, k));
                let (gc, gh) = model.classifier.backward(&ct, &l.grad)?;
                let (ge, _) = model.encoder.backward(&et, &gh)?;
                Ok((l.value, ge, gc))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let loss: f64 = grads.iter().map(|g| g.0).sum();
            if !loss.is_finite() {
                return Err(crate::Error::Numeric(format!(
                    "baseline loss diverged at epoch {epoch}"
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            let mut ge = MlpGrad::sum(&model.encoder, grads.iter().map(|g| &g.1));
            let mut gc = MlpGrad::sum(&model.classifier, grads.iter().map(|g| &g.2));
            ge.scale(scale);
            gc.scale(scale);
            opt_enc.step(&mut model.encoder, &ge, lr);
            opt_cls.step(&mut model.classifier, &gc, lr);
        }
    }
    Ok(model)
}
