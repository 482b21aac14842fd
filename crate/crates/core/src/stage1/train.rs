use serde::{Deserialize, Serialize};

use super::{augment, contrastive_loss, stage1_loss, FeatureQueue, Prediction, Stage1Config, Stage1Model};
use crate::datagen::Dataset;
use crate::error::{ensure, Result};
use crate::loss::classifier_loss;
use crate::numerics::{argmax, l2_normalize, l2_normalize_backward, one_hot, Mlp, MlpGrad, SeededRng, Sgd, Trace};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub contrastive_loss: f64,
    pub classifier_loss: f64,
    pub total_loss: f64,
    /// Classifier agreement with observed labels on the training views.
    pub observed_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub model: Stage1Model,
    /// One prediction per training sample, in dataset order.
    pub predictions: Vec<Prediction>,
    pub log: Vec<EpochLog>,
}

/// Batch-mean losses and parameter gradients of the stage-1 objective.
#[derive(Debug, Clone)]
pub struct BatchStep {
    pub contrastive_loss: f64,
    pub classifier_loss: f64,
    pub total_loss: f64,
    pub encoder_grad: MlpGrad,
    pub projection_grad: MlpGrad,
    pub classifier_grad: MlpGrad,
    /// Detached, unit-norm key embeddings, ready for the queue.
    pub keys: Vec<Vec<f64>>,
    pub correct: usize,
}

struct QueryView {
    embedding: Vec<f64>,
    classifier_trace: Trace,
}

struct KeyView {
    encoder_trace: Trace,
    projection_trace: Trace,
    embedding: Vec<f64>,
    norm: f64,
}

fn query_view(model: &Stage1Model, x: &[f64], xq: &[f64]) -> Result<QueryView> {
    let v = model.encoder.forward(xq)?;
    let (embedding, _) = l2_normalize(&model.projection.forward(&v)?)?;
    // The classifier reads features of the un-augmented sample, as constants.
    let classifier_trace = model.classifier.forward_trace(&model.encoder.forward(x)?)?;
    Ok(QueryView {
        embedding,
        classifier_trace,
    })
}

fn key_view(model: &Stage1Model, x: &[f64]) -> Result<KeyView> {
    let encoder_trace = model.encoder.forward_trace(x)?;
    let projection_trace = model.projection.forward_trace(&encoder_trace.output)?;
    let (embedding, norm) = l2_normalize(&projection_trace.output)?;
    Ok(KeyView {
        encoder_trace,
        projection_trace,
        embedding,
        norm,
    })
}

fn sum_grads(net: &Mlp, grads: &[MlpGrad]) -> MlpGrad {
    MlpGrad::sum(net, grads)
}

/// Losses and gradients for one batch of `(query view, key view)` pairs
/// drawn from the un-augmented `inputs`.
///
/// Query embeddings are constants. Contrastive gradients reach the shared
/// encoder and projection only through the key branch (own key and in-batch
/// negatives; queue entries are constants). Classifier gradients stop at the
/// detached encoder features, so the encoder never sees labels.
pub fn batch_gradients(
    model: &Stage1Model,
    inputs: &[&[f64]],
    views: &[(Vec<f64>, Vec<f64>)],
    labels: &[usize],
    queue: &FeatureQueue,
    cfg: &Stage1Config,
) -> Result<BatchStep> {
    ensure!(
        views.len() == labels.len(),
        InvalidInput,
        "views and labels differ in length"
    );
    ensure!(
        views.len() == inputs.len(),
        InvalidInput,
        "views and inputs differ in length"
    );
    ensure!(!views.is_empty(), InvalidInput, "empty batch");
    let b = views.len();
    let k = model.num_classes();

    let forwards: Vec<Result<(QueryView, KeyView)>> = par::map_range(b, |i| {
        let (xq, xk) = &views[i];
        Ok((query_view(model, inputs[i], xq)?, key_view(model, xk)?))
    });
    let mut queries = Vec::with_capacity(b);
    let mut keys = Vec::with_capacity(b);
    for f in forwards {
        let (q, kv) = f?;
        queries.push(q);
        keys.push(kv);
    }

    // Contrastive term: per query, gradient contributions to every in-batch key.
    let queue_refs: Vec<&[f64]> = queue.iter().map(Vec::as_slice).collect();
    let per_query: Vec<Result<(f64, Vec<Vec<f64>>)>> = par::map_range(b, |i| {
        let mut negatives = queue_refs.clone();
        negatives.extend((0..b).filter(|&j| j != i).map(|j| keys[j].embedding.as_slice()));
        let out = contrastive_loss(
            &queries[i].embedding,
            &keys[i].embedding,
            &negatives,
            cfg.tau,
            cfg.include_positive,
        )?;
        let mut contrib = Vec::with_capacity(b);
        let mut in_batch = out.grad_negatives[queue_refs.len()..].iter();
        for j in 0..b {
            if j == i {
                contrib.push(out.grad_key.clone());
            } else {
                contrib.push(in_batch.next().expect("one negative per other key").clone());
            }
        }
        Ok((out.loss, contrib))
    });
    let con_scale = (1.0 - cfg.alpha) / b as f64;
    let dim = keys[0].embedding.len();
    let mut key_grads = vec![vec![0.0; dim]; b];
    let mut con_sum = 0.0;
    for r in per_query {
        let (loss, contrib) = r?;
        con_sum += loss;
        for (acc, g) in key_grads.iter_mut().zip(contrib) {
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += con_scale * gi;
            }
        }
    }

    let backward: Vec<Result<(MlpGrad, MlpGrad)>> = par::map_range(b, |j| {
        let kv = &keys[j];
        let g_proj_out = l2_normalize_backward(&kv.embedding, kv.norm, &key_grads[j]);
        let (gp, gv) = model.projection.backward(&kv.projection_trace, &g_proj_out)?;
        let (ge, _) = model.encoder.backward(&kv.encoder_trace, &gv)?;
        Ok((ge, gp))
    });
    let mut enc_grads = Vec::with_capacity(b);
    let mut proj_grads = Vec::with_capacity(b);
    for r in backward {
        let (ge, gp) = r?;
        enc_grads.push(ge);
        proj_grads.push(gp);
    }

    // Classifier term on detached features.
    let cls_scale = cfg.alpha / b as f64;
    let cls: Vec<Result<(f64, MlpGrad, bool)>> = par::map_range(b, |i| {
        let trace = &queries[i].classifier_trace;
        let target = one_hot(labels[i], k);
        let l = classifier_loss(cfg.classifier_loss, &trace.output, &target, cfg.c)?;
        let upstream: Vec<f64> = l.grad.iter().map(|g| g * cls_scale).collect();
        let (gc, _) = model.classifier.backward(trace, &upstream)?;
        Ok((l.value, gc, argmax(&trace.output) == labels[i]))
    });
    let mut cls_sum = 0.0;
    let mut cls_grads = Vec::with_capacity(b);
    let mut correct = 0;
    for r in cls {
        let (v, g, ok) = r?;
        cls_sum += v;
        cls_grads.push(g);
        correct += ok as usize;
    }

    let contrastive_loss = con_sum / b as f64;
    let classifier_loss = cls_sum / b as f64;
    Ok(BatchStep {
        contrastive_loss,
        classifier_loss,
        total_loss: stage1_loss(contrastive_loss, classifier_loss, cfg.alpha),
        encoder_grad: sum_grads(&model.encoder, &enc_grads),
        projection_grad: sum_grads(&model.projection, &proj_grads),
        classifier_grad: sum_grads(&model.classifier, &cls_grads),
        keys: keys.into_iter().map(|kv| kv.embedding).collect(),
        correct,
    })
}

/// Trains the stage-1 model and returns a prediction for every sample of
/// `ds` (on un-augmented features) in dataset order.
pub fn train_stage1(ds: &Dataset, cfg: &Stage1Config) -> Result<Stage1Output> {
    cfg.validate()?;
    ensure!(
        cfg.batch_size <= ds.len(),
        InvalidSpec,
        "batch_size {} exceeds dataset size {}",
        cfg.batch_size,
        ds.len()
    );
    let root = SeededRng::new(cfg.seed);
    let mut model = Stage1Model::init(cfg, ds.feature_dim(), ds.num_classes(), &mut root.fork("init"))?;
    let mut rng = root.fork("train");
    let mut opt_enc = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut opt_proj = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut opt_cls = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut queue = FeatureQueue::new(cfg.queue_capacity)?;
    let samples = ds.samples();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.rate(cfg.lr, epoch, cfg.epochs);
        let head_lr = cfg.lr_schedule.rate(cfg.head_lr(), epoch, cfg.epochs);
        rng.shuffle(&mut order);
        let (mut con, mut cls, mut total, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let views: Vec<(Vec<f64>, Vec<f64>)> = batch
                .iter()
                .map(|&i| {
                    let x = &samples[i].features;
                    let q = augment(x, cfg, &mut rng);
                    let k = augment(x, cfg, &mut rng);
                    (q, k)
                })
                .collect();
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| samples[i].features.as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].observed_label).collect();
            let step = batch_gradients(&model, &inputs, &views, &labels, &queue, cfg)?;
            if !step.total_loss.is_finite() {
                return Err(crate::Error::Numeric(format!("stage-1 loss diverged at epoch {epoch}")));
            }
            opt_enc.step(&mut model.encoder, &step.encoder_grad, lr);
            opt_proj.step(&mut model.projection, &step.projection_grad, lr);
            opt_cls.step(&mut model.classifier, &step.classifier_grad, head_lr);
            queue.extend(&step.keys)?;
            let w = batch.len() as f64;
            con += step.contrastive_loss * w;
            cls += step.classifier_loss * w;
            total += step.total_loss * w;
            correct += step.correct;
        }
        let n = ds.len() as f64;
        log.push(EpochLog {
            epoch,
            lr,
            contrastive_loss: con / n,
            classifier_loss: cls / n,
            total_loss: total / n,
            observed_accuracy: correct as f64 / n,
        });
    }

    let predictions = par::map(samples, |s| model.predict(&s.features))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Stage1Output {
        model,
        predictions,
        log,
    })
}
