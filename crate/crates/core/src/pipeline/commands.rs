use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::sweep::{cmd_sweep, SweepSpec};
use super::{files, plot, Manifest, PipelineConfig};
use crate::baseline::train_baseline;
use crate::datagen::{apply_noise, load_dataset, save_dataset, save_noise_mask, synth_train_test, Dataset};
use crate::ensemble::{
    evaluate, load_ensemble, save_ensemble, score, subgroups_for, train_stage2, truth_labels, AccuracyRow, EvalReport,
};
use crate::error::{ensure, Error, Result};
use crate::jsonl;
use crate::numerics::{Mlp, SeededRng};
use crate::par;
use crate::refurbish::{
    load_refurbished, observed_as_soft_labels, rarity, refurbish_dataset, save_refurbished, ClassStats, RefurbishRecord,
};
use crate::stage1::{
    load_checkpoint, load_predictions, save_checkpoint, save_predictions, train_stage1, PredictionRecord,
};

/// A finished command: its manifest plus a human-readable summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    pub summary: String,
}

pub(super) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs `load` on an upstream artifact, turning I/O and parse failures into
/// an error that names the command producing it.
fn upstream<T>(path: &Path, producer: &'static str, load: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer,
            reason: "file not found".into(),
        });
    }
    load(path).map_err(|e| match e {
        Error::Io { .. } | Error::Parse { .. } => Error::MissingArtifact {
            path: path.to_path_buf(),
            producer,
            reason: e.to_string(),
        },
        other => other,
    })
}

fn load_split(cfg: &PipelineConfig, dir: &Path, name: &str) -> Result<Dataset> {
    let k = cfg.long_tail.num_classes;
    upstream(&dir.join(name), "simulate", |p| load_dataset(p, k))
}

fn load_backbone(dir: &Path) -> Result<Mlp> {
    let ckpt = upstream(&dir.join(files::STAGE1_CHECKPOINT), "stage1", load_checkpoint)?;
    Ok(ckpt.model()?.encoder)
}

/// Writes the manifest after hashing every listed output file.
#[allow(clippy::too_many_arguments)]
pub(super) fn finish(
    cfg: &PipelineConfig,
    dir: &Path,
    command: &str,
    options: serde_json::Value,
    start: Instant,
    metrics: serde_json::Value,
    outputs: &[String],
    summary: String,
) -> Result<Outcome> {
    let mut hashes = BTreeMap::new();
    for name in outputs {
        hashes.insert(name.clone(), jsonl::sha256_file(&dir.join(name))?);
    }
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg.resolved(),
        options,
        wall_time_secs: start.elapsed().as_secs_f64(),
        metrics,
        outputs: hashes,
    };
    jsonl::write_json(&Manifest::path(dir, command), &manifest)?;
    Ok(Outcome { manifest, summary })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Simulates the long-tailed training set, corrupts its labels and draws a
/// balanced clean test set.
pub fn cmd_simulate(cfg: &PipelineConfig, dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    cfg.validate()?;
    create_dir(dir)?;
    let root = SeededRng::new(cfg.stage_seed("simulate"));
    let (clean, test) = synth_train_test(&cfg.long_tail, &cfg.mixture, cfg.test_per_class, &mut root.fork("data"))?;
    let (train, mask) = apply_noise(&clean, &cfg.noise, &mut root.fork("noise"))?;
    save_dataset(&train, &dir.join(files::TRAIN))?;
    save_dataset(&test, &dir.join(files::TEST))?;
    save_noise_mask(&mask, &dir.join(files::NOISE_MASK))?;

    let sizes = train.class_sizes();
    let observed = train.observed_counts();
    let mut summary = String::from("class  true_count  observed_count\n");
    for (k, (t, o)) in sizes.iter().zip(&observed).enumerate() {
        let _ = writeln!(summary, "{k:>5}  {t:>10}  {o:>14}");
    }
    let noise_rate = train.noise_rate().unwrap_or(0.0);
    let _ = write!(
        summary,
        "train {} samples, test {} samples, {} noisy labels ({:.2}%)",
        train.len(),
        test.len(),
        mask.count(),
        100.0 * noise_rate
    );
    let metrics = json!({
        "train_samples": train.len(),
        "test_samples": test.len(),
        "class_sizes": sizes,
        "observed_counts": observed,
        "noisy_labels": mask.count(),
        "noise_rate": noise_rate,
    });
    let outputs = [files::TRAIN, files::TEST, files::NOISE_MASK].map(String::from);
    finish(cfg, dir, "simulate", json!({}), start, metrics, &outputs, summary)
}

fn accuracy(pred: impl Iterator<Item = usize>, truth: &[usize]) -> f64 {
    let hits = pred.zip(truth).filter(|(p, t)| p == *t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Trains the contrastive encoder and pre-screening classifier, then
/// predicts every training sample.
pub fn cmd_stage1(cfg: &PipelineConfig, dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    cfg.validate()?;
    let train = load_split(cfg, dir, files::TRAIN)?;
    let s1 = cfg.resolved().stage1;
    let out = train_stage1(&train, &s1)?;
    save_checkpoint(&dir.join(files::STAGE1_CHECKPOINT), &out.model, &s1)?;
    let records: Vec<PredictionRecord> = train
        .samples()
        .iter()
        .zip(&out.predictions)
        .map(|(s, p)| PredictionRecord::new(s.id, p))
        .collect();
    save_predictions(&dir.join(files::STAGE1_PREDICTIONS), &records)?;
    jsonl::write_lines(&dir.join(files::STAGE1_LOG), &out.log)?;

    let predicted = || out.predictions.iter().map(|p| p.predicted_class);
    let vs_observed = accuracy(predicted(), &train.observed_labels());
    let vs_true = train
        .has_true_labels()
        .then(|| accuracy(predicted(), &truth_labels(&train)));
    let last = out.log.last();
    let metrics = json!({
        "accuracy_vs_observed": vs_observed,
        "accuracy_vs_true": vs_true,
        "observed_label_accuracy": train.noise_rate().map(|r| 1.0 - r),
        "final_contrastive_loss": last.map(|l| l.contrastive_loss),
        "final_classifier_loss": last.map(|l| l.classifier_loss),
        "backbone_sha256": out.model.encoder.fingerprint(),
    });
    let mut summary = format!(
        "stage-1 predictions agree with observed labels on {:.2}%",
        100.0 * vs_observed
    );
    if let Some(a) = vs_true {
        let _ = write!(summary, ", with true labels on {:.2}%", 100.0 * a);
    }
    let outputs = [files::STAGE1_CHECKPOINT, files::STAGE1_PREDICTIONS, files::STAGE1_LOG].map(String::from);
    finish(cfg, dir, "stage1", json!({}), start, metrics, &outputs, summary)
}

/// Turns stage-1 predictions into soft labels.
pub fn cmd_refurbish(cfg: &PipelineConfig, dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    cfg.validate()?;
    let train = load_split(cfg, dir, files::TRAIN)?;
    let preds = upstream(&dir.join(files::STAGE1_PREDICTIONS), "stage1", load_predictions)?;
    let out = refurbish_dataset(&train, &preds, &cfg.refurbish)?;
    save_refurbished(&dir.join(files::REFURBISHED), &out.records)?;

    let argmax_soft = out
        .records
        .iter()
        .map(|r| crate::numerics::argmax(r.soft_label.weights()));
    let soft_vs_true = train
        .has_true_labels()
        .then(|| accuracy(argmax_soft, &truth_labels(&train)));
    let metrics = json!({
        "summary": out.summary,
        "soft_label_argmax_accuracy_vs_true": soft_vs_true,
    });
    let summary = format!(
        "refurbished {} of {} labels ({:.2}%), mean weight on changed labels {:.4}",
        out.summary.num_changed,
        out.summary.num_samples,
        100.0 * out.summary.fraction_changed,
        out.summary.mean_weight_changed
    );
    finish(
        cfg,
        dir,
        "refurbish",
        json!({}),
        start,
        metrics,
        &[files::REFURBISHED.to_string()],
        summary,
    )
}

fn stage2_label(no_relabel: bool) -> &'static str {
    if no_relabel {
        "w/o re-label"
    } else {
        "full"
    }
}

/// Trains the three experts over the frozen stage-1 encoder, on refurbished
/// soft labels or, with `no_relabel`, on one-hot observed labels.
pub fn cmd_stage2(cfg: &PipelineConfig, dir: &Path, no_relabel: bool) -> Result<Outcome> {
    let start = Instant::now();
    cfg.validate()?;
    let train = load_split(cfg, dir, files::TRAIN)?;
    let backbone = load_backbone(dir)?;
    let records: Vec<RefurbishRecord> = if no_relabel {
        observed_as_soft_labels(&train)
    } else {
        upstream(&dir.join(files::REFURBISHED), "refurbish", load_refurbished)?
    };
    ensure!(
        records.len() == train.len() && records.iter().zip(train.samples()).all(|(r, s)| r.id == s.id),
        InvalidInput,
        "refurbished labels are not aligned with {}",
        files::TRAIN
    );
    let labels: Vec<_> = records.into_iter().map(|r| r.soft_label).collect();
    let s2 = cfg.resolved().stage2;
    let out = train_stage2(&train, &labels, &backbone, &s2)?;
    let label = stage2_label(no_relabel);
    let ckpt_name = files::ensemble(no_relabel);
    let log_name = files::stage2_log(no_relabel);
    save_ensemble(&dir.join(&ckpt_name), &out.model, s2.fusion, label)?;
    jsonl::write_lines(&dir.join(&log_name), &out.log)?;

    let metrics = json!({
        "label": label,
        "soft_class_counts": out.counts.counts,
        "final_expert_losses": out.log.last().map(|l| l.expert_losses),
    });
    let summary = format!("trained stage-2 experts ({label}) on {} samples", train.len());
    let command = format!("stage2{}", files::variant(no_relabel));
    finish(
        cfg,
        dir,
        &command,
        json!({ "no_relabel": no_relabel }),
        start,
        metrics,
        &[ckpt_name, log_name],
        summary,
    )
}

/// Evaluates every stage-2 checkpoint present in the run directory on the
/// test split.
pub fn cmd_evaluate(cfg: &PipelineConfig, dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    cfg.validate()?;
    let variants: Vec<bool> = [false, true]
        .into_iter()
        .filter(|&v| dir.join(files::ensemble(v)).exists())
        .collect();
    if variants.is_empty() {
        return Err(Error::MissingArtifact {
            path: dir.join(files::ensemble(false)),
            producer: "stage2",
            reason: "no stage-2 checkpoint found".into(),
        });
    }
    let train = load_split(cfg, dir, files::TRAIN)?;
    let test = load_split(cfg, dir, files::TEST)?;
    let backbone = load_backbone(dir)?;
    let counts = train_class_stats(&train);
    let thresholds = cfg.effective_thresholds();

    let mut reports = Vec::new();
    let mut outputs = Vec::new();
    for no_relabel in variants {
        let (model, ckpt) = upstream(&dir.join(files::ensemble(no_relabel)), "stage2", |p| {
            load_ensemble(p, backbone.clone())
        })?;
        let report = evaluate(&model, &test, &counts, &thresholds, ckpt.fusion, &ckpt.label)?;
        let (j, c) = (files::eval_json(no_relabel), files::eval_csv(no_relabel));
        jsonl::write_json(&dir.join(&j), &report)?;
        write_text(&dir.join(&c), &report.to_csv())?;
        outputs.extend([j, c]);
        reports.push(report);
    }

    let mut summary = format!(
        "shot thresholds: many > {}, few < {} (scale {:.3})\n",
        thresholds.many_min,
        thresholds.few_max,
        cfg.threshold_scale()
    );
    for r in &reports {
        let _ = write!(summary, "[{}]\n{}", r.label, r.to_csv());
    }
    let metrics = json!({
        "threshold_scale": cfg.threshold_scale(),
        "reports": reports.iter().map(|r| json!({
            "label": r.label,
            "overall_accuracy": r.overall_accuracy,
            "rows": r.rows().collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    finish(
        cfg,
        dir,
        "evaluate",
        json!({}),
        start,
        metrics,
        &outputs,
        summary.trim_end().to_string(),
    )
}

/// Subgroup sizes come from true training labels where known.
fn train_class_stats(train: &Dataset) -> ClassStats {
    ClassStats::from_counts(train.class_sizes().into_iter().map(|c| c as f64).collect())
        .expect("datasets are non-empty")
}

/// Key numbers of a pipeline run, including the optional ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub noise_rate: f64,
    /// Stage-1 predictions on the training set versus true labels.
    pub stage1_train_accuracy: f64,
    pub full: EvalReport,
    pub no_relabel: Option<EvalReport>,
    /// Test accuracy of the stage-1 pre-screening classifier.
    pub stage1_test: AccuracyRow,
    pub baseline: Option<AccuracyRow>,
}

fn score_predictor(
    name: &str,
    test: &Dataset,
    train: &Dataset,
    cfg: &PipelineConfig,
    predict: impl Fn(&[f64]) -> Result<usize> + Sync,
) -> Result<AccuracyRow> {
    let pred = par::map(test.samples(), |s| predict(&s.features))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let groups = subgroups_for(&train_class_stats(train), &cfg.effective_thresholds());
    Ok(score(name, &pred, &truth_labels(test), &groups))
}

/// simulate → stage1 → refurbish → stage2 → evaluate in one directory.
/// With `ablations`, also trains stage 2 without refurbishment and a plain
/// cross-entropy baseline, and writes a comparison table.
pub fn cmd_pipeline(cfg: &PipelineConfig, dir: &Path, ablations: bool) -> Result<Outcome> {
    let start = Instant::now();
    create_dir(dir)?;
    let mut summary = String::new();
    let mut steps = vec![
        cmd_simulate(cfg, dir)?,
        cmd_stage1(cfg, dir)?,
        cmd_refurbish(cfg, dir)?,
        cmd_stage2(cfg, dir, false)?,
    ];
    if ablations {
        steps.push(cmd_stage2(cfg, dir, true)?);
    }
    steps.push(cmd_evaluate(cfg, dir)?);
    for s in &steps {
        let _ = writeln!(summary, "== {}\n{}", s.manifest.command, s.summary);
    }

    let train = load_split(cfg, dir, files::TRAIN)?;
    let test = load_split(cfg, dir, files::TEST)?;
    let stage1 = upstream(&dir.join(files::STAGE1_CHECKPOINT), "stage1", load_checkpoint)?.model()?;
    let preds = upstream(&dir.join(files::STAGE1_PREDICTIONS), "stage1", load_predictions)?;
    let read_report = |no_relabel: bool| -> Result<EvalReport> {
        upstream(&dir.join(files::eval_json(no_relabel)), "evaluate", jsonl::read_json)
    };
    let stage1_test = score_predictor("Stage 1 classifier", &test, &train, cfg, |x| {
        Ok(stage1.predict(x)?.predicted_class)
    })?;
    let baseline = if ablations {
        let mut bcfg = cfg.resolved().stage1;
        bcfg.seed = cfg.stage_seed("baseline");
        let model = train_baseline(&train, &bcfg)?;
        Some(score_predictor("CE baseline", &test, &train, cfg, |x| {
            Ok(model.predict(x)?.predicted_class)
        })?)
    } else {
        None
    };
    let truth = truth_labels(&train);
    let result = PipelineSummary {
        noise_rate: train.noise_rate().unwrap_or(0.0),
        stage1_train_accuracy: accuracy(preds.iter().map(|p| p.predicted_class), &truth),
        full: read_report(false)?,
        no_relabel: if ablations { Some(read_report(true)?) } else { None },
        stage1_test,
        baseline,
    };
    jsonl::write_json(&dir.join(files::SUMMARY), &result)?;
    let mut outputs = vec![files::SUMMARY.to_string()];
    if ablations {
        let mut csv = String::from("model,many,medium,few,all\n");
        let mut rows = vec![result.stage1_test.clone()];
        rows.extend(result.baseline.clone());
        for (name, r) in [
            ("Stage 2 w/o re-label", &result.no_relabel),
            ("Full", &Some(result.full.clone())),
        ] {
            if let Some(r) = r {
                let mut row = r.ensemble.clone();
                row.model = name.to_string();
                rows.push(row);
            }
        }
        for r in &rows {
            let _ = writeln!(csv, "{}", r.csv_line());
        }
        write_text(&dir.join(files::ABLATION_CSV), &csv)?;
        let _ = write!(summary, "== ablations\n{csv}");
        outputs.push(files::ABLATION_CSV.to_string());
    }
    let metrics = serde_json::to_value(&result).expect("summary serializes");
    finish(
        cfg,
        dir,
        "pipeline",
        json!({ "ablations": ablations }),
        start,
        metrics,
        &outputs,
        summary.trim_end().to_string(),
    )
}

/// Writes `(h, γ)` for `h = 0, 0.01, …, 1`, optionally with an SVG plot.
pub fn cmd_rarity_curve(cfg: &PipelineConfig, dir: &Path, svg: bool) -> Result<Outcome> {
    let start = Instant::now();
    cfg.refurbish.validate()?;
    create_dir(dir)?;
    let sigma = cfg.refurbish.sigma;
    let points: Vec<(f64, f64)> = (0..=100)
        .map(|i| {
            let h = i as f64 / 100.0;
            (h, rarity(h, sigma))
        })
        .collect();
    let mut csv = String::from("h,gamma\n");
    for (h, g) in &points {
        let _ = writeln!(csv, "{h},{g:e}");
    }
    write_text(&dir.join(files::RARITY_CSV), &csv)?;
    let mut outputs = vec![files::RARITY_CSV.to_string()];
    if svg {
        let chart = plot::line_chart_svg(&format!("rarity score, sigma = {sigma}"), "h", "gamma", &points);
        write_text(&dir.join(files::RARITY_SVG), &chart)?;
        outputs.push(files::RARITY_SVG.to_string());
    }
    let summary = format!("wrote {} rows for sigma = {sigma}", points.len());
    finish(
        cfg,
        dir,
        "rarity_curve",
        json!({ "svg": svg }),
        start,
        json!({ "sigma": sigma }),
        &outputs,
        summary,
    )
}

/// Re-runs the command recorded in `manifest` with its recorded config and
/// options, writing into `dir`. Upstream artifacts must already be there.
pub fn replay(manifest: &Manifest, dir: &Path) -> Result<Outcome> {
    let cfg = &manifest.config;
    ensure!(
        cfg.hash() == manifest.config_hash,
        InvalidSpec,
        "manifest config does not match its config_hash"
    );
    let flag = |key: &str| {
        manifest
            .options
            .get(key)
            .and_then(serde_json::Value::as_bool)
            .unwrap_or(false)
    };
    match manifest.command.as_str() {
        "simulate" => cmd_simulate(cfg, dir),
        "stage1" => cmd_stage1(cfg, dir),
        "refurbish" => cmd_refurbish(cfg, dir),
        "stage2" | "stage2_no_relabel" => cmd_stage2(cfg, dir, flag("no_relabel")),
        "evaluate" => cmd_evaluate(cfg, dir),
        "pipeline" => cmd_pipeline(cfg, dir, flag("ablations")),
        "rarity_curve" => cmd_rarity_curve(cfg, dir, flag("svg")),
        c if c.starts_with("sweep_") => {
            let spec: SweepSpec = manifest
                .options
                .get("sweep")
                .cloned()
                .ok_or_else(|| Error::InvalidSpec("sweep manifest lacks its grid".into()))
                .and_then(|v| serde_json::from_value(v).map_err(|e| Error::InvalidSpec(e.to_string())))?;
            cmd_sweep(cfg, &spec, dir, flag("svg"))
        }
        other => Err(Error::InvalidSpec(format!("unknown command {other:?} in manifest"))),
    }
}
