//! File-based orchestration. Every command reads its inputs from and writes
//! its outputs to one run directory, plus a JSON manifest recording the
//! resolved configuration, its hash, the seed, metrics and the SHA-256 of
//! every data file written. Commands share no in-memory state, so each can
//! run in a separate process.

mod commands;
mod plot;
mod sweep;

pub use commands::{
    cmd_evaluate, cmd_pipeline, cmd_rarity_curve, cmd_refurbish, cmd_simulate, cmd_stage1, cmd_stage2, replay, Outcome,
    PipelineSummary,
};
pub use plot::line_chart_svg;
pub use sweep::{cmd_sweep, SweepMetric, SweepParam, SweepSpec};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{LongTailSpec, MixtureSpec, NoiseSpec};
use crate::ensemble::{Stage2Config, SubgroupThresholds};
use crate::error::{ensure, Error, Result};
use crate::jsonl;
use crate::numerics::SeededRng;
use crate::refurbish::RefurbishConfig;
use crate::stage1::Stage1Config;

/// Artifact file names inside a run directory.
pub mod files {
    pub const TRAIN: &str = "train.jsonl";
    pub const TEST: &str = "test.jsonl";
    pub const NOISE_MASK: &str = "noise_mask.jsonl";
    pub const STAGE1_CHECKPOINT: &str = "stage1_checkpoint.json";
    pub const STAGE1_PREDICTIONS: &str = "stage1_predictions.jsonl";
    pub const STAGE1_LOG: &str = "stage1_log.jsonl";
    pub const REFURBISHED: &str = "refurbished_labels.jsonl";
    pub const ABLATION_CSV: &str = "ablation.csv";
    pub const SUMMARY: &str = "pipeline_summary.json";
    pub const RARITY_CSV: &str = "rarity_curve.csv";
    pub const RARITY_SVG: &str = "rarity_curve.svg";

    /// Stage-2 variant suffix: empty for the full method.
    pub fn variant(no_relabel: bool) -> &'static str {
        if no_relabel {
            "_no_relabel"
        } else {
            ""
        }
    }

    pub fn ensemble(no_relabel: bool) -> String {
        format!("ensemble{}.json", variant(no_relabel))
    }

    pub fn stage2_log(no_relabel: bool) -> String {
        format!("stage2_log{}.jsonl", variant(no_relabel))
    }

    pub fn eval_json(no_relabel: bool) -> String {
        format!("eval_report{}.json", variant(no_relabel))
    }

    pub fn eval_csv(no_relabel: bool) -> String {
        format!("eval_report{}.csv", variant(no_relabel))
    }

    pub fn manifest(command: &str) -> String {
        format!("{command}_manifest.json")
    }
}

/// Every knob of a run. The default is the desk-scale profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub long_tail: LongTailSpec,
    pub mixture: MixtureSpec,
    pub noise: NoiseSpec,
    pub stage1: Stage1Config,
    pub refurbish: RefurbishConfig,
    pub stage2: Stage2Config,
    pub thresholds: SubgroupThresholds,
    /// Shot thresholds are multiplied by `head_count / subgroup_reference_head`.
    pub subgroup_reference_head: usize,
    pub test_per_class: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            long_tail: LongTailSpec {
                num_classes: 20,
                head_count: 600,
                imbalance_ratio: 100.0,
            },
            mixture: MixtureSpec::default(),
            noise: NoiseSpec::symmetric(0.4),
            // Tail classes hold a handful of clean labels, so weight decay
            // would swamp their gradient; the small linear heads also
            // tolerate larger steps than settings tuned for deep CNNs.
            stage1: Stage1Config {
                epochs: 50,
                batch_size: 64,
                lr: 0.2,
                weight_decay: 0.0,
                ..Stage1Config::default()
            },
            refurbish: RefurbishConfig::default(),
            stage2: Stage2Config {
                epochs: 200,
                batch_size: 64,
                lr: 0.5,
                weight_decay: 0.0,
                ..Stage2Config::default()
            },
            thresholds: SubgroupThresholds::default(),
            subgroup_reference_head: 500,
            test_per_class: 100,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.long_tail.validate()?;
        self.mixture.validate()?;
        self.noise.validate(self.long_tail.num_classes)?;
        self.stage1.validate()?;
        self.refurbish.validate()?;
        self.stage2.validate()?;
        self.thresholds.validate()?;
        ensure!(
            self.subgroup_reference_head > 0,
            InvalidSpec,
            "subgroup_reference_head must be positive"
        );
        ensure!(self.test_per_class > 0, InvalidSpec, "test_per_class must be positive");
        Ok(())
    }

    /// Copy with per-stage seeds derived from the global seed and the run
    /// location cleared, so it describes the computation only.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.stage1.seed = self.stage_seed("stage1");
        c.stage2.seed = self.stage_seed("stage2");
        c.output_dir = PathBuf::new();
        c
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        SeededRng::derive_seed(self.seed, stage)
    }

    /// SHA-256 of the resolved configuration's JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.resolved()).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn threshold_scale(&self) -> f64 {
        self.long_tail.head_count as f64 / self.subgroup_reference_head as f64
    }

    pub fn effective_thresholds(&self) -> SubgroupThresholds {
        self.thresholds.scaled(self.threshold_scale())
    }
}

/// Reads and validates a JSON config. Unreadable files are I/O errors;
/// malformed or invalid contents are spec errors.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::InvalidSpec(msg) => Error::InvalidSpec(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses a possibly partial config. Fields left out, at any depth, keep
/// their values from [`PipelineConfig::default`].
///
/// A run manifest is accepted too: its recorded config is used after
/// checking it against the recorded hash, which makes any run replayable.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut user: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    ensure!(user.is_object(), InvalidSpec, "config must be a JSON object");
    let recorded_hash = match (user.get("config"), user.get("config_hash")) {
        (Some(c), Some(h)) if c.is_object() => {
            let h = h.as_str().map(str::to_owned);
            user = c.clone();
            Some(h.ok_or_else(|| Error::InvalidSpec("manifest config_hash is not a string".into()))?)
        }
        _ => None,
    };
    let mut merged = serde_json::to_value(PipelineConfig::default()).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    overlay(&mut merged, user);
    let cfg: PipelineConfig = serde_json::from_value(merged).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    cfg.validate()?;
    if let Some(h) = recorded_hash {
        ensure!(
            h == cfg.hash(),
            InvalidSpec,
            "manifest config does not match its config_hash"
        );
    }
    Ok(cfg)
}

fn overlay(base: &mut serde_json::Value, patch: serde_json::Value) {
    use serde_json::Value;
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: PipelineConfig,
    /// Command-specific switches such as `no_relabel`.
    pub options: serde_json::Value,
    pub wall_time_secs: f64,
    pub metrics: serde_json::Value,
    /// SHA-256 of every data file written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn path(dir: &Path, command: &str) -> PathBuf {
        dir.join(files::manifest(command))
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    jsonl::read_json(path)
}
