use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Prediction, Stage1Config, Stage1Model};
use crate::error::Result;
use crate::jsonl;
use crate::numerics::{Mlp, MlpRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Checkpoint {
    pub config: Stage1Config,
    pub encoder: MlpRecord,
    pub projection: MlpRecord,
    pub classifier: MlpRecord,
}

impl Stage1Checkpoint {
    pub fn new(model: &Stage1Model, config: &Stage1Config) -> Self {
        Self {
            config: config.clone(),
            encoder: model.encoder.to_record(),
            projection: model.projection.to_record(),
            classifier: model.classifier.to_record(),
        }
    }

    pub fn model(&self) -> Result<Stage1Model> {
        Stage1Model::from_parts(
            Mlp::from_record(&self.encoder)?,
            Mlp::from_record(&self.projection)?,
            Mlp::from_record(&self.classifier)?,
        )
    }
}

pub fn save_checkpoint(path: &Path, model: &Stage1Model, config: &Stage1Config) -> Result<()> {
    jsonl::write_json(path, &Stage1Checkpoint::new(model, config))
}

pub fn load_checkpoint(path: &Path) -> Result<Stage1Checkpoint> {
    let ckpt: Stage1Checkpoint = jsonl::read_json(path)?;
    ckpt.model()?;
    Ok(ckpt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted_class: usize,
}

impl PredictionRecord {
    pub fn new(id: u64, p: &Prediction) -> Self {
        Self {
            id,
            logits: p.logits.clone(),
            probs: p.probs.clone(),
            predicted_class: p.predicted_class,
        }
    }

    pub fn prediction(&self) -> Prediction {
        Prediction {
            logits: self.logits.clone(),
            probs: self.probs.clone(),
            predicted_class: self.predicted_class,
        }
    }
}

pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    jsonl::write_lines(path, records)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    jsonl::read_lines(path, |r: &PredictionRecord| {
        if r.logits.len() != r.probs.len() || r.predicted_class >= r.probs.len() {
            return Err("inconsistent prediction record".to_string());
        }
        Ok(())
    })
}
