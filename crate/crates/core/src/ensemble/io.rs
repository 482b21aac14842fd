use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnsembleModel, Fusion};
use crate::error::{ensure, Result};
use crate::jsonl;
use crate::numerics::{Mlp, MlpRecord};

/// Heads plus the fingerprint of the stage-1 encoder they were trained on.
/// The encoder itself lives in the stage-1 checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    /// Run label carried into the evaluation report.
    pub label: String,
    pub backbone_sha256: String,
    pub fusion: Fusion,
    pub experts: [MlpRecord; 3],
}

impl EnsembleCheckpoint {
    pub fn new(model: &EnsembleModel, fusion: Fusion, label: &str) -> Self {
        Self {
            label: label.to_string(),
            backbone_sha256: model.backbone.fingerprint(),
            fusion,
            experts: [
                model.experts[0].to_record(),
                model.experts[1].to_record(),
                model.experts[2].to_record(),
            ],
        }
    }

    /// Rebuilds the model, checking that `backbone` is the encoder the heads
    /// were trained on.
    pub fn model(&self, backbone: Mlp) -> Result<EnsembleModel> {
        let found = backbone.fingerprint();
        ensure!(
            found == self.backbone_sha256,
            InvalidInput,
            "backbone fingerprint {found} does not match the checkpoint's {}",
            self.backbone_sha256
        );
        EnsembleModel::from_parts(
            backbone,
            [
                Mlp::from_record(&self.experts[0])?,
                Mlp::from_record(&self.experts[1])?,
                Mlp::from_record(&self.experts[2])?,
            ],
        )
    }
}

pub fn save_ensemble(path: &Path, model: &EnsembleModel, fusion: Fusion, label: &str) -> Result<()> {
    jsonl::write_json(path, &EnsembleCheckpoint::new(model, fusion, label))
}

/// Loads heads saved by [`save_ensemble`] on top of `backbone`.
pub fn load_ensemble(path: &Path, backbone: Mlp) -> Result<(EnsembleModel, EnsembleCheckpoint)> {
    let ckpt: EnsembleCheckpoint = jsonl::read_json(path)?;
    Ok((ckpt.model(backbone)?, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, SeededRng};

    #[test]
    fn round_trip_and_hash_check() {
        let mut rng = SeededRng::new(1);
        let backbone = Mlp::new(&[4, 6], Activation::Tanh, &mut rng).unwrap();
        let m = EnsembleModel::init(backbone.clone(), 3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.json");
        save_ensemble(&path, &m, Fusion::LogitMean, "full").unwrap();
        let (back, ckpt) = load_ensemble(&path, backbone).unwrap();
        assert_eq!(back, m);
        assert_eq!(ckpt.fusion, Fusion::LogitMean);
        assert_eq!(ckpt.label, "full");
        let other = Mlp::new(&[4, 6], Activation::Tanh, &mut rng).unwrap();
        assert!(load_ensemble(&path, other).is_err());
    }
}
