use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, NoiseMask, Sample};
use crate::error::{Error, Result};
use crate::jsonl;

/// One line per sample: `{"id", "features", "observed_label", "true_label"?}`.
/// Floats are written in shortest round-trip form, so reloading is bit-exact.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    jsonl::write_lines(path, ds.samples())
}

pub fn load_dataset(path: &Path, num_classes: usize) -> Result<Dataset> {
    let samples: Vec<Sample> = jsonl::read_lines(path, |s: &Sample| {
        if s.observed_label >= num_classes {
            return Err(format!(
                "observed_label {} out of range for {num_classes} classes",
                s.observed_label
            ));
        }
        if let Some(t) = s.true_label.filter(|&t| t >= num_classes) {
            return Err(format!("true_label {t} out of range for {num_classes} classes"));
        }
        Ok(())
    })?;
    Dataset::new(samples, num_classes)
}

#[derive(Serialize, Deserialize)]
struct MaskRow {
    id: u64,
    noisy: bool,
}

pub fn save_noise_mask(mask: &NoiseMask, path: &Path) -> Result<()> {
    jsonl::write_lines(
        path,
        mask.ids
            .iter()
            .zip(&mask.noisy)
            .map(|(&id, &noisy)| MaskRow { id, noisy }),
    )
}

pub fn load_noise_mask(path: &Path) -> Result<NoiseMask> {
    let rows: Vec<MaskRow> = jsonl::read_lines(path, |_| Ok(()))?;
    Ok(NoiseMask {
        ids: rows.iter().map(|r| r.id).collect(),
        noisy: rows.iter().map(|r| r.noisy).collect(),
    })
}

/// Builds a real-data dataset (no ground truth) from a JSON Lines file of
/// feature arrays and a newline-delimited integer label file. Ids follow
/// row order. `num_classes` defaults to `max label + 1`.
pub fn import_embeddings(features_path: &Path, labels_path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let mut dim = None;
    let features: Vec<Vec<f64>> = jsonl::read_lines(features_path, |row: &Vec<f64>| {
        let d = *dim.get_or_insert(row.len());
        if row.len() != d {
            return Err(format!("row has dimension {}, earlier rows have {d}", row.len()));
        }
        Ok(())
    })?;

    let file = File::open(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(labels_path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let label: usize = t.parse().map_err(|e| Error::Parse {
            path: labels_path.to_path_buf(),
            line: i + 1,
            message: format!("bad label {t:?}: {e}"),
        })?;
        labels.push(label);
    }

    if features.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let k = match num_classes {
        Some(k) => k,
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    let samples = features
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (features, observed_label))| Sample {
            id: i as u64,
            features,
            observed_label,
            true_label: None,
        })
        .collect();
    Dataset::new(samples, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{inject_symmetric, synth_dataset, LongTailSpec, MixtureSpec};
    use crate::numerics::SeededRng;
    use std::io::Write;

    fn noisy_dataset() -> Dataset {
        let lt = LongTailSpec {
            num_classes: 4,
            head_count: 30,
            imbalance_ratio: 3.0,
        };
        let ds = synth_dataset(&lt, &MixtureSpec::default(), &mut SeededRng::new(12)).unwrap();
        inject_symmetric(&ds, 0.3, &mut SeededRng::new(13)).unwrap().0
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let ds = noisy_dataset();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path, 4).unwrap();
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            let bits_a: Vec<u64> = a.features.iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = b.features.iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert_eq!(ds, back);
    }

    #[test]
    fn out_of_range_label_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"id\":0,\"features\":[1.0],\"observed_label\":1}\n{\"id\":1,\"features\":[2.0],\"observed_label\":3}\n",
        )
        .unwrap();
        match load_dataset(&path, 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_true_label_is_real_data_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("real.jsonl");
        std::fs::write(&path, "{\"id\":5,\"features\":[0.5,1.5],\"observed_label\":0}\n").unwrap();
        let ds = load_dataset(&path, 2).unwrap();
        assert_eq!(ds.samples()[0].true_label, None);
        assert!(!ds.has_true_labels());
    }

    #[test]
    fn malformed_line_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":0,\"features\":[1.0],\"observed_label\":0}\nnot json\n").unwrap();
        assert!(matches!(load_dataset(&path, 2), Err(Error::Parse { line: 2, .. })));
    }

    fn write(path: &Path, text: &str) {
        let mut f = File::create(path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
    }

    #[test]
    fn import_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let fp = dir.path().join("emb.jsonl");
        let lp = dir.path().join("labels.txt");
        write(&fp, "[1,2,3,4]\n[0.5,0.25,0,1]\n[-1,-2,-3,-4]\n");
        write(&lp, "0\n2\n1\n");
        let ds = import_embeddings(&fp, &lp, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.num_classes(), 3);
        assert!(!ds.has_true_labels());

        let saved = dir.path().join("ds.jsonl");
        save_dataset(&ds, &saved).unwrap();
        assert_eq!(load_dataset(&saved, 3).unwrap(), ds);
    }

    #[test]
    fn import_rejects_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let fp = dir.path().join("emb.jsonl");
        let lp = dir.path().join("labels.txt");
        write(&fp, "[1,2]\n[3,4]\n");
        write(&lp, "0\n1\n1\n");
        assert!(import_embeddings(&fp, &lp, None).is_err());

        write(&fp, "[1,2]\n[3,4,5]\n");
        write(&lp, "0\n1\n");
        assert!(matches!(
            import_embeddings(&fp, &lp, None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.jsonl");
        let mask = NoiseMask {
            ids: vec![3, 1, 2],
            noisy: vec![true, false, true],
        };
        save_noise_mask(&mask, &p).unwrap();
        assert_eq!(load_noise_mask(&p).unwrap(), mask);
    }
}
