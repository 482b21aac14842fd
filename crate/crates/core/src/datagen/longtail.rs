use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub num_classes: usize,
    pub head_count: usize,
    pub imbalance_ratio: f64,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.num_classes >= 2,
            InvalidSpec,
            "need at least 2 classes, got {}",
            self.num_classes
        );
        ensure!(
            self.imbalance_ratio >= 1.0 && self.imbalance_ratio.is_finite(),
            InvalidSpec,
            "imbalance ratio must be >= 1, got {}",
            self.imbalance_ratio
        );
        ensure!(
            self.head_count as f64 >= self.imbalance_ratio,
            InvalidSpec,
            "head count {} is smaller than imbalance ratio {}",
            self.head_count,
            self.imbalance_ratio
        );
        Ok(())
    }
}

/// Exponentially decaying class sizes `n_k = round(n_1 · IR^{−(k−1)/(K−1)})`,
/// at least one sample per class. The head count is kept exactly.
pub fn longtail_counts(spec: &LongTailSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let k = spec.num_classes;
    let n1 = spec.head_count as f64;
    Ok((0..k)
        .map(|i| {
            if i == 0 {
                return spec.head_count;
            }
            let frac = i as f64 / (k - 1) as f64;
            ((n1 * spec.imbalance_ratio.powf(-frac)).round() as usize).max(1)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, n1: usize, ir: f64) -> LongTailSpec {
        LongTailSpec {
            num_classes: k,
            head_count: n1,
            imbalance_ratio: ir,
        }
    }

    #[test]
    fn balanced_limit() {
        assert_eq!(longtail_counts(&spec(10, 1000, 1.0)).unwrap(), vec![1000; 10]);
    }

    #[test]
    fn geometric_decay_ir10() {
        // round(1000 * 10^{-(k-1)/9}), evaluated independently.
        let expected = [1000, 774, 599, 464, 359, 278, 215, 167, 129, 100];
        assert_eq!(longtail_counts(&spec(10, 1000, 10.0)).unwrap(), expected);
    }

    #[test]
    fn ir100_tail() {
        let c = longtail_counts(&spec(10, 5000, 100.0)).unwrap();
        assert_eq!(c[0], 5000);
        assert_eq!(c[9], 50);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn floor_of_one() {
        let c = longtail_counts(&spec(5, 3, 3.0)).unwrap();
        assert!(c.iter().all(|&n| n >= 1));
    }

    #[test]
    fn invalid_specs() {
        assert!(longtail_counts(&spec(1, 100, 1.0)).is_err());
        assert!(longtail_counts(&spec(3, 5, 10.0)).is_err());
        assert!(longtail_counts(&spec(3, 50, 0.5)).is_err());
    }
}
