use std::collections::VecDeque;

use crate::error::{ensure, Result};
use crate::numerics::l2_normalize;

/// FIFO buffer of unit-norm key embeddings used as contrastive negatives.
#[derive(Debug, Clone)]
pub struct FeatureQueue {
    capacity: usize,
    entries: VecDeque<Vec<f64>>,
}

impl FeatureQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        ensure!(capacity > 0, InvalidSpec, "queue capacity must be positive");
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Normalizes and appends, evicting the oldest entry when full.
    pub fn push(&mut self, embedding: &[f64]) -> Result<()> {
        let (z, _) = l2_normalize(embedding)?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(z);
        Ok(())
    }

    pub fn extend<'a>(&mut self, batch: impl IntoIterator<Item = &'a Vec<f64>>) -> Result<()> {
        for z in batch {
            self.push(z)?;
        }
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;

    #[test]
    fn fifo_discipline() {
        let cap = 7;
        let batch = 3;
        let mut q = FeatureQueue::new(cap).unwrap();
        let mut pushed = Vec::new();
        for t in 0..5 {
            let b: Vec<Vec<f64>> = (0..batch).map(|j| vec![1.0, (t * batch + j) as f64]).collect();
            q.extend(&b).unwrap();
            pushed.extend(b);
            let expected_len = ((t + 1) * batch).min(cap);
            assert_eq!(q.len(), expected_len);
            let tail = &pushed[pushed.len() - expected_len..];
            for (got, want) in q.iter().zip(tail) {
                let (w, _) = l2_normalize(want).unwrap();
                assert_eq!(got, &w);
            }
        }
    }

    #[test]
    fn entries_are_unit_norm() {
        let mut q = FeatureQueue::new(4).unwrap();
        q.push(&[3.0, 4.0]).unwrap();
        q.push(&[-0.001, 0.002]).unwrap();
        assert!(q.iter().all(|z| (norm(z) - 1.0).abs() < 1e-9));
        assert!(q.push(&[0.0, 0.0]).is_err());
        assert!(FeatureQueue::new(0).is_err());
    }
}
