//! FIFO memory of projected keys from the most recent batches, used as the
//! InfoNCE candidate set.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::learner::loss::normalize_rows;

/// Stores ℓ2-normalized copies of pushed rows. Whole batches are evicted,
/// oldest first, until the entry count fits the capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryQueue {
    capacity: usize,
    dim: usize,
    batches: VecDeque<Array2<f64>>,
    len: usize,
}

impl MemoryQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            batches: VecDeque::new(),
            len: 0,
        }
    }

    /// Capacity for `n` batches of `batch_size` entries.
    pub fn for_batches(n: usize, batch_size: usize, dim: usize) -> Self {
        Self::new(n * batch_size, dim)
    }

    pub fn push(&mut self, keys: &Array2<f64>) -> Result<()> {
        if keys.ncols() != self.dim {
            return Err(Error::Shape {
                expected: format!("keys of length {}", self.dim),
                got: keys.ncols().to_string(),
            });
        }
        if keys.nrows() > self.capacity {
            return Err(Error::invalid(format!(
                "batch of {} keys exceeds queue capacity {}",
                keys.nrows(),
                self.capacity
            )));
        }
        self.len += keys.nrows();
        self.batches.push_back(normalize_rows(keys));
        while self.len > self.capacity {
            let old = self.batches.pop_front().expect("len > 0 implies a batch");
            self.len -= old.nrows();
        }
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.batches
            .iter()
            .flat_map(|b| b.rows().into_iter().map(|r| r.to_slice().expect("standard layout")))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clear(&mut self) {
        self.batches.clear();
        self.len = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(tag: f64, rows: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, 2), |(i, j)| if j == 0 { 10.0 * tag + i as f64 } else { 1.0 })
    }

    #[test]
    fn evicts_the_oldest_batch_first() {
        let (n, b) = (3, 4);
        let mut q = MemoryQueue::for_batches(n, b, 2);
        for t in 0..=n {
            q.push(&batch(t as f64 + 1.0, b)).unwrap();
            assert!(q.len() <= q.capacity());
        }
        assert_eq!(q.len(), n * b);
        let first = normalize_rows(&batch(1.0, b));
        for row in first.rows() {
            assert!(q.entries().all(|e| e != row.to_slice().unwrap()));
        }
        for t in 2..=n + 1 {
            let kept = normalize_rows(&batch(t as f64, b));
            for row in kept.rows() {
                assert!(q.entries().any(|e| e == row.to_slice().unwrap()));
            }
        }
    }

    #[test]
    fn accepts_column_major_batches() {
        use ndarray::ShapeBuilder;
        let keys = Array2::from_shape_vec((2, 3).f(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert!(!keys.is_standard_layout());
        let mut q = MemoryQueue::new(4, 3);
        q.push(&keys).unwrap();
        let rows: Vec<&[f64]> = q.entries().collect();
        let norm = 14f64.sqrt();
        assert_eq!(rows[0], &[1.0 / norm, 2.0 / norm, 3.0 / norm]);
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn rejects_oversized_and_misshapen_batches() {
        let mut q = MemoryQueue::new(2, 2);
        assert!(q.push(&batch(1.0, 3)).is_err());
        assert!(q.push(&Array2::zeros((1, 3))).is_err());
        q.push(&batch(1.0, 2)).unwrap();
        q.clear();
        assert!(q.is_empty());
    }
}
