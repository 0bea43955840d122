use std::collections::VecDeque;

use crate::spatial::{is_positive, Pose, SimilarityThreshold};
use crate::{Error, Result};

/// Keys must have unit norm to within this tolerance.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct QueueEntry {
    pub key: Vec<f32>,
    pub pose: Pose,
    /// Trajectory step of the source frame.
    pub frame: u64,
}

/// Fixed-capacity FIFO of key embeddings tagged with the pose they were
/// captured at.
#[derive(Clone, Debug)]
pub struct DictionaryQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<QueueEntry>,
}

pub fn check_unit_norm(v: &[f32]) -> Result<()> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::Config(format!("key norm {norm} is not 1")));
    }
    Ok(())
}

impl DictionaryQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "queue needs positive capacity and dimension, got {capacity} x {dim}"
            )));
        }
        Ok(DictionaryQueue {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&QueueEntry> {
        self.entries.get(i)
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    /// Appends a key, evicting the oldest entry when full.
    pub fn enqueue(&mut self, key: Vec<f32>, pose: Pose, frame: u64) -> Result<()> {
        if key.len() != self.dim {
            return Err(Error::Config(format!(
                "key has {} dimensions, queue holds {}",
                key.len(),
                self.dim
            )));
        }
        check_unit_norm(&key)?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(QueueEntry { key, pose, frame });
        Ok(())
    }

    /// Keys as one row-major `[len, dim]` block.
    pub fn key_matrix(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for e in &self.entries {
            out.extend_from_slice(&e.key);
        }
        out
    }
}

/// Queue indices whose pose forms a positive pair with `query`, in queue
/// order.
pub fn find_positives(query: &Pose, queue: &DictionaryQueue, thr: &SimilarityThreshold) -> Result<Vec<usize>> {
    if queue.is_empty() {
        return Err(Error::EmptyQueue);
    }
    Ok(queue
        .iter()
        .enumerate()
        .filter(|(_, e)| is_positive(query, &e.pose, thr))
        .map(|(i, _)| i)
        .collect())
}

/// Index of the entry captured closest in trajectory order to `frame`;
/// ties go to the smaller frame id, then to the older entry.
pub fn fallback_index(frame: u64, queue: &DictionaryQueue) -> Result<usize> {
    queue
        .iter()
        .enumerate()
        .min_by_key(|(i, e)| (e.frame.abs_diff(frame), e.frame, *i))
        .map(|(i, _)| i)
        .ok_or(Error::EmptyQueue)
}
