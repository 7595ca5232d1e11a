use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DataError, Labels, Result};
use crate::tensor::Tensor;

/// One environment: per-task inputs and labels plus the causal input mask of
/// every task.
///
/// Tasks that read the same features share one `Arc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentBatch {
    pub env_id: usize,
    pub name: String,
    pub inputs: Vec<Arc<Tensor>>,
    pub labels: Vec<Labels>,
    pub causal_masks: Vec<Vec<bool>>,
}

impl EnvironmentBatch {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Arc<Tensor>>,
        labels: Vec<Labels>,
        causal_masks: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let batch = Self {
            env_id: 0,
            name: name.into(),
            inputs,
            labels,
            causal_masks,
        };
        batch.validate()?;
        Ok(batch)
    }

    fn validate(&self) -> Result<()> {
        let t = self.inputs.len();
        if t == 0 || self.labels.len() != t || self.causal_masks.len() != t {
            return Err(DataError::InvalidSpec(format!(
                "batch needs matching inputs/labels/masks per task (got {}, {}, {})",
                t,
                self.labels.len(),
                self.causal_masks.len()
            )));
        }
        for (i, x) in self.inputs.iter().enumerate() {
            if x.rows() != self.labels[i].len() || self.causal_masks[i].len() != x.cols() {
                return Err(DataError::InvalidSpec(format!("task {i}: inputs, labels and mask disagree")));
            }
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.inputs.len()
    }

    pub fn len(&self) -> usize {
        self.inputs[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether every task reads the same input tensor.
    pub fn shares_inputs(&self) -> bool {
        self.inputs.windows(2).all(|w| Arc::ptr_eq(&w[0], &w[1]))
    }

    /// Rows `idx` of every task, keeping input sharing intact.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut cache: Vec<(*const Tensor, Arc<Tensor>)> = Vec::new();
        let inputs = self
            .inputs
            .iter()
            .map(|x| {
                let key = Arc::as_ptr(x);
                if let Some((_, hit)) = cache.iter().find(|(k, _)| *k == key) {
                    return hit.clone();
                }
                let sub = Arc::new(x.select_rows(idx));
                cache.push((key, sub.clone()));
                sub
            })
            .collect();
        Self {
            env_id: self.env_id,
            name: self.name.clone(),
            inputs,
            labels: self.labels.iter().map(|l| l.select(idx)).collect(),
            causal_masks: self.causal_masks.clone(),
        }
    }

    /// Keep only the listed tasks, in order.
    pub fn select_tasks(&self, tasks: &[usize]) -> Self {
        Self {
            env_id: self.env_id,
            name: self.name.clone(),
            inputs: tasks.iter().map(|&t| self.inputs[t].clone()).collect(),
            labels: tasks.iter().map(|&t| self.labels[t].clone()).collect(),
            causal_masks: tasks.iter().map(|&t| self.causal_masks[t].clone()).collect(),
        }
    }
}

/// Train, valid and test batches produced by a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: EnvironmentBatch,
    pub valid: EnvironmentBatch,
    pub test: EnvironmentBatch,
}

impl DatasetSplits {
    pub fn num_tasks(&self) -> usize {
        self.train.num_tasks()
    }

    pub fn select_tasks(&self, tasks: &[usize]) -> Self {
        Self {
            train: self.train.select_tasks(tasks),
            valid: self.valid.select_tasks(tasks),
            test: self.test.select_tasks(tasks),
        }
    }
}

/// The default two-environment set: training slice first, validation second.
pub fn split_environments(train: &EnvironmentBatch, valid: &EnvironmentBatch) -> Result<Vec<EnvironmentBatch>> {
    tag_environments(vec![train.clone(), valid.clone()])
}

/// Assign consecutive environment ids.
pub fn tag_environments(batches: Vec<EnvironmentBatch>) -> Result<Vec<EnvironmentBatch>> {
    if batches.iter().any(|b| b.is_empty()) {
        return Err(DataError::InvalidSpec("environments must be non-empty".into()));
    }
    if batches.windows(2).any(|w| w[0].num_tasks() != w[1].num_tasks()) {
        return Err(DataError::InvalidSpec("environments disagree on task count".into()));
    }
    Ok(batches
        .into_iter()
        .enumerate()
        .map(|(i, mut b)| {
            b.env_id = i;
            b
        })
        .collect())
}
