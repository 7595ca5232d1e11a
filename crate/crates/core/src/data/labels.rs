use serde::{Deserialize, Serialize};

use crate::model::TaskKind;
use crate::tensor::Tensor;

/// Per-example targets for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Labels {
    /// `±1`.
    Binary(Vec<f64>),
    Class(Vec<usize>),
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Binary(v) | Labels::Real(v) => v.len(),
            Labels::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, kind: TaskKind) -> bool {
        match (self, kind) {
            (Labels::Binary(_), TaskKind::Binary) | (Labels::Real(_), TaskKind::Regression) => true,
            (Labels::Class(v), TaskKind::Multiclass { classes }) => v.iter().all(|&c| c < classes),
            _ => false,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Binary(v) => Labels::Binary(idx.iter().map(|&i| v[i]).collect()),
            Labels::Class(v) => Labels::Class(idx.iter().map(|&i| v[i]).collect()),
            Labels::Real(v) => Labels::Real(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Targets as an `n×1` column (binary and real labels only).
    pub fn column(&self) -> Option<Tensor> {
        match self {
            Labels::Binary(v) | Labels::Real(v) => Tensor::matrix(v.len(), 1, v.clone()).ok(),
            Labels::Class(_) => None,
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            Labels::Binary(v) | Labels::Real(v) => v.clone(),
            Labels::Class(v) => v.iter().map(|&c| c as f64).collect(),
        }
    }

    /// Fraction of rows predicted correctly: sign agreement for binary
    /// labels, arg-max for classes. `None` for real-valued targets.
    pub fn accuracy(&self, outputs: &Tensor) -> Option<f64> {
        let n = self.len();
        if n == 0 {
            return None;
        }
        let correct = match self {
            Labels::Binary(y) => y
                .iter()
                .zip(outputs.data())
                .filter(|(&y, &f)| (f >= 0.0) == (y > 0.0))
                .count(),
            Labels::Class(y) => {
                let c = outputs.cols();
                y.iter()
                    .enumerate()
                    .filter(|&(i, &label)| argmax(&outputs.data()[i * c..(i + 1) * c]) == label)
                    .count()
            }
            Labels::Real(_) => return None,
        };
        Some(correct as f64 / n as f64)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_accuracy_uses_sign() {
        let y = Labels::Binary(vec![1.0, -1.0, 1.0, -1.0]);
        let f = Tensor::matrix(4, 1, vec![0.3, -2.0, -0.1, 0.5]).unwrap();
        assert_eq!(y.accuracy(&f), Some(0.5));
    }

    #[test]
    fn class_accuracy_uses_argmax() {
        let y = Labels::Class(vec![0, 2]);
        let f = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 3.0, 1.0]).unwrap();
        assert_eq!(y.accuracy(&f), Some(0.5));
        assert!(y.matches(TaskKind::Multiclass { classes: 3 }));
        assert!(!y.matches(TaskKind::Multiclass { classes: 2 }));
    }
}
