use serde::{Deserialize, Serialize};

use super::config::Mode;
use crate::analysis::SimilarityGraph;
use crate::tensor::Tensor;

/// Risk and (for classification) accuracy of one task on one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub risk: f64,
    pub acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: Vec<TaskEval>,
    pub valid: Vec<TaskEval>,
    /// Mean training objective over the epoch's steps; absent before training.
    pub objective: Option<f64>,
}

/// Outcome of one training run. STL runs hold one history per task model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub epochs_run: Vec<usize>,
    pub selected_epoch: Vec<usize>,
    pub history: Vec<Vec<EpochRecord>>,
    pub train: Vec<TaskEval>,
    pub valid: Vec<TaskEval>,
    /// Held-out split with shifted label agreement.
    pub test: Vec<TaskEval>,
    /// Spurious score per task, measured on the test split.
    pub rho_spur: Vec<f64>,
    pub routing: Tensor,
    pub similarity: SimilarityGraph,
    /// Largest absolute correlation between dims of different modules on the
    /// training inputs; absent with a single module.
    pub max_cross_module_corr: Option<f64>,
    pub wall_clock_secs: f64,
}

fn mean_acc(evals: &[TaskEval]) -> f64 {
    let accs: Vec<f64> = evals.iter().filter_map(|e| e.acc).collect();
    if accs.is_empty() {
        return f64::NAN;
    }
    accs.iter().sum::<f64>() / accs.len() as f64
}

impl RunReport {
    pub fn acc_train(&self) -> f64 {
        mean_acc(&self.train)
    }

    /// Mean accuracy on the second (validation) environment.
    pub fn acc_valid_env(&self) -> f64 {
        mean_acc(&self.valid)
    }

    /// Mean accuracy under distribution shift, the headline validation number.
    pub fn acc_val(&self) -> f64 {
        mean_acc(&self.test)
    }

    pub fn mean_rho_spur(&self) -> f64 {
        self.rho_spur.iter().sum::<f64>() / self.rho_spur.len() as f64
    }

    /// JSON with the wall-clock field zeroed, for reproducibility checks.
    pub fn canonical_json(&self) -> String {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        serde_json::to_string_pretty(&r).expect("report serialises")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
