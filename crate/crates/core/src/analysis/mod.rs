//! Diagnostics for trained models: input saliency and the spurious score,
//! cross-module correlation, task-to-module gradients and the task
//! similarity graph induced by the routing matrix.

mod export;

pub use export::{heatmap_svg, write_matrix_csv, write_saliency_csv, write_similarity_csv};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EnvironmentBatch, Labels};
use crate::model::{ModelError, ModularMtlModel};
use crate::regularizers::{pearson_corr, task_risk, RegError, VariancePolicy};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reg(#[from] RegError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("total gradient mass is zero, spurious score undefined")]
    ZeroMass,
    #[error("mask has {mask} entries for {grad} gradient dims")]
    MaskLength { mask: usize, grad: usize },
    #[error("need at least {needed} {what}, got {got}")]
    TooFew { what: &'static str, needed: usize, got: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// `Σ_{(x,y)∈D} |∂ score / ∂x_j|` for every input dim `j`. The score is the
/// true-class logit for classification and the scalar output otherwise.
pub fn factor_gradient(model: &ModularMtlModel, task: usize, batch: &EnvironmentBatch) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let bound = model.bind(&tape)?;
    let x = tape.constant((*batch.inputs[task]).clone());
    let out = bound.predict(task, x)?;
    let score = match &batch.labels[task] {
        Labels::Class(y) => {
            let (n, c) = out.shape();
            let mut onehot = Tensor::zeros(n, c);
            for (i, &label) in y.iter().enumerate() {
                onehot.set(i, label, 1.0);
            }
            out.mul(tape.constant(onehot))?.sum()?
        }
        _ => out.sum()?,
    };
    let g = tape.grad(score, &[x], false)?;
    Ok(column_abs_sums(&g.values()[0]))
}

fn column_abs_sums(t: &Tensor) -> Vec<f64> {
    let (r, c) = t.dims2();
    let mut sums = vec![0.0; c];
    for i in 0..r {
        for (s, v) in sums.iter_mut().zip(t.row_slice(i)) {
            *s += v.abs();
        }
    }
    sums
}

/// Share of saliency mass on dims outside the causal mask.
pub fn spurious_score(grad: &[f64], causal_mask: &[bool]) -> Result<f64> {
    if grad.len() != causal_mask.len() {
        return Err(AnalysisError::MaskLength {
            mask: causal_mask.len(),
            grad: grad.len(),
        });
    }
    let total: f64 = grad.iter().sum();
    if !(total > 0.0) {
        return Err(AnalysisError::ZeroMass);
    }
    let spurious: f64 = grad.iter().zip(causal_mask).filter(|(_, &c)| !c).map(|(g, _)| g).sum();
    Ok(spurious / total)
}

/// Saliency vectors and spurious scores of every task on one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    pub dataset: String,
    pub model_hash: String,
    pub grads: Vec<Vec<f64>>,
    pub rho_spur: Vec<f64>,
}

pub fn saliency_report(model: &ModularMtlModel, batch: &EnvironmentBatch) -> Result<SaliencyReport> {
    let mut grads = Vec::new();
    let mut rho = Vec::new();
    for t in 0..batch.num_tasks() {
        let g = factor_gradient(model, t, batch)?;
        rho.push(spurious_score(&g, &batch.causal_masks[t])?);
        grads.push(g);
    }
    Ok(SaliencyReport {
        dataset: batch.name.clone(),
        model_hash: model.config_hash(),
        grads,
        rho_spur: rho,
    })
}

/// Correlation of every pair of representation dims, grouped by module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrHeatmap {
    pub matrix: Tensor,
    pub block: usize,
    pub modules: usize,
}

impl CorrHeatmap {
    /// Largest `|ρ|` between dims of different modules; 0 for one module.
    pub fn max_cross_block(&self) -> f64 {
        let d = self.block * self.modules;
        let mut best = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                if i / self.block != j / self.block {
                    best = best.max(self.matrix.get(i, j).abs());
                }
            }
        }
        best
    }
}

pub fn module_corr_heatmap(model: &ModularMtlModel, x: &Tensor) -> Result<CorrHeatmap> {
    if x.rows() < 2 {
        return Err(AnalysisError::TooFew {
            what: "rows",
            needed: 2,
            got: x.rows(),
        });
    }
    let zs = model.encode(x)?;
    corr_heatmap(&zs)
}

/// Heatmap from precomputed module outputs.
pub fn corr_heatmap(zs: &[Tensor]) -> Result<CorrHeatmap> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = zs.iter().map(|z| tape.constant(z.clone())).collect();
    let all = Var::concat(&vars, 1)?;
    let rho = pearson_corr(all, all, VariancePolicy::default())?;
    Ok(CorrHeatmap {
        matrix: rho.to_tensor(),
        block: zs[0].cols(),
        modules: zs.len(),
    })
}

/// `∂R^e_t / ∂A[t, i]` for every environment, plus the last-minus-first
/// environment difference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskModuleGradients {
    pub env_names: Vec<String>,
    pub per_env: Vec<Tensor>,
    pub difference: Tensor,
}

pub fn task_module_gradients(model: &ModularMtlModel, envs: &[EnvironmentBatch]) -> Result<TaskModuleGradients> {
    if envs.len() < 2 {
        return Err(AnalysisError::TooFew {
            what: "environments",
            needed: 2,
            got: envs.len(),
        });
    }
    let (t_count, k) = (model.num_tasks(), model.num_modules());
    let mut per_env = Vec::new();
    for env in envs {
        let tape = Tape::new();
        let bound = model.bind(&tape)?;
        let mut table = Tensor::zeros(t_count, k);
        for t in 0..t_count {
            let out = bound.predict(t, tape.constant((*env.inputs[t]).clone()))?;
            let risk = task_risk(model.heads.kinds[t], out, &env.labels[t])?;
            let g = tape.grad(risk, &[bound.rows[t]], false)?;
            for (i, v) in g.values()[0].data().iter().enumerate() {
                table.set(t, i, *v);
            }
        }
        per_env.push(table);
    }
    let last = per_env.last().expect("two environments");
    let diff = Tensor::matrix(
        t_count,
        k,
        last.data().iter().zip(per_env[0].data()).map(|(b, a)| b - a).collect(),
    )?;
    Ok(TaskModuleGradients {
        env_names: envs.iter().map(|e| e.name.clone()).collect(),
        difference: diff,
        per_env,
    })
}

/// Cosine similarity of routing rows with thresholded edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub matrix: Tensor,
    pub threshold: f64,
    /// `(t, t', similarity)` with `t < t'` and similarity at least the threshold.
    pub edges: Vec<(usize, usize, f64)>,
}

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.1;

pub fn task_similarity(a: &Tensor, threshold: f64) -> SimilarityGraph {
    let (t, _) = a.dims2();
    let norms: Vec<f64> = (0..t)
        .map(|i| a.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut m = Tensor::zeros(t, t);
    let mut edges = Vec::new();
    for i in 0..t {
        for j in 0..t {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = a.row_slice(i).iter().zip(a.row_slice(j)).map(|(x, y)| x * y).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            m.set(i, j, s);
            if i < j && s >= threshold {
                edges.push((i, j, s));
            }
        }
    }
    SimilarityGraph {
        matrix: m,
        threshold,
        edges,
    }
}
