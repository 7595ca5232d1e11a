//! Training objectives: task risks, module decorrelation, routing-graph
//! sparsity/balance, and the environment-gradient penalties.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Labels;
use crate::model::TaskKind;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum RegError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("module {module} has a constant feature column")]
    DegenerateVariance { module: usize },
    #[error("labels do not fit a {0:?} task")]
    LabelKind(TaskKind),
    #[error("{outputs} outputs for {labels} labels")]
    LabelCount { outputs: usize, labels: usize },
    #[error("expected risks for {expected} tasks in every environment, got {got}")]
    RiskLayout { expected: usize, got: usize },
    #[error("penalty needs at least one environment")]
    NoEnvironments,
}

pub type Result<T> = std::result::Result<T, RegError>;

/// How the correlation handles near-constant features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "eps", rename_all = "snake_case")]
pub enum VariancePolicy {
    /// Add `eps` under each square root.
    Floor(f64),
    /// Fail when any feature column has zero variance.
    Strict,
}

impl Default for VariancePolicy {
    fn default() -> Self {
        VariancePolicy::Floor(1e-8)
    }
}

/// Environment-gradient penalty applied to the routing weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    #[default]
    None,
    /// `Σ_t Σ_e ||∇_{A_t} R_t^e||²`
    GIrmNorm,
    /// `Σ_t Σ_e |E|⁻¹ ||∇_{A_t} R_t^e − mean_e ∇_{A_t} R_t^e||²`
    GIrmVar,
    /// Squared gradient norm with respect to both `A_t` and the task head.
    Irm,
}

/// Loss coefficients. Defaults are the values used for every reported run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub sparsity: f64,
    pub balance: f64,
    pub decor: f64,
    pub penalty: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sparsity: 0.2,
            balance: 5.0,
            decor: 20.0,
            penalty: 5.0,
        }
    }
}

/// Mean loss of `outputs` (`n×out`) against `labels`.
pub fn task_risk<'t>(kind: TaskKind, outputs: Var<'t>, labels: &Labels) -> Result<Var<'t>> {
    let (n, _) = outputs.shape();
    if n != labels.len() {
        return Err(RegError::LabelCount {
            outputs: n,
            labels: labels.len(),
        });
    }
    if !labels.matches(kind) {
        return Err(RegError::LabelKind(kind));
    }
    let tape = outputs.tape();
    Ok(match labels {
        Labels::Binary(_) => {
            let y = tape.constant(labels.column().expect("binary column"));
            outputs.mul(y)?.neg()?.softplus()?.mean()?
        }
        Labels::Real(_) => {
            let y = tape.constant(labels.column().expect("real column"));
            outputs.sub(y)?.sq_norm()?.scale(1.0 / n as f64)?
        }
        Labels::Class(c) => outputs.softmax_cross_entropy(c)?,
    })
}

/// Pearson correlation between every column of `zi` and every column of `zj`.
pub fn pearson_corr<'t>(zi: Var<'t>, zj: Var<'t>, policy: VariancePolicy) -> Result<Var<'t>> {
    let (ci, cj) = (center(zi)?, center(zj)?);
    let cov = ci.t()?.matmul(cj)?;
    let eps = match policy {
        VariancePolicy::Floor(eps) => eps,
        VariancePolicy::Strict => {
            for (k, c) in [ci, cj].iter().enumerate() {
                if has_constant_column(&c.value()) {
                    return Err(RegError::DegenerateVariance { module: k });
                }
            }
            0.0
        }
    };
    let si = ci.square()?.sum_axis(0)?.shift(eps)?.sqrt()?;
    let sj = cj.square()?.sum_axis(0)?.shift(eps)?.sqrt()?;
    Ok(cov.div(si.t()?.matmul(sj)?)?)
}

fn center(z: Var<'_>) -> std::result::Result<Var<'_>, TensorError> {
    let (r, c) = z.shape();
    z.sub(z.mean_axis(0)?.expand(r, c)?)
}

fn has_constant_column(centered: &Tensor) -> bool {
    let (r, c) = centered.dims2();
    (0..c).any(|j| (0..r).all(|i| centered.data()[i * c + j] == 0.0))
}

/// `λ Σ_{i<j} ||ρ(Z_i, Z_j)||_F²`.
pub fn decorrelation_loss<'t>(zs: &[Var<'t>], lambda: f64, policy: VariancePolicy) -> Result<Var<'t>> {
    let tape = match zs.first() {
        Some(z) => z.tape(),
        None => {
            return Err(RegError::Tensor(TensorError::Arity {
                op: "decorrelation",
                expected: 1,
                got: 0,
            }))
        }
    };
    let mut total = tape.scalar(0.0);
    for i in 0..zs.len() {
        for j in i + 1..zs.len() {
            let rho = pearson_corr(zs[i], zs[j], policy).map_err(|e| match e {
                RegError::DegenerateVariance { module } => RegError::DegenerateVariance {
                    module: if module == 0 { i } else { j },
                },
                other => other,
            })?;
            total = total.add(rho.sq_norm()?)?;
        }
    }
    Ok(total.scale(lambda)?)
}

/// Routing-graph regulariser value and whether the column mass was zero.
pub struct GraphLoss<'t> {
    pub value: Var<'t>,
    /// `A` had no mass at all, so the balance term was dropped.
    pub degenerate: bool,
}

/// `λ_sps ||A||₁ − λ_bal · H(colsum(A) / sum(A))` with `0 · ln 0 = 0`.
pub fn graph_loss<'t>(a: Var<'t>, sparsity: f64, balance: f64) -> Result<GraphLoss<'t>> {
    let tape = a.tape();
    let l1 = a.l1_norm()?.scale(sparsity)?;
    let (_, k) = a.shape();
    let colsum = a.sum_axis(0)?;
    let total = colsum.sum()?;
    if total.item() == 0.0 {
        return Ok(GraphLoss {
            value: l1,
            degenerate: true,
        });
    }
    let p = colsum.div(total.expand(1, k)?)?;
    let zero_mask = p.value().map(|x| if x == 0.0 { 1.0 } else { 0.0 });
    let safe = p.add(tape.constant(zero_mask))?;
    let entropy = p.mul(safe.ln()?)?.sum()?.neg()?;
    Ok(GraphLoss {
        value: l1.sub(entropy.scale(balance)?)?,
        degenerate: false,
    })
}

/// Environment-gradient penalty over `risks[e][t]`, differentiated with
/// respect to the routing rows `rows[t]` (and `heads[t]` for [`Penalty::Irm`]).
///
/// Gradients are recorded with `create_graph`, so the returned scalar can be
/// backpropagated into the encoders and the routing logits.
pub fn env_penalty<'t>(
    kind: Penalty,
    risks: &[Vec<Var<'t>>],
    rows: &[Var<'t>],
    heads: &[Vec<Var<'t>>],
) -> Result<Var<'t>> {
    let tape = rows.first().map(|r| r.tape()).ok_or(RegError::RiskLayout { expected: 1, got: 0 })?;
    if kind == Penalty::None {
        return Ok(tape.scalar(0.0));
    }
    if risks.is_empty() {
        return Err(RegError::NoEnvironments);
    }
    for env in risks {
        if env.len() != rows.len() {
            return Err(RegError::RiskLayout {
                expected: rows.len(),
                got: env.len(),
            });
        }
    }
    let mut total = tape.scalar(0.0);
    for (t, &row) in rows.iter().enumerate() {
        let mut wrt = vec![row];
        if kind == Penalty::Irm {
            wrt.extend(heads.get(t).into_iter().flatten().copied());
        }
        let grads: Vec<Vec<Var<'t>>> = risks
            .iter()
            .map(|env| {
                let g = tape.grad(env[t], &wrt, true)?;
                Ok(g.vars().expect("create_graph").to_vec())
            })
            .collect::<std::result::Result<_, TensorError>>()?;
        match kind {
            Penalty::GIrmNorm | Penalty::Irm => {
                for g in grads.iter().flatten() {
                    total = total.add(g.sq_norm()?)?;
                }
            }
            Penalty::GIrmVar => {
                let n_env = grads.len() as f64;
                let mut mean = grads[0][0];
                for g in &grads[1..] {
                    mean = mean.add(g[0])?;
                }
                let mean = mean.scale(1.0 / n_env)?;
                for g in &grads {
                    total = total.add(g[0].sub(mean)?.sq_norm()?.scale(1.0 / n_env)?)?;
                }
            }
            Penalty::None => unreachable!(),
        }
    }
    Ok(total)
}

/// Plain-value breakdown of one objective evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub task_risks: Vec<f64>,
    pub decor: f64,
    pub graph: f64,
    pub penalty: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        total_loss(&self.task_risks, self.decor, self.graph, self.penalty)
    }
}

/// `Σ_t R_t + L_decor + L_graph + penalty`, each term already weighted.
pub fn total_loss(task_risks: &[f64], decor: f64, graph: f64, penalty: f64) -> f64 {
    task_risks.iter().sum::<f64>() + decor + graph + penalty
}

/// Sum of scalar vars; `0` for an empty slice.
pub fn sum_vars<'t>(tape: &'t Tape, vars: &[Var<'t>]) -> Result<Var<'t>> {
    let mut total = tape.scalar(0.0);
    for v in vars {
        total = total.add(*v)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(tape: &Tape, v: Vec<f64>) -> Var<'_> {
        let n = v.len();
        tape.constant(Tensor::matrix(n, 1, v).unwrap())
    }

    #[test]
    fn perfectly_correlated_columns() {
        let tape = Tape::new();
        let a = col(&tape, vec![1.0, 2.0, 3.0, 4.0]);
        let b = col(&tape, vec![2.0, 4.0, 6.0, 8.0]);
        let c = col(&tape, vec![-1.0, -2.0, -3.0, -4.0]);
        let r = pearson_corr(a, b, VariancePolicy::default()).unwrap().item();
        assert!((r - 1.0).abs() < 1e-8);
        let r = pearson_corr(a, c, VariancePolicy::default()).unwrap().item();
        assert!((r + 1.0).abs() < 1e-8);
    }

    #[test]
    fn constant_column_floor_gives_zero_strict_fails() {
        let tape = Tape::new();
        let a = col(&tape, vec![1.0, 2.0, 3.0]);
        let k = col(&tape, vec![5.0, 5.0, 5.0]);
        let r = pearson_corr(a, k, VariancePolicy::default()).unwrap().item();
        assert_eq!(r, 0.0);
        let err = decorrelation_loss(&[a, k], 1.0, VariancePolicy::Strict).unwrap_err();
        assert!(matches!(err, RegError::DegenerateVariance { module: 1 }));
    }

    #[test]
    fn uniform_graph_has_closed_form() {
        let tape = Tape::new();
        let (t, k) = (3, 4);
        let a = tape.param(Tensor::full(t, k, 0.5));
        let g = graph_loss(a, 0.2, 5.0).unwrap();
        let expected = 0.2 * (t * k) as f64 / 2.0 - 5.0 * (k as f64).ln();
        assert!((g.value.item() - expected).abs() < 1e-12);
        assert!(!g.degenerate);
    }

    #[test]
    fn zero_graph_is_degenerate() {
        let tape = Tape::new();
        let a = tape.param(Tensor::zeros(2, 3));
        let g = graph_loss(a, 0.2, 5.0).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.value.item(), 0.0);
    }

    #[test]
    fn empty_column_contributes_no_entropy() {
        let tape = Tape::new();
        let a = tape.param(Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap());
        let g = graph_loss(a, 0.0, 1.0).unwrap();
        assert_eq!(g.value.item(), 0.0);
        let grad = tape.grad(g.value, &[a], false).unwrap();
        assert!(grad.values()[0].is_finite());
    }

    #[test]
    fn logistic_risk_at_zero_is_ln2() {
        let tape = Tape::new();
        let f = tape.param(Tensor::zeros(4, 1));
        let r = task_risk(TaskKind::Binary, f, &Labels::Binary(vec![1.0, -1.0, 1.0, 1.0])).unwrap();
        assert!((r.item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn label_mismatch_is_reported() {
        let tape = Tape::new();
        let f = tape.param(Tensor::zeros(3, 1));
        let r = task_risk(TaskKind::Binary, f, &Labels::Binary(vec![1.0]));
        assert!(matches!(r, Err(RegError::LabelCount { outputs: 3, labels: 1 })));
        let r = task_risk(TaskKind::Binary, f, &Labels::Class(vec![0, 1, 0]));
        assert!(matches!(r, Err(RegError::LabelKind(TaskKind::Binary))));
    }

    #[test]
    fn variance_penalty_vanishes_for_identical_envs() {
        let tape = Tape::new();
        let w = tape.param(Tensor::row(vec![0.3, -0.7]).unwrap());
        let x = tape.constant(Tensor::matrix(3, 2, vec![1., 2., -1., 0.5, 0.2, 0.1]).unwrap());
        let r1 = x.matmul(w.t().unwrap()).unwrap().square().unwrap().mean().unwrap();
        let r2 = x.matmul(w.t().unwrap()).unwrap().square().unwrap().mean().unwrap();
        let p = env_penalty(Penalty::GIrmVar, &[vec![r1], vec![r2]], &[w], &[]).unwrap();
        assert_eq!(p.item(), 0.0);
        let n = env_penalty(Penalty::GIrmNorm, &[vec![r1], vec![r2]], &[w], &[]).unwrap();
        assert!(n.item() > 0.0);
    }
}
