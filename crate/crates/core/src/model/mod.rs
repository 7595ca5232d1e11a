//! Modular multi-task network: `K` encoder modules shared by all tasks, a
//! sigmoid-parameterised task-to-module routing matrix and one predictor head
//! per task.
//!
//! Task `t` sees `f_t(Σ_i A[t,i] · Φ_i(x))` with `A = sigmoid(θ)`.

mod mlp;

pub use mlp::{Activation, BoundMlp, Linear, Mlp};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown task {task} (model has {tasks} tasks)")]
    UnknownTask { task: usize, tasks: usize },
    #[error("input has {got} features, encoders expect {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("routing row has {got} weights for {expected} modules")]
    RoutingLength { expected: usize, got: usize },
    #[error("invalid model config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Output type and loss of one task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Scalar logit, labels in `{-1, +1}`, logistic loss.
    Binary,
    /// Class logits, softmax cross-entropy.
    Multiclass { classes: usize },
    /// Scalar output, squared error.
    Regression,
}

impl TaskKind {
    pub fn output_dim(&self) -> usize {
        match self {
            TaskKind::Multiclass { classes } => *classes,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Number of encoder modules `K`.
    pub num_modules: usize,
    /// Total representation size `d`; each module emits `d / K` features.
    pub repr_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub encoder_activation: Activation,
    pub head_hidden: Vec<usize>,
    pub head_activation: Activation,
    pub tasks: Vec<TaskKind>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_modules == 0 {
            return Err(ModelError::Config("need at least one module".into()));
        }
        if self.repr_dim == 0 || self.repr_dim % self.num_modules != 0 {
            return Err(ModelError::Config(format!(
                "repr_dim {} is not divisible by {} modules",
                self.repr_dim, self.num_modules
            )));
        }
        if self.tasks.is_empty() {
            return Err(ModelError::Config("need at least one task".into()));
        }
        if self.input_dim == 0 || self.encoder_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn module_dim(&self) -> usize {
        self.repr_dim / self.num_modules
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// The `K` shared encoders. All share one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleBank {
    pub encoders: Vec<Mlp>,
}

/// `θ ∈ R^{T×K}`; the routing weights are `sigmoid(θ)`, recomputed on access.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingGraph {
    pub theta: Tensor,
}

impl RoutingGraph {
    pub fn weights(&self) -> Tensor {
        routing_weights(&self.theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskHeads {
    pub heads: Vec<Mlp>,
    pub kinds: Vec<TaskKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModularMtlModel {
    pub config: ModelConfig,
    pub bank: ModuleBank,
    pub routing: RoutingGraph,
    pub heads: TaskHeads,
}

/// Elementwise sigmoid of the routing logits.
pub fn routing_weights(theta: &Tensor) -> Tensor {
    theta.map(crate::tensor::sigmoid_scalar)
}

impl ModularMtlModel {
    /// Uniform `±1/sqrt(fan_in)` weights and biases; `θ = 0` so every routing
    /// weight starts at 0.5.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let module_dim = config.module_dim();
        let mut widths = vec![config.input_dim];
        widths.extend(&config.encoder_hidden);
        widths.push(module_dim);
        let encoders = (0..config.num_modules)
            .map(|_| Mlp::init(&widths, config.encoder_activation, true, &mut rng))
            .collect();
        let heads = config
            .tasks
            .iter()
            .map(|kind| {
                let mut w = vec![module_dim];
                w.extend(&config.head_hidden);
                w.push(kind.output_dim());
                Mlp::init(&w, config.head_activation, false, &mut rng)
            })
            .collect();
        Ok(Self {
            bank: ModuleBank { encoders },
            routing: RoutingGraph {
                theta: Tensor::zeros(config.num_tasks(), config.num_modules),
            },
            heads: TaskHeads {
                heads,
                kinds: config.tasks.clone(),
            },
            config,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.config.num_tasks()
    }

    pub fn num_modules(&self) -> usize {
        self.config.num_modules
    }

    /// Current routing matrix `A = sigmoid(θ)`.
    pub fn routing_matrix(&self) -> Tensor {
        self.routing.weights()
    }

    /// Every parameter tensor in binding order: encoder layers, `θ`, heads.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for e in &self.bank.encoders {
            out.extend(e.params());
        }
        out.push(&self.routing.theta);
        for h in &self.heads.heads {
            out.extend(h.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for e in &mut self.bank.encoders {
            out.extend(e.params_mut());
        }
        out.push(&mut self.routing.theta);
        for h in &mut self.heads.heads {
            out.extend(h.params_mut());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Record every parameter on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<BoundModel<'t>> {
        let encoders: Vec<BoundMlp<'t>> = self.bank.encoders.iter().map(|e| e.bind(tape)).collect();
        let theta = tape.param(self.routing.theta.clone());
        let routing = theta.sigmoid()?;
        let rows = (0..self.num_tasks())
            .map(|t| routing.row(t))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let heads = self.heads.heads.iter().map(|h| h.bind(tape)).collect();
        Ok(BoundModel {
            input_dim: self.config.input_dim,
            kinds: self.heads.kinds.clone(),
            encoders,
            theta,
            routing,
            rows,
            heads,
        })
    }

    /// Forward pass for one task outside of training.
    pub fn predict(&self, task: usize, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape)?;
        let xv = tape.constant(x.clone());
        Ok(bound.predict(task, xv)?.to_tensor())
    }

    /// Module outputs `Z_i = Φ_i(x)` as plain tensors.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let bound = self.bind(&tape)?;
        let zs = bound.encode(tape.constant(x.clone()))?;
        Ok(zs.iter().map(|z| z.to_tensor()).collect())
    }

    /// Hex SHA-256 of the config's JSON form.
    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }
}

pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serialises");
    hex::encode(Sha256::digest(&json))
}

/// A model whose parameters are recorded on a tape.
pub struct BoundModel<'t> {
    input_dim: usize,
    kinds: Vec<TaskKind>,
    pub encoders: Vec<BoundMlp<'t>>,
    pub theta: Var<'t>,
    /// `A = sigmoid(θ)`.
    pub routing: Var<'t>,
    /// Row `t` of `A` as its own node, so gradients can be taken per task.
    pub rows: Vec<Var<'t>>,
    pub heads: Vec<BoundMlp<'t>>,
}

impl<'t> BoundModel<'t> {
    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn task_kind(&self, task: usize) -> Result<TaskKind> {
        self.kinds.get(task).copied().ok_or(ModelError::UnknownTask {
            task,
            tasks: self.kinds.len(),
        })
    }

    fn check_task(&self, task: usize) -> Result<()> {
        self.task_kind(task).map(|_| ())
    }

    pub fn encode(&self, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let (_, cols) = x.shape();
        if cols != self.input_dim {
            return Err(ModelError::InputDim {
                expected: self.input_dim,
                got: cols,
            });
        }
        Ok(self.encoders.iter().map(|e| e.forward(x)).collect::<std::result::Result<_, _>>()?)
    }

    pub fn route(&self, task: usize, zs: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_task(task)?;
        route(self.rows[task], zs)
    }

    pub fn head(&self, task: usize, fused: Var<'t>) -> Result<Var<'t>> {
        self.check_task(task)?;
        Ok(self.heads[task].forward(fused)?)
    }

    /// `f_t(Σ_i A[t,i] Φ_i(x))`.
    pub fn predict(&self, task: usize, x: Var<'t>) -> Result<Var<'t>> {
        self.check_task(task)?;
        let zs = self.encode(x)?;
        self.predict_from(task, &zs)
    }

    /// Prediction from precomputed module outputs.
    pub fn predict_from(&self, task: usize, zs: &[Var<'t>]) -> Result<Var<'t>> {
        let fused = self.route(task, zs)?;
        self.head(task, fused)
    }

    pub fn encoder_params(&self) -> Vec<Var<'t>> {
        self.encoders.iter().flat_map(|e| e.params()).collect()
    }

    pub fn head_params(&self, task: usize) -> Vec<Var<'t>> {
        self.heads[task].params()
    }

    pub fn all_head_params(&self) -> Vec<Var<'t>> {
        self.heads.iter().flat_map(|h| h.params()).collect()
    }

    /// Parameters in the same order as [`ModularMtlModel::params`].
    pub fn params(&self) -> Vec<Var<'t>> {
        let mut out = self.encoder_params();
        out.push(self.theta);
        out.extend(self.all_head_params());
        out
    }
}

/// `Σ_i a_row[i] · Z_i` for a `1×K` weight row.
pub fn route<'t>(a_row: Var<'t>, zs: &[Var<'t>]) -> Result<Var<'t>> {
    let (r, k) = a_row.shape();
    if r != 1 || k != zs.len() || zs.is_empty() {
        return Err(ModelError::RoutingLength {
            expected: zs.len(),
            got: if r == 1 { k } else { r * k },
        });
    }
    let mut fused: Option<Var<'t>> = None;
    for (i, z) in zs.iter().enumerate() {
        let term = z.mul(a_row.slice(0, i, 1, 1)?)?;
        fused = Some(match fused {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(fused.expect("zs is non-empty"))
}
