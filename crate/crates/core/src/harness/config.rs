use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::data::{compose_multimnist, gen_multisem, DatasetSplits, MnistPairSpec, SemSpec};
use crate::model::{Activation, TaskKind};
use crate::regularizers::{LossWeights, Penalty, VariancePolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    MultiSem(SemSpec),
    MultiMnist(MnistPairSpec),
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::MultiSem(_) => "multi-sem",
            DatasetSpec::MultiMnist(_) => "multi-mnist",
        }
    }

    pub fn generate(&self) -> Result<DatasetSplits> {
        Ok(match self {
            DatasetSpec::MultiSem(s) => gen_multisem(s)?,
            DatasetSpec::MultiMnist(s) => compose_multimnist(s)?,
        })
    }

    pub fn task_kinds(&self) -> Vec<TaskKind> {
        match self {
            DatasetSpec::MultiSem(s) => vec![TaskKind::Binary; s.tasks],
            DatasetSpec::MultiMnist(_) => MnistPairSpec::task_kinds().to_vec(),
        }
    }

    pub fn default_activation(&self) -> Activation {
        match self {
            DatasetSpec::MultiSem(_) => Activation::Tanh,
            DatasetSpec::MultiMnist(_) => Activation::Relu,
        }
    }

    /// Reseed the generator (the pair split for Multi-MNIST).
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            DatasetSpec::MultiSem(s) => s.seed = seed,
            DatasetSpec::MultiMnist(s) => s.split_seed = seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One independent model per task.
    Stl,
    /// Shared modules and routing, task risks only.
    MtlVanilla,
    /// Shared modules with decorrelation, graph and invariance regularisers.
    Mtcrl,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Stl => "stl",
            Mode::MtlVanilla => "mtl-vanilla",
            Mode::Mtcrl => "mtcrl",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GirmVariant {
    None,
    Norm,
    #[default]
    Var,
    /// Plain invariance penalty that also differentiates the heads.
    Irm,
}

impl GirmVariant {
    pub fn penalty(&self) -> Penalty {
        match self {
            GirmVariant::None => Penalty::None,
            GirmVariant::Norm => Penalty::GIrmNorm,
            GirmVariant::Var => Penalty::GIrmVar,
            GirmVariant::Irm => Penalty::Irm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Heavy-ball momentum for sgd.
    pub momentum: f64,
    /// Decoupled weight decay, applied as `x -= lr * weight_decay * x`.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

/// Which epoch's parameters a run reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Last,
    /// Highest mean validation accuracy (lowest validation risk for regression).
    #[default]
    BestValid,
}

/// Everything that determines a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub mode: Mode,
    pub num_modules: usize,
    pub repr_dim: usize,
    pub encoder_hidden: Vec<usize>,
    /// Defaults to tanh for Multi-SEM and relu for Multi-MNIST.
    pub encoder_activation: Option<Activation>,
    pub head_hidden: Vec<usize>,
    pub lambdas: LossWeights,
    pub girm_variant: GirmVariant,
    pub variance_policy: VariancePolicy,
    pub optimizer: OptimizerConfig,
    /// Upper bound on epochs.
    pub epochs: usize,
    /// Stop after this many epochs without training-objective improvement.
    pub patience: usize,
    /// Relative improvement that resets the patience counter.
    pub min_delta: f64,
    /// Rows per step; `None` trains full batch.
    pub batch_size: Option<usize>,
    /// Rows per environment for the invariance penalty; `None` uses the full
    /// train and valid slices.
    pub penalty_rows: Option<usize>,
    pub selection: Selection,
    /// Keep head parameters out of the invariance-penalty gradient.
    pub detach_heads: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::MultiSem(SemSpec::default()),
            mode: Mode::Mtcrl,
            num_modules: 8,
            repr_dim: 128,
            encoder_hidden: vec![64],
            encoder_activation: None,
            head_hidden: Vec::new(),
            lambdas: LossWeights::default(),
            girm_variant: GirmVariant::Var,
            variance_policy: VariancePolicy::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 200,
            patience: 10,
            min_delta: 1e-4,
            batch_size: Some(128),
            penalty_rows: None,
            selection: Selection::BestValid,
            detach_heads: true,
            seed: 0,
        }
    }
}

/// Search ranges for the four loss weights.
pub const SPARSITY_GRID: [f64; 6] = [0.0, 0.1, 0.2, 0.5, 1.0, 2.0];
pub const BALANCE_GRID: [f64; 6] = [0.0, 0.2, 0.5, 1.0, 2.0, 5.0];
pub const DECOR_GRID: [f64; 6] = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0];
pub const PENALTY_GRID: [f64; 6] = [0.0, 5.0, 10.0, 20.0, 50.0, 100.0];

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.num_modules == 0 || self.repr_dim == 0 || self.repr_dim % self.num_modules != 0 {
            return bad("repr_dim must be a positive multiple of num_modules");
        }
        if self.batch_size == Some(0) || self.penalty_rows == Some(0) {
            return bad("batch_size and penalty_rows must be positive when set");
        }
        if !(self.optimizer.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.optimizer.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        let l = self.lambdas;
        if [l.sparsity, l.balance, l.decor, l.penalty].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }

    /// Same config with both the dataset and the training seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.dataset.set_seed(seed);
        c
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn activation(&self) -> Activation {
        self.encoder_activation.unwrap_or_else(|| self.dataset.default_activation())
    }

    /// Loss weights and penalty actually applied in this mode.
    pub fn effective_objective(&self) -> (LossWeights, Penalty) {
        match self.mode {
            Mode::Mtcrl => (self.lambdas, self.girm_variant.penalty()),
            Mode::Stl | Mode::MtlVanilla => (
                LossWeights {
                    sparsity: 0.0,
                    balance: 0.0,
                    decor: 0.0,
                    penalty: 0.0,
                },
                Penalty::None,
            ),
        }
    }
}
