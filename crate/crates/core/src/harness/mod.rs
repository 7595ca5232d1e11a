//! Training loop, optimisers, run reports and the experiment drivers.

mod config;
mod experiments;
mod optim;
mod presets;
mod report;
mod train;

pub use config::{
    DatasetSpec, GirmVariant, Mode, OptimizerConfig, OptimizerKind, Selection, TrainConfig, BALANCE_GRID, DECOR_GRID,
    PENALTY_GRID, SPARSITY_GRID,
};
pub use experiments::{
    ablation_variants, run_ablation, run_many, run_table2, run_task_sweep, workers, write_ablation_csv,
    write_sweep_csv, write_table2_csv, AblationReport, AblationRow, SeedComparison, SweepPoint, SweepReport,
    Table2Report, Table2Row,
};
pub use optim::Optimizer;
pub use presets::desk_multisem;
pub use report::{mean_std, spearman, EpochRecord, RunReport, TaskEval};
pub use train::{
    compute_gradients, evaluate, fit, model_config, train, train_on, train_step, FitOutcome, StepConfig,
    StepGradients,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::model::{ModelError, ModularMtlModel};
use crate::regularizers::{LossParts, RegError};
use crate::tensor::{Tensor, TensorError};

/// State captured when a step produces a non-finite value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub loss: LossParts,
    pub param_norms: Vec<f64>,
    pub routing: Tensor,
    pub model_hash: String,
}

impl Diagnostic {
    pub fn new(model: &ModularMtlModel, loss: &LossParts) -> Self {
        Self {
            loss: loss.clone(),
            param_norms: model
                .params()
                .iter()
                .map(|p| p.data().iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect(),
            routing: model.routing_matrix(),
            model_hash: model.config_hash(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reg(#[from] RegError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error("non-finite loss or gradient")]
    NonFinite(Box<Diagnostic>),
    #[error("task risk requested on environment {0:?}; only the training slice may feed it")]
    NonTrainRisk(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
