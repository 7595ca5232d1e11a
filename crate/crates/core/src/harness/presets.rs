use super::config::{DatasetSpec, OptimizerConfig, TrainConfig};
use crate::data::{SemSpec, SplitParams};

/// Multi-SEM at a size that trains in seconds on one core.
pub fn desk_multisem() -> TrainConfig {
    TrainConfig {
        dataset: DatasetSpec::MultiSem(SemSpec {
            mu_radius: 1.5,
            train: SplitParams { n: 1000, m_c: 0.9 },
            valid: SplitParams { n: 500, m_c: 0.7 },
            test: SplitParams { n: 1000, m_c: 0.1 },
            ..SemSpec::default()
        }),
        num_modules: 8,
        repr_dim: 32,
        encoder_hidden: vec![32],
        optimizer: OptimizerConfig {
            lr: 0.01,
            ..OptimizerConfig::default()
        },
        epochs: 60,
        batch_size: Some(100),
        penalty_rows: Some(250),
        ..TrainConfig::default()
    }
}
