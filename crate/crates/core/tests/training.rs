use mtcrl::data::tag_environments;
use mtcrl::harness::{
    compute_gradients, desk_multisem, model_config, train, HarnessError, Mode, StepConfig, TrainConfig,
};
use mtcrl::model::ModularMtlModel;
use mtcrl::regularizers::{LossWeights, Penalty, VariancePolicy};

fn short(mode: Mode) -> TrainConfig {
    let mut cfg = desk_multisem().with_mode(mode);
    cfg.epochs = 6;
    cfg.patience = 100;
    cfg
}

fn penalty_step(penalty: Penalty) -> StepConfig {
    StepConfig {
        weights: LossWeights {
            sparsity: 0.0,
            balance: 0.0,
            decor: 0.0,
            penalty: 1.0,
        },
        penalty,
        policy: VariancePolicy::default(),
        detach_heads: true,
    }
}

#[test]
fn objective_falls_over_training() {
    let report = train(&short(Mode::MtlVanilla)).unwrap();
    let objs: Vec<f64> = report.history[0].iter().filter_map(|r| r.objective).collect();
    assert!(objs.len() >= 2);
    assert!(objs.last().unwrap() < objs.first().unwrap(), "{objs:?}");
    assert!(report.acc_train() > 0.8);
}

#[test]
fn stl_keeps_one_history_per_task() {
    let report = train(&short(Mode::Stl)).unwrap();
    assert_eq!(report.history.len(), 2);
    assert_eq!(report.rho_spur.len(), 2);
    assert!(report.max_cross_module_corr.is_some());
}

#[test]
fn only_the_plain_penalty_reaches_the_heads() {
    let cfg = desk_multisem();
    let data = cfg.dataset.generate().unwrap();
    let model = ModularMtlModel::new(model_config(&cfg, &data, &[0, 1]), 3).unwrap();
    let idx: Vec<usize> = (0..80).collect();
    let batch = data.train.subset(&idx);
    let envs = tag_environments(vec![batch.clone(), data.valid.subset(&idx)]).unwrap();
    let head_params: usize = model.heads.heads.iter().map(|h| h.params().len()).sum();
    let head_mass = |p| {
        let g = compute_gradients(&model, &batch, &envs, &penalty_step(p)).unwrap().1.penalty;
        g[g.len() - head_params..].iter().flat_map(|t| t.data().to_vec()).map(f64::abs).sum::<f64>()
    };
    assert_eq!(head_mass(Penalty::GIrmNorm), 0.0);
    assert_eq!(head_mass(Penalty::GIrmVar), 0.0);
    assert!(head_mass(Penalty::Irm) > 0.0);
}

#[test]
fn task_risk_refuses_other_environments() {
    let cfg = desk_multisem();
    let data = cfg.dataset.generate().unwrap();
    let model = ModularMtlModel::new(model_config(&cfg, &data, &[0, 1]), 3).unwrap();
    let envs = tag_environments(vec![data.train.clone(), data.valid.clone()]).unwrap();
    let err = compute_gradients(&model, &envs[1], &envs, &penalty_step(Penalty::GIrmVar)).unwrap_err();
    assert!(matches!(err, HarnessError::NonTrainRisk(_)));
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(matches!(TrainConfig::from_json(r#"{"epochz": 3}"#), Err(HarnessError::Config(_))));
    let mut cfg = desk_multisem();
    cfg.lambdas.decor = -1.0;
    assert!(matches!(train(&cfg), Err(HarnessError::Config(_))));
    let round = TrainConfig::from_json(&desk_multisem().to_json()).unwrap();
    assert_eq!(round, desk_multisem());
}
