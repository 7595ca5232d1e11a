use std::sync::Arc;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::config::{Mode, Selection, TrainConfig};
use super::optim::Optimizer;
use super::report::{EpochRecord, RunReport, TaskEval};
use super::{Diagnostic, HarnessError, Result};
use crate::analysis::{corr_heatmap, saliency_report, task_similarity, DEFAULT_SIMILARITY_THRESHOLD};
use crate::data::{split_environments, DatasetSplits, EnvironmentBatch};
use crate::model::{BoundModel, ModelConfig, ModularMtlModel};
use crate::regularizers::{
    decorrelation_loss, env_penalty, graph_loss, task_risk, LossParts, LossWeights, Penalty, VariancePolicy,
};
use crate::rng::{derive_seed, stream};
use crate::tensor::{Tape, Tensor, Var};

/// Objective settings for one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub weights: LossWeights,
    pub penalty: Penalty,
    pub policy: VariancePolicy,
    pub detach_heads: bool,
}

impl StepConfig {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        let (weights, penalty) = cfg.effective_objective();
        Self {
            weights,
            penalty,
            policy: cfg.variance_policy,
            detach_heads: cfg.detach_heads,
        }
    }

    fn penalty_active(&self) -> bool {
        self.penalty != Penalty::None && self.weights.penalty > 0.0
    }
}

/// Gradients of one step, split by source, in [`ModularMtlModel::params`]
/// order.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub main: Vec<Tensor>,
    pub penalty: Vec<Tensor>,
}

impl StepGradients {
    pub fn total(&self) -> Vec<Tensor> {
        self.main
            .iter()
            .zip(&self.penalty)
            .map(|(a, b)| {
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                Tensor::new(a.shape().to_vec(), data).expect("same shape")
            })
            .collect()
    }
}

/// Module outputs per task, computing each distinct input tensor once.
fn encode_tasks<'t>(bound: &BoundModel<'t>, tape: &'t Tape, batch: &EnvironmentBatch) -> Result<Vec<Arc<Vec<Var<'t>>>>> {
    let mut seen: Vec<(*const Tensor, Arc<Vec<Var<'t>>>)> = Vec::new();
    let mut out = Vec::with_capacity(batch.num_tasks());
    for x in &batch.inputs {
        let key = Arc::as_ptr(x);
        if let Some((_, zs)) = seen.iter().find(|(k, _)| *k == key) {
            out.push(zs.clone());
            continue;
        }
        let zs = Arc::new(bound.encode(tape.constant((**x).clone()))?);
        seen.push((key, zs.clone()));
        out.push(zs);
    }
    Ok(out)
}

fn env_risks<'t>(
    model: &ModularMtlModel,
    bound: &BoundModel<'t>,
    tape: &'t Tape,
    batch: &EnvironmentBatch,
) -> Result<(Vec<Var<'t>>, Vec<Arc<Vec<Var<'t>>>>)> {
    let zs = encode_tasks(bound, tape, batch)?;
    let risks = (0..model.num_tasks())
        .map(|t| {
            let out = bound.predict_from(t, &zs[t])?;
            Ok(task_risk(model.heads.kinds[t], out, &batch.labels[t])?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((risks, zs))
}

/// Loss value and gradients for one step.
///
/// The main objective (task risks on `batch`, per-task decorrelation, graph
/// regulariser) is differentiated with respect to every parameter. The
/// heads are then detached and the environment penalty over `penalty_envs`
/// is differentiated with respect to the routing logits and encoders.
pub fn compute_gradients(
    model: &ModularMtlModel,
    batch: &EnvironmentBatch,
    penalty_envs: &[EnvironmentBatch],
    sc: &StepConfig,
) -> Result<(LossParts, StepGradients)> {
    if batch.env_id != 0 {
        return Err(HarnessError::NonTrainRisk(batch.name.clone()));
    }
    let tape = Tape::new();
    let bound = model.bind(&tape)?;
    let params = bound.params();
    let (risks, zs) = env_risks(model, &bound, &tape, batch)?;
    let mut main = tape.scalar(0.0);
    for r in &risks {
        main = main.add(*r)?;
    }
    let mut parts = LossParts {
        task_risks: risks.iter().map(|r| r.item()).collect(),
        ..LossParts::default()
    };
    if sc.weights.decor > 0.0 && model.num_modules() > 1 {
        let mut decor = tape.scalar(0.0);
        for z in &zs {
            decor = decor.add(decorrelation_loss(z, sc.weights.decor, sc.policy)?)?;
        }
        parts.decor = decor.item();
        main = main.add(decor)?;
    }
    if sc.weights.sparsity > 0.0 || sc.weights.balance > 0.0 {
        let g = graph_loss(bound.routing, sc.weights.sparsity, sc.weights.balance)?;
        parts.graph = g.value.item();
        main = main.add(g.value)?;
    }
    let main_grads = tape.grad(main, &params, false)?.into_values();

    let mut penalty_grads: Vec<Tensor> = main_grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
    if sc.penalty_active() {
        let detach = sc.detach_heads && sc.penalty != Penalty::Irm;
        if detach {
            for v in bound.all_head_params() {
                tape.detach(v)?;
            }
        }
        let mut per_env = Vec::with_capacity(penalty_envs.len());
        for env in penalty_envs {
            per_env.push(env_risks(model, &bound, &tape, env)?.0);
        }
        let heads: Vec<Vec<Var<'_>>> = (0..model.num_tasks()).map(|t| bound.head_params(t)).collect();
        let p = env_penalty(sc.penalty, &per_env, &bound.rows, &heads)?;
        parts.penalty = sc.weights.penalty * p.item();
        let scaled = p.scale(sc.weights.penalty)?;
        penalty_grads = tape.grad(scaled, &params, false)?.into_values();
    }
    let objective = parts.total();
    if !objective.is_finite() {
        return Err(HarnessError::NonFinite(Box::new(Diagnostic::new(model, &parts))));
    }
    Ok((
        parts,
        StepGradients {
            main: main_grads,
            penalty: penalty_grads,
        },
    ))
}

/// One optimisation step on `batch` (rows of the training environment).
pub fn train_step(
    model: &mut ModularMtlModel,
    opt: &mut Optimizer,
    batch: &EnvironmentBatch,
    penalty_envs: &[EnvironmentBatch],
    sc: &StepConfig,
) -> Result<LossParts> {
    let (parts, grads) = compute_gradients(model, batch, penalty_envs, sc)?;
    let total = grads.total();
    if total.iter().any(|g| !g.is_finite()) {
        return Err(HarnessError::NonFinite(Box::new(Diagnostic::new(model, &parts))));
    }
    opt.update(model.params_mut(), &total);
    Ok(parts)
}

/// Per-task risk and accuracy of `model` on `batch`.
pub fn evaluate(model: &ModularMtlModel, batch: &EnvironmentBatch) -> Result<Vec<TaskEval>> {
    let tape = Tape::new();
    let bound = model.bind(&tape)?;
    let zs = encode_tasks(&bound, &tape, batch)?;
    (0..model.num_tasks())
        .map(|t| {
            let out = bound.predict_from(t, &zs[t])?;
            let risk = task_risk(model.heads.kinds[t], out, &batch.labels[t])?.item();
            let acc = batch.labels[t].accuracy(&out.value());
            Ok(TaskEval { risk, acc })
        })
        .collect()
}

fn selection_score(evals: &[TaskEval]) -> f64 {
    let accs: Vec<f64> = evals.iter().filter_map(|e| e.acc).collect();
    if accs.len() == evals.len() {
        accs.iter().sum::<f64>() / accs.len() as f64
    } else {
        -evals.iter().map(|e| e.risk).sum::<f64>()
    }
}

fn sample_rows(batch: &EnvironmentBatch, rows: usize, rng: &mut impl Rng) -> EnvironmentBatch {
    if rows >= batch.len() {
        return batch.clone();
    }
    let mut idx = index::sample(rng, batch.len(), rows).into_vec();
    idx.sort_unstable();
    batch.subset(&idx)
}

/// A trained model with its training trace.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: ModularMtlModel,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub epochs_run: usize,
}

pub fn model_config(cfg: &TrainConfig, data: &DatasetSplits, tasks: &[usize]) -> ModelConfig {
    let kinds = cfg.dataset.task_kinds();
    ModelConfig {
        input_dim: data.train.inputs[tasks[0]].cols(),
        num_modules: cfg.num_modules,
        repr_dim: cfg.repr_dim,
        encoder_hidden: cfg.encoder_hidden.clone(),
        encoder_activation: cfg.activation(),
        head_hidden: cfg.head_hidden.clone(),
        head_activation: cfg.activation(),
        tasks: tasks.iter().map(|&t| kinds[t]).collect(),
    }
}

/// Train one model on `data` (already restricted to its tasks).
pub fn fit(cfg: &TrainConfig, model_cfg: ModelConfig, data: &DatasetSplits, tag: &str) -> Result<FitOutcome> {
    let mut model = ModularMtlModel::new(model_cfg, derive_seed(cfg.seed, &format!("{tag}/init")))?;
    let mut opt = Optimizer::new(cfg.optimizer);
    let sc = StepConfig::from_config(cfg);
    let envs = split_environments(&data.train, &data.valid)?;
    let mut rng = stream(cfg.seed, &format!("{tag}/batches"));
    let n = envs[0].len();
    let batch_size = cfg.batch_size.unwrap_or(n).min(n);

    let mut history = vec![EpochRecord {
        epoch: 0,
        train: evaluate(&model, &envs[0])?,
        valid: evaluate(&model, &envs[1])?,
        objective: None,
    }];
    let mut best_score = selection_score(&history[0].valid);
    let mut best = (0, model.clone());
    let mut best_train = f64::INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        let mut objective = 0.0;
        let mut steps = 0;
        if batch_size < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch_size) {
            let batch = if batch_size < n {
                let mut idx = chunk.to_vec();
                idx.sort_unstable();
                envs[0].subset(&idx)
            } else {
                envs[0].clone()
            };
            let penalty_envs: Vec<EnvironmentBatch> = if sc.penalty_active() {
                match cfg.penalty_rows {
                    Some(r) => envs.iter().map(|e| sample_rows(e, r, &mut rng)).collect(),
                    None => envs.clone(),
                }
            } else {
                Vec::new()
            };
            let parts = train_step(&mut model, &mut opt, &batch, &penalty_envs, &sc)?;
            objective += parts.total();
            steps += 1;
        }
        let record = EpochRecord {
            epoch,
            train: evaluate(&model, &envs[0])?,
            valid: evaluate(&model, &envs[1])?,
            objective: Some(objective / steps as f64),
        };
        let score = selection_score(&record.valid);
        if score > best_score {
            best_score = score;
            best = (epoch, model.clone());
        }
        let train_risk: f64 = record.train.iter().map(|e| e.risk).sum();
        if train_risk < best_train * (1.0 - cfg.min_delta) {
            best_train = train_risk;
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(record);
        if stale >= cfg.patience {
            break;
        }
    }
    let epochs_run = history.len() - 1;
    let (selected_epoch, model) = match cfg.selection {
        Selection::Last => (epochs_run, model),
        Selection::BestValid => best,
    };
    Ok(FitOutcome {
        model,
        history,
        selected_epoch,
        epochs_run,
    })
}

/// Generate the dataset and train according to `cfg.mode`.
pub fn train(cfg: &TrainConfig) -> Result<RunReport> {
    let data = cfg.dataset.generate()?;
    Ok(train_on(cfg, &data)?.0)
}

/// Train on a given dataset, returning the report and the trained models
/// (one per task for STL).
pub fn train_on(cfg: &TrainConfig, data: &DatasetSplits) -> Result<(RunReport, Vec<ModularMtlModel>)> {
    cfg.validate()?;
    let start = Instant::now();
    let t_count = data.num_tasks();
    let groups: Vec<Vec<usize>> = match cfg.mode {
        Mode::Stl => (0..t_count).map(|t| vec![t]).collect(),
        Mode::MtlVanilla | Mode::Mtcrl => vec![(0..t_count).collect()],
    };
    let mut fits = Vec::new();
    for (g, tasks) in groups.iter().enumerate() {
        let sub = if groups.len() == 1 { data.clone() } else { data.select_tasks(tasks) };
        let tag = format!("{}/{g}", cfg.mode.name());
        fits.push(fit(cfg, model_config(cfg, data, tasks), &sub, &tag)?);
    }

    let mut report = RunReport {
        dataset: cfg.dataset.name().into(),
        mode: cfg.mode,
        seed: cfg.seed,
        config_hash: crate::model::config_hash(cfg),
        epochs_run: fits.iter().map(|f| f.epochs_run).collect(),
        selected_epoch: fits.iter().map(|f| f.selected_epoch).collect(),
        history: fits.iter().map(|f| f.history.clone()).collect(),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        rho_spur: Vec::new(),
        routing: Tensor::zeros(1, 1),
        similarity: task_similarity(&Tensor::zeros(1, 1), DEFAULT_SIMILARITY_THRESHOLD),
        max_cross_module_corr: None,
        wall_clock_secs: 0.0,
    };
    let mut routing_rows = Vec::new();
    let mut max_corr: Option<f64> = None;
    for (f, tasks) in fits.iter().zip(&groups) {
        let sub = if groups.len() == 1 { data.clone() } else { data.select_tasks(tasks) };
        report.train.extend(evaluate(&f.model, &sub.train)?);
        report.valid.extend(evaluate(&f.model, &sub.valid)?);
        report.test.extend(evaluate(&f.model, &sub.test)?);
        report.rho_spur.extend(saliency_report(&f.model, &sub.test)?.rho_spur);
        let a = f.model.routing_matrix();
        for t in 0..a.rows() {
            routing_rows.push(a.row_slice(t).to_vec());
        }
        if f.model.num_modules() > 1 {
            let zs = f.model.encode(&sub.train.inputs[0])?;
            let c = corr_heatmap(&zs)?.max_cross_block();
            max_corr = Some(max_corr.map_or(c, |m| m.max(c)));
        }
    }
    report.routing = Tensor::from_rows(&routing_rows)?;
    report.similarity = task_similarity(&report.routing, DEFAULT_SIMILARITY_THRESHOLD);
    report.max_cross_module_corr = max_corr;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((report, fits.into_iter().map(|f| f.model).collect()))
}
