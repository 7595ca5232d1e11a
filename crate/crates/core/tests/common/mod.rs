#![allow(dead_code)]

use mtcrl::model::route;
use mtcrl::regularizers::{decorrelation_loss, env_penalty, graph_loss, pearson_corr, task_risk, Penalty, VariancePolicy};
use mtcrl::model::TaskKind;
use mtcrl::data::Labels;
use mtcrl::tensor::{finite_diff_check, DiffOrder, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink or pole there.
pub fn away_from_zero(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let mut t = uniform(rows, cols, 0.2, 2.0, rng);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Contract any output with a fixed random weight so every entry matters.
fn weighted<'t>(out: Var<'t>, tape: &'t Tape, w: &Tensor) -> Result<Var<'t>, TensorError> {
    let (r, c) = out.shape();
    let w = Tensor::matrix(r, c, w.data()[..r * c].to_vec())?;
    out.mul(tape.constant(w))?.sum()
}

pub const OP_NAMES: [&str; 33] = [
    "add", "sub", "mul", "div", "matmul", "neg", "scale", "shift", "t", "sigmoid", "tanh", "relu", "exp", "ln",
    "sqrt", "square", "abs", "softplus", "softmax", "sum", "sum_axis", "mean", "mean_axis", "expand", "l1_norm",
    "sq_norm", "slice", "row", "col", "pad", "concat", "softmax_cross_entropy", "route",
];

/// Largest relative error between tape and finite-difference gradients for
/// one random instance of op `OP_NAMES[kind]`.
pub fn op_case(kind: usize, seed: u64) -> Result<f64, TensorError> {
    let mut g = rng(seed);
    let (r, c) = (g.random_range(1..4), g.random_range(1..4));
    let w = uniform(8, 8, -1.5, 1.5, &mut g);
    let x = uniform(r, c, -1.5, 1.5, &mut g);
    let y = uniform(r, c, -1.5, 1.5, &mut g);
    let name = OP_NAMES[kind];
    let check = |params: Vec<Tensor>, f: &dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>| {
        finite_diff_check(|tape, v| f(tape, v), &params, FD_STEP, DiffOrder::First)
    };
    let wr = &w;
    match name {
        "add" => check(vec![x, y], &|t, v| weighted(v[0].add(v[1])?, t, wr)),
        "sub" => check(vec![x, y], &|t, v| weighted(v[0].sub(v[1])?, t, wr)),
        "mul" => check(vec![x, y], &|t, v| weighted(v[0].mul(v[1])?, t, wr)),
        "div" => check(vec![x, away_from_zero(r, c, &mut g)], &|t, v| weighted(v[0].div(v[1])?, t, wr)),
        "matmul" => {
            let k = g.random_range(1..4);
            check(vec![x, uniform(c, k, -1.5, 1.5, &mut g)], &|t, v| weighted(v[0].matmul(v[1])?, t, wr))
        }
        "neg" => check(vec![x], &|t, v| weighted(v[0].neg()?, t, wr)),
        "scale" => check(vec![x], &|t, v| weighted(v[0].scale(-2.5)?, t, wr)),
        "shift" => check(vec![x], &|t, v| weighted(v[0].shift(0.7)?.square()?, t, wr)),
        "t" => check(vec![x], &|t, v| weighted(v[0].t()?, t, wr)),
        "sigmoid" => check(vec![x], &|t, v| weighted(v[0].sigmoid()?, t, wr)),
        "tanh" => check(vec![x], &|t, v| weighted(v[0].tanh()?, t, wr)),
        "relu" => check(vec![away_from_zero(r, c, &mut g)], &|t, v| weighted(v[0].relu()?, t, wr)),
        "exp" => check(vec![x], &|t, v| weighted(v[0].exp()?, t, wr)),
        "ln" => check(vec![uniform(r, c, 0.3, 3.0, &mut g)], &|t, v| weighted(v[0].ln()?, t, wr)),
        "sqrt" => check(vec![uniform(r, c, 0.3, 3.0, &mut g)], &|t, v| weighted(v[0].sqrt()?, t, wr)),
        "square" => check(vec![x], &|t, v| weighted(v[0].square()?, t, wr)),
        "abs" => check(vec![away_from_zero(r, c, &mut g)], &|t, v| weighted(v[0].abs()?, t, wr)),
        "softplus" => check(vec![x], &|t, v| weighted(v[0].softplus()?, t, wr)),
        "softmax" => check(vec![x], &|t, v| weighted(v[0].softmax()?, t, wr)),
        "sum" => check(vec![x], &|_, v| v[0].square()?.sum()),
        "sum_axis" => {
            let axis = g.random_range(0..2);
            check(vec![x], &move |t, v| weighted(v[0].sum_axis(axis)?, t, wr))
        }
        "mean" => check(vec![x], &|_, v| v[0].exp()?.mean()),
        "mean_axis" => {
            let axis = g.random_range(0..2);
            check(vec![x], &move |t, v| weighted(v[0].mean_axis(axis)?, t, wr))
        }
        "expand" => {
            let row = uniform(1, c, -1.5, 1.5, &mut g);
            check(vec![row], &move |t, v| weighted(v[0].expand(r, c)?, t, wr))
        }
        "l1_norm" => check(vec![away_from_zero(r, c, &mut g)], &|_, v| v[0].l1_norm()),
        "sq_norm" => check(vec![x], &|_, v| v[0].sq_norm()),
        "slice" => {
            let (r0, c0) = (g.random_range(0..r), g.random_range(0..c));
            let (h, wd) = (g.random_range(1..=r - r0), g.random_range(1..=c - c0));
            check(vec![x], &move |t, v| weighted(v[0].slice(r0, c0, h, wd)?, t, wr))
        }
        "row" => {
            let i = g.random_range(0..r);
            check(vec![x], &move |t, v| weighted(v[0].row(i)?, t, wr))
        }
        "col" => {
            let j = g.random_range(0..c);
            check(vec![x], &move |t, v| weighted(v[0].col(j)?, t, wr))
        }
        "pad" => {
            let (r0, c0) = (g.random_range(0..3), g.random_range(0..3));
            check(vec![x], &move |t, v| weighted(v[0].pad(r0, c0, r + r0 + 1, c + c0)?, t, wr))
        }
        "concat" => {
            let axis = g.random_range(0..2);
            let other = if axis == 0 { uniform(2, c, -1.5, 1.5, &mut g) } else { uniform(r, 2, -1.5, 1.5, &mut g) };
            check(vec![x, other], &move |t, v| weighted(Var::concat(&[v[0], v[1]], axis)?, t, wr))
        }
        "softmax_cross_entropy" => {
            let k = c.max(2);
            let logits = uniform(r, k, -2.0, 2.0, &mut g);
            let labels: Vec<usize> = (0..r).map(|_| g.random_range(0..k)).collect();
            check(vec![logits], &move |_, v| v[0].softmax_cross_entropy(&labels))
        }
        "route" => {
            let k = g.random_range(1..4);
            let mut params = vec![uniform(1, k, 0.05, 0.95, &mut g)];
            params.extend((0..k).map(|_| uniform(r, c, -1.5, 1.5, &mut g)));
            check(params, &|t, v| {
                let out = route(v[0], &v[1..]).map_err(|e| match e {
                    mtcrl::model::ModelError::Tensor(e) => e,
                    other => panic!("{other}"),
                })?;
                weighted(out, t, wr)
            })
        }
        _ => unreachable!(),
    }
}

fn reg<T>(r: Result<T, mtcrl::regularizers::RegError>) -> Result<T, TensorError> {
    r.map_err(|e| match e {
        mtcrl::regularizers::RegError::Tensor(t) => t,
        other => panic!("{other}"),
    })
}

pub const LOSS_NAMES: [&str; 5] = ["pearson_corr", "decorrelation", "graph_loss", "binary_risk", "multiclass_risk"];

/// Same as [`op_case`] for the composite loss terms.
pub fn loss_case(kind: usize, seed: u64) -> Result<f64, TensorError> {
    let mut g = rng(seed);
    let n = g.random_range(4..8);
    let w = uniform(8, 8, -1.5, 1.5, &mut g);
    let wr = &w;
    let policy = VariancePolicy::Floor(1e-8);
    match LOSS_NAMES[kind] {
        "pearson_corr" => {
            let (p, q) = (g.random_range(1..3), g.random_range(1..3));
            let params = vec![uniform(n, p, -1.5, 1.5, &mut g), uniform(n, q, -1.5, 1.5, &mut g)];
            finite_diff_check(|t, v| weighted(reg(pearson_corr(v[0], v[1], policy))?, t, wr), &params, FD_STEP, DiffOrder::First)
        }
        "decorrelation" => {
            let k = g.random_range(2..4);
            let params: Vec<Tensor> = (0..k).map(|_| uniform(n, 2, -1.5, 1.5, &mut g)).collect();
            finite_diff_check(|_, v| reg(decorrelation_loss(v, 3.0, policy)), &params, FD_STEP, DiffOrder::First)
        }
        "graph_loss" => {
            let (t, k) = (g.random_range(1..4), g.random_range(2..5));
            let theta = uniform(t, k, -2.0, 2.0, &mut g);
            finite_diff_check(|_, v| Ok(reg(graph_loss(v[0].sigmoid()?, 0.2, 5.0))?.value), &[theta], FD_STEP, DiffOrder::First)
        }
        "binary_risk" => {
            let f = uniform(n, 1, -2.0, 2.0, &mut g);
            let labels = Labels::Binary((0..n).map(|_| if g.random_bool(0.5) { 1.0 } else { -1.0 }).collect());
            finite_diff_check(|_, v| reg(task_risk(TaskKind::Binary, v[0], &labels)), &[f], FD_STEP, DiffOrder::First)
        }
        "multiclass_risk" => {
            let k = g.random_range(2..5);
            let f = uniform(n, k, -2.0, 2.0, &mut g);
            let labels = Labels::Class((0..n).map(|_| g.random_range(0..k)).collect());
            finite_diff_check(
                |_, v| reg(task_risk(TaskKind::Multiclass { classes: k }, v[0], &labels)),
                &[f],
                FD_STEP,
                DiffOrder::First,
            )
        }
        _ => unreachable!(),
    }
}

/// A small two-task, two-environment modular model written directly in tape
/// ops: tanh encoders, sigmoid routing, detached linear heads. Parameters are
/// `[W_1, b_1, .., W_K, b_K, θ]`.
pub struct TinyGirm {
    pub params: Vec<Tensor>,
    pub heads: Vec<Tensor>,
    pub envs: Vec<(Tensor, Vec<Labels>)>,
    pub modules: usize,
}

impl TinyGirm {
    pub fn random(seed: u64) -> Self {
        let mut g = rng(seed);
        let (d, k, m, tasks) = (3, 2, 2, 2);
        let mut params = Vec::new();
        for _ in 0..k {
            params.push(uniform(d, m, -0.8, 0.8, &mut g));
            params.push(uniform(1, m, -0.3, 0.3, &mut g));
        }
        params.push(uniform(tasks, k, -1.0, 1.0, &mut g));
        let heads = (0..tasks).map(|_| uniform(m, 1, -1.0, 1.0, &mut g)).collect();
        let envs = (0..2)
            .map(|_| {
                let n = 6;
                let x = uniform(n, d, -1.5, 1.5, &mut g);
                let labels = (0..tasks)
                    .map(|_| Labels::Binary((0..n).map(|_| if g.random_bool(0.5) { 1.0 } else { -1.0 }).collect()))
                    .collect();
                (x, labels)
            })
            .collect();
        Self { params, heads, envs, modules: k }
    }

    /// The penalty as a function of the parameters.
    pub fn penalty<'t>(&self, kind: Penalty, tape: &'t Tape, v: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        let a = v[2 * self.modules].sigmoid()?;
        let tasks = self.heads.len();
        let rows: Vec<Var<'t>> = (0..tasks).map(|t| a.row(t)).collect::<Result<_, _>>()?;
        let heads: Vec<Var<'t>> = self.heads.iter().map(|h| tape.constant(h.clone())).collect();
        let mut risks = Vec::new();
        for (x, labels) in &self.envs {
            let x = tape.constant(x.clone());
            let zs: Vec<Var<'t>> = (0..self.modules)
                .map(|i| {
                    let (n, _) = x.shape();
                    let (_, m) = v[2 * i + 1].shape();
                    x.matmul(v[2 * i])?.add(v[2 * i + 1].expand(n, m)?)?.tanh()
                })
                .collect::<Result<_, _>>()?;
            let mut env = Vec::new();
            for t in 0..tasks {
                let fused = route(rows[t], &zs).map_err(|e| match e {
                    mtcrl::model::ModelError::Tensor(e) => e,
                    other => panic!("{other}"),
                })?;
                env.push(reg(task_risk(TaskKind::Binary, fused.matmul(heads[t])?, &labels[t]))?);
            }
            risks.push(env);
        }
        let empty: Vec<Vec<Var<'t>>> = vec![Vec::new(); tasks];
        reg(env_penalty(kind, &risks, &rows, &empty))
    }
}

/// Relative FD error of the gradient of the G-IRM-Norm penalty, which
/// exercises the double backward through the routing gradient.
pub fn girm_second_order_case(seed: u64) -> Result<f64, TensorError> {
    let m = TinyGirm::random(seed);
    finite_diff_check(|t, v| m.penalty(Penalty::GIrmNorm, t, v), &m.params, 1e-5, DiffOrder::First)
}
