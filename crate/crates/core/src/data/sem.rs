use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetSplits, EnvironmentBatch, Labels, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Size and label agreement of one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub n: usize,
    /// Probability that consecutive task labels agree.
    pub m_c: f64,
}

/// Linear structural model with confounded labels.
///
/// `Y_1` is balanced, `Y_{t+1}` equals `Y_t` with probability `m_C`, and the
/// factor block of task `t` is drawn from `N(Y_t μ_t, σ_t² I)`. The input is
/// the concatenation of all factor blocks followed by `nuisance_dims`
/// standard-normal columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemSpec {
    pub tasks: usize,
    pub d_factor: usize,
    /// Class means; drawn uniformly from the sphere of radius `mu_radius`
    /// when empty.
    pub mu: Vec<Vec<f64>>,
    pub mu_radius: f64,
    /// Per-task noise scale; a single entry is broadcast to all tasks.
    pub sigma: Vec<f64>,
    pub nuisance_dims: usize,
    pub train: SplitParams,
    pub valid: SplitParams,
    pub test: SplitParams,
    pub seed: u64,
}

impl Default for SemSpec {
    fn default() -> Self {
        Self {
            tasks: 2,
            d_factor: 10,
            mu: Vec::new(),
            mu_radius: 1.0,
            sigma: vec![1.0],
            nuisance_dims: 0,
            train: SplitParams { n: 6000, m_c: 0.9 },
            valid: SplitParams { n: 2000, m_c: 0.7 },
            test: SplitParams { n: 2000, m_c: 0.1 },
            seed: 0,
        }
    }
}

impl SemSpec {
    pub fn input_dim(&self) -> usize {
        self.tasks * self.d_factor + self.nuisance_dims
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DataError::InvalidSpec(msg));
        if self.tasks == 0 || self.d_factor == 0 {
            return bad("tasks and d_factor must be positive".into());
        }
        for (name, s) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            if !(0.0..=1.0).contains(&s.m_c) {
                return bad(format!("{name} m_c {} outside [0, 1]", s.m_c));
            }
            if s.n < 2 {
                return Err(DataError::TooFewSamples { needed: 2, got: s.n });
            }
        }
        if !(self.sigma.len() == 1 || self.sigma.len() == self.tasks) || self.sigma.iter().any(|&s| !(s > 0.0)) {
            return bad("sigma needs one positive entry or one per task".into());
        }
        if !self.mu.is_empty()
            && (self.mu.len() != self.tasks || self.mu.iter().any(|m| m.len() != self.d_factor))
        {
            return bad(format!("mu must be {} vectors of length {}", self.tasks, self.d_factor));
        }
        if self.mu.is_empty() && !(self.mu_radius >= 0.0) {
            return bad("mu_radius must be non-negative".into());
        }
        Ok(())
    }

    pub fn sigma_for(&self, task: usize) -> f64 {
        if self.sigma.len() == 1 {
            self.sigma[0]
        } else {
            self.sigma[task]
        }
    }

    /// The class means actually used, fixed by the seed when not given.
    pub fn resolved_mu(&self) -> Vec<Vec<f64>> {
        if !self.mu.is_empty() {
            return self.mu.clone();
        }
        let mut rng = stream(self.seed, "sem/mu");
        (0..self.tasks)
            .map(|_| {
                let v: Vec<f64> = (0..self.d_factor).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x * self.mu_radius / norm).collect()
            })
            .collect()
    }

    /// Same spec with a different task count; explicit means and per-task
    /// sigmas are dropped.
    pub fn with_tasks(&self, tasks: usize) -> Self {
        let mut s = self.clone();
        s.tasks = tasks;
        s.mu.clear();
        if s.sigma.len() != 1 {
            s.sigma = vec![s.sigma[0]];
        }
        s
    }

    /// Boolean mask over input dims for task `t`'s own factor block.
    pub fn causal_mask(&self, task: usize) -> Vec<bool> {
        let lo = task * self.d_factor;
        (0..self.input_dim()).map(|j| j >= lo && j < lo + self.d_factor).collect()
    }
}

/// Generate train/valid/test batches. Inputs are shared across tasks.
pub fn gen_multisem(spec: &SemSpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let mu = spec.resolved_mu();
    let masks: Vec<Vec<bool>> = (0..spec.tasks).map(|t| spec.causal_mask(t)).collect();
    let gen = |name: &str, params: SplitParams| -> Result<EnvironmentBatch> {
        let mut rng = stream(spec.seed, &format!("sem/{name}"));
        let labels = chained_labels(spec.tasks, params, &mut rng);
        let x = sample_inputs(spec, &mu, &labels, &mut rng);
        let x = Arc::new(x);
        EnvironmentBatch::new(
            name,
            vec![x; spec.tasks],
            labels.into_iter().map(Labels::Binary).collect(),
            masks.clone(),
        )
    };
    Ok(DatasetSplits {
        train: gen("train", spec.train)?,
        valid: gen("valid", spec.valid)?,
        test: gen("test", spec.test)?,
    })
}

fn chained_labels(tasks: usize, params: SplitParams, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = params.n;
    let mut first: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
    first.shuffle(rng);
    let mut out = vec![first];
    for _ in 1..tasks {
        let prev = out.last().expect("first task exists");
        let next = prev
            .iter()
            .map(|&y| if rng.random::<f64>() < params.m_c { y } else { -y })
            .collect();
        out.push(next);
    }
    out
}

fn sample_inputs(spec: &SemSpec, mu: &[Vec<f64>], labels: &[Vec<f64>], rng: &mut impl Rng) -> Tensor {
    let n = labels[0].len();
    let dim = spec.input_dim();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        for t in 0..spec.tasks {
            let s = spec.sigma_for(t);
            for &m in &mu[t] {
                let z: f64 = StandardNormal.sample(rng);
                data.push(labels[t][i] * m + s * z);
            }
        }
        for _ in 0..spec.nuisance_dims {
            data.push(StandardNormal.sample(rng));
        }
    }
    Tensor::matrix(n, dim, data).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(m_c: f64) -> SemSpec {
        SemSpec {
            train: SplitParams { n: 400, m_c },
            valid: SplitParams { n: 10, m_c },
            test: SplitParams { n: 10, m_c },
            ..SemSpec::default()
        }
    }

    #[test]
    fn full_agreement_copies_labels() {
        let d = gen_multisem(&small(1.0)).unwrap();
        assert_eq!(d.train.labels[0], d.train.labels[1]);
    }

    #[test]
    fn zero_agreement_flips_labels() {
        let d = gen_multisem(&small(0.0)).unwrap();
        let (Labels::Binary(a), Labels::Binary(b)) = (&d.train.labels[0], &d.train.labels[1]) else {
            panic!("binary labels")
        };
        assert!(a.iter().zip(b).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn first_task_is_exactly_balanced() {
        let d = gen_multisem(&small(0.5)).unwrap();
        let pos = d.train.labels[0].as_f64().iter().filter(|&&y| y > 0.0).count();
        assert_eq!(pos, 200);
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(1.5);
        assert!(gen_multisem(&s).is_err());
        s = small(0.5);
        s.train.n = 1;
        assert!(matches!(gen_multisem(&s), Err(DataError::TooFewSamples { .. })));
        s = small(0.5);
        s.sigma = vec![0.0];
        assert!(gen_multisem(&s).is_err());
    }

    #[test]
    fn mu_has_requested_radius() {
        let s = SemSpec {
            mu_radius: 2.5,
            ..SemSpec::default()
        };
        for m in s.resolved_mu() {
            let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn masks_partition_factor_dims() {
        let s = SemSpec {
            tasks: 3,
            nuisance_dims: 4,
            ..SemSpec::default()
        };
        let masks: Vec<_> = (0..3).map(|t| s.causal_mask(t)).collect();
        for j in 0..s.input_dim() {
            let owners = masks.iter().filter(|m| m[j]).count();
            assert_eq!(owners, usize::from(j < 30));
        }
    }
}
