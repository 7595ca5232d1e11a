use serde::{Deserialize, Serialize};

use super::{OracleError, Result};

/// Regression vectors `β = μ/σ²` of the two factor blocks and the label
/// agreement probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesParams {
    pub beta_a: Vec<f64>,
    pub beta_b: Vec<f64>,
    pub m_c: f64,
}

impl BayesParams {
    pub fn from_means(mu_a: &[f64], sigma_a: f64, mu_b: &[f64], sigma_b: f64, m_c: f64) -> Result<Self> {
        if !(sigma_a > 0.0 && sigma_b > 0.0) {
            return Err(OracleError::Invalid("sigma must be positive".into()));
        }
        let p = Self {
            beta_a: mu_a.iter().map(|m| m / (sigma_a * sigma_a)).collect(),
            beta_b: mu_b.iter().map(|m| m / (sigma_b * sigma_b)).collect(),
            m_c,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.m_c) {
            return Err(OracleError::Invalid(format!("m_c {} outside [0, 1]", self.m_c)));
        }
        if self.beta_a.iter().chain(&self.beta_b).any(|b| !b.is_finite()) {
            return Err(OracleError::Invalid("beta must be finite".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(OracleError::Dimension {
            expected: b.len(),
            got: a.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

fn logsumexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln P(Y_a = 1 | F) − ln P(Y_a = −1 | F)`.
pub fn bayes_logit(f_a: &[f64], f_b: &[f64], params: &BayesParams) -> Result<f64> {
    params.validate()?;
    let u = dot(f_a, &params.beta_a)?;
    let v = dot(f_b, &params.beta_b)?;
    let (lm, ln1m) = (params.m_c.ln(), (1.0 - params.m_c).ln());
    let num = u + logsumexp(lm + v, ln1m - v);
    let den = -u + logsumexp(lm - v, ln1m + v);
    Ok(num - den)
}

/// `P(Y_a = 1 | F_a, F_b)` under the balanced prior with `P(Y_a = Y_b) = m_C`.
pub fn bayes_posterior(f_a: &[f64], f_b: &[f64], params: &BayesParams) -> Result<f64> {
    Ok(crate::tensor::sigmoid_scalar(bayes_logit(f_a, f_b, params)?))
}

/// The linear weights `[w_a, w_b]` the posterior logit reduces to at the
/// two values of `m_C` where it is linear in `F`.
pub fn bayes_weight_extremes(params: &BayesParams) -> Result<Vec<f64>> {
    params.validate()?;
    let wa = params.beta_a.iter().map(|b| 2.0 * b);
    if params.m_c == 1.0 {
        Ok(wa.chain(params.beta_b.iter().map(|b| 2.0 * b)).collect())
    } else if params.m_c == 0.5 {
        Ok(wa.chain(std::iter::repeat_n(0.0, params.beta_b.len())).collect())
    } else {
        Err(OracleError::UnsupportedMc(params.m_c))
    }
}

/// Posterior by direct enumeration of the four label configurations with
/// full Gaussian class-conditional densities.
pub fn bayes_posterior_enumerated(
    f_a: &[f64],
    f_b: &[f64],
    mu_a: &[f64],
    sigma_a: f64,
    mu_b: &[f64],
    sigma_b: f64,
    m_c: f64,
) -> f64 {
    let log_density = |f: &[f64], mu: &[f64], sigma: f64, y: f64| -> f64 {
        let d = f.len() as f64;
        let sq: f64 = f.iter().zip(mu).map(|(x, m)| (x - y * m).powi(2)).sum();
        -0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - sq / (2.0 * sigma * sigma)
    };
    let mut joint = [[0.0f64; 2]; 2];
    for (i, ya) in [1.0, -1.0].into_iter().enumerate() {
        for (j, yb) in [1.0, -1.0].into_iter().enumerate() {
            let prior = if ya == yb { m_c / 2.0 } else { (1.0 - m_c) / 2.0 };
            joint[i][j] = prior.ln() + log_density(f_a, mu_a, sigma_a, ya) + log_density(f_b, mu_b, sigma_b, yb);
        }
    }
    let top = joint.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = joint.iter().flatten().map(|l| (l - top).exp()).collect();
    (w[0] + w[1]) / w.iter().sum::<f64>()
}
