use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{OracleError, Result};
use crate::rng::{std_normal, stream};

/// `Y = C θ*_C + ε`, fitted on `X = [C, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRegProblem {
    pub c: DMatrix<f64>,
    pub s: DVector<f64>,
    pub theta_star_c: DVector<f64>,
    pub noise: DVector<f64>,
    /// Noise scale used when redrawing `ε`.
    pub sigma: f64,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std_normal(rng))
}

fn gaussian_vector(n: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * std_normal(rng))
}

impl LinearRegProblem {
    /// Rows of `C` and `S` iid standard normal, `θ*` standard normal, noise
    /// `N(0, σ²)`.
    pub fn random(n: usize, d: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = stream(seed, "linreg");
        Self {
            c: gaussian_matrix(n, d, &mut rng),
            s: gaussian_vector(n, 1.0, &mut rng),
            theta_star_c: gaussian_vector(d, 1.0, &mut rng),
            noise: gaussian_vector(n, sigma, &mut rng),
            sigma,
        }
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn d(&self) -> usize {
        self.c.ncols()
    }

    pub fn y(&self) -> DVector<f64> {
        &self.c * &self.theta_star_c + &self.noise
    }

    /// `[C, S]`.
    pub fn design(&self) -> DMatrix<f64> {
        let mut x = self.c.clone().insert_column(self.d(), 0.0);
        x.set_column(self.d(), &self.s);
        x
    }

    fn check(&self) -> Result<()> {
        if self.s.len() != self.n() || self.noise.len() != self.n() || self.theta_star_c.len() != self.d() {
            return Err(OracleError::Invalid("problem dimensions disagree".into()));
        }
        Ok(())
    }
}

/// `((I − P) S)ᵀ Y / (Sᵀ (I − P) S)` with `P` the orthogonal projector onto
/// the column space of `C`.
pub fn underparam_spurious_weight(p: &LinearRegProblem) -> Result<f64> {
    p.check()?;
    if p.d() + 1 > p.n() {
        return Err(OracleError::Regime("under-parametrised fit needs d + 1 <= n".into()));
    }
    let ctc = p.c.transpose() * &p.c;
    let chol = ctc.cholesky().ok_or(OracleError::Singular("CᵀC"))?;
    let resid = &p.s - &p.c * chol.solve(&(p.c.transpose() * &p.s));
    let denom = p.s.dot(&resid);
    if denom <= 1e-12 * p.s.norm_squared() || denom == 0.0 {
        return Err(OracleError::NotIdentifiable);
    }
    Ok(resid.dot(&p.y()) / denom)
}

/// `Sᵀ G Y / (1 + Sᵀ G S)` with `G = (C Cᵀ)⁻¹`.
pub fn overparam_spurious_weight(p: &LinearRegProblem) -> Result<f64> {
    p.check()?;
    if p.d() <= p.n() {
        return Err(OracleError::Regime("over-parametrised fit needs d > n".into()));
    }
    let cct = &p.c * p.c.transpose();
    let chol = cct.cholesky().ok_or(OracleError::Singular("CCᵀ"))?;
    let gs = chol.solve(&p.s);
    Ok(gs.dot(&p.y()) / (1.0 + gs.dot(&p.s)))
}

/// Last coordinate of `pinv([C, S]) Y` via SVD.
pub fn lstsq_spurious_weight(p: &LinearRegProblem) -> Result<f64> {
    let x = p.design();
    let pinv = x
        .pseudo_inverse(1e-12)
        .map_err(|_| OracleError::Singular("[C, S]"))?;
    let theta = pinv * p.y();
    Ok(theta[p.d()])
}

/// Last coordinate of `Xᵀ (X Xᵀ)⁻¹ Y`.
pub fn min_norm_spurious_weight(p: &LinearRegProblem) -> Result<f64> {
    let x = p.design();
    let lu = (&x * x.transpose()).lu();
    let alpha = lu.solve(&p.y()).ok_or(OracleError::Singular("XXᵀ"))?;
    let theta = x.transpose() * alpha;
    Ok(theta[p.d()])
}

/// Monte-Carlo excess risks of least-squares fits with (`l_s`) and without
/// (`l_c`) the spurious column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub l_s: f64,
    pub l_c: f64,
    /// Standard error of the paired difference `l_s − l_c`.
    pub std_err: f64,
}

/// Average over `noise_draws` fresh noise vectors of the squared prediction
/// error against `x_cᵀ θ*` on `n_test` fresh standard-normal rows. The same
/// draws are shared by both fits.
pub fn generalization_gap(p: &LinearRegProblem, n_test: usize, noise_draws: usize, seed: u64) -> Result<GapEstimate> {
    p.check()?;
    if p.d() + 1 > p.n() {
        return Err(OracleError::Regime("gap estimate needs the under-parametrised regime".into()));
    }
    if n_test == 0 || noise_draws == 0 {
        return Err(OracleError::Invalid("need at least one test row and noise draw".into()));
    }
    let mut rng = stream(seed, "gap");
    let test_c = gaussian_matrix(n_test, p.d(), &mut rng);
    let test_s = gaussian_vector(n_test, 1.0, &mut rng);
    let x = p.design();
    let x_pinv = x.clone().pseudo_inverse(1e-12).map_err(|_| OracleError::Singular("[C, S]"))?;
    let c_pinv = p.c.clone().pseudo_inverse(1e-12).map_err(|_| OracleError::Singular("C"))?;
    let target = &test_c * &p.theta_star_c;
    let signal = &p.c * &p.theta_star_c;
    let mut diffs = Vec::with_capacity(noise_draws);
    let (mut sum_s, mut sum_c) = (0.0, 0.0);
    for _ in 0..noise_draws {
        let y = &signal + gaussian_vector(p.n(), p.sigma, &mut rng);
        let theta_s = &x_pinv * &y;
        let theta_c = &c_pinv * &y;
        let pred_s = &test_c * theta_s.rows(0, p.d()) + &test_s * theta_s[p.d()];
        let pred_c = &test_c * theta_c;
        let ls = (pred_s - &target).norm_squared() / n_test as f64;
        let lc = (pred_c - &target).norm_squared() / n_test as f64;
        sum_s += ls;
        sum_c += lc;
        diffs.push(ls - lc);
    }
    let k = noise_draws as f64;
    let mean = diffs.iter().sum::<f64>() / k;
    let var = if noise_draws > 1 {
        diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(GapEstimate {
        l_s: sum_s / k,
        l_c: sum_c / k,
        std_err: (var / k).sqrt(),
    })
}
