//! Per-model ridge agents.
//!
//! Each agent keeps the kernel matrix `K_t = [phi(x_i)^T phi(x_u)]` of its own
//! feature map and the posterior
//!
//! ```text
//! mu_t(x)    = k(x)^T (K_t + reg^2 I)^{-1} y
//! sigma_t(x) = sqrt(phi(x)^T phi(x) - k(x)^T (K_t + reg^2 I)^{-1} k(x))
//! ```
//!
//! Because `k(x) = Phi phi(x)`, grid-wide evaluation factors through the
//! `d x d` matrix `Phi^T V^{-1} Phi` and the vector `Phi^T V^{-1} y`, both
//! refreshed from one Cholesky factorisation per observation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::grouplasso::positive_log_log;
use crate::legendre::{legendre_eval, GridFeatures};
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_RIDGE_REG: f64 = 0.1;

/// A feature map made of scaled Legendre polynomials of the given degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub columns: Vec<usize>,
    pub scale: f64,
}

impl FeatureMap {
    pub fn new(columns: Vec<usize>, scale: f64) -> Self {
        Self { columns, scale }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn eval(&self, x: f64) -> Result<DVector<f64>> {
        let values = self
            .columns
            .iter()
            .map(|&k| legendre_eval(k, x).map(|v| self.scale * v))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(values))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalRule {
    Ucb,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct RidgeAgent {
    map: FeatureMap,
    reg: f64,
    beta: f64,
    rows: Vec<DVector<f64>>,
    targets: Vec<f64>,
    kernel: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    // V^{-1} y
    alpha: DVector<f64>,
    // Phi^T V^{-1} y
    weights: DVector<f64>,
    // Phi^T V^{-1} Phi
    contraction: DMatrix<f64>,
}

impl RidgeAgent {
    pub fn new(map: FeatureMap, reg: f64, beta: f64) -> Result<Self> {
        if !(reg > 0.0) || !reg.is_finite() {
            return Err(Error::config(format!("ridge regulariser must be > 0, got {reg}")));
        }
        if !(beta >= 0.0) {
            return Err(Error::config(format!("exploration coefficient must be >= 0, got {beta}")));
        }
        let d = map.dim();
        Ok(Self {
            map,
            reg,
            beta,
            rows: Vec::new(),
            targets: Vec::new(),
            kernel: DMatrix::zeros(0, 0),
            chol: None,
            alpha: DVector::zeros(0),
            weights: DVector::zeros(d),
            contraction: DMatrix::zeros(d, d),
        })
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn num_observations(&self) -> usize {
        self.targets.len()
    }

    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn observe(&mut self, x: f64, y: f64) -> Result<()> {
        let phi = self.map.eval(x)?;
        self.push(phi, y)
    }

    /// Adds an observation whose features were already computed (e.g. from a grid table).
    pub fn observe_features(&mut self, phi: &[f64], y: f64) -> Result<()> {
        if phi.len() != self.map.dim() {
            return Err(Error::config("feature length does not match the agent's map"));
        }
        self.push(DVector::from_column_slice(phi), y)
    }

    fn push(&mut self, phi: DVector<f64>, y: f64) -> Result<()> {
        let t = self.targets.len();
        self.kernel.resize_mut(t + 1, t + 1, 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let k = row.dot(&phi);
            self.kernel[(i, t)] = k;
            self.kernel[(t, i)] = k;
        }
        self.kernel[(t, t)] = phi.dot(&phi);
        self.rows.push(phi);
        self.targets.push(y);
        self.refresh()
    }

    fn refresh(&mut self) -> Result<()> {
        let t = self.targets.len();
        let d = self.map.dim();
        let mut v = self.kernel.clone();
        for i in 0..t {
            v[(i, i)] += self.reg * self.reg;
        }
        let chol = Cholesky::new(v.clone()).ok_or_else(|| {
            let eig = v.symmetric_eigen().eigenvalues;
            Error::numerical(format!(
                "kernel solve is singular (eigenvalue range [{:.3e}, {:.3e}])",
                eig.min(),
                eig.max()
            ))
        })?;
        let y = DVector::from_column_slice(&self.targets);
        let phi = DMatrix::from_fn(t, d, |i, c| self.rows[i][c]);
        self.alpha = chol.solve(&y);
        let z = chol.solve(&phi);
        self.weights = phi.transpose() * &self.alpha;
        self.contraction = phi.transpose() * z;
        self.chol = Some(chol);
        Ok(())
    }

    /// Posterior mean and standard deviation at `x`, computed in kernel form.
    pub fn get_posterior(&self, x: f64) -> Result<(f64, f64)> {
        let phi = self.map.eval(x)?;
        let prior = phi.dot(&phi);
        let Some(chol) = &self.chol else {
            return Ok((0.0, prior.sqrt()));
        };
        let k = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.dot(&phi)));
        let mu = k.dot(&self.alpha);
        let reduction = k.dot(&chol.solve(&k));
        Ok((mu, (prior - reduction).clamp(0.0, prior).sqrt()))
    }

    /// Posterior at a pre-tabulated feature vector, through the factored cache.
    pub fn posterior_at(&self, phi: &[f64]) -> (f64, f64) {
        let prior: f64 = phi.iter().map(|a| a * a).sum();
        let mu: f64 = phi.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum();
        let d = phi.len();
        let mut reduction = 0.0;
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..d {
                acc += self.contraction[(a, b)] * phi[b];
            }
            reduction += phi[a] * acc;
        }
        (mu, (prior - reduction).clamp(0.0, prior).sqrt())
    }

    /// Grid index maximising `mu + coef * sigma`; ties go to the lowest index.
    fn argmax_on_grid(&self, table: &GridFeatures, coef: f64) -> usize {
        let mut phi = vec![0.0; self.map.dim()];
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..table.len() {
            table.fill(i, &self.map.columns, &mut phi);
            let (mu, sd) = self.posterior_at(&phi);
            let score = mu + coef * sd;
            if score > best.1 {
                best = (i, score);
            }
        }
        best.0
    }

    pub fn ucb_propose(&self, table: &GridFeatures) -> usize {
        self.argmax_on_grid(table, self.beta)
    }

    pub fn greedy_propose(&self, table: &GridFeatures) -> usize {
        self.argmax_on_grid(table, 0.0)
    }

    pub fn propose(&self, table: &GridFeatures, rule: ProposalRule) -> usize {
        match rule {
            ProposalRule::Ucb => self.ucb_propose(table),
            ProposalRule::Greedy => self.greedy_propose(table),
        }
    }

    /// Upper confidence value `mu + beta * sigma` at grid point `i`.
    pub fn ucb_value(&self, table: &GridFeatures, i: usize) -> f64 {
        let phi = table.row(i, &self.map.columns);
        let (mu, sd) = self.posterior_at(&phi);
        mu + self.beta * sd
    }

    pub fn mean_at(&self, table: &GridFeatures, i: usize) -> f64 {
        self.posterior_at(&table.row(i, &self.map.columns)).0
    }
}

/// Anytime confidence radius of the oracle agent's ridge estimate.
///
/// Only used as a diagnostic; the absolute constant `c1` defaults to one.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleWidth {
    pub delta: f64,
    pub dim: usize,
    pub num_models: usize,
    pub lambda_ridge: f64,
    pub reward_bound: f64,
    pub sigma: f64,
    pub cmin: f64,
    pub c1: f64,
}

impl OracleWidth {
    pub fn width(&self, t: usize) -> Result<f64> {
        oracle_width(t, self)
    }
}

pub fn oracle_width(t: usize, p: &OracleWidth) -> Result<f64> {
    if t == 0 {
        return Err(Error::config("oracle width is defined for t >= 1"));
    }
    if !(p.delta > 0.0 && p.delta <= 1.0) {
        return Err(Error::config(format!("delta must lie in (0, 1], got {}", p.delta)));
    }
    if !(p.lambda_ridge > 0.0) || !(p.cmin > 0.0) {
        return Err(Error::config("lambda_ridge and cmin must be positive"));
    }
    let t = t as f64;
    let d = p.dim as f64;
    let s2 = p.sigma * p.sigma;
    let numer = s2 * d * (t / (p.lambda_ridge * d) + 1.0).ln()
        + 2.0 * s2 * (1.0 / p.delta).ln()
        + p.lambda_ridge * p.reward_bound * p.reward_bound;
    let denom = p.lambda_ridge + p.cmin * t.powf(0.75);
    let inflation = 1.0
        + t.powf(-0.375) / p.cmin
            * ((p.num_models as f64 * d / p.delta).ln() + positive_log_log(t)).max(0.0).sqrt();
    Ok(p.c1 * (numer / denom).sqrt() * inflation)
}
