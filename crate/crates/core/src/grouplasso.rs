//! Online group Lasso.
//!
//! Minimises `(1/t) ||y - Phi theta||^2 + 2 lambda sum_j ||theta_j||_2` with a
//! monotone accelerated proximal gradient method. The design is carried as
//! its Gram matrix so that sequential callers can append one row per step and
//! warm start from the previous solution.

use nalgebra::{DMatrix, DVector};

use crate::legendre::{GridFeatures, ModelClass};
use crate::{Error, Result};

/// Groups whose norm exceeds this are reported as active.
pub const SUPPORT_TOL: f64 = 1e-10;
pub const DEFAULT_LAMBDA0: f64 = 0.009;

/// Proximal map of `tau * ||.||_2`.
pub fn group_soft_threshold(v: &[f64], tau: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    shrink_in_place(&mut out, tau);
    out
}

fn shrink_in_place(v: &mut [f64], tau: f64) {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm <= tau {
        v.iter_mut().for_each(|a| *a = 0.0);
    } else {
        let scale = 1.0 - tau / norm;
        v.iter_mut().for_each(|a| *a *= scale);
    }
}

/// Sufficient statistics of a least-squares design: `Phi^T Phi`, `Phi^T y`, `y^T y`, `t`.
#[derive(Debug, Clone)]
pub struct GramProblem {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    rows: usize,
    group_size: usize,
}

impl GramProblem {
    pub fn empty(dim: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || !dim.is_multiple_of(group_size) {
            return Err(Error::config(format!(
                "dimension {dim} is not a multiple of group size {group_size}"
            )));
        }
        Ok(Self {
            gram: DMatrix::zeros(dim, dim),
            xty: DVector::zeros(dim),
            yty: 0.0,
            rows: 0,
            group_size,
        })
    }

    pub fn from_design(features: &DMatrix<f64>, targets: &DVector<f64>, group_size: usize) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::config("feature rows and targets differ in length"));
        }
        let mut p = Self::empty(features.ncols(), group_size)?;
        p.gram = features.transpose() * features;
        p.xty = features.transpose() * targets;
        p.yty = targets.dot(targets);
        p.rows = features.nrows();
        Ok(p)
    }

    pub fn push_row(&mut self, row: &[f64], y: f64) {
        let d = self.dim();
        debug_assert_eq!(row.len(), d);
        for a in 0..d {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in 0..d {
                self.gram[(a, b)] += ra * row[b];
            }
            self.xty[a] += ra * y;
        }
        self.yty += y * y;
        self.rows += 1;
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn num_groups(&self) -> usize {
        self.dim() / self.group_size
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    fn smooth(&self, theta: &DVector<f64>, g_theta: &DVector<f64>) -> f64 {
        let t = self.rows as f64;
        ((self.yty - 2.0 * self.xty.dot(theta) + theta.dot(g_theta)) / t).max(0.0)
    }

    fn penalty(&self, theta: &DVector<f64>, lambda: f64) -> f64 {
        2.0 * lambda * group_norms(theta.as_slice(), self.group_size).iter().sum::<f64>()
    }

    /// Objective value computed from the sufficient statistics.
    pub fn objective(&self, theta: &DVector<f64>, lambda: f64) -> f64 {
        let g = &self.gram * theta;
        self.smooth(theta, &g) + self.penalty(theta, lambda)
    }

    /// Largest normalised violation of the group-wise optimality conditions.
    ///
    /// Active groups need `(2/t) Phi_j^T r = 2 lambda theta_j / ||theta_j||`;
    /// inactive groups need `||(2/t) Phi_j^T r|| <= 2 lambda`. Violations are
    /// divided by `1 + 2 lambda`.
    pub fn kkt_residual(&self, theta: &DVector<f64>, lambda: f64) -> f64 {
        self.kkt_residual_with(theta, &(&self.gram * theta), lambda)
    }

    fn kkt_residual_with(&self, theta: &DVector<f64>, g_theta: &DVector<f64>, lambda: f64) -> f64 {
        let t = self.rows as f64;
        let corr = (&self.xty - g_theta) * (2.0 / t);
        let s = self.group_size;
        let mut worst: f64 = 0.0;
        for j in 0..self.num_groups() {
            let cj = corr.rows(j * s, s);
            let tj = theta.rows(j * s, s);
            let norm = tj.norm();
            let viol = if norm > SUPPORT_TOL {
                (cj - tj * (2.0 * lambda / norm)).norm()
            } else {
                (cj.norm() - 2.0 * lambda).max(0.0)
            };
            worst = worst.max(viol);
        }
        worst / (1.0 + 2.0 * lambda)
    }
}

pub fn group_norms(theta: &[f64], group_size: usize) -> Vec<f64> {
    theta
        .chunks(group_size)
        .map(|g| g.iter().map(|a| a * a).sum::<f64>().sqrt())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Tolerance on the normalised KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    pub power_iters: usize,
    pub power_tol: f64,
    /// Keep every iterate's objective in the returned estimate.
    pub record_objective: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
            power_iters: 50,
            power_tol: 1e-10,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Iteration budget exhausted; the estimate holds the best iterate.
    NotConverged,
}

#[derive(Debug, Clone)]
pub struct GroupEstimate {
    pub theta_hat: DVector<f64>,
    pub group_size: usize,
    pub support: Vec<usize>,
    pub objective_value: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub status: SolveStatus,
    /// Objective after each iteration, when requested.
    pub objective_trace: Vec<f64>,
}

impl GroupEstimate {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn group(&self, j: usize) -> &[f64] {
        &self.theta_hat.as_slice()[j * self.group_size..(j + 1) * self.group_size]
    }

    pub fn group_norms(&self) -> Vec<f64> {
        group_norms(self.theta_hat.as_slice(), self.group_size)
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(a: &DMatrix<f64>, iters: usize, tol: f64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic start with no exact orthogonality to typical eigenvectors
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = a * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - estimate).abs() <= tol * next.abs().max(1.0) {
            estimate = next;
            break;
        }
        estimate = next;
    }
    // both the Rayleigh quotient and ||A v|| are lower bounds; take the larger
    estimate.max((a * &v).norm())
}

/// Solves the group Lasso for a dense design.
pub fn solve(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    group_size: usize,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GroupEstimate> {
    let problem = GramProblem::from_design(features, targets, group_size)?;
    let opts = SolverOptions {
        tol,
        max_iter,
        ..SolverOptions::default()
    };
    let mut est = solve_problem(&problem, lambda, None, &opts)?;
    // report the objective from the residual itself, not the Gram expansion
    let resid = targets - features * &est.theta_hat;
    est.objective_value =
        resid.norm_squared() / problem.rows as f64 + problem.penalty(&est.theta_hat, lambda);
    Ok(est)
}

/// Monotone FISTA on sufficient statistics, optionally warm started.
pub fn solve_problem(
    problem: &GramProblem,
    lambda: f64,
    warm_start: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<GroupEstimate> {
    if problem.rows == 0 {
        return Err(Error::config("group Lasso needs at least one observation"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
    }
    let d = problem.dim();
    let s = problem.group_size;
    let t = problem.rows as f64;

    let mut x = match warm_start {
        Some(w) if w.len() == d => w.clone(),
        Some(_) => return Err(Error::config("warm start has the wrong dimension")),
        None => DVector::zeros(d),
    };
    let mut gx = &problem.gram * &x;
    let mut fx = problem.smooth(&x, &gx) + problem.penalty(&x, lambda);

    let lmax = power_iteration(&problem.gram, opts.power_iters, opts.power_tol);
    let mut lip = (2.0 / t * lmax).max(f64::MIN_POSITIVE);

    let mut trace = Vec::new();
    if opts.record_objective {
        trace.push(fx);
    }

    let mut kkt = problem.kkt_residual(&x, lambda);
    if kkt <= opts.tol {
        return Ok(finish(problem, x, fx, 0, kkt, SolveStatus::Converged, trace));
    }

    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut momentum = 1.0_f64;
    let mut status = SolveStatus::NotConverged;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let f_before = fx;
        let fy_smooth = problem.smooth(&y, &gy);
        let grad_y = (&gy - &problem.xty) * (2.0 / t);

        // backtracking guards against an underestimated Lipschitz constant
        let (z, gz, fz_smooth) = loop {
            let mut z = &y - &grad_y / lip;
            for chunk in z.as_mut_slice().chunks_mut(s) {
                shrink_in_place(chunk, 2.0 * lambda / lip);
            }
            let gz = &problem.gram * &z;
            let fz_smooth = problem.smooth(&z, &gz);
            let diff = &z - &y;
            let model = fy_smooth + grad_y.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if fz_smooth <= model + 1e-12 * (1.0 + fy_smooth.abs()) || lip > 1e300 {
                break (z, gz, fz_smooth);
            }
            lip *= 2.0;
        };
        let fz = fz_smooth + problem.penalty(&z, lambda);

        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        // monotone variant: keep the incumbent when the prox point is worse,
        // but still let the prox point steer the momentum
        let x_prev = if fz <= fx {
            gx = gz;
            fx = fz;
            std::mem::replace(&mut x, z.clone())
        } else {
            x.clone()
        };
        y = &x + (&z - &x) * (momentum / next_momentum) + (&x - &x_prev) * ((momentum - 1.0) / next_momentum);
        momentum = next_momentum;
        debug_assert!(fx <= f_before);
        if opts.record_objective {
            trace.push(fx);
        }
        gy = &problem.gram * &y;

        if iter % 5 == 0 || iter == opts.max_iter {
            kkt = problem.kkt_residual_with(&x, &gx, lambda);
            if kkt <= opts.tol {
                status = SolveStatus::Converged;
                break;
            }
        }
    }

    Ok(finish(problem, x, fx, iterations, kkt, status, trace))
}

fn finish(
    problem: &GramProblem,
    theta: DVector<f64>,
    objective: f64,
    iterations: usize,
    kkt: f64,
    status: SolveStatus,
    objective_trace: Vec<f64>,
) -> GroupEstimate {
    let s = problem.group_size;
    let support = group_norms(theta.as_slice(), s)
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > SUPPORT_TOL)
        .map(|(j, _)| j)
        .collect();
    GroupEstimate {
        theta_hat: theta,
        group_size: s,
        support,
        objective_value: objective,
        iterations,
        kkt_residual: kkt,
        status,
        objective_trace,
    }
}

/// Anytime regularisation schedule
/// `lambda_t = lambda0 * (2 sigma / sqrt t) * sqrt(1 + (12/sqrt2) L + (5/sqrt2) sqrt(d L))`
/// with `L = log(2M/delta) + (log log d)_+`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoSchedule {
    pub sigma: f64,
    pub num_models: usize,
    pub group_size: usize,
    pub delta: f64,
    pub lambda0: f64,
}

impl LassoSchedule {
    pub fn new(sigma: f64, num_models: usize, group_size: usize, delta: f64, lambda0: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1], got {delta}")));
        }
        if !(lambda0 > 0.0) || !(sigma >= 0.0) || num_models == 0 || group_size == 0 {
            return Err(Error::config("lambda0 > 0, sigma >= 0, M >= 1 and d >= 1 are required"));
        }
        Ok(Self {
            sigma,
            num_models,
            group_size,
            delta,
            lambda0,
        })
    }

    /// Time-independent square-root factor of the schedule.
    pub fn confidence_factor(&self) -> f64 {
        let d = self.group_size as f64;
        let log_term = (2.0 * self.num_models as f64 / self.delta).ln() + positive_log_log(d);
        (1.0 + 12.0 / 2f64.sqrt() * log_term + 5.0 / 2f64.sqrt() * (d * log_term).sqrt()).sqrt()
    }

    pub fn lambda(&self, t: usize) -> f64 {
        assert!(t >= 1, "the schedule starts at t = 1");
        self.lambda0 * 2.0 * self.sigma / (t as f64).sqrt() * self.confidence_factor()
    }
}

/// `(log log x)_+`, zero whenever `log x <= 1` (including `x = 1`).
pub fn positive_log_log(x: f64) -> f64 {
    let l = x.ln();
    if l <= 1.0 {
        0.0
    } else {
        l.ln()
    }
}

/// Lasso-estimated return of every agent's next (Dirac) proposal: `theta^T phi(x_j)`.
pub fn hallucinate_rewards(theta_hat: &DVector<f64>, mc: &ModelClass, proposals: &[f64]) -> Result<Vec<f64>> {
    if theta_hat.len() != mc.dim() {
        return Err(Error::config("estimate dimension does not match the model class"));
    }
    proposals
        .iter()
        .map(|&x| {
            let phi = mc.concat_feature_vector(x)?;
            Ok(phi.iter().zip(theta_hat.iter()).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Grid version of [`hallucinate_rewards`] for finite-support policies:
/// `policies[j]` lists `(grid index, probability)` pairs.
pub fn expected_rewards(
    theta_hat: &DVector<f64>,
    table: &GridFeatures,
    columns: &[usize],
    policies: &[Vec<(usize, f64)>],
) -> Vec<f64> {
    let values: Vec<f64> = {
        let mut cache = std::collections::BTreeMap::new();
        policies
            .iter()
            .map(|support| {
                support
                    .iter()
                    .map(|&(i, w)| {
                        let v = *cache.entry(i).or_insert_with(|| {
                            let basis = table.basis(i);
                            columns.iter().zip(theta_hat.iter()).map(|(&k, th)| th * basis[k]).sum::<f64>()
                        });
                        w * v
                    })
                    .sum()
            })
            .collect()
    };
    values
}
