//! Restricted-eigenvalue and covariance diagnostics.
//!
//! None of this feeds back into an algorithm's choices; the harness reports it
//! and the confidence-coverage tests consume it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::legendre::{ActionGrid, ModelClass};
use crate::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 64;
const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    ExactOrthonormal,
    ProjectedSubgradient,
}

impl EigenMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EigenMethod::ExactOrthonormal => "exact_orthonormal",
            EigenMethod::ProjectedSubgradient => "projected_subgradient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenReport {
    /// Smallest cone ratio found; an upper bound on the true restricted eigenvalue.
    pub kappa_hat: f64,
    /// Smallest eigenvalue of `Phi^T Phi / t`.
    pub lambda_min_empirical: f64,
    pub t: usize,
    pub s: usize,
    pub method: EigenMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            iterations: 300,
            seed: 0,
        }
    }
}

/// Estimates `kappa(Phi, s)`: the infimum of `||Phi b|| / (sqrt(t) ||b_J||)` over supports
/// `|J| <= s` and directions with `sum_{j not in J} ||b_j|| <= 3 sum_{j in J} ||b_j||`.
pub fn restricted_eigenvalue(
    features: &DMatrix<f64>,
    group_size: usize,
    s: usize,
    opts: &EigenOptions,
) -> Result<EigenReport> {
    let t = features.nrows();
    let d = features.ncols();
    if group_size == 0 || d == 0 || !d.is_multiple_of(group_size) {
        return Err(Error::config(format!(
            "feature width {d} is not a positive multiple of group size {group_size}"
        )));
    }
    let m = d / group_size;
    if s == 0 || s > m {
        return Err(Error::config(format!("sparsity s = {s} must lie in 1..={m}")));
    }
    if t == 0 {
        return Ok(EigenReport {
            kappa_hat: 0.0,
            lambda_min_empirical: 0.0,
            t,
            s,
            method: EigenMethod::ProjectedSubgradient,
        });
    }
    let a = features.transpose() * features / t as f64;
    let eig = a.clone().symmetric_eigen();
    let lambda_min = eig.eigenvalues.min().max(0.0);
    let lambda_max = eig.eigenvalues.max().max(0.0);

    let identity_gap = (0..d)
        .flat_map(|i| (0..d).map(move |k| (i, k)))
        .map(|(i, k)| (a[(i, k)] - if i == k { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    if identity_gap < ORTHONORMAL_TOL {
        return Ok(EigenReport {
            kappa_hat: 1.0,
            lambda_min_empirical: lambda_min,
            t,
            s,
            method: EigenMethod::ExactOrthonormal,
        });
    }

    let mut best = f64::INFINITY;
    if lambda_max > 0.0 {
        for size in 1..=s {
            for support in subsets(m, size) {
                let mut rng = ChaCha8Rng::seed_from_u64(support_seed(opts.seed, &support));
                let v = cone_minimum(&a, group_size, &support, lambda_max, opts, &mut rng);
                best = best.min(v);
            }
        }
    } else {
        best = 0.0;
    }
    Ok(EigenReport {
        kappa_hat: best.max(0.0).sqrt(),
        lambda_min_empirical: lambda_min,
        t,
        s,
        method: EigenMethod::ProjectedSubgradient,
    })
}

/// Smallest `b^T A b` found with `||b_J|| = 1` inside the cone for this support.
fn cone_minimum(
    a: &DMatrix<f64>,
    g: usize,
    support: &[usize],
    lambda_max: f64,
    opts: &EigenOptions,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = a.nrows();
    let in_support = |k: usize| support.contains(&(k / g));

    // pure in-support directions: smallest eigenvalue of the principal block
    let idx: Vec<usize> = (0..d).filter(|&k| in_support(k)).collect();
    let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])]);
    let block_eig = block.symmetric_eigen();
    let (imin, &vmin) = block_eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, &f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
    let mut best = vmin;

    let step = 0.5 / lambda_max;
    for r in 0..opts.restarts.max(1) {
        let mut b = DVector::zeros(d);
        if r == 0 {
            for (p, &k) in idx.iter().enumerate() {
                b[k] = block_eig.eigenvectors[(p, imin)];
            }
            // nudge off the in-support face so the off-support coordinates can move
            for k in (0..d).filter(|&k| !in_support(k)) {
                b[k] = 1e-3 * rng.sample::<f64, _>(StandardNormal);
            }
        } else {
            for k in 0..d {
                b[k] = rng.sample::<f64, _>(StandardNormal);
            }
            let shrink: f64 = rng.random();
            for k in (0..d).filter(|&k| !in_support(k)) {
                b[k] *= shrink;
            }
        }
        project_cone(&mut b, g, support);
        let mut current = b.dot(&(a * &b));
        best = best.min(current);
        for _ in 0..opts.iterations {
            let grad = a * &b * 2.0;
            let mut next = &b - grad * step;
            project_cone(&mut next, g, support);
            let value = next.dot(&(a * &next));
            best = best.min(value);
            let moved = (&next - &b).norm();
            b = next;
            if moved < 1e-12 || (current - value).abs() < 1e-15 {
                break;
            }
            current = value;
        }
    }
    best
}

/// Normalizes the in-support part to unit norm and projects the rest onto the
/// group-l1 ball of radius `3 sum_{j in J} ||b_j||`.
fn project_cone(b: &mut DVector<f64>, g: usize, support: &[usize]) {
    let m = b.len() / g;
    let norm_of = |b: &DVector<f64>, j: usize| b.rows(j * g, g).norm();
    let inside: f64 = support.iter().map(|&j| norm_of(b, j).powi(2)).sum::<f64>().sqrt();
    if inside <= 0.0 {
        for k in 0..g {
            b[support[0] * g + k] = if k == 0 { 1.0 } else { 0.0 };
        }
    } else {
        for &j in support {
            for k in 0..g {
                b[j * g + k] /= inside;
            }
        }
    }
    let radius = 3.0 * support.iter().map(|&j| norm_of(b, j)).sum::<f64>();
    let outside: Vec<usize> = (0..m).filter(|j| !support.contains(j)).collect();
    let norms: Vec<f64> = outside.iter().map(|&j| norm_of(b, j)).collect();
    let total: f64 = norms.iter().sum();
    if total <= radius {
        return;
    }
    let tau = l1_threshold(&norms, radius);
    for (&j, &n) in outside.iter().zip(&norms) {
        let factor = if n > tau { (n - tau) / n } else { 0.0 };
        for k in 0..g {
            b[j * g + k] *= factor;
        }
    }
}

/// `tau` with `sum_i max(n_i - tau, 0) = radius` for non-negative `n` summing above `radius`.
fn l1_threshold(norms: &[f64], radius: f64) -> f64 {
    let mut sorted = norms.to_vec();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cum += v;
        let candidate = (cum - radius) / (i + 1) as f64;
        if v > candidate {
            tau = candidate;
        } else {
            break;
        }
    }
    tau.max(0.0)
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    rec(0, m, k, &mut cur, &mut out);
    out
}

// same support, same draws, whatever s is being evaluated
fn support_seed(seed: u64, support: &[usize]) -> u64 {
    support.iter().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, &j| {
        let mut z = h.wrapping_add(j as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z ^= z >> 31;
        z.wrapping_mul(0x94d0_49bb_1331_11eb)
    })
}

/// `(1/t) sum_i phi(x_i) phi(x_i)^T` over the concatenated feature map.
pub fn empirical_covariance(mc: &ModelClass, actions: &[f64]) -> Result<DMatrix<f64>> {
    if actions.is_empty() {
        return Err(Error::config("empirical covariance needs at least one action"));
    }
    let d = mc.dim();
    let mut cov = DMatrix::zeros(d, d);
    for &x in actions {
        let phi = DVector::from_vec(mc.concat_feature_vector(x)?);
        cov.ger(1.0, &phi, &phi, 1.0);
    }
    Ok(cov / actions.len() as f64)
}

/// Smallest eigenvalue of the empirical covariance under uniform sampling of the grid.
pub fn cmin_uniform(mc: &ModelClass, grid: &ActionGrid) -> Result<f64> {
    let cov = empirical_covariance(mc, grid.points())?;
    Ok(cov.symmetric_eigen().eigenvalues.min())
}

/// Design matrix of the concatenated features at the given actions.
pub fn design_matrix(mc: &ModelClass, actions: &[f64]) -> Result<DMatrix<f64>> {
    let d = mc.dim();
    let mut out = DMatrix::zeros(actions.len(), d);
    for (r, &x) in actions.iter().enumerate() {
        let phi = mc.concat_feature_vector(x)?;
        for (c, v) in phi.into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    Ok(out)
}
