#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Group-wise KKT violation for `(1/t)||y - X theta||^2 + 2 lambda sum_j ||theta_j||`,
/// computed straight from the design.
pub fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, g: usize, lambda: f64) -> f64 {
    let t = x.nrows() as f64;
    let corr = x.transpose() * (y - x * theta) * (2.0 / t);
    let mut worst: f64 = 0.0;
    for j in 0..theta.len() / g {
        let c = corr.rows(j * g, g);
        let th = theta.rows(j * g, g);
        let n = th.norm();
        let v = if n > 0.0 {
            (c - th * (2.0 * lambda / n)).norm()
        } else {
            (c.norm() - 2.0 * lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst / (1.0 + 2.0 * lambda)
}

/// Ridge posterior in primal form: mean `phi^T (A^T A + reg^2 I)^{-1} A^T y`,
/// sd `reg * sqrt(phi^T (A^T A + reg^2 I)^{-1} phi)`.
pub fn primal_posterior(a: &DMatrix<f64>, y: &DVector<f64>, reg: f64, phi: &DVector<f64>) -> (f64, f64) {
    let d = a.ncols();
    let v = a.transpose() * a + DMatrix::identity(d, d) * (reg * reg);
    let lu = v.lu();
    let w = lu.solve(&(a.transpose() * y)).unwrap();
    let z = lu.solve(phi).unwrap();
    (phi.dot(&w), reg * phi.dot(&z).max(0.0).sqrt())
}
