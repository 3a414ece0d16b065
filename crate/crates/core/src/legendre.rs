//! Legendre model class over the discretised action domain `[-1, 1]`.
//!
//! Each model is a set of `s` distinct polynomial degrees drawn from
//! `{0, ..., p}`; its feature map stacks the corresponding Legendre
//! polynomials. All features are multiplied by one global scale so that the
//! concatenation of every model's features has Euclidean norm at most one on
//! the action grid.

use crate::rng::{stream, Stream};
use crate::{Error, Result};

pub const DEFAULT_GRID_SIZE: usize = 512;

/// Evaluates `P_k(x)` with Bonnet's recurrence.
pub fn legendre_eval(k: usize, x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("x = {x} outside [-1, 1]")));
    }
    Ok(legendre_unchecked(k, x))
}

fn legendre_unchecked(k: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = x;
    for n in 1..k {
        let n = n as f64;
        let next = ((2.0 * n + 1.0) * x * cur - n * prev) / (n + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Fills `out[k] = P_k(x)` for `k = 0..out.len()`.
fn legendre_all(x: f64, out: &mut [f64]) {
    for k in 0..out.len() {
        out[k] = match k {
            0 => 1.0,
            1 => x,
            _ => {
                let n = (k - 1) as f64;
                ((2.0 * n + 1.0) * x * out[k - 1] - n * out[k - 2]) / (n + 1.0)
            }
        };
    }
}

/// Evenly spaced actions on `[-1, 1]`, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    points: Vec<f64>,
}

impl ActionGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::config(format!("grid needs at least 2 points, got {size}")));
        }
        let step = 2.0 / (size - 1) as f64;
        let mut points: Vec<f64> = (0..size).map(|i| -1.0 + step * i as f64).collect();
        // pin the right endpoint against accumulated rounding
        points[size - 1] = 1.0;
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self::new(DEFAULT_GRID_SIZE).expect("default grid size is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelClass {
    max_degree: usize,
    group_size: usize,
    models: Vec<Vec<usize>>,
    scale: f64,
}

impl ModelClass {
    /// All `C(p+1, s)` subsets of `{0..=p}` in lexicographic order, normalised on the default grid.
    pub fn enumerate(p: usize, s: usize) -> Result<Self> {
        Self::enumerate_on(p, s, &ActionGrid::default())
    }

    pub fn enumerate_on(p: usize, s: usize, grid: &ActionGrid) -> Result<Self> {
        if s == 0 || s > p + 1 {
            return Err(Error::config(format!(
                "group size s = {s} must satisfy 1 <= s <= p + 1 = {}",
                p + 1
            )));
        }
        Self::from_models(p, lexicographic_subsets(p + 1, s), grid)
    }

    /// `m` distinct subsets drawn uniformly without replacement from the full
    /// enumeration, kept in lexicographic order.
    pub fn sample_on(p: usize, s: usize, m: usize, grid: &ActionGrid, seed: u64) -> Result<Self> {
        if s == 0 || s > p + 1 {
            return Err(Error::config(format!(
                "group size s = {s} must satisfy 1 <= s <= p + 1 = {}",
                p + 1
            )));
        }
        let all = lexicographic_subsets(p + 1, s);
        if m == 0 || m > all.len() {
            return Err(Error::config(format!(
                "cannot draw {m} models from {} subsets",
                all.len()
            )));
        }
        let mut rng = stream(seed, Stream::ModelSample);
        let mut picked = rand::seq::index::sample(&mut rng, all.len(), m).into_vec();
        picked.sort_unstable();
        Self::from_models(p, picked.into_iter().map(|i| all[i].clone()).collect(), grid)
    }

    /// Builds a class from explicit degree sets. Sets may repeat; each must
    /// hold `s` distinct degrees no larger than `p`.
    pub fn from_models(p: usize, models: Vec<Vec<usize>>, grid: &ActionGrid) -> Result<Self> {
        let s = models
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::config("model class is empty"))?;
        if s == 0 {
            return Err(Error::config("models must contain at least one degree"));
        }
        for m in &models {
            if m.len() != s {
                return Err(Error::config("all models must have the same size"));
            }
            if m.iter().any(|&k| k > p) {
                return Err(Error::config(format!("degree above p = {p} in model {m:?}")));
            }
            let mut sorted = m.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != s {
                return Err(Error::config(format!("repeated degree in model {m:?}")));
            }
        }

        let mut counts = vec![0usize; p + 1];
        for &k in models.iter().flatten() {
            counts[k] += 1;
        }
        let mut basis = vec![0.0; p + 1];
        let max_norm = grid
            .points()
            .iter()
            .map(|&x| {
                legendre_all(x, &mut basis);
                counts
                    .iter()
                    .zip(&basis)
                    .map(|(&c, &v)| c as f64 * v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if max_norm <= 0.0 || !max_norm.is_finite() {
            return Err(Error::numerical("concatenated feature norm vanishes on the grid"));
        }

        Ok(Self {
            max_degree: p,
            group_size: s,
            models,
            scale: 1.0 / max_norm,
        })
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    /// Length of the concatenated feature vector, `M * s`.
    pub fn dim(&self) -> usize {
        self.models.len() * self.group_size
    }

    pub fn models(&self) -> &[Vec<usize>] {
        &self.models
    }

    pub fn model(&self, j: usize) -> &[usize] {
        &self.models[j]
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Base polynomial degree behind every column of the concatenated feature map.
    pub fn columns(&self) -> Vec<usize> {
        self.models.iter().flatten().copied().collect()
    }

    /// Scaled features of model `j` (zero-based).
    pub fn feature_vector(&self, j: usize, x: f64) -> Result<Vec<f64>> {
        let model = self
            .models
            .get(j)
            .ok_or_else(|| Error::domain(format!("model index {j} out of range")))?;
        model
            .iter()
            .map(|&k| legendre_eval(k, x).map(|v| self.scale * v))
            .collect()
    }

    pub fn concat_feature_vector(&self, x: f64) -> Result<Vec<f64>> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("x = {x} outside [-1, 1]")));
        }
        let mut basis = vec![0.0; self.max_degree + 1];
        legendre_all(x, &mut basis);
        Ok(self
            .models
            .iter()
            .flatten()
            .map(|&k| self.scale * basis[k])
            .collect())
    }

    /// Number of models other than `j` sharing at least `min_shared` degrees with model `j`.
    pub fn overlap_census(&self, j: usize, min_shared: usize) -> usize {
        let target = &self.models[j];
        self.models
            .iter()
            .enumerate()
            .filter(|&(i, m)| i != j && m.iter().filter(|k| target.contains(k)).count() >= min_shared)
            .count()
    }

    /// Precomputes scaled base polynomials on every grid point.
    pub fn tabulate(&self, grid: &ActionGrid) -> GridFeatures {
        let width = self.max_degree + 1;
        let mut values = vec![0.0; grid.len() * width];
        for (i, &x) in grid.points().iter().enumerate() {
            let row = &mut values[i * width..(i + 1) * width];
            legendre_all(x, row);
            row.iter_mut().for_each(|v| *v *= self.scale);
        }
        GridFeatures {
            points: grid.points().to_vec(),
            width,
            values,
        }
    }
}

/// Scaled base polynomial values `c * P_k(x_i)` on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFeatures {
    points: Vec<f64>,
    width: usize,
    values: Vec<f64>,
}

impl GridFeatures {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn basis(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    /// Features of grid point `i` for the given list of degrees.
    pub fn fill(&self, i: usize, columns: &[usize], out: &mut [f64]) {
        let row = self.basis(i);
        for (o, &k) in out.iter_mut().zip(columns) {
            *o = row[k];
        }
    }

    pub fn row(&self, i: usize, columns: &[usize]) -> Vec<f64> {
        let row = self.basis(i);
        columns.iter().map(|&k| row[k]).collect()
    }
}

fn lexicographic_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // rightmost index that can still move
        let Some(i) = (0..k).rev().find(|&i| current[i] < n - k + i) else {
            return out;
        };
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn low_degree_values() {
        assert_eq!(legendre_eval(0, 0.7).unwrap(), 1.0);
        assert_eq!(legendre_eval(1, 0.3).unwrap(), 0.3);
        assert!((legendre_eval(2, 0.5).unwrap() + 0.125).abs() < 1e-15);
    }

    #[test]
    fn rejects_points_outside_domain() {
        assert!(matches!(legendre_eval(3, 1.5), Err(Error::Domain(_))));
        assert!(matches!(legendre_eval(0, -1.0001), Err(Error::Domain(_))));
    }

    #[test]
    fn recurrence_matches_closed_forms() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-1.0..=1.0);
            let closed = [1.0, x, 0.5 * (3.0 * x * x - 1.0), 0.5 * (5.0 * x.powi(3) - 3.0 * x)];
            for (k, want) in closed.iter().enumerate() {
                assert!((legendre_eval(k, x).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bounded_by_one() {
        let grid = ActionGrid::default();
        for k in 0..15 {
            for &x in grid.points() {
                assert!(legendre_eval(k, x).unwrap().abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn trapezoid_orthogonality() {
        let n = 2048;
        let h = 2.0 / (n - 1) as f64;
        for i in 0..=10 {
            for j in 0..=10 {
                if i == j {
                    continue;
                }
                let integral: f64 = (0..n)
                    .map(|m| {
                        let x = (-1.0 + h * m as f64).min(1.0);
                        let w = if m == 0 || m == n - 1 { 0.5 } else { 1.0 };
                        w * legendre_eval(i, x).unwrap() * legendre_eval(j, x).unwrap()
                    })
                    .sum::<f64>()
                    * h;
                // leading trapezoid error h^2/12 (f'(1) - f'(-1)), using P_k'(1) = k(k+1)/2
                let slope = if (i + j) % 2 == 0 {
                    (i * (i + 1) + j * (j + 1)) as f64
                } else {
                    0.0
                };
                let bound = (1.05 * h * h / 12.0 * slope).max(1e-6);
                assert!(integral.abs() < bound, "<P{i}, P{j}> = {integral}");
                if slope <= 12.0 {
                    assert!(integral.abs() < 1e-6, "<P{i}, P{j}> = {integral}");
                }
            }
        }
    }

    #[test]
    fn sampled_class_is_a_seeded_subset() {
        let grid = ActionGrid::default();
        let full = ModelClass::enumerate(10, 8).unwrap();
        let a = ModelClass::sample_on(10, 8, 55, &grid, 3).unwrap();
        let b = ModelClass::sample_on(10, 8, 55, &grid, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_models(), 55);
        assert!(a.models().windows(2).all(|w| w[0] < w[1]));
        assert!(a.models().iter().all(|m| full.models().contains(m)));
        assert!(ModelClass::sample_on(10, 8, 166, &grid, 3).is_err());
        let whole = ModelClass::sample_on(10, 8, 165, &grid, 9).unwrap();
        assert_eq!(whole, full);
    }

    #[test]
    fn model_counts() {
        assert_eq!(ModelClass::enumerate(10, 2).unwrap().num_models(), 55);
        assert_eq!(ModelClass::enumerate(10, 3).unwrap().num_models(), 165);
        let tiny = ModelClass::enumerate(1, 1).unwrap();
        assert_eq!(tiny.models(), &[vec![0], vec![1]]);
    }

    #[test]
    fn rejects_oversized_groups() {
        assert!(matches!(ModelClass::enumerate(2, 4), Err(Error::InvalidConfig(_))));
        assert!(matches!(ModelClass::enumerate(2, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn enumeration_is_lexicographic_and_deterministic() {
        let a = ModelClass::enumerate(6, 3).unwrap();
        let b = ModelClass::enumerate(6, 3).unwrap();
        assert_eq!(a, b);
        for w in a.models().windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(a.models().iter().all(|m| m.windows(2).all(|p| p[0] < p[1])));
    }

    #[test]
    fn per_model_features() {
        let mc = ModelClass::enumerate(2, 2).unwrap();
        let c = mc.scale();
        let f = mc.feature_vector(0, 0.5).unwrap();
        assert_eq!(mc.model(0), &[0, 1]);
        assert!((f[0] - c).abs() < 1e-15 && (f[1] - 0.5 * c).abs() < 1e-15);
        assert_eq!(mc.model(1), &[0, 2]);
        let g = mc.feature_vector(1, 0.0).unwrap();
        assert!((g[1] + 0.5 * c).abs() < 1e-15);
    }

    #[test]
    fn concat_on_tiny_class() {
        let mc = ModelClass::enumerate(1, 1).unwrap();
        let v = mc.concat_feature_vector(1.0).unwrap();
        assert_eq!(v.len(), 2);
        assert!((v[0] - mc.scale()).abs() < 1e-15 && (v[1] - mc.scale()).abs() < 1e-15);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(norm <= 1.0 + 1e-12);
    }

    #[test]
    fn concat_norm_bounded_on_grid() {
        let grid = ActionGrid::default();
        for (p, s) in [(10, 2), (10, 3), (4, 4), (3, 1)] {
            let mc = ModelClass::enumerate(p, s).unwrap();
            let mut worst: f64 = 0.0;
            for &x in grid.points() {
                let v = mc.concat_feature_vector(x).unwrap();
                assert_eq!(v.len(), mc.dim());
                worst = worst.max(v.iter().map(|a| a * a).sum::<f64>().sqrt());
            }
            assert!(worst <= 1.0 + 1e-12);
            assert!(worst >= 1.0 - 1e-12, "normalisation attains the bound on the grid");
        }
    }

    #[test]
    fn easy_class_vector_length() {
        let mc = ModelClass::enumerate(10, 2).unwrap();
        assert_eq!(mc.concat_feature_vector(0.3).unwrap().len(), 110);
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let grid = ActionGrid::new(33).unwrap();
        let mc = ModelClass::enumerate(5, 2).unwrap();
        let table = mc.tabulate(&grid);
        let cols = mc.columns();
        for i in 0..grid.len() {
            let direct = mc.concat_feature_vector(grid.point(i)).unwrap();
            let tab = table.row(i, &cols);
            for (a, b) in direct.iter().zip(&tab) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn overlap_census_counts_shared_degrees() {
        let mc = ModelClass::enumerate(3, 2).unwrap();
        // {0,1} shares one degree with {0,2},{0,3},{1,2},{1,3}
        assert_eq!(mc.overlap_census(0, 1), 4);
        assert_eq!(mc.overlap_census(0, 2), 0);
    }
}
