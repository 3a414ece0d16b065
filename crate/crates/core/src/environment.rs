//! Synthetic reward functions drawn from the model class.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::legendre::{legendre_eval, ActionGrid, ModelClass};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;

/// A reward function `r(x) = theta^T phi_{j*}(x)` with Gaussian observation noise.
///
/// Cloning an environment before any observation gives an identical noise
/// sequence, which is how paired comparisons across algorithms are built.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    mc: ModelClass,
    oracle_index: usize,
    theta_star: Vec<f64>,
    noise_sigma: f64,
    noise: ChaCha8Rng,
    grid: ActionGrid,
    best_index: usize,
    best_value: f64,
}

impl SyntheticEnv {
    /// Draws `j*` uniformly and a unit-norm Gaussian coefficient vector.
    pub fn new(mc: ModelClass, grid: ActionGrid, sigma: f64, seed: u64) -> Result<Self> {
        let mut construction = stream(seed, Stream::EnvConstruction);
        let oracle_index = construction.random_range(0..mc.num_models());
        let theta: Vec<f64> = loop {
            let draw: Vec<f64> = (0..mc.group_size())
                .map(|_| StandardNormal.sample(&mut construction))
                .collect();
            let norm = draw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break draw.into_iter().map(|v| v / norm).collect();
            }
        };
        Self::with_parameters(mc, grid, oracle_index, theta, sigma, seed)
    }

    /// Environment with a prescribed oracle model and coefficients (normalised to unit length).
    pub fn with_parameters(
        mc: ModelClass,
        grid: ActionGrid,
        oracle_index: usize,
        theta: Vec<f64>,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::config(format!("noise sigma must be >= 0, got {sigma}")));
        }
        if oracle_index >= mc.num_models() {
            return Err(Error::config(format!("oracle index {oracle_index} out of range")));
        }
        if theta.len() != mc.group_size() {
            return Err(Error::config("coefficient length must equal the group size"));
        }
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::config("coefficient vector must be non-zero"));
        }
        let theta_star = theta.into_iter().map(|v| v / norm).collect();

        let mut env = Self {
            mc,
            oracle_index,
            theta_star,
            noise_sigma: sigma,
            noise: stream(seed, Stream::EnvNoise),
            grid,
            best_index: 0,
            best_value: f64::NEG_INFINITY,
        };
        for (i, &x) in env.grid.points().iter().enumerate() {
            let r = env.mean_unchecked(x);
            if r > env.best_value {
                env.best_value = r;
                env.best_index = i;
            }
        }
        Ok(env)
    }

    pub fn model_class(&self) -> &ModelClass {
        &self.mc
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn oracle_index(&self) -> usize {
        self.oracle_index
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    /// `theta*` embedded in the concatenated coefficient space (zeros outside group `j*`).
    pub fn theta_concat(&self) -> Vec<f64> {
        let s = self.mc.group_size();
        let mut out = vec![0.0; self.mc.dim()];
        out[self.oracle_index * s..(self.oracle_index + 1) * s].copy_from_slice(&self.theta_star);
        out
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn best_value(&self) -> f64 {
        self.best_value
    }

    pub fn best_index(&self) -> usize {
        self.best_index
    }

    pub fn best_action(&self) -> f64 {
        self.grid.point(self.best_index)
    }

    fn mean_unchecked(&self, x: f64) -> f64 {
        let c = self.mc.scale();
        self.mc
            .model(self.oracle_index)
            .iter()
            .zip(&self.theta_star)
            .map(|(&k, &th)| th * c * legendre_eval(k, x).expect("x checked by caller"))
            .sum()
    }

    pub fn reward_mean(&self, x: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("action {x} outside [-1, 1]")));
        }
        Ok(self.mean_unchecked(x))
    }

    /// Noisy reward; advances the noise stream.
    pub fn observe(&mut self, x: f64) -> Result<f64> {
        let mean = self.reward_mean(x)?;
        if self.noise_sigma == 0.0 {
            return Ok(mean);
        }
        let normal = Normal::new(0.0, self.noise_sigma)
            .map_err(|e| Error::numerical(format!("noise distribution: {e}")))?;
        Ok(mean + normal.sample(&mut self.noise))
    }

    pub fn regret_increment(&self, x: f64) -> Result<f64> {
        Ok(self.best_value - self.reward_mean(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_env(sigma: f64, seed: u64) -> SyntheticEnv {
        let mc = ModelClass::enumerate(4, 2).unwrap();
        SyntheticEnv::new(mc, ActionGrid::default(), sigma, seed).unwrap()
    }

    #[test]
    fn construction_is_deterministic() {
        let a = small_env(0.01, 11);
        let b = small_env(0.01, 11);
        assert_eq!(a.oracle_index(), b.oracle_index());
        assert_eq!(a.theta_star(), b.theta_star());
        let norm: f64 = a.theta_star().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_basis_vector_gives_constant_reward() {
        let mc = ModelClass::enumerate(3, 2).unwrap();
        let c = mc.scale();
        let env = SyntheticEnv::with_parameters(mc, ActionGrid::default(), 0, vec![1.0, 0.0], 0.0, 0).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.8] {
            assert!((env.reward_mean(x).unwrap() - c).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_matches_explicit_sum() {
        let env = small_env(0.01, 5);
        let mc = env.model_class();
        let model = mc.model(env.oracle_index()).to_vec();
        for x in [-0.9f64, -0.1, 0.4, 1.0] {
            let mut want = 0.0;
            for (k, th) in model.iter().zip(env.theta_star()) {
                let p = match k {
                    0 => 1.0,
                    1 => x,
                    2 => 0.5 * (3.0 * x * x - 1.0),
                    3 => 0.5 * (5.0 * x * x * x - 3.0 * x),
                    4 => (35.0 * x.powi(4) - 30.0 * x * x + 3.0) / 8.0,
                    _ => unreachable!(),
                };
                want += th * mc.scale() * p;
            }
            assert!((env.reward_mean(x).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn best_value_and_regret() {
        let env = small_env(0.01, 9);
        assert_eq!(env.regret_increment(env.best_action()).unwrap(), 0.0);
        assert_eq!(env.reward_mean(env.best_action()).unwrap(), env.best_value());
        for &x in env.grid().points() {
            assert!(env.regret_increment(x).unwrap() >= -1e-12);
            assert!(env.reward_mean(x).unwrap().abs() <= 1.0);
        }
    }

    #[test]
    fn noiseless_observations_are_exact() {
        let mut env = small_env(0.0, 2);
        assert_eq!(env.observe(0.25).unwrap(), env.reward_mean(0.25).unwrap());
    }

    #[test]
    fn noise_sample_mean_within_clt_band() {
        let mut env = small_env(0.01, 4);
        let x = 0.1;
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| env.observe(x).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - env.reward_mean(x).unwrap()).abs() <= 4.0 * 0.01 / (n as f64).sqrt());
    }

    #[test]
    fn equal_seeds_share_noise() {
        let mut a = small_env(0.01, 21);
        let mut b = small_env(0.01, 21);
        let xs = [0.1, -0.5, 0.9, 0.0];
        let ya: Vec<f64> = xs.iter().map(|&x| a.observe(x).unwrap()).collect();
        let yb: Vec<f64> = xs.iter().map(|&x| b.observe(x).unwrap()).collect();
        assert_eq!(ya, yb);
        // the stream advances
        assert_ne!(a.observe(0.1).unwrap(), ya[0]);
    }

    #[test]
    fn default_sigma() {
        assert_eq!(DEFAULT_NOISE_SIGMA, 0.01);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mc = ModelClass::enumerate(3, 2).unwrap();
        assert!(SyntheticEnv::new(mc.clone(), ActionGrid::default(), -1.0, 0).is_err());
        let env = SyntheticEnv::new(mc, ActionGrid::default(), 0.1, 0).unwrap();
        assert!(env.reward_mean(1.5).is_err());
    }
}
