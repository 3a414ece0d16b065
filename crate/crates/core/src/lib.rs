//! Anytime model selection for linear bandits.
//!
//! The crate is organised bottom-up:
//!
//! - [`legendre`]: the Legendre model class and the discretised action grid.
//! - [`environment`]: synthetic reward functions with Gaussian feedback.
//! - [`grouplasso`]: the online group-Lasso estimator and its regularisation schedule.
//! - [`ridge`]: per-model ridge agents (kernel posterior, UCB and greedy proposals).
//! - [`alexp`]: the exponential-weights meta-learner driven by hallucinated Lasso rewards.
//! - [`baselines`]: explore-then-commit, explore-then-select, Corral and plain UCB.
//! - [`diagnostics`]: restricted-eigenvalue and covariance diagnostics.
//! - [`trace`]: per-step regret records shared by every algorithm.

pub mod alexp;
pub mod baselines;
pub mod diagnostics;
pub mod environment;
pub mod error;
pub mod grouplasso;
pub mod legendre;
pub mod ridge;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
