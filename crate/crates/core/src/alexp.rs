//! Exponential weights over base agents with hallucinated Lasso feedback.
//!
//! Each step either explores uniformly on the grid (with probability
//! `gamma_t`) or plays the proposal of an agent drawn from `q_t`. The new
//! observation is broadcast to every agent, the group Lasso is re-solved, and
//! every agent's next proposal is scored by the Lasso estimate. Those scores
//! accumulate for all agents, played or not, and `q_{t+1}` is the softmax of
//! `eta_t` times the running sums.

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::environment::SyntheticEnv;
use crate::grouplasso::{solve_problem, GramProblem, LassoSchedule, SolveStatus, SolverOptions, DEFAULT_LAMBDA0};
use crate::legendre::{GridFeatures, ModelClass};
use crate::ridge::{FeatureMap, ProposalRule, RidgeAgent, DEFAULT_BETA, DEFAULT_RIDGE_REG};
use crate::rng::{stream, Stream};
use crate::trace::RegretTrace;
use crate::{Error, Result};

pub const DEFAULT_GAMMA0: f64 = 1e-3;
pub const DEFAULT_ETA0: f64 = 50.0;
pub const DEFAULT_DELTA: f64 = 0.1;

/// Exploration probability `min(1, gamma0 * t^{-1/4})`.
pub fn schedule_gamma(gamma0: f64, t: usize) -> Result<f64> {
    if !(gamma0 >= 0.0) {
        return Err(Error::config(format!("gamma0 must be >= 0, got {gamma0}")));
    }
    if t == 0 {
        return Err(Error::config("schedules start at t = 1"));
    }
    Ok((gamma0 * (t as f64).powf(-0.25)).min(1.0))
}

/// Learning rate `eta0 * t^{-1/2}`, clipped to `cap` when one is given.
pub fn schedule_eta(eta0: f64, t: usize, cap: Option<f64>) -> f64 {
    assert!(t >= 1, "schedules start at t = 1");
    let eta = eta0 / (t as f64).sqrt();
    match cap {
        Some(c) => eta.min(c),
        None => eta,
    }
}

/// Softmax of `eta * cum` with max-subtraction.
pub fn exp_weights_update(cum: &[f64], eta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = cum.iter().map(|&c| eta * c).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Inverse-CDF draw from a probability vector given `u` in `[0, 1)`.
pub fn sample_index(q: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in q.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left a sliver above the last partial sum
    q.iter().rposition(|&p| p > 0.0).unwrap_or(q.len() - 1)
}

/// Probability that the mixture policy plays grid point `x`.
pub fn mixture_density(q: &[f64], proposals: &[usize], gamma: f64, grid_len: usize, x: usize) -> f64 {
    let exploit: f64 = q
        .iter()
        .zip(proposals)
        .filter(|(_, &p)| p == x)
        .map(|(&w, _)| w)
        .sum();
    gamma / grid_len as f64 + (1.0 - gamma) * exploit
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlexpConfig {
    pub gamma0: f64,
    pub eta0: f64,
    /// Clip `eta_t` so that `eta_t * |r_hat| <= 1`.
    pub eta_clip: bool,
    pub lambda0: f64,
    pub delta: f64,
    pub lambda_ridge: f64,
    pub beta: f64,
    pub rule: ProposalRule,
    /// Re-solve the Lasso every `solve_every` steps.
    pub solve_every: usize,
    pub solver: SolverOptions,
}

impl Default for AlexpConfig {
    fn default() -> Self {
        Self {
            gamma0: DEFAULT_GAMMA0,
            eta0: DEFAULT_ETA0,
            eta_clip: false,
            lambda0: DEFAULT_LAMBDA0,
            delta: DEFAULT_DELTA,
            lambda_ridge: DEFAULT_RIDGE_REG,
            beta: DEFAULT_BETA,
            rule: ProposalRule::Ucb,
            solve_every: 1,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub q: Vec<f64>,
    pub cum_rhat: Vec<f64>,
    pub t: usize,
    pub eta: f64,
    pub visited: BTreeSet<usize>,
}

impl MetaState {
    pub fn new(num_models: usize) -> Self {
        Self {
            q: vec![1.0 / num_models as f64; num_models],
            cum_rhat: vec![0.0; num_models],
            t: 0,
            eta: f64::INFINITY,
            visited: BTreeSet::new(),
        }
    }
}

/// What happened during one step, including the raw random draws.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub t: usize,
    pub gamma: f64,
    pub explore_draw: f64,
    pub explored: bool,
    /// Uniform draw used for the agent (exploit) or grid point (explore).
    pub choice_draw: f64,
    pub agent: Option<usize>,
    pub action_index: usize,
    pub reward: f64,
    pub lambda: f64,
    pub rhat: Vec<f64>,
    pub eta: f64,
    pub solve_status: Option<SolveStatus>,
}

pub struct Alexp {
    cfg: AlexpConfig,
    table: GridFeatures,
    columns: Vec<usize>,
    agents: Vec<RidgeAgent>,
    meta: MetaState,
    lasso: GramProblem,
    schedule: LassoSchedule,
    theta_hat: DVector<f64>,
    proposals: Vec<usize>,
    rng: ChaCha8Rng,
    trace: RegretTrace,
}

impl Alexp {
    /// `noise_sigma` is the (known) noise level entering the Lasso schedule.
    pub fn new(cfg: AlexpConfig, env: &SyntheticEnv, seed: u64) -> Result<Self> {
        Self::with_rng(cfg, env, stream(seed, Stream::Alexp), seed)
    }

    pub fn with_rng(cfg: AlexpConfig, env: &SyntheticEnv, rng: ChaCha8Rng, seed: u64) -> Result<Self> {
        if cfg.solve_every == 0 {
            return Err(Error::config("solve_every must be >= 1"));
        }
        if !(cfg.eta0 >= 0.0) {
            return Err(Error::config(format!("eta0 must be >= 0, got {}", cfg.eta0)));
        }
        schedule_gamma(cfg.gamma0, 1)?;
        let mc: &ModelClass = env.model_class();
        let table = mc.tabulate(env.grid());
        let agents = (0..mc.num_models())
            .map(|j| {
                RidgeAgent::new(
                    FeatureMap::new(mc.model(j).to_vec(), mc.scale()),
                    cfg.lambda_ridge,
                    cfg.beta,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let proposals = agents.iter().map(|a| a.propose(&table, cfg.rule)).collect();
        let schedule = LassoSchedule::new(
            env.noise_sigma(),
            mc.num_models(),
            mc.group_size(),
            cfg.delta,
            cfg.lambda0,
        )?;
        Ok(Self {
            lasso: GramProblem::empty(mc.dim(), mc.group_size())?,
            theta_hat: DVector::zeros(mc.dim()),
            columns: mc.columns(),
            meta: MetaState::new(mc.num_models()),
            trace: RegretTrace::new("alexp", seed),
            cfg,
            table,
            agents,
            schedule,
            proposals,
            rng,
        })
    }

    pub fn state(&self) -> &MetaState {
        &self.meta
    }

    pub fn agents(&self) -> &[RidgeAgent] {
        &self.agents
    }

    /// Grid indices each agent will propose at the next step.
    pub fn proposals(&self) -> &[usize] {
        &self.proposals
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn trace(&self) -> &RegretTrace {
        &self.trace
    }

    pub fn into_trace(self) -> RegretTrace {
        self.trace
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.trace.algorithm = label.into();
    }

    /// Density of the current mixture policy at grid point `x`.
    pub fn current_density(&self, x: usize) -> Result<f64> {
        let gamma = schedule_gamma(self.cfg.gamma0, self.meta.t + 1)?;
        Ok(mixture_density(&self.meta.q, &self.proposals, gamma, self.table.len(), x))
    }

    pub fn step(&mut self, env: &mut SyntheticEnv) -> Result<StepOutcome> {
        let t = self.meta.t + 1;
        let gamma = schedule_gamma(self.cfg.gamma0, t)?;
        let q_now = self.meta.q.clone();

        let explore_draw: f64 = self.rng.random();
        let explored = explore_draw < gamma;
        let choice_draw: f64 = self.rng.random();
        let (agent, action_index) = if explored {
            let i = ((choice_draw * self.table.len() as f64) as usize).min(self.table.len() - 1);
            (None, i)
        } else {
            let j = sample_index(&self.meta.q, choice_draw);
            self.meta.visited.insert(j);
            (Some(j), self.proposals[j])
        };

        let x = self.table.point(action_index);
        let reward = env.observe(x)?;
        let regret = env.regret_increment(x)?;

        // history goes to the Lasso and to every agent
        let row = self.table.row(action_index, &self.columns);
        self.lasso.push_row(&row, reward);
        for agent in &mut self.agents {
            let phi = self.table.row(action_index, &agent.feature_map().columns);
            agent.observe_features(&phi, reward)?;
        }

        let lambda = self.schedule.lambda(t);
        let mut solve_status = None;
        if t.is_multiple_of(self.cfg.solve_every) {
            let est = solve_problem(&self.lasso, lambda, Some(&self.theta_hat), &self.cfg.solver)?;
            if !est.converged() {
                self.trace.nonconverged_solves += 1;
            }
            solve_status = Some(est.status);
            self.theta_hat = est.theta_hat;
        }

        self.proposals = self
            .agents
            .iter()
            .map(|a| a.propose(&self.table, self.cfg.rule))
            .collect();
        let rhat: Vec<f64> = self
            .proposals
            .iter()
            .map(|&i| {
                let basis = self.table.basis(i);
                self.columns
                    .iter()
                    .zip(self.theta_hat.iter())
                    .map(|(&k, th)| th * basis[k])
                    .sum()
            })
            .collect();
        for (c, r) in self.meta.cum_rhat.iter_mut().zip(&rhat) {
            *c += r;
        }

        let cap = if self.cfg.eta_clip {
            let max_abs = rhat.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
            (max_abs > 0.0).then(|| 1.0 / max_abs)
        } else {
            None
        };
        // clipping must not make the rate increase again
        let eta = schedule_eta(self.cfg.eta0, t, cap).min(self.meta.eta);
        self.meta.eta = eta;
        self.meta.q = exp_weights_update(&self.meta.cum_rhat, eta);
        self.meta.t = t;

        self.trace.push(x, reward, regret, explored, agent, Some(&q_now));

        Ok(StepOutcome {
            t,
            gamma,
            explore_draw,
            explored,
            choice_draw,
            agent,
            action_index,
            reward,
            lambda,
            rhat,
            eta,
            solve_status,
        })
    }

    pub fn run(&mut self, env: &mut SyntheticEnv, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(env)?;
        }
        Ok(())
    }
}

/// Runs ALExp for `n` steps on a copy-fresh environment.
pub fn alexp_run(cfg: &AlexpConfig, env: &mut SyntheticEnv, n: usize, seed: u64) -> Result<RegretTrace> {
    let mut alg = Alexp::new(cfg.clone(), env, seed)?;
    alg.run(env, n)?;
    Ok(alg.into_trace())
}
