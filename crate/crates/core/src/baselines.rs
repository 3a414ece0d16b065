//! Comparison algorithms: plain UCB (oracle and naive feature maps),
//! explore-then-commit, explore-then-select and Corral with log-barrier OMD.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::alexp::sample_index;
use crate::environment::SyntheticEnv;
use crate::grouplasso::{group_norms, solve_problem, GramProblem, SolverOptions, SUPPORT_TOL};
use crate::legendre::GridFeatures;
use crate::ridge::{FeatureMap, RidgeAgent};
use crate::rng::{stream, Stream};
use crate::trace::RegretTrace;
use crate::{Error, Result};

pub const DEFAULT_N0: usize = 20;

/// Feature map for plain UCB: the oracle's own map or every map concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcbMode {
    Oracle,
    Naive,
}

pub fn ucb_feature_map(env: &SyntheticEnv, mode: UcbMode) -> FeatureMap {
    let mc = env.model_class();
    let columns = match mode {
        UcbMode::Oracle => mc.model(env.oracle_index()).to_vec(),
        UcbMode::Naive => mc.columns(),
    };
    FeatureMap::new(columns, mc.scale())
}

/// Plays `argmax mu + beta sigma` for `n` steps with a single ridge agent.
pub fn ucb_run(
    env: &mut SyntheticEnv,
    map: FeatureMap,
    n: usize,
    lambda_ridge: f64,
    beta: f64,
    label: &str,
    seed: u64,
) -> Result<RegretTrace> {
    let table = env.model_class().tabulate(env.grid());
    let mut agent = RidgeAgent::new(map, lambda_ridge, beta)?;
    let mut trace = RegretTrace::new(label, seed);
    for _ in 0..n {
        let i = agent.ucb_propose(&table);
        play(env, &table, &mut agent, i, &mut trace, false, None)?;
    }
    Ok(trace)
}

fn play(
    env: &mut SyntheticEnv,
    table: &GridFeatures,
    agent: &mut RidgeAgent,
    i: usize,
    trace: &mut RegretTrace,
    explored: bool,
    q: Option<&[f64]>,
) -> Result<()> {
    let x = table.point(i);
    let y = env.observe(x)?;
    let phi = table.row(i, &agent.feature_map().columns);
    agent.observe_features(&phi, y)?;
    trace.push(x, y, env.regret_increment(x)?, explored, None, q);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtcConfig {
    pub n0: usize,
    pub n: usize,
    pub lambda1: f64,
}

impl EtcConfig {
    /// Uses `lambda1 = lambda0 * sqrt(log M / n0)`.
    pub fn new(n0: usize, n: usize, num_models: usize, lambda0: f64) -> Result<Self> {
        let cfg = Self {
            n0,
            n,
            lambda1: lambda0 * ((num_models as f64).ln() / n0.max(1) as f64).sqrt(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.n0 > self.n {
            return Err(Error::config(format!(
                "explore length n0 = {} must satisfy 1 <= n0 <= n = {}",
                self.n0, self.n
            )));
        }
        if !(self.lambda1 >= 0.0) {
            return Err(Error::config("lambda1 must be >= 0"));
        }
        Ok(())
    }
}

/// Uniform exploration phase shared by ETC and ETS.
fn explore_phase(
    env: &mut SyntheticEnv,
    table: &GridFeatures,
    columns: &[usize],
    group_size: usize,
    n0: usize,
    rng: &mut ChaCha8Rng,
    trace: &mut RegretTrace,
) -> Result<(GramProblem, Vec<(usize, f64)>)> {
    let mut problem = GramProblem::empty(columns.len(), group_size)?;
    let mut history = Vec::with_capacity(n0);
    for _ in 0..n0 {
        let i = rng.random_range(0..table.len());
        let x = table.point(i);
        let y = env.observe(x)?;
        problem.push_row(&table.row(i, columns), y);
        history.push((i, y));
        trace.push(x, y, env.regret_increment(x)?, true, None, None);
    }
    Ok((problem, history))
}

fn lasso_once(problem: &GramProblem, lambda: f64, trace: &mut RegretTrace) -> Result<DVector<f64>> {
    let est = solve_problem(problem, lambda, None, &SolverOptions::default())?;
    if !est.converged() {
        trace.nonconverged_solves += 1;
    }
    Ok(est.theta_hat)
}

/// Explore for `n0` steps, fit the Lasso once, then commit to its greedy action.
pub fn etc_run(cfg: &EtcConfig, env: &mut SyntheticEnv, seed: u64) -> Result<RegretTrace> {
    cfg.validate()?;
    let mc = env.model_class().clone();
    let table = mc.tabulate(env.grid());
    let columns = mc.columns();
    let mut rng = stream(seed, Stream::Etc);
    let mut trace = RegretTrace::new("etc", seed);
    let (problem, _) = explore_phase(env, &table, &columns, mc.group_size(), cfg.n0, &mut rng, &mut trace)?;
    if cfg.n0 == cfg.n {
        return Ok(trace);
    }
    let theta = lasso_once(&problem, cfg.lambda1, &mut trace)?;
    let commit = (0..table.len())
        .map(|i| {
            let b = table.basis(i);
            (i, columns.iter().zip(theta.iter()).map(|(&k, th)| th * b[k]).sum::<f64>())
        })
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
        .0;
    let x = table.point(commit);
    for _ in cfg.n0..cfg.n {
        let y = env.observe(x)?;
        trace.push(x, y, env.regret_increment(x)?, false, None, None);
    }
    Ok(trace)
}

/// Groups kept by explore-then-select, with the fallback used when the Lasso selects nothing.
pub fn select_support(norms: &[f64]) -> (Vec<usize>, Option<&'static str>) {
    let support: Vec<usize> = (0..norms.len()).filter(|&j| norms[j] > SUPPORT_TOL).collect();
    if !support.is_empty() {
        return (support, None);
    }
    let (best, &best_norm) = norms
        .iter()
        .enumerate()
        .fold((0, &0.0), |b, (j, v)| if *v > *b.1 { (j, v) } else { b });
    if best_norm > 0.0 {
        (vec![best], Some("empty support: kept the largest group"))
    } else {
        ((0..norms.len()).collect(), Some("empty support: kept every group"))
    }
}

/// Explore for `n0` steps, keep the groups the Lasso selects, then run UCB on their stacked features.
pub fn ets_run(
    cfg: &EtcConfig,
    env: &mut SyntheticEnv,
    lambda_ridge: f64,
    beta: f64,
    seed: u64,
) -> Result<RegretTrace> {
    cfg.validate()?;
    let mc = env.model_class().clone();
    let table = mc.tabulate(env.grid());
    let columns = mc.columns();
    let mut rng = stream(seed, Stream::Ets);
    let mut trace = RegretTrace::new("ets", seed);
    let (problem, history) =
        explore_phase(env, &table, &columns, mc.group_size(), cfg.n0, &mut rng, &mut trace)?;
    if cfg.n0 == cfg.n {
        return Ok(trace);
    }
    let theta = lasso_once(&problem, cfg.lambda1, &mut trace)?;
    let (selected, note) = select_support(&group_norms(theta.as_slice(), mc.group_size()));
    if let Some(note) = note {
        trace.notes.push(note.to_string());
    }
    trace.notes.push(format!("selected groups: {selected:?}"));

    let stacked: Vec<usize> = selected.iter().flat_map(|&j| mc.model(j).iter().copied()).collect();
    let mut agent = RidgeAgent::new(FeatureMap::new(stacked, mc.scale()), lambda_ridge, beta)?;
    for &(i, y) in &history {
        agent.observe_features(&table.row(i, &agent.feature_map().columns), y)?;
    }
    for _ in cfg.n0..cfg.n {
        let i = agent.ucb_propose(&table);
        play(env, &table, &mut agent, i, &mut trace, false, None)?;
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmdSolution {
    pub q: Vec<f64>,
    pub xi: f64,
    /// `|sum_j 1 / (1/q_j + eta_j (l_j - xi)) - 1|`
    pub residual: f64,
}

const OMD_MAX_BISECTIONS: usize = 200;

/// Log-barrier OMD step: finds `xi` with `sum_j (1/q_j + eta_j (l_j - xi))^{-1} = 1`
/// and returns `q'_j = (1/q_j + eta_j (l_j - xi))^{-1}`.
pub fn log_barrier_omd(q: &[f64], loss: &[f64], eta: &[f64]) -> Result<OmdSolution> {
    let m = q.len();
    if m == 0 || loss.len() != m || eta.len() != m {
        return Err(Error::config("q, loss and eta must have the same non-zero length"));
    }
    if q.iter().any(|&v| !(v > 0.0)) || eta.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::config("q and eta must be strictly positive"));
    }
    let inv_q: Vec<f64> = q.iter().map(|v| 1.0 / v).collect();
    // None when some denominator is non-positive (past the first pole)
    let total = |xi: f64| -> Option<f64> {
        let mut s = 0.0;
        for j in 0..m {
            let denom = inv_q[j] + eta[j] * (loss[j] - xi);
            if !(denom > 0.0) {
                return None;
            }
            s += 1.0 / denom;
        }
        Some(s)
    };
    let min_loss = loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_loss = loss.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    if min_loss == max_loss {
        let residual = (total(min_loss).unwrap_or(f64::INFINITY) - 1.0).abs();
        return Ok(OmdSolution {
            q: q.to_vec(),
            xi: min_loss,
            residual,
        });
    }

    let mut lo = min_loss;
    let mut hi = max_loss;
    // the sum is increasing in xi, <= sum q at min_loss and >= sum q at max_loss
    let mut widen = hi - lo;
    let mut tries = 0;
    while total(lo).is_none_or(|s| s > 1.0) {
        lo -= widen;
        widen *= 2.0;
        tries += 1;
        if tries > 64 {
            return Err(Error::numerical("log-barrier OMD: lower bracket not found"));
        }
    }
    if total(hi).is_some_and(|s| s < 1.0) {
        return Err(Error::numerical("log-barrier OMD: root not bracketed"));
    }

    for _ in 0..OMD_MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match total(mid) {
            Some(s) if s <= 1.0 => lo = mid,
            _ => hi = mid,
        }
    }

    let candidates = [lo, hi];
    let (xi, residual) = candidates
        .iter()
        .filter_map(|&xi| total(xi).map(|s| (xi, (s - 1.0).abs())))
        .fold((lo, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    if !residual.is_finite() {
        return Err(Error::numerical("log-barrier OMD: bisection left the feasible region"));
    }
    let q_new = (0..m)
        .map(|j| 1.0 / (inv_q[j] + eta[j] * (loss[j] - xi)))
        .collect();
    Ok(OmdSolution { q: q_new, xi, residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorralConfig {
    /// `gamma = gamma_scale / n`.
    pub gamma_scale: f64,
    /// `eta = eta_scale * sqrt(M / n)`.
    pub eta_scale: f64,
    pub lambda_ridge: f64,
    pub beta: f64,
    /// Feed `-r_hat` to the OMD step instead of the raw importance-weighted reward.
    pub negate_feedback: bool,
}

impl Default for CorralConfig {
    fn default() -> Self {
        Self {
            gamma_scale: 1.0,
            eta_scale: 1.0,
            lambda_ridge: crate::ridge::DEFAULT_RIDGE_REG,
            beta: crate::ridge::DEFAULT_BETA,
            negate_feedback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorralState {
    pub q: Vec<f64>,
    pub q_bar: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta_vec: Vec<f64>,
    pub beta_growth: f64,
    pub gamma_mix: f64,
    pub horizon: usize,
    pub negate_feedback: bool,
}

impl CorralState {
    pub fn new(num_models: usize, horizon: usize, gamma: f64, eta: f64) -> Result<Self> {
        if num_models == 0 || horizon == 0 {
            return Err(Error::config("Corral needs M >= 1 and n >= 1"));
        }
        if !(0.0..=1.0).contains(&gamma) || !(eta > 0.0) {
            return Err(Error::config(format!("Corral needs gamma in [0, 1] and eta > 0, got {gamma}, {eta}")));
        }
        let m = num_models as f64;
        Ok(Self {
            q: vec![1.0 / m; num_models],
            q_bar: vec![1.0 / m; num_models],
            rho: vec![2.0 * m; num_models],
            eta_vec: vec![eta; num_models],
            // ln 1 = 0, so horizons below 2 use the n = 2 growth factor
            beta_growth: (1.0 / (horizon.max(2) as f64).ln()).exp(),
            gamma_mix: gamma,
            horizon,
            negate_feedback: false,
        })
    }

    pub fn from_config(cfg: &CorralConfig, num_models: usize, horizon: usize) -> Result<Self> {
        let n = horizon.max(1) as f64;
        let gamma = (cfg.gamma_scale / n).clamp(0.0, 1.0);
        let eta = cfg.eta_scale * (num_models as f64 / n).sqrt();
        let mut st = Self::new(num_models, horizon, gamma, eta)?;
        st.negate_feedback = cfg.negate_feedback;
        Ok(st)
    }

    /// Importance-weighted estimate for the played agent.
    pub fn importance_weight(&self, played: usize, reward: f64) -> f64 {
        reward / self.q_bar[played]
    }

    /// Weight update after agent `played` returned `reward`.
    pub fn update(&mut self, played: usize, reward: f64) -> Result<()> {
        let m = self.q.len();
        let rhat = self.importance_weight(played, reward);
        let mut loss = vec![0.0; m];
        loss[played] = if self.negate_feedback { -rhat } else { rhat };
        self.q = log_barrier_omd(&self.q, &loss, &self.eta_vec)?.q;
        let uniform = 1.0 / m as f64;
        self.q_bar = self
            .q
            .iter()
            .map(|&v| (1.0 - self.gamma_mix) * v + self.gamma_mix * uniform)
            .collect();
        for j in 0..m {
            if 1.0 / self.q_bar[j] > self.rho[j] {
                self.rho[j] = 2.0 / self.q_bar[j];
                self.eta_vec[j] *= self.beta_growth;
            }
        }
        Ok(())
    }
}

pub struct Corral {
    state: CorralState,
    table: GridFeatures,
    agents: Vec<RidgeAgent>,
    proposals: Vec<usize>,
    rng: ChaCha8Rng,
    trace: RegretTrace,
}

impl Corral {
    pub fn new(cfg: &CorralConfig, env: &SyntheticEnv, horizon: usize, seed: u64) -> Result<Self> {
        let mc = env.model_class();
        let table = mc.tabulate(env.grid());
        let agents = (0..mc.num_models())
            .map(|j| RidgeAgent::new(FeatureMap::new(mc.model(j).to_vec(), mc.scale()), cfg.lambda_ridge, cfg.beta))
            .collect::<Result<Vec<_>>>()?;
        let proposals = agents.iter().map(|a| a.ucb_propose(&table)).collect();
        Ok(Self {
            state: CorralState::from_config(cfg, mc.num_models(), horizon)?,
            table,
            agents,
            proposals,
            rng: stream(seed, Stream::Corral),
            trace: RegretTrace::new("corral", seed),
        })
    }

    pub fn state(&self) -> &CorralState {
        &self.state
    }

    pub fn agents(&self) -> &[RidgeAgent] {
        &self.agents
    }

    pub fn trace(&self) -> &RegretTrace {
        &self.trace
    }

    pub fn into_trace(self) -> RegretTrace {
        self.trace
    }

    /// One round; returns the played agent.
    pub fn step(&mut self, env: &mut SyntheticEnv) -> Result<usize> {
        let q_now = self.state.q_bar.clone();
        let j = sample_index(&self.state.q_bar, self.rng.random());
        let i = self.proposals[j];
        let x = self.table.point(i);
        let y = env.observe(x)?;
        let regret = env.regret_increment(x)?;

        // only the played agent receives a data point
        let agent = &mut self.agents[j];
        agent.observe_features(&self.table.row(i, &agent.feature_map().columns), y)?;
        self.proposals[j] = agent.ucb_propose(&self.table);

        self.state.update(j, y)?;
        self.trace.push(x, y, regret, false, Some(j), Some(&q_now));
        Ok(j)
    }
}

pub fn corral_run(cfg: &CorralConfig, env: &mut SyntheticEnv, n: usize, seed: u64) -> Result<RegretTrace> {
    let mut alg = Corral::new(cfg, env, n, seed)?;
    for _ in 0..n {
        alg.step(env)?;
    }
    Ok(alg.into_trace())
}
