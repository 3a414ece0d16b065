//! Multi-seed execution, aggregation and sweeps.

use banditlab_core::alexp::alexp_run;
use banditlab_core::baselines::{corral_run, etc_run, ets_run, ucb_feature_map, ucb_run, EtcConfig, UcbMode};
use banditlab_core::diagnostics::{cmin_uniform, design_matrix, restricted_eigenvalue, EigenOptions, EigenReport};
use banditlab_core::environment::SyntheticEnv;
use banditlab_core::legendre::{ActionGrid, ModelClass};
use banditlab_core::rng::{stream, Stream};
use banditlab_core::trace::RegretTrace;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{AlgoSpec, DiagnosticsConfig, ExperimentConfig, InstanceConfig};
use crate::error::{HarnessError, Result};

pub const THREADS_VAR: &str = "BANDITLAB_THREADS";

/// Model class and grid shared by every seed of an experiment.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model_class: ModelClass,
    pub grid: ActionGrid,
    pub sigma: f64,
    pub n: usize,
    pub census_min_shared: usize,
}

impl Instance {
    pub fn build(cfg: &InstanceConfig) -> Result<Self> {
        let grid = ActionGrid::new(cfg.grid_size)?;
        let model_class = match cfg.models {
            Some(m) => ModelClass::sample_on(cfg.p, cfg.s, m, &grid, cfg.model_seed)?,
            None => ModelClass::enumerate_on(cfg.p, cfg.s, &grid)?,
        };
        Ok(Self {
            model_class,
            grid,
            sigma: cfg.sigma,
            n: cfg.n,
            census_min_shared: cfg.census_min_shared.unwrap_or(cfg.s.saturating_sub(2).max(1)),
        })
    }

    pub fn environment(&self, seed: u64) -> Result<SyntheticEnv> {
        Ok(SyntheticEnv::new(self.model_class.clone(), self.grid.clone(), self.sigma, seed)?)
    }
}

/// Per-seed facts about the environment draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedInfo {
    pub seed: u64,
    pub oracle_index: usize,
    pub oracle_model: Vec<usize>,
    pub best_action: f64,
    pub best_value: f64,
    /// Models other than the oracle sharing at least `census_min_shared` degrees with it.
    pub census: usize,
}

#[derive(Debug, Clone)]
pub struct AlgorithmRuns {
    pub spec: AlgoSpec,
    pub traces: Vec<RegretTrace>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub instance: Instance,
    pub seeds: Vec<SeedInfo>,
    pub runs: Vec<AlgorithmRuns>,
}

/// Runs one algorithm on its own copy of the seed's environment.
pub fn run_one(spec: &AlgoSpec, env: &SyntheticEnv, n: usize, seed: u64) -> Result<RegretTrace> {
    let mut env = env.clone();
    let trace = match spec {
        AlgoSpec::Alexp(a) => alexp_run(&a.to_core(), &mut env, n, seed)?,
        AlgoSpec::OracleUcb(u) => {
            let map = ucb_feature_map(&env, UcbMode::Oracle);
            ucb_run(&mut env, map, n, u.lambda_ridge, u.beta, "oracle_ucb", seed)?
        }
        AlgoSpec::NaiveUcb(u) => {
            let map = ucb_feature_map(&env, UcbMode::Naive);
            ucb_run(&mut env, map, n, u.lambda_ridge, u.beta, "naive_ucb", seed)?
        }
        AlgoSpec::Etc(e) => {
            let cfg = EtcConfig::new(e.n0, n, env.model_class().num_models(), e.lambda0)?;
            etc_run(&cfg, &mut env, seed)?
        }
        AlgoSpec::Ets(e) => {
            let cfg = EtcConfig::new(e.n0, n, env.model_class().num_models(), e.lambda0)?;
            ets_run(&cfg, &mut env, e.lambda_ridge, e.beta, seed)?
        }
        AlgoSpec::Corral(c) => corral_run(&c.to_core(), &mut env, n, seed)?,
    };
    Ok(trace)
}

/// Worker pool capped by `BANDITLAB_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let k: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&k| k > 0)
            .ok_or_else(|| HarnessError::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(k);
    }
    builder
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every (algorithm, seed) pair; results come back in (algorithm, seed) order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let instance = Instance::build(&cfg.instance)?;
    let envs = cfg
        .seeds
        .iter()
        .map(|&seed| instance.environment(seed))
        .collect::<Result<Vec<_>>>()?;
    let seeds = cfg
        .seeds
        .iter()
        .zip(&envs)
        .map(|(&seed, env)| SeedInfo {
            seed,
            oracle_index: env.oracle_index(),
            oracle_model: env.model_class().model(env.oracle_index()).to_vec(),
            best_action: env.best_action(),
            best_value: env.best_value(),
            census: env.model_class().overlap_census(env.oracle_index(), instance.census_min_shared),
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..cfg.algorithms.len())
        .flat_map(|a| (0..cfg.seeds.len()).map(move |s| (a, s)))
        .collect();
    let pool = thread_pool()?;
    let results: Vec<Result<RegretTrace>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, s)| run_one(&cfg.algorithms[a], &envs[s], instance.n, cfg.seeds[s]))
            .collect()
    });

    let mut runs: Vec<AlgorithmRuns> = cfg
        .algorithms
        .iter()
        .map(|spec| AlgorithmRuns {
            spec: spec.clone(),
            traces: Vec::with_capacity(cfg.seeds.len()),
        })
        .collect();
    for (&(a, _), r) in jobs.iter().zip(results) {
        runs[a].traces.push(r?);
    }
    Ok(ExperimentResult { instance, seeds, runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurvePoint {
    pub t: usize,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

/// Mean cumulative regret and its standard error (sample stdev / sqrt(#seeds)) per step.
pub fn aggregate(traces: &[RegretTrace]) -> Vec<RegretCurvePoint> {
    let n = traces.iter().map(|t| t.steps.len()).min().unwrap_or(0);
    let k = traces.len();
    (0..n)
        .map(|i| {
            let values: Vec<f64> = traces.iter().map(|tr| tr.steps[i].cumulative_regret).collect();
            let (mean, stderr) = mean_stderr(&values);
            RegretCurvePoint {
                t: i + 1,
                mean,
                stderr,
                seeds: k,
            }
        })
        .collect()
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Learning-dynamics row for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsPoint {
    pub t: usize,
    /// Distinct agents selected up to and including step `t`.
    pub visited: usize,
    pub visited_fraction: f64,
    /// Probability of the oracle agent in the distribution used at step `t`.
    pub q_oracle: f64,
    /// One-based rank of the oracle agent by probability (ties broken towards the oracle).
    pub oracle_rank: usize,
}

pub fn dynamics_metrics(trace: &RegretTrace, oracle_index: usize) -> Vec<DynamicsPoint> {
    let m = trace.q_history.first().map_or(0, Vec::len);
    let mut seen = vec![false; m];
    let mut visited = 0;
    trace
        .steps
        .iter()
        .zip(&trace.q_history)
        .map(|(step, q)| {
            if let Some(j) = step.agent {
                if !seen[j] {
                    seen[j] = true;
                    visited += 1;
                }
            }
            let q_oracle = q[oracle_index];
            DynamicsPoint {
                t: step.t,
                visited,
                visited_fraction: visited as f64 / m as f64,
                q_oracle,
                oracle_rank: 1 + q.iter().filter(|&&v| v > q_oracle).count(),
            }
        })
        .collect()
}

/// One sweep dimension: `name=lo:hi:k[:log]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepParam {
    pub name: String,
    pub values: Vec<f64>,
}

impl SweepParam {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || HarnessError::Config(format!("cannot parse sweep `{text}`; use name=lo:hi:k[:log]"));
        let (name, range) = text.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() < 3 || parts.len() > 4 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let k: usize = parts[2].parse().map_err(|_| bad())?;
        let log = match parts.get(3) {
            None => false,
            Some(&"log") => true,
            Some(_) => return Err(bad()),
        };
        if k == 0 || !(lo <= hi) || (log && lo <= 0.0) {
            return Err(bad());
        }
        let values = (0..k)
            .map(|i| {
                let f = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
                if log {
                    (lo.ln() + f * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + f * (hi - lo)
                }
            })
            .collect();
        Ok(Self {
            name: name.trim().to_string(),
            values,
        })
    }
}

/// Candidate configurations for one algorithm: the grid product when dimensions are given,
/// otherwise the default tuning ranges.
pub fn sweep_candidates(base: &AlgoSpec, params: &[SweepParam], seed: u64) -> Result<Vec<AlgoSpec>> {
    if !params.is_empty() {
        let mut out = vec![base.clone()];
        for p in params {
            let mut next = Vec::with_capacity(out.len() * p.values.len());
            for spec in &out {
                for &v in &p.values {
                    let mut s = spec.clone();
                    s.set_param(&p.name, v)?;
                    next.push(s);
                }
            }
            out = next;
        }
        return Ok(out);
    }
    let mut rng = stream(seed, Stream::Custom(0));
    let mut out = Vec::new();
    match base {
        AlgoSpec::Etc(_) | AlgoSpec::Ets(_) => {
            for _ in 0..10 {
                let mut s = base.clone();
                s.set_param("n0", rng.random_range(2..=80) as f64)?;
                out.push(s);
            }
        }
        AlgoSpec::Alexp(_) => {
            for _ in 0..20 {
                let mut s = base.clone();
                s.set_param("gamma0", 10f64.powf(rng.random_range(-4.0..=-1.0)))?;
                s.set_param("eta0", 10f64.powf(rng.random_range(0.0..=2.0)))?;
                out.push(s);
            }
        }
        _ => out.push(base.clone()),
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub rank: usize,
    pub spec: AlgoSpec,
    pub mean_regret: f64,
    pub stderr: f64,
}

/// Runs every candidate on the experiment's seeds and ranks by mean final regret.
pub fn sweep(cfg: &ExperimentConfig, base: &AlgoSpec, params: &[SweepParam]) -> Result<Vec<SweepEntry>> {
    let candidates = sweep_candidates(base, params, cfg.instance.model_seed)?;
    let instance = Instance::build(&cfg.instance)?;
    if let AlgoSpec::Etc(_) | AlgoSpec::Ets(_) = base {
        for c in &candidates {
            if let AlgoSpec::Etc(e) | AlgoSpec::Ets(e) = c {
                if e.n0 == 0 || e.n0 > instance.n {
                    return Err(HarnessError::Config(format!("n0 = {} outside 1..={}", e.n0, instance.n)));
                }
            }
        }
    }
    let envs = cfg
        .seeds
        .iter()
        .map(|&s| instance.environment(s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s)))
        .collect();
    let pool = thread_pool()?;
    let finals: Vec<Result<f64>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, s)| run_one(&candidates[c], &envs[s], instance.n, cfg.seeds[s]).map(|t| t.cumulative_regret()))
            .collect()
    });
    let mut per_candidate = vec![Vec::with_capacity(cfg.seeds.len()); candidates.len()];
    for (&(c, _), r) in jobs.iter().zip(finals) {
        per_candidate[c].push(r?);
    }
    let mut entries: Vec<SweepEntry> = candidates
        .into_iter()
        .zip(per_candidate)
        .map(|(spec, values)| {
            let (mean_regret, stderr) = mean_stderr(&values);
            SweepEntry {
                rank: 0,
                spec,
                mean_regret,
                stderr,
            }
        })
        .collect();
    // stable: ties keep candidate order
    entries.sort_by(|a, b| a.mean_regret.total_cmp(&b.mean_regret));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub seed: u64,
    pub report: EigenReport,
    pub cmin_uniform: f64,
}

/// Restricted-eigenvalue estimates on uniformly explored designs, one per seed and sparsity.
pub fn diagnose(cfg: &ExperimentConfig) -> Result<Vec<DiagnosticsRow>> {
    let instance = Instance::build(&cfg.instance)?;
    let dcfg = cfg.diagnostics.clone().unwrap_or_default();
    let t = dcfg.t.unwrap_or(instance.n);
    let cmin = cmin_uniform(&instance.model_class, &instance.grid)?;
    let m = instance.model_class.num_models();
    if let Some(&bad) = dcfg.sparsity.iter().find(|&&s| s == 0 || s > m) {
        return Err(HarnessError::Config(format!("diagnostic sparsity {bad} outside 1..={m}")));
    }
    let jobs: Vec<(u64, usize)> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| dcfg.sparsity.iter().map(move |&s| (seed, s)))
        .collect();
    let pool = thread_pool()?;
    let rows: Vec<Result<DiagnosticsRow>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, s)| diagnose_one(&instance, &dcfg, t, seed, s, cmin))
            .collect()
    });
    rows.into_iter().collect()
}

fn diagnose_one(
    instance: &Instance,
    dcfg: &DiagnosticsConfig,
    t: usize,
    seed: u64,
    s: usize,
    cmin: f64,
) -> Result<DiagnosticsRow> {
    let mut rng = stream(seed, Stream::Diagnostics);
    let actions: Vec<f64> = (0..t)
        .map(|_| instance.grid.point(rng.random_range(0..instance.grid.len())))
        .collect();
    let phi = design_matrix(&instance.model_class, &actions)?;
    let opts = EigenOptions {
        restarts: dcfg.restarts,
        iterations: dcfg.iterations,
        seed,
    };
    let report = restricted_eigenvalue(&phi, instance.model_class.group_size(), s, &opts)?;
    Ok(DiagnosticsRow {
        seed,
        report,
        cmin_uniform: cmin,
    })
}
