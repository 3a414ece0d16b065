//! Experiment configuration read from TOML.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! output_dir = "out/easy"
//!
//! [instance]
//! p = 10
//! s = 2
//! sigma = 0.01
//! n = 100
//!
//! [algorithms.alexp]
//! gamma0 = 0.01
//!
//! [algorithms.etc]
//! n0 = 20
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use banditlab_core::alexp::{AlexpConfig, DEFAULT_DELTA, DEFAULT_ETA0, DEFAULT_GAMMA0};
use banditlab_core::baselines::{CorralConfig, DEFAULT_N0};
use banditlab_core::diagnostics::DEFAULT_RESTARTS;
use banditlab_core::environment::DEFAULT_NOISE_SIGMA;
use banditlab_core::grouplasso::DEFAULT_LAMBDA0;
use banditlab_core::legendre::DEFAULT_GRID_SIZE;
use banditlab_core::ridge::{ProposalRule, DEFAULT_BETA, DEFAULT_RIDGE_REG};
use serde::Deserialize;

use crate::error::{HarnessError, Result};

pub const KNOWN_ALGORITHMS: [&str; 6] = ["alexp", "oracle_ucb", "naive_ucb", "etc", "ets", "corral"];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub p: usize,
    pub s: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub n: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Draw this many models from the full enumeration instead of using all of them.
    #[serde(default)]
    pub models: Option<usize>,
    #[serde(default)]
    pub model_seed: u64,
    /// Overlap threshold for the census written to `instance.csv`.
    #[serde(default)]
    pub census_min_shared: Option<usize>,
}

fn default_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_sparsities")]
    pub sparsity: Vec<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Number of uniformly explored rows; defaults to the horizon.
    #[serde(default)]
    pub t: Option<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            sparsity: default_sparsities(),
            restarts: default_restarts(),
            iterations: default_iterations(),
            t: None,
        }
    }
}

fn default_sparsities() -> Vec<usize> {
    vec![1, 2]
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

fn default_iterations() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    instance: InstanceConfig,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    svg: Option<bool>,
    #[serde(default)]
    algorithms: BTreeMap<String, toml::Table>,
    #[serde(default)]
    diagnostics: Option<DiagnosticsConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlexpParams {
    #[serde(default = "d_gamma0")]
    pub gamma0: f64,
    #[serde(default = "d_eta0")]
    pub eta0: f64,
    #[serde(default)]
    pub eta_clip: bool,
    #[serde(default = "d_lambda0")]
    pub lambda0: f64,
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_ridge")]
    pub lambda_ridge: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default)]
    pub greedy: bool,
    #[serde(default = "d_one")]
    pub solve_every: usize,
}

impl Default for AlexpParams {
    fn default() -> Self {
        toml::Table::new().try_into().expect("all fields have defaults")
    }
}

impl AlexpParams {
    pub fn to_core(&self) -> AlexpConfig {
        AlexpConfig {
            gamma0: self.gamma0,
            eta0: self.eta0,
            eta_clip: self.eta_clip,
            lambda0: self.lambda0,
            delta: self.delta,
            lambda_ridge: self.lambda_ridge,
            beta: self.beta,
            rule: if self.greedy { ProposalRule::Greedy } else { ProposalRule::Ucb },
            solve_every: self.solve_every,
            ..AlexpConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcbParams {
    #[serde(default = "d_ridge")]
    pub lambda_ridge: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreParams {
    #[serde(default = "d_n0")]
    pub n0: usize,
    #[serde(default = "d_lambda0")]
    pub lambda0: f64,
    #[serde(default = "d_ridge")]
    pub lambda_ridge: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorralParams {
    #[serde(default = "d_one_f")]
    pub gamma_scale: f64,
    #[serde(default = "d_one_f")]
    pub eta_scale: f64,
    #[serde(default = "d_ridge")]
    pub lambda_ridge: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default)]
    pub negate_feedback: bool,
}

impl CorralParams {
    pub fn to_core(&self) -> CorralConfig {
        CorralConfig {
            gamma_scale: self.gamma_scale,
            eta_scale: self.eta_scale,
            lambda_ridge: self.lambda_ridge,
            beta: self.beta,
            negate_feedback: self.negate_feedback,
        }
    }
}

fn d_gamma0() -> f64 {
    DEFAULT_GAMMA0
}
fn d_eta0() -> f64 {
    DEFAULT_ETA0
}
fn d_lambda0() -> f64 {
    DEFAULT_LAMBDA0
}
fn d_delta() -> f64 {
    DEFAULT_DELTA
}
fn d_ridge() -> f64 {
    DEFAULT_RIDGE_REG
}
fn d_beta() -> f64 {
    DEFAULT_BETA
}
fn d_one() -> usize {
    1
}
fn d_one_f() -> f64 {
    1.0
}
fn d_n0() -> usize {
    DEFAULT_N0
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlgoSpec {
    Alexp(AlexpParams),
    OracleUcb(UcbParams),
    NaiveUcb(UcbParams),
    Etc(ExploreParams),
    Ets(ExploreParams),
    Corral(CorralParams),
}

impl AlgoSpec {
    /// Parses the hyperparameter table of a known algorithm.
    pub fn parse(name: &str, table: toml::Table) -> Result<Self> {
        let bad = |e: toml::de::Error| HarnessError::Config(format!("[algorithms.{name}]: {e}"));
        Ok(match name {
            "alexp" => AlgoSpec::Alexp(table.try_into().map_err(bad)?),
            "oracle_ucb" => AlgoSpec::OracleUcb(table.try_into().map_err(bad)?),
            "naive_ucb" => AlgoSpec::NaiveUcb(table.try_into().map_err(bad)?),
            "etc" => AlgoSpec::Etc(table.try_into().map_err(bad)?),
            "ets" => AlgoSpec::Ets(table.try_into().map_err(bad)?),
            "corral" => AlgoSpec::Corral(table.try_into().map_err(bad)?),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown algorithm `{other}` (known: {})",
                    KNOWN_ALGORITHMS.join(", ")
                )))
            }
        })
    }

    pub fn defaults(name: &str) -> Result<Self> {
        Self::parse(name, toml::Table::new())
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlgoSpec::Alexp(_) => "alexp",
            AlgoSpec::OracleUcb(_) => "oracle_ucb",
            AlgoSpec::NaiveUcb(_) => "naive_ucb",
            AlgoSpec::Etc(_) => "etc",
            AlgoSpec::Ets(_) => "ets",
            AlgoSpec::Corral(_) => "corral",
        }
    }

    /// Whether traces carry an agent distribution per step.
    pub fn has_distribution(&self) -> bool {
        matches!(self, AlgoSpec::Alexp(_) | AlgoSpec::Corral(_))
    }

    /// Overrides one numeric hyperparameter by name.
    pub fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        let name = self.name();
        let unknown = || HarnessError::Config(format!("`{key}` is not a parameter of {name}"));
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.is_finite() {
                Ok(v.round() as usize)
            } else {
                Err(HarnessError::Config(format!("`{key}` must be a non-negative count")))
            }
        };
        match self {
            AlgoSpec::Alexp(a) => match key {
                "gamma0" => a.gamma0 = value,
                "eta0" => a.eta0 = value,
                "lambda0" => a.lambda0 = value,
                "delta" => a.delta = value,
                "lambda_ridge" => a.lambda_ridge = value,
                "beta" => a.beta = value,
                "solve_every" => a.solve_every = as_count(value)?,
                _ => return Err(unknown()),
            },
            AlgoSpec::OracleUcb(u) | AlgoSpec::NaiveUcb(u) => match key {
                "lambda_ridge" => u.lambda_ridge = value,
                "beta" => u.beta = value,
                _ => return Err(unknown()),
            },
            AlgoSpec::Etc(e) | AlgoSpec::Ets(e) => match key {
                "n0" => e.n0 = as_count(value)?,
                "lambda0" => e.lambda0 = value,
                "lambda_ridge" => e.lambda_ridge = value,
                "beta" => e.beta = value,
                _ => return Err(unknown()),
            },
            AlgoSpec::Corral(c) => match key {
                "gamma_scale" => c.gamma_scale = value,
                "eta_scale" => c.eta_scale = value,
                "lambda_ridge" => c.lambda_ridge = value,
                "beta" => c.beta = value,
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }

    /// Short `key=value` description of the parameters a sweep can touch.
    pub fn describe(&self) -> String {
        match self {
            AlgoSpec::Alexp(a) => format!("gamma0={} eta0={} lambda0={}", a.gamma0, a.eta0, a.lambda0),
            AlgoSpec::OracleUcb(u) | AlgoSpec::NaiveUcb(u) => {
                format!("lambda_ridge={} beta={}", u.lambda_ridge, u.beta)
            }
            AlgoSpec::Etc(e) | AlgoSpec::Ets(e) => format!("n0={} lambda0={}", e.n0, e.lambda0),
            AlgoSpec::Corral(c) => format!("gamma_scale={} eta_scale={}", c.gamma_scale, c.eta_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    pub algorithms: Vec<AlgoSpec>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub svg: bool,
    pub diagnostics: Option<DiagnosticsConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let algorithms = raw
            .algorithms
            .into_iter()
            .map(|(name, table)| AlgoSpec::parse(&name, table))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            instance: raw.instance,
            algorithms,
            seeds: raw.seeds.unwrap_or_else(|| (0..20).collect()),
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            svg: raw.svg.unwrap_or(true),
            diagnostics: raw.diagnostics,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let inst = &self.instance;
        if inst.n == 0 {
            return Err(HarnessError::Config("horizon n must be at least 1".into()));
        }
        if inst.s == 0 || inst.s > inst.p + 1 {
            return Err(HarnessError::Config(format!(
                "group size s = {} must satisfy 1 <= s <= p + 1",
                inst.s
            )));
        }
        if !(inst.sigma >= 0.0) {
            return Err(HarnessError::Config("sigma must be >= 0".into()));
        }
        if inst.grid_size < 2 {
            return Err(HarnessError::Config("grid_size must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        for a in &self.algorithms {
            if let AlgoSpec::Etc(e) | AlgoSpec::Ets(e) = a {
                if e.n0 == 0 || e.n0 > inst.n {
                    return Err(HarnessError::Config(format!(
                        "{}: n0 = {} must lie in 1..={}",
                        a.name(),
                        e.n0,
                        inst.n
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps only the named algorithms, in the order given.
    pub fn select_algorithms(&mut self, names: &[String]) -> Result<()> {
        let mut chosen = Vec::with_capacity(names.len());
        for name in names {
            let spec = match self.algorithms.iter().find(|a| a.name() == name) {
                Some(a) => a.clone(),
                None => AlgoSpec::defaults(name)?,
            };
            chosen.push(spec);
        }
        self.algorithms = chosen;
        self.validate()
    }
}

/// Parses `a..b` (half-open) or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || HarnessError::Config(format!("cannot parse seeds `{text}`; use `a..b` or `a,b,c`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}
