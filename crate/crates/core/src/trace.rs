//! Per-step records produced by every algorithm.

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// One-based step index.
    pub t: usize,
    pub action: f64,
    pub reward: f64,
    pub instant_regret: f64,
    pub cumulative_regret: f64,
    /// Whether the action came from the exploratory distribution.
    pub explored: bool,
    /// Agent whose proposal was played, if any.
    pub agent: Option<usize>,
    /// Short digest of the agent distribution used at this step.
    pub q_hash: Option<String>,
}

/// One run of one algorithm on one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub algorithm: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Agent distribution in force at each step (only for meta-algorithms).
    pub q_history: Vec<Vec<f64>>,
    /// Group-Lasso solves that hit the iteration budget.
    pub nonconverged_solves: usize,
    /// Free-form notes about fallbacks taken during the run.
    pub notes: Vec<String>,
}

impl RegretTrace {
    pub fn new(algorithm: impl Into<String>, seed: u64) -> Self {
        Self {
            algorithm: algorithm.into(),
            seed,
            steps: Vec::new(),
            q_history: Vec::new(),
            nonconverged_solves: 0,
            notes: Vec::new(),
        }
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_regret)
    }

    /// Appends a step, maintaining the running regret sum.
    pub fn push(
        &mut self,
        action: f64,
        reward: f64,
        instant_regret: f64,
        explored: bool,
        agent: Option<usize>,
        q: Option<&[f64]>,
    ) {
        let t = self.steps.len() + 1;
        let cumulative_regret = self.cumulative_regret() + instant_regret;
        let q_hash = q.map(hash_distribution);
        if let Some(q) = q {
            self.q_history.push(q.to_vec());
        }
        self.steps.push(StepRecord {
            t,
            action,
            reward,
            instant_regret,
            cumulative_regret,
            explored,
            agent,
            q_hash,
        });
    }

    pub fn instant_regrets(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.instant_regret).collect()
    }

    pub fn cumulative_regrets(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cumulative_regret).collect()
    }
}

/// First 8 bytes of SHA-256 over the little-endian bit patterns, hex encoded.
pub fn hash_distribution(q: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in q {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}
