//! The trainer: SAC/REDQ over stacked full-trajectory batches with target
//! networks, delayed policy updates, automatic entropy tuning, and
//! context-encoder-specific optimizer groups.

mod entropy;
mod evaluate;
mod losses;
mod optimizer;
mod trainer;

pub use entropy::EntropyTuner;
pub use evaluate::{evaluate_policy, evaluate_random, EvalSummary};
pub use losses::{critic_loss_graph, critic_targets, policy_loss_graph, PolicyLossNodes};
pub use optimizer::{soft_update, GradStats, GroupLrs, GroupedAdamW, OptimError};
pub use trainer::{EpisodeSummary, StepMetrics, Trainer, TrainerError, TrainerState};

use serde::{Deserialize, Serialize};

/// Entropy setpoint: either an explicit value or a multiple of the action
/// dimension (the usual default is -1 x act_dim).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetEntropy {
    ScaledActionDim(f64),
    Fixed(f64),
}

impl TargetEntropy {
    pub fn resolve(self, act_dim: usize) -> f64 {
        match self {
            TargetEntropy::ScaledActionDim(k) => k * act_dim as f64,
            TargetEntropy::Fixed(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Context-encoder learning rate, shared by policy and critic encoders.
    pub lr_ce: f64,
    /// Learning rate of the non-encoder policy parameters.
    pub lr_policy: f64,
    /// Learning rate of the non-encoder critic parameters.
    pub lr_value: f64,
    pub gamma: f64,
    /// Target-network soft-update factor (target keeps this fraction).
    pub soft_update_tau: f64,
    /// Valid-transition count each sampled batch must reach.
    pub batch_transitions: usize,
    pub target_entropy: TargetEntropy,
    pub lr_alpha: f64,
    pub initial_alpha: f64,
    /// Uniform-random action steps before any gradient update.
    pub warmup_steps: u64,
    /// Critic updates per policy update.
    pub policy_delay: u64,
    /// Heads entering the min for the target (REDQ pair).
    pub target_sample_size: usize,
    pub buffer_capacity: usize,
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
    pub parallel_scan: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lr_ce: 1e-5,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            gamma: 0.99,
            soft_update_tau: 0.995,
            batch_transitions: 2000,
            target_entropy: TargetEntropy::ScaledActionDim(-1.0),
            lr_alpha: 1e-4,
            initial_alpha: 1.0,
            warmup_steps: 5000,
            policy_delay: 2,
            target_sample_size: 2,
            buffer_capacity: 1_000_000,
            grad_clip: None,
            weight_decay: 0.0,
            parallel_scan: true,
        }
    }
}

impl TrainerConfig {
    /// Hard errors for out-of-range values; soft warnings (returned, not
    /// printed) for suspicious but legal settings like lr_ce > lr_policy.
    pub fn validate(&self) -> Result<Vec<String>, String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.soft_update_tau > 0.0 && self.soft_update_tau < 1.0) {
            return Err(format!("soft_update_tau {} outside (0, 1)", self.soft_update_tau));
        }
        if self.batch_transitions == 0 {
            return Err("batch_transitions must be >= 1".into());
        }
        if self.target_sample_size < 1 || self.target_sample_size > 8 {
            return Err(format!("target_sample_size {} outside 1..=8", self.target_sample_size));
        }
        if self.policy_delay == 0 {
            return Err("policy_delay must be >= 1".into());
        }
        let mut warnings = Vec::new();
        if self.lr_ce > self.lr_policy {
            warnings.push(format!(
                "lr_ce {} exceeds lr_policy {}; the context encoder usually needs the smaller rate",
                self.lr_ce, self.lr_policy
            ));
        }
        Ok(warnings)
    }
}
