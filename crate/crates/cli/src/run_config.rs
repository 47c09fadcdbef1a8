//! Run configuration: a human-readable JSON tree resolved through a
//! hyperparameter profile into a fully explicit config. Resolution is a
//! pure function (profile defaults, then explicit overrides), and the
//! resolved form is persisted as canonical JSON next to the run outputs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rrl_core::algo::{TargetEntropy, TrainerConfig};
use rrl_core::envs::make_env;
use rrl_core::nets::{EncoderConfig, EncoderKind, HeadConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Classic occlusion POMDPs: LR_CE 1e-5, LR_other 3e-4 / 1e-3, batch 2000.
    Pomdp,
    /// Fully observed / meta families: LR_CE 2e-6, LR_other 6e-5 / 2e-4,
    /// batch 1000, last reward fed to the encoder.
    MujocoMeta,
    /// Credit assignment: pomdp rates with gamma 0.9999, batch 1000.
    KeyToDoor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ArchPreset {
    /// Paper-scale widths: pre 128, trunk 256, state 64, embedding 128,
    /// heads 256.
    Reference,
    /// Small widths sized for 2-core CPU runs.
    Desk,
}

/// Explicit field overrides; every set field wins over the profile.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    pub lr_ce: Option<f64>,
    pub lr_policy: Option<f64>,
    pub lr_value: Option<f64>,
    pub gamma: Option<f64>,
    pub soft_update_tau: Option<f64>,
    pub batch_transitions: Option<usize>,
    pub target_entropy: Option<TargetEntropy>,
    pub lr_alpha: Option<f64>,
    pub initial_alpha: Option<f64>,
    pub warmup_steps: Option<u64>,
    pub policy_delay: Option<u64>,
    pub buffer_capacity: Option<usize>,
    pub grad_clip: Option<f64>,
    pub weight_decay: Option<f64>,
    pub parallel_scan: Option<bool>,
    pub feed_last_reward: Option<bool>,
    pub pre_width: Option<usize>,
    pub trunk_width: Option<usize>,
    pub trunk_layers: Option<usize>,
    pub state_dim: Option<usize>,
    pub blocks: Option<usize>,
    pub ffn: Option<bool>,
    pub ffn_hidden: Option<usize>,
    pub ffn_residual: Option<bool>,
    pub post_width: Option<usize>,
    pub conv_kernel: Option<usize>,
    pub selective: Option<bool>,
    pub head_hidden: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub total_steps: u64,
    pub profile: Profile,
    pub encoder: EncoderKind,
    pub arch: ArchPreset,
    pub overrides: Overrides,
    /// Deterministic-policy evaluation cadence (env steps) and size.
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Evaluate on a different registry id (e.g. the gravity test split).
    pub eval_env: Option<String>,
    pub stochastic_eval: bool,
    pub log_every: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "pendulum-v".into(),
            seed: 1,
            total_steps: 100_000,
            profile: Profile::Pomdp,
            encoder: EncoderKind::Ssm,
            arch: ArchPreset::Desk,
            overrides: Overrides::default(),
            eval_every: 5000,
            eval_episodes: 10,
            eval_env: None,
            stochastic_eval: false,
            log_every: 200,
            checkpoint_every: 0,
            out: None,
        }
    }
}

/// Fully explicit, persisted configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Resolved {
    pub run: RunConfig,
    pub trainer: TrainerConfig,
    pub encoder_cfg: EncoderConfig,
    pub head_cfg: HeadConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
}

fn profile_trainer(profile: Profile) -> TrainerConfig {
    match profile {
        Profile::Pomdp => TrainerConfig {
            lr_ce: 1e-5,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            gamma: 0.99,
            batch_transitions: 2000,
            ..TrainerConfig::default()
        },
        Profile::MujocoMeta => TrainerConfig {
            lr_ce: 2e-6,
            lr_policy: 6e-5,
            lr_value: 2e-4,
            gamma: 0.99,
            batch_transitions: 1000,
            ..TrainerConfig::default()
        },
        Profile::KeyToDoor => TrainerConfig {
            lr_ce: 1e-5,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            gamma: 0.9999,
            batch_transitions: 1000,
            ..TrainerConfig::default()
        },
    }
}

fn profile_reward_feed(profile: Profile) -> bool {
    matches!(profile, Profile::MujocoMeta)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

/// Profile + overrides -> explicit config; pure and deterministic.
pub fn resolve(run: &RunConfig) -> Result<Resolved> {
    let probe = make_env(&run.env, run.seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    let spec = probe.spec().clone();
    drop(probe);

    let mut trainer = profile_trainer(run.profile);
    let o = &run.overrides;
    if let Some(v) = o.lr_ce {
        trainer.lr_ce = v;
    }
    if let Some(v) = o.lr_policy {
        trainer.lr_policy = v;
    }
    if let Some(v) = o.lr_value {
        trainer.lr_value = v;
    }
    if let Some(v) = o.gamma {
        trainer.gamma = v;
    }
    if let Some(v) = o.soft_update_tau {
        trainer.soft_update_tau = v;
    }
    if let Some(v) = o.batch_transitions {
        trainer.batch_transitions = v;
    }
    if let Some(v) = o.target_entropy {
        trainer.target_entropy = v;
    }
    if let Some(v) = o.lr_alpha {
        trainer.lr_alpha = v;
    }
    if let Some(v) = o.initial_alpha {
        trainer.initial_alpha = v;
    }
    if let Some(v) = o.warmup_steps {
        trainer.warmup_steps = v;
    }
    if let Some(v) = o.policy_delay {
        trainer.policy_delay = v;
    }
    if let Some(v) = o.buffer_capacity {
        trainer.buffer_capacity = v;
    }
    if o.grad_clip.is_some() {
        trainer.grad_clip = o.grad_clip;
    }
    if let Some(v) = o.weight_decay {
        trainer.weight_decay = v;
    }
    if let Some(v) = o.parallel_scan {
        trainer.parallel_scan = v;
    }

    let mut enc = match run.arch {
        ArchPreset::Reference => EncoderConfig::reference(run.encoder),
        ArchPreset::Desk => EncoderConfig::desk(run.encoder),
    };
    enc.feed_last_reward = o.feed_last_reward.unwrap_or_else(|| profile_reward_feed(run.profile));
    if let Some(v) = o.pre_width {
        enc.pre_width = v;
    }
    if let Some(v) = o.trunk_width {
        enc.trunk_width = v;
    }
    if let Some(v) = o.trunk_layers {
        enc.trunk_layers = v;
    }
    if let Some(v) = o.state_dim {
        enc.state_dim = v;
    }
    if let Some(v) = o.blocks {
        enc.blocks = v;
    }
    if let Some(v) = o.ffn {
        enc.ffn = v;
    }
    if let Some(v) = o.ffn_hidden {
        enc.ffn_hidden = v;
    }
    if let Some(v) = o.ffn_residual {
        enc.ffn_residual = v;
    }
    if let Some(v) = o.post_width {
        enc.post_width = v;
    }
    if let Some(v) = o.conv_kernel {
        enc.conv_kernel = v;
    }
    if let Some(v) = o.selective {
        enc.selective = v;
    }

    let mut head = match run.arch {
        ArchPreset::Reference => HeadConfig::reference(),
        ArchPreset::Desk => HeadConfig::desk(),
    };
    if let Some(v) = o.head_hidden {
        head.hidden = v;
    }

    if run.eval_episodes == 0 {
        bail!("eval_episodes must be >= 1");
    }
    trainer.validate().map_err(|e| anyhow::anyhow!("config: {e}"))?;
    Ok(Resolved {
        run: run.clone(),
        trainer,
        encoder_cfg: enc,
        head_cfg: head,
        obs_dim: spec.obs_dim,
        act_dim: spec.act_dim,
    })
}

/// Canonical serialized form written next to every run.
pub fn canonical_json(resolved: &Resolved) -> String {
    serde_json::to_string_pretty(resolved).expect("resolved config serializes")
}
