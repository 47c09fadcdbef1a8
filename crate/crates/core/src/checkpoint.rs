//! Training checkpoints: a directory holding a JSON manifest (architecture,
//! env id, dims), the three parameter files in the flat binary format, the
//! serialized trainer state (optimizers, tuner, RNG streams, rollout
//! context), and a replay-buffer snapshot. Resume is bit-exact.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algo::{Trainer, TrainerConfig, TrainerState};
use crate::autodiff::{ParamIoError, ParameterSet};
use crate::envs::make_env;
use crate::nets::{EncoderConfig, HeadConfig, PolicyNet};
use crate::replay::{ReplayBuffer, ReplayError};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("params: {0}")]
    Params(#[from] ParamIoError),
    #[error("buffer: {0}")]
    Buffer(#[from] ReplayError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("environment: {0}")]
    Env(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub env_id: String,
    pub seed: u64,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub trainer: TrainerConfig,
    pub env_steps: u64,
    pub code_version: String,
}

pub fn code_version() -> String {
    format!("rrl-core {}", env!("CARGO_PKG_VERSION"))
}

pub fn save(dir: &Path, trainer: &Trainer, seed: u64) -> Result<(), CheckpointError> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT,
        env_id: trainer.env.spec().id.clone(),
        seed,
        obs_dim: trainer.env.spec().obs_dim,
        act_dim: trainer.env.spec().act_dim,
        encoder: trainer.policy.encoder.cfg.clone(),
        head: trainer.policy.head.clone(),
        trainer: trainer.cfg.clone(),
        env_steps: trainer.env_steps,
        code_version: code_version(),
    };
    let mut f = std::fs::File::create(dir.join("manifest.json"))?;
    f.write_all(serde_json::to_string_pretty(&manifest).expect("manifest").as_bytes())?;
    trainer.policy_params.save(&dir.join("policy.params"))?;
    trainer.critic_params.save(&dir.join("critic.params"))?;
    trainer.target_params.save(&dir.join("target.params"))?;
    let state = trainer.state_snapshot();
    let mut sf = std::fs::File::create(dir.join("trainer_state.json"))?;
    sf.write_all(serde_json::to_string(&state).expect("state").as_bytes())?;
    let mut bf = std::io::BufWriter::new(std::fs::File::create(dir.join("buffer.bin"))?);
    trainer.buffer.write_snapshot(&mut bf)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.format_version != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Manifest(format!(
            "unsupported checkpoint format {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Rebuilds a trainer that continues exactly where `save` left off.
pub fn load(dir: &Path) -> Result<(Trainer, Manifest), CheckpointError> {
    let manifest = read_manifest(dir)?;
    let env = make_env(&manifest.env_id, manifest.seed)
        .map_err(|e| CheckpointError::Env(e.to_string()))?;
    let mut trainer = Trainer::new(
        manifest.trainer.clone(),
        manifest.encoder.clone(),
        manifest.head.clone(),
        env,
        manifest.seed,
    );
    trainer.policy_params = ParameterSet::load(&dir.join("policy.params"))?;
    trainer.critic_params = ParameterSet::load(&dir.join("critic.params"))?;
    trainer.target_params = ParameterSet::load(&dir.join("target.params"))?;
    let state_text = std::fs::read_to_string(dir.join("trainer_state.json"))?;
    let state: TrainerState = serde_json::from_str(&state_text)
        .map_err(|e| CheckpointError::Manifest(format!("trainer state: {e}")))?;
    trainer
        .restore_snapshot(state)
        .map_err(|e| CheckpointError::Manifest(format!("restore: {e}")))?;
    let mut bf = std::io::BufReader::new(std::fs::File::open(dir.join("buffer.bin"))?);
    trainer.buffer = ReplayBuffer::read_snapshot(&mut bf)?;
    Ok((trainer, manifest))
}

/// Policy-only load for evaluation and the divergence lab.
pub fn load_policy(dir: &Path) -> Result<(PolicyNet, ParameterSet, Manifest), CheckpointError> {
    let manifest = read_manifest(dir)?;
    let net = PolicyNet::new(
        manifest.encoder.clone(),
        manifest.head.clone(),
        manifest.obs_dim,
        manifest.act_dim,
    );
    let params = ParameterSet::load(&dir.join("policy.params"))?;
    Ok((net, params, manifest))
}

pub fn checkpoint_dirs(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(root) {
        for e in entries.flatten() {
            if e.path().join("manifest.json").exists() {
                out.push(e.path());
            }
        }
    }
    out.sort();
    out
}
