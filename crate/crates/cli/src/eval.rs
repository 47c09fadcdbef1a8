use std::path::Path;

use anyhow::{bail, Context, Result};

use rrl_core::algo::{evaluate_policy, EvalSummary};
use rrl_core::checkpoint;
use rrl_core::envs::make_env;

pub fn cmd_eval(
    ckpt: &Path,
    env_id: &str,
    episodes: usize,
    seed: u64,
    stochastic: bool,
) -> Result<EvalSummary> {
    if episodes == 0 {
        bail!("episodes must be >= 1");
    }
    let (policy, params, manifest) =
        checkpoint::load_policy(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let env = make_env(env_id, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    let spec = env.spec().clone();
    drop(env);
    if spec.obs_dim != manifest.obs_dim || spec.act_dim != manifest.act_dim {
        bail!(
            "checkpoint was trained on {} ({} obs, {} act); {env_id} has {} obs, {} act",
            manifest.env_id,
            manifest.obs_dim,
            manifest.act_dim,
            spec.obs_dim,
            spec.act_dim
        );
    }
    let summary = evaluate_policy(&policy, &params, env_id, episodes, seed, stochastic)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(summary)
}
