use rand::Rng;
use serde::Serialize;

use crate::autodiff::ParameterSet;
use crate::envs::make_env;
use crate::nets::{PolicyNet, StepContext};
use crate::rng::{stream_rng, NormalSource, Stream};

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub return_mean: f64,
    pub return_stderr: f64,
    pub len_mean: f64,
    /// Fraction of successful episodes, for envs that define success.
    pub success_rate: Option<f64>,
}

/// Rolls out `episodes` full episodes, deterministic (tanh of the mean) by
/// default or with sampled actions when `stochastic` is set. Each call is a
/// pure function of (params, env id, episodes, seed, stochastic).
pub fn evaluate_policy(
    policy: &PolicyNet,
    params: &ParameterSet,
    env_id: &str,
    episodes: usize,
    seed: u64,
    stochastic: bool,
) -> Result<EvalSummary, crate::envs::EnvError> {
    assert!(episodes >= 1, "evaluate_policy: episodes must be >= 1");
    let mut env = make_env(env_id, seed)?;
    let spec = env.spec().clone();
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut normal = NormalSource::new();
    let mut returns = Vec::with_capacity(episodes);
    let mut lens = Vec::with_capacity(episodes);
    let mut successes = Vec::new();
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut ctx = StepContext::zeros(spec.obs_dim, spec.act_dim);
        let mut state = policy.zero_state();
        let mut total = 0.0;
        let mut len = 0usize;
        loop {
            let noise: Vec<f64> = if stochastic {
                (0..spec.act_dim).map(|_| normal.sample(&mut rng)).collect()
            } else {
                vec![0.0; spec.act_dim]
            };
            let step = policy.step(params, &obs, &ctx, &state, &noise);
            let out = env.step(&step.action);
            ctx.prev_obs.copy_from_slice(&obs);
            ctx.prev_act.copy_from_slice(&step.action);
            ctx.prev_rew = out.reward;
            obs = out.obs;
            state = step.state;
            total += out.reward;
            len += 1;
            if out.done.is_some() {
                break;
            }
        }
        if let Some(s) = env.episode_success() {
            successes.push(s);
        }
        returns.push(total);
        lens.push(len as f64);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let stderr = if returns.len() > 1 { (var / (n - 1.0)).sqrt() } else { 0.0 };
    Ok(EvalSummary {
        episodes,
        return_mean: mean,
        return_stderr: stderr,
        len_mean: lens.iter().sum::<f64>() / n,
        success_rate: if successes.is_empty() {
            None
        } else {
            Some(successes.iter().filter(|&&s| s).count() as f64 / successes.len() as f64)
        },
    })
}

/// Uniform-random-action baseline over the same protocol.
pub fn evaluate_random(
    env_id: &str,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, crate::envs::EnvError> {
    let mut env = make_env(env_id, seed)?;
    let act_dim = env.spec().act_dim;
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut returns = Vec::with_capacity(episodes);
    let mut lens = Vec::with_capacity(episodes);
    let mut successes = Vec::new();
    for _ in 0..episodes {
        let _ = env.reset();
        let mut total = 0.0;
        let mut len = 0usize;
        loop {
            let a: Vec<f64> = (0..act_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = env.step(&a);
            total += out.reward;
            len += 1;
            if out.done.is_some() {
                break;
            }
        }
        if let Some(s) = env.episode_success() {
            successes.push(s);
        }
        returns.push(total);
        lens.push(len as f64);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(EvalSummary {
        episodes,
        return_mean: mean,
        return_stderr: if returns.len() > 1 { (var / (n - 1.0)).sqrt() } else { 0.0 },
        len_mean: lens.iter().sum::<f64>() / n,
        success_rate: if successes.is_empty() {
            None
        } else {
            Some(successes.iter().filter(|&&s| s).count() as f64 / successes.len() as f64)
        },
    })
}
