//! Divergence-lab command: load or initialize a recurrent policy, take one
//! policy-gradient step at each requested (lr_ce, lr_other) pair, measure
//! per-step output divergence over a long rollout, estimate the bound
//! constants, and emit curve + envelope CSVs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rrl_core::algo::GroupLrs;
use rrl_core::array::Array;
use rrl_core::autodiff::ParameterSet;
use rrl_core::checkpoint;
use rrl_core::envs::make_env;
use rrl_core::metrics::write_csv;
use rrl_core::nets::{CriticNet, EncoderConfig, EncoderKind, HeadConfig, PolicyNet};
use rrl_core::replay::{DoneKind, ReplayBuffer, Trajectory};
use rrl_core::rng::{stream_rng, NormalSource, Stream};
use rrl_core::stability::{
    average_bound, bound_curve, estimate_epsilon, estimate_lipschitz, measure_divergence,
    one_policy_gradient_step, verify_bounds, LipschitzEstimate, PolicyCell,
};

pub struct StabilityArgs {
    pub ckpt: Option<PathBuf>,
    pub random_env: Option<String>,
    pub encoder: EncoderKind,
    pub lrs: Vec<(f64, f64)>,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub batch_transitions: usize,
    pub out: PathBuf,
}

#[derive(Serialize)]
pub struct PairSummary {
    pub lr_ce: f64,
    pub lr_other: f64,
    pub seed: u64,
    pub k_h: f64,
    pub k_y: f64,
    pub epsilon: f64,
    pub divergence_first: f64,
    pub divergence_last: f64,
    pub amplification: f64,
    pub mean_divergence: f64,
    pub max_violation_ratio: f64,
    pub bound_asymptote: f64,
}

/// One (pair, seed) measurement on a freshly built model set; exposed for
/// the acceptance suite as well as the CLI.
pub fn run_pair(
    env_id: &str,
    enc_cfg: &EncoderConfig,
    head_cfg: &HeadConfig,
    lr_ce: f64,
    lr_other: f64,
    seed: u64,
    horizon: usize,
    batch_transitions: usize,
) -> Result<(PairSummary, Vec<f64>, LipschitzEstimate)> {
    let mut env = make_env(env_id, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    let spec = env.spec().clone();
    let policy = PolicyNet::new(enc_cfg.clone(), head_cfg.clone(), spec.obs_dim, spec.act_dim);
    let critic = CriticNet::new(enc_cfg.clone(), head_cfg.clone(), spec.obs_dim, spec.act_dim);
    let mut init_rng = stream_rng(seed, Stream::ParamInit);
    let params = policy.init_params(&mut init_rng);
    let critic_params = critic.init_params(&mut init_rng);
    run_pair_with(
        env.as_mut(),
        &policy,
        &params,
        &critic,
        &critic_params,
        lr_ce,
        lr_other,
        seed,
        horizon,
        batch_transitions,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn run_pair_with(
    env: &mut dyn rrl_core::envs::Env,
    policy: &PolicyNet,
    params: &ParameterSet,
    critic: &CriticNet,
    critic_params: &ParameterSet,
    lr_ce: f64,
    lr_other: f64,
    seed: u64,
    horizon: usize,
    batch_transitions: usize,
) -> Result<(PairSummary, Vec<f64>, LipschitzEstimate)> {
    let spec = env.spec().clone();
    let mut lab_rng = stream_rng(seed, Stream::Lab);
    let mut normal = NormalSource::new();

    // gradient batch: stochastic rollouts of the pre-update policy
    let mut buffer = ReplayBuffer::new(1_000_000);
    let mut collected = 0usize;
    let mut episode = 0u64;
    while collected < batch_transitions {
        let mut obs = env.reset();
        let mut ctx = rrl_core::nets::StepContext::zeros(spec.obs_dim, spec.act_dim);
        let mut state = policy.zero_state();
        let mut obs_rows = obs.clone();
        let mut acts = Vec::new();
        let mut rews = Vec::new();
        loop {
            let noise: Vec<f64> =
                (0..spec.act_dim).map(|_| normal.sample(&mut lab_rng)).collect();
            let step = policy.step(params, &obs, &ctx, &state, &noise);
            let out = env.step(&step.action);
            ctx.prev_obs.copy_from_slice(&obs);
            ctx.prev_act.copy_from_slice(&step.action);
            ctx.prev_rew = out.reward;
            acts.extend_from_slice(&step.action);
            rews.push(out.reward);
            obs_rows.extend_from_slice(&out.obs);
            obs = out.obs;
            state = step.state;
            if let Some(done) = out.done {
                let len = rews.len();
                collected += len;
                buffer
                    .insert(Trajectory {
                        obs: Array::mat(len + 1, spec.obs_dim, obs_rows.clone()),
                        actions: Array::mat(len, spec.act_dim, acts.clone()),
                        rewards: rews.clone(),
                        done_kind: if done == DoneKind::Terminal {
                            DoneKind::Terminal
                        } else {
                            DoneKind::Timeout
                        },
                        episode_id: episode,
                        metadata: serde_json::Value::Null,
                    })
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                episode += 1;
                break;
            }
        }
    }
    let batch = buffer
        .sample_stacked(batch_transitions, enc_gap(&policy.encoder.cfg), &mut lab_rng)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut noise = Array::zeros(&[batch.base.steps * batch.base.rows, spec.act_dim]);
    normal.fill(&mut lab_rng, noise.data_mut());

    // theta' = one policy-gradient step at the requested group rates
    let updated = one_policy_gradient_step(
        policy,
        params,
        critic,
        critic_params,
        &batch,
        0.2,
        GroupLrs { context_encoder: lr_ce, other: lr_other },
        &noise,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    // shared rollout inputs from the pre-update model; averaging the
    // per-step divergence over a few independent rollouts tames the
    // state-visitation noise in single-sequence curves
    let cell_a = PolicyCell { net: policy, params };
    let cell_b = PolicyCell { net: policy, params: &updated };
    const LAB_ROLLOUTS: usize = 4;
    const LAB_BURN_IN: usize = 100;
    let mut curve = vec![0.0f64; horizon + 1];
    let mut xs = Vec::new();
    let mut hs = Vec::new();
    for _ in 0..LAB_ROLLOUTS {
        let (xs_i, hs_i, h_start) = cell_a.rollout_window(env, LAB_BURN_IN, horizon + 1);
        let c = measure_divergence(&cell_a, &cell_b, &xs_i, &h_start)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        for (acc, v) in curve.iter_mut().zip(&c) {
            *acc += v / LAB_ROLLOUTS as f64;
        }
        xs.extend(xs_i);
        hs.extend(hs_i);
    }

    let mut est = estimate_lipschitz(&cell_a, &xs, &hs, 2000, &mut lab_rng);

    let est_b = estimate_lipschitz(&cell_b, &xs, &hs, 2000, &mut lab_rng);
    est.k_h = est.k_h.max(est_b.k_h);
    est.k_y = est.k_y.max(est_b.k_y);
    est.epsilon = estimate_epsilon(&cell_a, &cell_b, &xs, &hs, 2000, &mut lab_rng);

    let report = verify_bounds(&curve, &est, 0.1).map_err(|e| anyhow::anyhow!("{e}"))?;
    let first = curve[0].max(1e-300);
    let last = curve[curve.len() - 1];
    let summary = PairSummary {
        lr_ce,
        lr_other,
        seed,
        k_h: est.k_h,
        k_y: est.k_y,
        epsilon: est.epsilon,
        divergence_first: curve[0],
        divergence_last: last,
        amplification: last / first,
        mean_divergence: curve.iter().sum::<f64>() / curve.len() as f64,
        max_violation_ratio: report.max_violation_ratio,
        bound_asymptote: est.asymptote().map_err(|e| anyhow::anyhow!("{e}"))?,
    };
    Ok((summary, curve, est))
}

fn enc_gap(cfg: &EncoderConfig) -> usize {
    cfg.conv_kernel.saturating_sub(1)
}

pub fn cmd_stability(args: StabilityArgs) -> Result<Vec<PairSummary>> {
    std::fs::create_dir_all(&args.out)?;
    if args.lrs.is_empty() {
        bail!("no learning-rate pairs given");
    }
    let mut summaries = Vec::new();
    for &seed in &args.seeds {
        for &(lr_ce, lr_other) in &args.lrs {
            let (summary, curve, est) = match (&args.ckpt, &args.random_env) {
                (Some(dir), _) => {
                    let (policy, params, manifest) = checkpoint::load_policy(dir)
                        .with_context(|| format!("loading {}", dir.display()))?;
                    let (_, _, cmanifest) = (0, 0, &manifest);
                    let critic = CriticNet::new(
                        manifest.encoder.clone(),
                        manifest.head.clone(),
                        manifest.obs_dim,
                        manifest.act_dim,
                    );
                    let critic_params =
                        ParameterSet::load(&dir.join("critic.params")).with_context(|| {
                            format!("loading critic params from {}", dir.display())
                        })?;
                    let mut env = make_env(&cmanifest.env_id, seed)
                        .map_err(|e| anyhow::anyhow!("{e}"))?;
                    run_pair_with(
                        env.as_mut(),
                        &policy,
                        &params,
                        &critic,
                        &critic_params,
                        lr_ce,
                        lr_other,
                        seed,
                        args.horizon,
                        args.batch_transitions,
                    )?
                }
                (None, Some(env_id)) => {
                    let mut enc = EncoderConfig::desk(args.encoder);
                    enc.conv_kernel = 0;
                    run_pair(
                        env_id,
                        &enc,
                        &HeadConfig::desk(),
                        lr_ce,
                        lr_other,
                        seed,
                        args.horizon,
                        args.batch_transitions,
                    )?
                }
                (None, None) => bail!("need --ckpt or --random <env>"),
            };

            let bounds = bound_curve(&est, curve.len() - 1).map_err(|e| anyhow::anyhow!("{e}"))?;
            let mut rows = Vec::with_capacity(curve.len());
            let mut acc = 0.0;
            for (t, v) in curve.iter().enumerate() {
                acc += v;
                let avg = acc / (t + 1) as f64;
                let ab = average_bound(&est, t).map_err(|e| anyhow::anyhow!("{e}"))?;
                rows.push(vec![t as f64, *v, bounds[t], avg, ab]);
            }
            let name = format!("divergence-ce{lr_ce:e}-other{lr_other:e}-seed{seed}.csv");
            write_csv(
                &args.out.join(name),
                &["t", "measured", "bound", "running_avg", "avg_bound"],
                &rows,
            )?;
            summaries.push(summary);
        }
    }
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summaries)?,
    )?;
    Ok(summaries)
}

pub fn parse_lr_pairs(s: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (a, b) = part
            .split_once(':')
            .ok_or_else(|| anyhow::anyhow!("lr pair {part} must look like ce:other"))?;
        out.push((a.trim().parse()?, b.trim().parse()?));
    }
    Ok(out)
}

pub fn default_out(sub: &str) -> PathBuf {
    let root = std::env::var("RRL_OUT_ROOT").unwrap_or_else(|_| "runs".into());
    Path::new(&root).join(sub)
}
