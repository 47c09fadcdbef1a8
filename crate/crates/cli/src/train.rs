//! Training run orchestration: the interaction/update loop plus windowed
//! metric logging, periodic deterministic evaluation, checkpointing, resume,
//! and the non-finite abort path (snapshot + diagnostic record).

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use rrl_core::algo::{evaluate_policy, Trainer};
use rrl_core::checkpoint;
use rrl_core::envs::make_env;
use rrl_core::metrics::{jsonl_to_csv, MetricsWriter};

use crate::record::RunRecord;
use crate::run_config::{canonical_json, resolve, RunConfig};

#[derive(Default, Serialize)]
struct Window {
    step: u64,
    episodes: u64,
    return_mean: Option<f64>,
    return_std: Option<f64>,
    success_rate: Option<f64>,
    critic_loss: Option<f64>,
    policy_loss: Option<f64>,
    alpha: f64,
    entropy: Option<f64>,
    grad_norm_ce: Option<f64>,
    grad_norm_other: Option<f64>,
    update_norm_ce: Option<f64>,
    update_norm_other: Option<f64>,
    eval_return_mean: Option<f64>,
    eval_return_stderr: Option<f64>,
    eval_success_rate: Option<f64>,
}

struct WindowAcc {
    critic_losses: Vec<f64>,
    policy_losses: Vec<f64>,
    entropies: Vec<f64>,
    g_ce: Vec<f64>,
    g_other: Vec<f64>,
    u_ce: Vec<f64>,
    u_other: Vec<f64>,
}

impl WindowAcc {
    fn new() -> Self {
        WindowAcc {
            critic_losses: vec![],
            policy_losses: vec![],
            entropies: vec![],
            g_ce: vec![],
            g_other: vec![],
            u_ce: vec![],
            u_other: vec![],
        }
    }

    fn mean(v: &[f64]) -> Option<f64> {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    }
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub final_eval_return: Option<f64>,
    pub final_eval_success: Option<f64>,
    pub aborted: bool,
    pub out_dir: PathBuf,
}

pub fn cmd_train(run_cfg: RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let resolved = resolve(&run_cfg)?;
    let out_dir = PathBuf::from(
        resolved.run.out.clone().unwrap_or_else(|| default_out_dir(&resolved.run)),
    );
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    std::fs::write(out_dir.join("resolved.json"), canonical_json(&resolved))?;

    for w in resolved.trainer.validate().map_err(|e| anyhow::anyhow!(e))? {
        eprintln!("warning: {w}");
    }

    let mut trainer = match resume {
        Some(ckpt) => {
            let (t, _) = checkpoint::load(ckpt)
                .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
            t
        }
        None => {
            let env = make_env(&resolved.run.env, resolved.run.seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            Trainer::new(
                resolved.trainer.clone(),
                resolved.encoder_cfg.clone(),
                resolved.head_cfg.clone(),
                env,
                resolved.run.seed,
            )
        }
    };

    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.jsonl"))?;
    let started = Instant::now();
    let mut record = RunRecord::new(&resolved, &out_dir);
    let mut acc = WindowAcc::new();
    let (mut last_eval_ret, mut last_eval_succ) = (None, None);
    let mut aborted = false;

    while trainer.env_steps < resolved.run.total_steps {
        match trainer.env_step() {
            Ok(m) => {
                if let Some(c) = m.critic_loss {
                    acc.critic_losses.push(c);
                }
                if let Some(p) = m.policy_loss {
                    acc.policy_losses.push(p);
                }
                if let Some(e) = m.entropy {
                    acc.entropies.push(e);
                }
                if let Some(g) = m.critic_grads {
                    acc.g_ce.push(g.grad_norm_ce);
                    acc.g_other.push(g.grad_norm_other);
                    acc.u_ce.push(g.update_norm_ce);
                    acc.u_other.push(g.update_norm_other);
                }
                let step = trainer.env_steps;
                let do_eval = resolved.run.eval_every > 0 && step % resolved.run.eval_every == 0;
                let do_log = step % resolved.run.log_every == 0 || do_eval;
                if do_log {
                    let mut win = Window {
                        step,
                        episodes: trainer.episodes,
                        alpha: m.alpha,
                        critic_loss: WindowAcc::mean(&acc.critic_losses),
                        policy_loss: WindowAcc::mean(&acc.policy_losses),
                        entropy: WindowAcc::mean(&acc.entropies),
                        grad_norm_ce: WindowAcc::mean(&acc.g_ce),
                        grad_norm_other: WindowAcc::mean(&acc.g_other),
                        update_norm_ce: WindowAcc::mean(&acc.u_ce),
                        update_norm_other: WindowAcc::mean(&acc.u_other),
                        ..Default::default()
                    };
                    if !trainer.recent_returns.is_empty() {
                        let rets: Vec<f64> = trainer.recent_returns.iter().copied().collect();
                        let mean = rets.iter().sum::<f64>() / rets.len() as f64;
                        let var = rets.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
                            / rets.len() as f64;
                        win.return_mean = Some(mean);
                        win.return_std = Some(var.sqrt());
                    }
                    if !trainer.recent_successes.is_empty() {
                        let s = trainer.recent_successes.iter().filter(|&&x| x).count();
                        win.success_rate =
                            Some(s as f64 / trainer.recent_successes.len() as f64);
                    }
                    if do_eval {
                        let eval_env = resolved
                            .run
                            .eval_env
                            .clone()
                            .unwrap_or_else(|| resolved.run.env.clone());
                        let summary = evaluate_policy(
                            &trainer.policy,
                            &trainer.policy_params,
                            &eval_env,
                            resolved.run.eval_episodes,
                            resolved.run.seed.wrapping_add(step),
                            resolved.run.stochastic_eval,
                        )
                        .map_err(|e| anyhow::anyhow!("{e}"))?;
                        win.eval_return_mean = Some(summary.return_mean);
                        win.eval_return_stderr = Some(summary.return_stderr);
                        win.eval_success_rate = summary.success_rate;
                        last_eval_ret = Some(summary.return_mean);
                        last_eval_succ = summary.success_rate;
                    }
                    metrics.append(&win)?;
                    acc = WindowAcc::new();
                }
                if resolved.run.checkpoint_every > 0
                    && step % resolved.run.checkpoint_every == 0
                {
                    let dir = out_dir.join(format!("ckpt-{step:09}"));
                    checkpoint::save(&dir, &trainer, resolved.run.seed)?;
                }
            }
            Err(e) => {
                // the failure mode under oversized learning rates: record a
                // diagnostic snapshot and stop instead of logging non-finite
                // numbers
                let dir = out_dir.join("ckpt-abort");
                let _ = checkpoint::save(&dir, &trainer, resolved.run.seed);
                std::fs::write(
                    out_dir.join("abort.json"),
                    serde_json::to_string_pretty(&serde_json::json!({
                        "step": trainer.env_steps,
                        "error": e.to_string(),
                    }))?,
                )?;
                eprintln!("aborting at step {}: {e}", trainer.env_steps);
                aborted = true;
                break;
            }
        }
    }
    metrics.flush()?;

    let final_dir = out_dir.join("ckpt-final");
    checkpoint::save(&final_dir, &trainer, resolved.run.seed)?;
    jsonl_to_csv(
        &out_dir.join("metrics.jsonl"),
        &out_dir.join("learning_curve.csv"),
        &[
            "step",
            "return_mean",
            "return_std",
            "success_rate",
            "eval_return_mean",
            "eval_return_stderr",
            "eval_success_rate",
            "critic_loss",
            "policy_loss",
            "alpha",
            "entropy",
        ],
    )?;
    record.finish(started.elapsed(), trainer.env_steps, aborted);
    std::fs::write(out_dir.join("run_record.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(TrainOutcome {
        record,
        final_eval_return: last_eval_ret,
        final_eval_success: last_eval_succ,
        aborted,
        out_dir,
    })
}

fn default_out_dir(run: &RunConfig) -> String {
    let root = std::env::var("RRL_OUT_ROOT").unwrap_or_else(|_| "runs".into());
    format!("{root}/{}-s{}", run.env, run.seed)
}

/// Re-derivable summary of one completed run (spec: RunRecord).
pub fn describe_outcome(o: &TrainOutcome) -> String {
    format!(
        "steps {} aborted {} eval_return {:?} success {:?} out {}",
        o.record.completed_steps, o.aborted, o.final_eval_return, o.final_eval_success,
        o.out_dir.display()
    )
}
