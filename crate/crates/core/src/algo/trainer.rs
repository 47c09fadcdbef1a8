use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algo::losses::{critic_loss_graph, critic_targets, policy_loss_graph};
use crate::algo::optimizer::{soft_update, GradStats, GroupLrs, GroupedAdamW, OptimError};
use crate::algo::{EntropyTuner, TrainerConfig};
use crate::array::{mask_mean, Array};
use crate::autodiff::{AdError, ParamBinder, ParameterSet, Tape};
use crate::envs::Env;
use crate::nets::{
    CriticNet, EncoderConfig, HeadConfig, PolicyNet, RecurrentState, StepContext, ENSEMBLE_SIZE,
};
use crate::replay::{DoneKind, ReplayBuffer, ReplayError, Trajectory};
use crate::rng::{load_rng, save_rng, stream_rng, NormalSource, RngState, Stream};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("non-finite value during {context}: {source}")]
    NonFinite { context: &'static str, source: AdError },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Clone, Debug, Serialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub len: usize,
    pub ret: f64,
    pub success: Option<bool>,
}

/// Everything observable about one environment step.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha: f64,
    /// Masked mean of -log p over the last policy batch.
    pub entropy: Option<f64>,
    pub critic_grads: Option<GradStats>,
    pub policy_grads: Option<GradStats>,
    pub episode: Option<EpisodeSummary>,
}

pub struct Trainer {
    pub cfg: TrainerConfig,
    pub policy: PolicyNet,
    pub critic: CriticNet,
    pub policy_params: ParameterSet,
    pub critic_params: ParameterSet,
    pub target_params: ParameterSet,
    pub opt_policy: GroupedAdamW,
    pub opt_critic: GroupedAdamW,
    pub tuner: EntropyTuner,
    pub buffer: ReplayBuffer,
    pub env: Box<dyn Env>,

    obs: Vec<f64>,
    ctx: StepContext,
    rstate: RecurrentState,
    live_obs: Vec<f64>,
    live_actions: Vec<f64>,
    live_rewards: Vec<f64>,

    pub env_steps: u64,
    pub grad_updates: u64,
    pub policy_updates: u64,
    pub episodes: u64,
    pub recent_returns: VecDeque<f64>,
    pub recent_successes: VecDeque<bool>,

    rng_explore: ChaCha8Rng,
    rng_batch: ChaCha8Rng,
    rng_ensemble: ChaCha8Rng,
    rng_noise: ChaCha8Rng,
    normal_explore: NormalSource,
    normal_noise: NormalSource,
    gap: usize,
}

impl Trainer {
    pub fn new(
        cfg: TrainerConfig,
        enc_cfg: EncoderConfig,
        head_cfg: HeadConfig,
        mut env: Box<dyn Env>,
        seed: u64,
    ) -> Self {
        let spec = env.spec().clone();
        let policy = PolicyNet::new(enc_cfg.clone(), head_cfg.clone(), spec.obs_dim, spec.act_dim);
        let critic = CriticNet::new(enc_cfg.clone(), head_cfg, spec.obs_dim, spec.act_dim);
        let mut init_rng = stream_rng(seed, Stream::ParamInit);
        let policy_params = policy.init_params(&mut init_rng);
        let critic_params = critic.init_params(&mut init_rng);
        let target_params = critic_params.clone();
        let opt_policy = GroupedAdamW::new(
            &policy_params,
            GroupLrs { context_encoder: cfg.lr_ce, other: cfg.lr_policy },
            cfg.weight_decay,
        );
        let opt_critic = GroupedAdamW::new(
            &critic_params,
            GroupLrs { context_encoder: cfg.lr_ce, other: cfg.lr_value },
            cfg.weight_decay,
        );
        let te = cfg.target_entropy.resolve(spec.act_dim);
        let tuner = EntropyTuner::new(cfg.initial_alpha, te, cfg.lr_alpha);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        let obs = env.reset();
        let ctx = StepContext::zeros(spec.obs_dim, spec.act_dim);
        let rstate = policy.zero_state();
        let gap = enc_cfg.conv_kernel.saturating_sub(1);
        Trainer {
            cfg,
            policy,
            critic,
            policy_params,
            critic_params,
            target_params,
            opt_policy,
            opt_critic,
            tuner,
            buffer,
            env,
            live_obs: obs.clone(),
            obs,
            ctx,
            rstate,
            live_actions: Vec::new(),
            live_rewards: Vec::new(),
            env_steps: 0,
            grad_updates: 0,
            policy_updates: 0,
            episodes: 0,
            recent_returns: VecDeque::with_capacity(32),
            recent_successes: VecDeque::with_capacity(32),
            rng_explore: stream_rng(seed, Stream::Exploration),
            rng_batch: stream_rng(seed, Stream::BatchSampling),
            rng_ensemble: stream_rng(seed, Stream::EnsemblePick),
            rng_noise: stream_rng(seed, Stream::LossNoise),
            normal_explore: NormalSource::new(),
            normal_noise: NormalSource::new(),
            gap,
        }
    }

    pub fn act_dim(&self) -> usize {
        self.env.spec().act_dim
    }

    fn in_warmup(&self) -> bool {
        self.env_steps < self.cfg.warmup_steps
    }

    /// One iteration of the interaction/update loop: act, store, and (past
    /// warmup) one critic update plus a delayed policy/temperature update.
    pub fn env_step(&mut self) -> Result<StepMetrics, TrainerError> {
        let act_dim = self.act_dim();
        // advance the recurrent state every step so the hidden state always
        // reflects the episode history, warmup included
        let noise: Vec<f64> = if self.in_warmup() {
            vec![0.0; act_dim]
        } else {
            (0..act_dim).map(|_| self.normal_explore.sample(&mut self.rng_explore)).collect()
        };
        let pol_step =
            self.policy.step(&self.policy_params, &self.obs, &self.ctx, &self.rstate, &noise);
        let action: Vec<f64> = if self.in_warmup() {
            (0..act_dim).map(|_| self.rng_explore.random_range(-1.0..1.0)).collect()
        } else {
            pol_step.action.clone()
        };
        self.rstate = pol_step.state;

        let out = self.env.step(&action);
        self.live_actions.extend_from_slice(&action);
        self.live_rewards.push(out.reward);
        self.ctx.prev_obs.copy_from_slice(&self.obs);
        self.ctx.prev_act.copy_from_slice(&action);
        self.ctx.prev_rew = out.reward;
        self.live_obs.extend_from_slice(&out.obs);
        self.obs = out.obs;
        self.env_steps += 1;

        let mut metrics = StepMetrics {
            step: self.env_steps,
            alpha: self.tuner.alpha(),
            ..Default::default()
        };

        if let Some(done_kind) = out.done {
            metrics.episode = Some(self.finish_episode(done_kind)?);
        }

        if self.env_steps > self.cfg.warmup_steps && !self.buffer.is_empty() {
            self.update(&mut metrics)?;
        }
        Ok(metrics)
    }

    fn finish_episode(&mut self, done_kind: DoneKind) -> Result<EpisodeSummary, TrainerError> {
        let obs_dim = self.env.spec().obs_dim;
        let act_dim = self.env.spec().act_dim;
        let len = self.live_rewards.len();
        let ret: f64 = self.live_rewards.iter().sum();
        let success = self.env.episode_success();
        let mut metadata = self.env.hidden_metadata();
        if let Some(s) = success {
            if let serde_json::Value::Object(map) = &mut metadata {
                map.insert("success".into(), serde_json::json!(s));
            }
        }
        let traj = Trajectory {
            obs: Array::mat(len + 1, obs_dim, std::mem::take(&mut self.live_obs)),
            actions: Array::mat(len, act_dim, std::mem::take(&mut self.live_actions)),
            rewards: std::mem::take(&mut self.live_rewards),
            done_kind,
            episode_id: self.episodes,
            metadata,
        };
        self.buffer.insert(traj)?;
        self.episodes += 1;
        if self.recent_returns.len() == 32 {
            self.recent_returns.pop_front();
        }
        self.recent_returns.push_back(ret);
        if let Some(s) = success {
            if self.recent_successes.len() == 32 {
                self.recent_successes.pop_front();
            }
            self.recent_successes.push_back(s);
        }
        // fresh episode: reset env, context and hidden state
        self.obs = self.env.reset();
        self.live_obs = self.obs.clone();
        self.ctx.reset();
        self.rstate.reset();
        Ok(EpisodeSummary { episode: self.episodes - 1, len, ret, success })
    }

    fn sample_heads(&mut self) -> Vec<usize> {
        let mut all: Vec<usize> = (0..ENSEMBLE_SIZE).collect();
        let mut picked = Vec::with_capacity(self.cfg.target_sample_size);
        for _ in 0..self.cfg.target_sample_size {
            let i = self.rng_ensemble.random_range(0..all.len());
            picked.push(all.swap_remove(i));
        }
        picked
    }

    fn draw_noise(&mut self, rows: usize, act_dim: usize) -> Array {
        let mut out = Array::zeros(&[rows, act_dim]);
        self.normal_noise.fill(&mut self.rng_noise, out.data_mut());
        out
    }

    fn update(&mut self, metrics: &mut StepMetrics) -> Result<(), TrainerError> {
        let act_dim = self.act_dim();
        let batch =
            self.buffer.sample_stacked(self.cfg.batch_transitions, self.gap, &mut self.rng_batch)?;
        let heads = self.sample_heads();
        let noise_ext = self.draw_noise(batch.ext.steps * batch.ext.rows, act_dim);
        let alpha = self.tuner.alpha();

        let targets = critic_targets(
            &batch,
            &self.policy,
            &self.policy_params,
            &self.critic,
            &self.target_params,
            alpha,
            self.cfg.gamma,
            &heads,
            &noise_ext,
            self.cfg.parallel_scan,
        )
        .map_err(|source| TrainerError::NonFinite { context: "target computation", source })?;

        // critic update
        {
            let mut tape = Tape::new();
            let mut binder = ParamBinder::new(&self.critic_params);
            let loss = critic_loss_graph(
                &mut tape,
                &mut binder,
                &self.critic,
                &batch,
                &targets,
                self.cfg.parallel_scan,
            );
            let grads = tape
                .backward(loss)
                .map_err(|source| TrainerError::NonFinite { context: "critic update", source })?;
            let named = binder.collect(&grads);
            metrics.critic_loss = Some(tape.value(loss).scalar_value());
            metrics.critic_grads =
                Some(self.opt_critic.step(&mut self.critic_params, &named, self.cfg.grad_clip)?);
        }
        soft_update(&mut self.target_params, &self.critic_params, self.cfg.soft_update_tau)?;
        self.grad_updates += 1;

        // delayed policy + temperature update
        if (self.grad_updates - 1) % self.cfg.policy_delay == 0 {
            let noise = self.draw_noise(batch.base.steps * batch.base.rows, act_dim);
            let mut tape = Tape::new();
            let mut pol_binder = ParamBinder::new(&self.policy_params);
            let mut crit_binder = ParamBinder::frozen(&self.critic_params);
            let out = policy_loss_graph(
                &mut tape,
                &mut pol_binder,
                &mut crit_binder,
                &self.policy,
                &self.critic,
                &batch,
                alpha,
                &noise,
                self.cfg.parallel_scan,
            );
            let grads = tape
                .backward(out.loss)
                .map_err(|source| TrainerError::NonFinite { context: "policy update", source })?;
            let named = pol_binder.collect(&grads);
            metrics.policy_loss = Some(tape.value(out.loss).scalar_value());
            metrics.policy_grads =
                Some(self.opt_policy.step(&mut self.policy_params, &named, self.cfg.grad_clip)?);
            let mean_lp = mask_mean(tape.value(out.log_prob), &batch.base.mask);
            metrics.entropy = Some(-mean_lp);
            self.tuner.update(mean_lp);
            self.policy_updates += 1;
        }
        metrics.alpha = self.tuner.alpha();
        Ok(())
    }

    /// Deterministic action (tanh of the mean) for evaluation rollouts.
    pub fn deterministic_action(
        policy: &PolicyNet,
        params: &ParameterSet,
        obs: &[f64],
        ctx: &StepContext,
        state: &RecurrentState,
    ) -> (Vec<f64>, RecurrentState) {
        let zero = vec![0.0; policy.act_dim];
        let step = policy.step(params, obs, ctx, state, &zero);
        (step.action, step.state)
    }

    pub fn state_snapshot(&self) -> TrainerState {
        TrainerState {
            env_state: self.env.save_state(),
            obs: self.obs.clone(),
            ctx_prev_obs: self.ctx.prev_obs.clone(),
            ctx_prev_act: self.ctx.prev_act.clone(),
            ctx_prev_rew: self.ctx.prev_rew,
            hidden: self.rstate.hidden.clone(),
            conv_hist: self.rstate.conv_hist.clone(),
            live_obs: self.live_obs.clone(),
            live_actions: self.live_actions.clone(),
            live_rewards: self.live_rewards.clone(),
            env_steps: self.env_steps,
            grad_updates: self.grad_updates,
            policy_updates: self.policy_updates,
            episodes: self.episodes,
            recent_returns: self.recent_returns.iter().copied().collect(),
            recent_successes: self.recent_successes.iter().copied().collect(),
            tuner: self.tuner.clone(),
            opt_policy: self.opt_policy.clone(),
            opt_critic: self.opt_critic.clone(),
            rng_explore: save_rng(&self.rng_explore),
            rng_batch: save_rng(&self.rng_batch),
            rng_ensemble: save_rng(&self.rng_ensemble),
            rng_noise: save_rng(&self.rng_noise),
            normal_explore: self.normal_explore.clone(),
            normal_noise: self.normal_noise.clone(),
        }
    }

    /// Restores everything the snapshot covers; parameter sets and the
    /// replay buffer are restored separately by the checkpoint layer.
    pub fn restore_snapshot(&mut self, s: TrainerState) -> Result<(), TrainerError> {
        self.env
            .restore_state(&s.env_state)
            .map_err(|e| TrainerError::Replay(ReplayError::Snapshot(e.to_string())))?;
        self.obs = s.obs;
        self.ctx.prev_obs = s.ctx_prev_obs;
        self.ctx.prev_act = s.ctx_prev_act;
        self.ctx.prev_rew = s.ctx_prev_rew;
        self.rstate.hidden = s.hidden;
        self.rstate.conv_hist = s.conv_hist;
        self.live_obs = s.live_obs;
        self.live_actions = s.live_actions;
        self.live_rewards = s.live_rewards;
        self.env_steps = s.env_steps;
        self.grad_updates = s.grad_updates;
        self.policy_updates = s.policy_updates;
        self.episodes = s.episodes;
        self.recent_returns = s.recent_returns.into();
        self.recent_successes = s.recent_successes.into();
        self.tuner = s.tuner;
        self.opt_policy = s.opt_policy;
        self.opt_critic = s.opt_critic;
        self.rng_explore = load_rng(&s.rng_explore);
        self.rng_batch = load_rng(&s.rng_batch);
        self.rng_ensemble = load_rng(&s.rng_ensemble);
        self.rng_noise = load_rng(&s.rng_noise);
        self.normal_explore = s.normal_explore;
        self.normal_noise = s.normal_noise;
        Ok(())
    }
}

/// Serializable non-parameter trainer state for bit-exact resume.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainerState {
    pub env_state: serde_json::Value,
    pub obs: Vec<f64>,
    pub ctx_prev_obs: Vec<f64>,
    pub ctx_prev_act: Vec<f64>,
    pub ctx_prev_rew: f64,
    pub hidden: Vec<Array>,
    pub conv_hist: Vec<Array>,
    pub live_obs: Vec<f64>,
    pub live_actions: Vec<f64>,
    pub live_rewards: Vec<f64>,
    pub env_steps: u64,
    pub grad_updates: u64,
    pub policy_updates: u64,
    pub episodes: u64,
    pub recent_returns: Vec<f64>,
    pub recent_successes: Vec<bool>,
    pub tuner: EntropyTuner,
    pub opt_policy: GroupedAdamW,
    pub opt_critic: GroupedAdamW,
    pub rng_explore: RngState,
    pub rng_batch: RngState,
    pub rng_ensemble: RngState,
    pub rng_noise: RngState,
    pub normal_explore: NormalSource,
    pub normal_noise: NormalSource,
}
