//! Output-divergence laboratory for recurrent cells.
//!
//! Empirically estimates the hidden/output Lipschitz constants (K_h, K_y)
//! and the one-step parameter-perturbation bound epsilon, evaluates the
//! per-step divergence envelope
//!
//!   ||y_t - y_t'|| <= K_y (1 - K_h^t) / (1 - K_h) eps + eps
//!
//! and its running-average counterpart, measures actual divergence curves
//! between a model and its one-gradient-step neighbour, and reports bound
//! violations. Sampled estimates are maxima over finite probes and hence
//! lower bounds of the true constants; violation reporting is therefore
//! advisory except on cells whose constants are known analytically.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::algo::{policy_loss_graph, GroupLrs, GroupedAdamW};
use crate::array::Array;
use crate::autodiff::{ParamBinder, ParameterSet, Tape};
use crate::envs::Env;
use crate::nets::{CriticNet, EncoderKind, PolicyNet, RecurrentState, StepContext};
use crate::replay::StackedBatch;
use crate::rng::NormalSource;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("contraction premise violated: K_h = {0} >= 1")]
    NotContractive(f64),
    #[error("models disagree structurally: {0}")]
    Mismatch(String),
}

/// One recurrent map y_t, h_{t+1} = f(x_t, h_t).
pub trait StepCell {
    fn input_dim(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn step(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>);

    fn zero_hidden(&self) -> Vec<f64> {
        vec![0.0; self.hidden_dim()]
    }
}

/// Empirical (K_h, K_y, epsilon) with the protocol that produced it.
/// Estimates are maxima over sampled pairs: lower bounds of the true
/// Lipschitz constants.
#[derive(Clone, Debug, Serialize)]
pub struct LipschitzEstimate {
    pub k_h: f64,
    pub k_y: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub protocol: String,
}

impl LipschitzEstimate {
    pub fn analytic(k_h: f64, k_y: f64, epsilon: f64) -> Self {
        LipschitzEstimate { k_h, k_y, epsilon, samples: 0, protocol: "analytic".into() }
    }

    /// Divergence ceiling as t grows: beta * eps + eps, beta = K_y / (1 - K_h).
    pub fn asymptote(&self) -> Result<f64, StabilityError> {
        if self.k_h >= 1.0 {
            return Err(StabilityError::NotContractive(self.k_h));
        }
        Ok(self.k_y / (1.0 - self.k_h) * self.epsilon + self.epsilon)
    }
}

/// Per-step divergence between two parameterizations on a shared input
/// sequence, with the settings that produced it.
#[derive(Clone, Debug, Serialize)]
pub struct DivergenceCurve {
    pub values: Vec<f64>,
    pub lr_ce: f64,
    pub lr_other: f64,
    pub seed: u64,
}

impl DivergenceCurve {
    pub fn running_averages(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            acc += v;
            out.push(acc / (i + 1) as f64);
        }
        out
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Max-ratio estimate of K_h and K_y over sampled (x, h, h') triples; pairs
/// mix global draws from the hidden pool with local pairs a distance 1e-3
/// apart to probe differential ratios. Degenerate h = h' pairs are skipped.
pub fn estimate_lipschitz(
    cell: &dyn StepCell,
    inputs: &[Vec<f64>],
    hiddens: &[Vec<f64>],
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> LipschitzEstimate {
    assert!(n_samples >= 1000, "estimate_lipschitz: need at least 1000 samples");
    assert!(!inputs.is_empty() && !hiddens.is_empty());
    let mut k_h = 0.0f64;
    let mut k_y = 0.0f64;
    let mut normal = NormalSource::new();
    let mut used = 0;
    for i in 0..n_samples {
        let x = &inputs[rng.random_range(0..inputs.len())];
        let ha = &hiddens[rng.random_range(0..hiddens.len())];
        let hb: Vec<f64> = if i % 2 == 0 {
            hiddens[rng.random_range(0..hiddens.len())].clone()
        } else {
            // local pair: 1e-3 off along a random direction
            let mut dir: Vec<f64> = (0..ha.len()).map(|_| normal.sample(rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for d in dir.iter_mut() {
                *d *= 1e-3 / norm;
            }
            ha.iter().zip(&dir).map(|(a, d)| a + d).collect()
        };
        let dh = l2(ha, &hb);
        if dh == 0.0 {
            continue;
        }
        used += 1;
        let (ya, ha_next) = cell.step(x, ha);
        let (yb, hb_next) = cell.step(x, &hb);
        k_h = k_h.max(l2(&ha_next, &hb_next) / dh);
        k_y = k_y.max(l2(&ya, &yb) / dh);
    }
    LipschitzEstimate {
        k_h,
        k_y,
        epsilon: 0.0,
        samples: used,
        protocol: "max ratio over sampled pairs (global + 1e-3 local), Euclidean norm".into(),
    }
}

/// Max one-step output difference between two parameterizations of the same
/// cell over sampled (x, h): the epsilon of the divergence bound.
pub fn estimate_epsilon(
    cell_a: &dyn StepCell,
    cell_b: &dyn StepCell,
    inputs: &[Vec<f64>],
    hiddens: &[Vec<f64>],
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert_eq!(cell_a.hidden_dim(), cell_b.hidden_dim(), "epsilon: hidden dims differ");
    let mut eps = 0.0f64;
    for _ in 0..n_samples {
        let x = &inputs[rng.random_range(0..inputs.len())];
        let h = &hiddens[rng.random_range(0..hiddens.len())];
        let (ya, ha) = cell_a.step(x, h);
        let (yb, hb) = cell_b.step(x, h);
        eps = eps.max(l2(&ha, &hb)).max(l2(&ya, &yb));
    }
    eps
}

/// Evaluates the per-step divergence bound for t = 0..=t_max.
pub fn bound_curve(est: &LipschitzEstimate, t_max: usize) -> Result<Vec<f64>, StabilityError> {
    if est.k_h >= 1.0 {
        return Err(StabilityError::NotContractive(est.k_h));
    }
    Ok((0..=t_max)
        .map(|t| {
            est.k_y * (1.0 - est.k_h.powi(t as i32)) / (1.0 - est.k_h) * est.epsilon + est.epsilon
        })
        .collect())
}

/// Right-hand side of the running-average bound at step t.
pub fn average_bound(est: &LipschitzEstimate, t: usize) -> Result<f64, StabilityError> {
    if est.k_h >= 1.0 {
        return Err(StabilityError::NotContractive(est.k_h));
    }
    let one_minus = 1.0 - est.k_h;
    let correction = est.k_y * (1.0 - est.k_h.powi(t as i32 + 1))
        / ((t as f64 + 1.0) * one_minus * one_minus)
        * est.epsilon;
    Ok(est.k_y / one_minus * est.epsilon + est.epsilon - correction)
}

/// Runs both models over the same input sequence from a shared initial
/// hidden state and records ||y_t - y_t'|| per step.
pub fn measure_divergence(
    cell_a: &dyn StepCell,
    cell_b: &dyn StepCell,
    inputs: &[Vec<f64>],
    h0: &[f64],
) -> Result<Vec<f64>, StabilityError> {
    if cell_a.hidden_dim() != cell_b.hidden_dim()
        || cell_a.output_dim() != cell_b.output_dim()
        || cell_a.input_dim() != cell_b.input_dim()
    {
        return Err(StabilityError::Mismatch(format!(
            "dims a = ({}, {}, {}), b = ({}, {}, {})",
            cell_a.input_dim(),
            cell_a.hidden_dim(),
            cell_a.output_dim(),
            cell_b.input_dim(),
            cell_b.hidden_dim(),
            cell_b.output_dim()
        )));
    }
    let mut ha = h0.to_vec();
    let mut hb = h0.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (ya, ha_next) = cell_a.step(x, &ha);
        let (yb, hb_next) = cell_b.step(x, &hb);
        out.push(l2(&ya, &yb));
        ha = ha_next;
        hb = hb_next;
    }
    Ok(out)
}

/// Bound-check report: violation ratios above 1 mean the measured curve
/// exceeded the (1 + slack)-inflated envelope at some step.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub max_violation_ratio: f64,
    pub violating_steps: usize,
    pub avg_max_violation_ratio: f64,
    pub avg_violating_steps: usize,
    pub pass: bool,
}

pub fn verify_bounds(
    curve: &[f64],
    est: &LipschitzEstimate,
    slack: f64,
) -> Result<BoundReport, StabilityError> {
    let bounds = bound_curve(est, curve.len().saturating_sub(1))?;
    let mut max_ratio = 0.0f64;
    let mut violations = 0;
    for (v, b) in curve.iter().zip(&bounds) {
        let limit = b * (1.0 + slack);
        let ratio = if *b > 0.0 { v / limit } else if *v > 0.0 { f64::INFINITY } else { 0.0 };
        max_ratio = max_ratio.max(ratio);
        if ratio > 1.0 {
            violations += 1;
        }
    }
    let mut avg_max = 0.0f64;
    let mut avg_violations = 0;
    let mut acc = 0.0;
    for (t, v) in curve.iter().enumerate() {
        acc += v;
        let avg = acc / (t + 1) as f64;
        let rhs = average_bound(est, t)? * (1.0 + slack);
        let ratio = if rhs > 0.0 { avg / rhs } else if avg > 0.0 { f64::INFINITY } else { 0.0 };
        avg_max = avg_max.max(ratio);
        if ratio > 1.0 {
            avg_violations += 1;
        }
    }
    Ok(BoundReport {
        max_violation_ratio: max_ratio,
        violating_steps: violations,
        avg_max_violation_ratio: avg_max,
        avg_violating_steps: avg_violations,
        pass: violations == 0 && avg_violations == 0,
    })
}

// ------------------------------------------------------------------ cells

/// Exactly linear scalar recurrence h' = k_h h + b x, y = k_y h: every
/// constant of the bound is known in closed form.
#[derive(Clone, Debug)]
pub struct LinearScalarCell {
    pub k_h: f64,
    pub k_y: f64,
    pub b: f64,
}

impl StepCell for LinearScalarCell {
    fn input_dim(&self) -> usize {
        1
    }
    fn hidden_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn step(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (vec![self.k_y * h[0]], vec![self.k_h * h[0] + self.b * x[0]])
    }
}

/// Dense linear cell h' = W_h h + W_x x, y = W_y h; K_h is the spectral
/// norm of W_h.
#[derive(Clone, Debug)]
pub struct LinearCell {
    pub w_h: Array,
    pub w_x: Array,
    pub w_y: Array,
}

impl StepCell for LinearCell {
    fn input_dim(&self) -> usize {
        self.w_x.cols()
    }
    fn hidden_dim(&self) -> usize {
        self.w_h.rows()
    }
    fn output_dim(&self) -> usize {
        self.w_y.rows()
    }
    fn step(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.hidden_dim();
        let mut h_next = vec![0.0; s];
        for i in 0..s {
            let mut acc = 0.0;
            for (j, hv) in h.iter().enumerate() {
                acc += self.w_h.at(i, j) * hv;
            }
            for (j, xv) in x.iter().enumerate() {
                acc += self.w_x.at(i, j) * xv;
            }
            h_next[i] = acc;
        }
        let mut y = vec![0.0; self.output_dim()];
        for (i, yv) in y.iter_mut().enumerate() {
            *yv = (0..s).map(|j| self.w_y.at(i, j) * h[j]).sum();
        }
        (y, h_next)
    }
}

/// A recurrent policy as a step cell: x packs (o, o-hat, a-hat[, r-hat]),
/// h flattens the per-block hidden states, y is the deterministic action.
/// Requires conv disabled (the conv history is not part of the flat state).
pub struct PolicyCell<'a> {
    pub net: &'a PolicyNet,
    pub params: &'a ParameterSet,
}

impl PolicyCell<'_> {
    fn feed_reward(&self) -> bool {
        self.net.encoder.cfg.feed_last_reward
    }

    fn unpack(&self, x: &[f64]) -> (Vec<f64>, StepContext) {
        let (od, ad) = (self.net.obs_dim, self.net.act_dim);
        let obs = x[..od].to_vec();
        let ctx = StepContext {
            prev_obs: x[od..2 * od].to_vec(),
            prev_act: x[2 * od..2 * od + ad].to_vec(),
            prev_rew: if self.feed_reward() { x[2 * od + ad] } else { 0.0 },
        };
        (obs, ctx)
    }

    fn unflatten(&self, h: &[f64]) -> RecurrentState {
        let cfg = &self.net.encoder.cfg;
        assert_eq!(cfg.conv_kernel, 0, "PolicyCell needs conv disabled");
        let mut state = self.net.zero_state();
        for (bi, block) in state.hidden.iter_mut().enumerate() {
            let s = cfg.state_dim;
            block.data_mut().copy_from_slice(&h[bi * s..(bi + 1) * s]);
        }
        state
    }

    fn flatten(state: &RecurrentState) -> Vec<f64> {
        state.hidden.iter().flat_map(|b| b.data().iter().copied()).collect()
    }

    /// Deterministic rollout through an environment (ignoring episode ends:
    /// the physics run open-loop) recording the cell inputs and the hidden
    /// states the policy actually visited. `burn_in` extra steps are run
    /// first so the recorded window starts from a typical on-policy hidden
    /// state rather than the zero state; the state at the window start is
    /// returned alongside.
    pub fn rollout_window(
        &self,
        env: &mut dyn Env,
        burn_in: usize,
        steps: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let (od, ad) = (self.net.obs_dim, self.net.act_dim);
        let mut obs = env.reset();
        let mut ctx = StepContext::zeros(od, ad);
        let mut state = self.net.zero_state();
        let mut xs = Vec::with_capacity(steps);
        let mut hs = Vec::with_capacity(steps);
        let mut h_start = Self::flatten(&state);
        let zero_noise = vec![0.0; ad];
        for t in 0..burn_in + steps {
            if t >= burn_in {
                if t == burn_in {
                    h_start = Self::flatten(&state);
                }
                let mut x = Vec::with_capacity(self.input_dim());
                x.extend_from_slice(&obs);
                x.extend_from_slice(&ctx.prev_obs);
                x.extend_from_slice(&ctx.prev_act);
                if self.feed_reward() {
                    x.push(ctx.prev_rew);
                }
                xs.push(x);
                hs.push(Self::flatten(&state));
            }
            let step = self.net.step(self.params, &obs, &ctx, &state, &zero_noise);
            let out = env.step(&step.action);
            ctx.prev_obs.copy_from_slice(&obs);
            ctx.prev_act.copy_from_slice(&step.action);
            ctx.prev_rew = out.reward;
            obs = out.obs;
            state = step.state;
        }
        (xs, hs, h_start)
    }

    /// Rollout from the zero hidden state (no burn-in).
    pub fn rollout_inputs(
        &self,
        env: &mut dyn Env,
        steps: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (xs, hs, _) = self.rollout_window(env, 0, steps);
        (xs, hs)
    }
}

impl StepCell for PolicyCell<'_> {
    fn input_dim(&self) -> usize {
        2 * self.net.obs_dim + self.net.act_dim + usize::from(self.feed_reward())
    }
    fn hidden_dim(&self) -> usize {
        self.net.encoder.cfg.blocks * self.net.encoder.cfg.state_dim
    }
    fn output_dim(&self) -> usize {
        self.net.act_dim
    }
    fn step(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (obs, ctx) = self.unpack(x);
        let state = self.unflatten(h);
        let zero = vec![0.0; self.net.act_dim];
        let out = self.net.step(self.params, &obs, &ctx, &state, &zero);
        (out.action, Self::flatten(&out.state))
    }
}

/// One reparameterized policy-gradient step at the given group rates;
/// returns the updated parameter copy (the "theta prime" of the bound).
pub fn one_policy_gradient_step(
    policy: &PolicyNet,
    policy_params: &ParameterSet,
    critic: &CriticNet,
    critic_params: &ParameterSet,
    batch: &StackedBatch,
    alpha: f64,
    lrs: GroupLrs,
    noise: &Array,
) -> Result<ParameterSet, StabilityError> {
    let mut params = policy_params.clone();
    let mut tape = Tape::new();
    let mut pb = ParamBinder::new(policy_params);
    let mut cb = ParamBinder::frozen(critic_params);
    let out = policy_loss_graph(&mut tape, &mut pb, &mut cb, policy, critic, batch, alpha, noise, false);
    let grads = tape
        .backward(out.loss)
        .map_err(|e| StabilityError::Mismatch(format!("gradient step failed: {e}")))?;
    let named = pb.collect(&grads);
    let mut opt = GroupedAdamW::new(&params, lrs, 0.0);
    opt.step(&mut params, &named, None)
        .map_err(|e| StabilityError::Mismatch(e.to_string()))?;
    Ok(params)
}

/// Certified K_h for a single-block SSM-encoder policy over a probe set of
/// trunk activations: the largest discrete transition coefficient reachable
/// (see `max_abar`). None for other architectures.
pub fn ssm_policy_khat(net: &PolicyNet, params: &ParameterSet, trunk_inputs: &Array) -> Option<f64> {
    if net.encoder.cfg.kind != EncoderKind::Ssm || net.encoder.cfg.blocks != 1 {
        return None;
    }
    Some(crate::nets::max_abar(params, "enc.blocks.0.ssm", trunk_inputs))
}
