use crate::array::Array;
use crate::autodiff::{AdError, NodeId, ParamBinder, ParameterSet, Tape};
use crate::nets::{CriticNet, PolicyNet, SeqInputs, ENSEMBLE_SIZE};
use crate::replay::{StackedBatch, StackedPack};

fn seq_inputs(pack: &StackedPack) -> SeqInputs<'_> {
    SeqInputs {
        obs: &pack.obs,
        prev_obs: &pack.prev_obs,
        prev_act: &pack.prev_act,
        prev_rew: &pack.prev_rew,
        mask: Some(&pack.mask),
    }
}

/// Bootstrap targets over the extended arrays, scattered back to base
/// layout: y = r+ + bootstrap * gamma * (min over the sampled head pair of
/// the target ensemble - alpha * log p~), keeping the last len rows of each
/// trajectory. Entirely gradient-free.
#[allow(clippy::too_many_arguments)]
pub fn critic_targets(
    batch: &StackedBatch,
    policy: &PolicyNet,
    policy_params: &ParameterSet,
    target_critic: &CriticNet,
    target_params: &ParameterSet,
    alpha: f64,
    gamma: f64,
    pair: &[usize],
    noise_ext: &Array,
    parallel_scan: bool,
) -> Result<Array, AdError> {
    assert!(!pair.is_empty() && pair.iter().all(|&j| j < ENSEMBLE_SIZE), "bad head sample");
    let ext = &batch.ext;
    let mut tape = Tape::new();
    let mut pol_binder = ParamBinder::frozen(policy_params);
    let mut tgt_binder = ParamBinder::frozen(target_params);
    let inputs = seq_inputs(ext);
    let nodes =
        policy.seq_forward(&mut tape, &mut pol_binder, &inputs, noise_ext, &ext.layout, parallel_scan);
    let q = target_critic.seq_forward(
        &mut tape,
        &mut tgt_binder,
        &inputs,
        nodes.action,
        &ext.layout,
        parallel_scan,
    );
    tape.status()?;
    let qv = tape.value(q);
    let logp = tape.value(nodes.log_prob);
    let n = ext.steps * ext.rows;
    let mut y_plus = vec![0.0; n];
    for i in 0..n {
        if ext.mask.data()[i] == 0.0 {
            continue;
        }
        let min_q = pair.iter().map(|&j| qv.at(i, j)).fold(f64::INFINITY, f64::min);
        let boot = ext.bootstrap.data()[i];
        y_plus[i] = ext.rewards.data()[i] + boot * gamma * (min_q - alpha * logp.data()[i]);
    }
    let y_base = batch.ext_to_base_rows(&y_plus);
    Ok(Array::mat(batch.base.steps * batch.base.rows, 1, y_base))
}

/// Mean over valid steps of the squared error summed over all 8 heads,
/// each regressing to the same target column.
pub fn critic_loss_graph(
    tape: &mut Tape,
    critic_binder: &mut ParamBinder,
    critic: &CriticNet,
    batch: &StackedBatch,
    targets: &Array,
    parallel_scan: bool,
) -> NodeId {
    let base = &batch.base;
    let inputs = seq_inputs(base);
    let action = tape.constant(base.actions.clone());
    let q = critic.seq_forward(tape, critic_binder, &inputs, action, &base.layout, parallel_scan);
    let y = tape.constant(targets.clone());
    let diff = tape.sub_col(q, y);
    let sq = tape.square(diff);
    let per_step = tape.sum_cols(sq);
    let mask = tape.constant(base.mask.clone());
    tape.mask_mean(per_step, mask)
}

pub struct PolicyLossNodes {
    pub loss: NodeId,
    pub log_prob: NodeId,
}

/// Reparameterized actor loss: -mask_mean(mean-over-heads Q(o, a~) - alpha
/// log p~). The critic enters through a frozen binder so gradients reach the
/// policy only through the sampled action.
pub fn policy_loss_graph(
    tape: &mut Tape,
    policy_binder: &mut ParamBinder,
    critic_binder: &mut ParamBinder,
    policy: &PolicyNet,
    critic: &CriticNet,
    batch: &StackedBatch,
    alpha: f64,
    noise: &Array,
    parallel_scan: bool,
) -> PolicyLossNodes {
    let base = &batch.base;
    let inputs = seq_inputs(base);
    let nodes = policy.seq_forward(tape, policy_binder, &inputs, noise, &base.layout, parallel_scan);
    let q = critic.seq_forward(
        tape,
        critic_binder,
        &inputs,
        nodes.action,
        &base.layout,
        parallel_scan,
    );
    let q_sum = tape.sum_cols(q);
    let q_mean = tape.scale(q_sum, 1.0 / ENSEMBLE_SIZE as f64);
    let scaled_lp = tape.scale(nodes.log_prob, alpha);
    let advantage = tape.sub(q_mean, scaled_lp);
    let mask = tape.constant(base.mask.clone());
    let mm = tape.mask_mean(advantage, mask);
    let loss = tape.neg(mm);
    PolicyLossNodes { loss, log_prob: nodes.log_prob }
}
