use rand::Rng;

use crate::array::Array;
use crate::autodiff::{NodeId, ParamBinder, ParamGroup, ParameterSet, SeqLayout, Tape};
use crate::nets::{init, EncoderConfig, EncoderKind, GruCore, SsmCore};

/// Recurrent state of one encoder: per-block hidden vectors plus, when the
/// causal convolution is enabled, a per-block ring of the last kernel-1
/// block inputs. Resettable to zero; shape fixed per network instance.
#[derive(Clone, Debug)]
pub struct RecurrentState {
    pub hidden: Vec<Array>,
    pub conv_hist: Vec<Array>,
}

impl RecurrentState {
    pub fn reset(&mut self) {
        for h in &mut self.hidden {
            h.data_mut().fill(0.0);
        }
        for c in &mut self.conv_hist {
            c.data_mut().fill(0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.hidden.iter().all(|h| h.data().iter().all(|&v| v == 0.0))
            && self.conv_hist.iter().all(|c| c.data().iter().all(|&v| v == 0.0))
    }
}

/// Sequence inputs in time-major `[steps * batch, dim]` layout. `mask` is
/// the validity column (1 on real steps); the causal convolution re-zeroes
/// its input at invalid steps so that padding values can never leak into a
/// neighbouring trajectory through the kernel taps.
pub struct SeqInputs<'a> {
    pub obs: &'a Array,
    pub prev_obs: &'a Array,
    pub prev_act: &'a Array,
    pub prev_rew: &'a Array,
    pub mask: Option<&'a Array>,
}

/// Rolling last-step context (o-hat, a-hat, r-hat) carried by the actor;
/// zeroed at episode starts ("there is no last step at the first time step").
#[derive(Clone, Debug)]
pub struct StepContext {
    pub prev_obs: Vec<f64>,
    pub prev_act: Vec<f64>,
    pub prev_rew: f64,
}

impl StepContext {
    pub fn zeros(obs_dim: usize, act_dim: usize) -> Self {
        StepContext { prev_obs: vec![0.0; obs_dim], prev_act: vec![0.0; act_dim], prev_rew: 0.0 }
    }

    pub fn reset(&mut self) {
        self.prev_obs.fill(0.0);
        self.prev_act.fill(0.0);
        self.prev_rew = 0.0;
    }
}

#[derive(Clone, Debug)]
pub struct ContextEncoder {
    pub cfg: EncoderConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl ContextEncoder {
    pub fn new(cfg: EncoderConfig, obs_dim: usize, act_dim: usize) -> Self {
        assert!(cfg.blocks >= 1 || cfg.kind == EncoderKind::Mlp, "encoder needs >= 1 block");
        ContextEncoder { cfg, obs_dim, act_dim }
    }

    fn block_input_dim(&self, block: usize) -> usize {
        if block == 0 {
            self.cfg.trunk_width
        } else {
            self.cfg.state_dim
        }
    }

    fn gru(&self, block: usize) -> GruCore {
        GruCore { input_dim: self.block_input_dim(block), state_dim: self.cfg.state_dim }
    }

    fn ssm(&self, block: usize) -> SsmCore {
        SsmCore {
            input_dim: self.block_input_dim(block),
            state_dim: self.cfg.state_dim,
            selective: self.cfg.selective,
        }
    }

    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut impl Rng, prefix: &str) {
        let g = ParamGroup::ContextEncoder;
        let c = &self.cfg;
        init::linear(params, g, rng, &format!("{prefix}.pre.o"), self.obs_dim, c.pre_width);
        if c.kind != EncoderKind::Mlp {
            init::linear(params, g, rng, &format!("{prefix}.pre.po"), self.obs_dim, c.pre_width);
            init::linear(params, g, rng, &format!("{prefix}.pre.pa"), self.act_dim, c.pre_width);
            if c.feed_last_reward {
                init::linear(params, g, rng, &format!("{prefix}.pre.pr"), 1, c.pre_width);
            }
        }
        let mut width = c.concat_width();
        for l in 0..c.trunk_layers {
            init::linear(params, g, rng, &format!("{prefix}.trunk.{l}"), width, c.trunk_width);
            width = c.trunk_width;
        }
        if c.kind != EncoderKind::Mlp {
            for bi in 0..c.blocks {
                let in_dim = self.block_input_dim(bi);
                if c.conv_kernel > 0 {
                    // identity at lag 0 so conv starts as a pass-through
                    let mut w = Array::zeros(&[c.conv_kernel, in_dim]);
                    for j in 0..in_dim {
                        w.set(0, j, 1.0);
                    }
                    params.insert(&format!("{prefix}.blocks.{bi}.conv.w"), g, w);
                }
                match c.kind {
                    EncoderKind::Gru => {
                        self.gru(bi).init_params(params, rng, &format!("{prefix}.blocks.{bi}.gru"))
                    }
                    EncoderKind::Ssm => {
                        self.ssm(bi).init_params(params, rng, &format!("{prefix}.blocks.{bi}.ssm"))
                    }
                    EncoderKind::Mlp => unreachable!(),
                }
                if c.ffn {
                    init::linear(
                        params,
                        g,
                        rng,
                        &format!("{prefix}.blocks.{bi}.ffn.l1"),
                        c.state_dim,
                        c.ffn_hidden,
                    );
                    init::linear(
                        params,
                        g,
                        rng,
                        &format!("{prefix}.blocks.{bi}.ffn.l2"),
                        c.ffn_hidden,
                        c.state_dim,
                    );
                }
            }
        }
        let post_in = if c.kind == EncoderKind::Mlp { c.trunk_width } else { c.state_dim };
        init::linear(params, g, rng, &format!("{prefix}.post"), post_in, c.post_width);
    }

    pub fn zero_state(&self) -> RecurrentState {
        let c = &self.cfg;
        if c.kind == EncoderKind::Mlp {
            return RecurrentState { hidden: vec![], conv_hist: vec![] };
        }
        let hidden = (0..c.blocks).map(|_| Array::zeros(&[1, c.state_dim])).collect();
        let conv_hist = if c.conv_kernel > 1 {
            (0..c.blocks)
                .map(|bi| Array::zeros(&[c.conv_kernel - 1, self.block_input_dim(bi)]))
                .collect()
        } else {
            vec![]
        };
        RecurrentState { hidden, conv_hist }
    }

    fn linear_node(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        name: &str,
        x: NodeId,
    ) -> NodeId {
        let w = binder.node(tape, &format!("{name}.w"));
        let b = binder.node(tape, &format!("{name}.b"));
        tape.affine(x, w, b)
    }

    /// Per-input one-layer linear pre-encoders, concatenated: width
    /// pre_width * (3 or 4) depending on the reward-feed flag.
    pub fn pre_encode(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        prefix: &str,
        obs: NodeId,
        prev_obs: Option<NodeId>,
        prev_act: Option<NodeId>,
        prev_rew: Option<NodeId>,
    ) -> NodeId {
        let c = &self.cfg;
        let mut parts = vec![self.linear_node(tape, binder, &format!("{prefix}.pre.o"), obs)];
        if c.kind != EncoderKind::Mlp {
            parts.push(self.linear_node(
                tape,
                binder,
                &format!("{prefix}.pre.po"),
                prev_obs.expect("recurrent encoder needs prev_obs"),
            ));
            parts.push(self.linear_node(
                tape,
                binder,
                &format!("{prefix}.pre.pa"),
                prev_act.expect("recurrent encoder needs prev_act"),
            ));
            if c.feed_last_reward {
                parts.push(self.linear_node(
                    tape,
                    binder,
                    &format!("{prefix}.pre.pr"),
                    prev_rew.expect("reward feed enabled but prev_rew missing"),
                ));
            }
        }
        if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_cols(&parts)
        }
    }

    /// Pre-encoders + trunk; shared by seq and step paths.
    fn front(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        prefix: &str,
        obs: NodeId,
        prev_obs: Option<NodeId>,
        prev_act: Option<NodeId>,
        prev_rew: Option<NodeId>,
    ) -> NodeId {
        let mut x = self.pre_encode(tape, binder, prefix, obs, prev_obs, prev_act, prev_rew);
        for l in 0..self.cfg.trunk_layers {
            x = self.linear_node(tape, binder, &format!("{prefix}.trunk.{l}"), x);
            x = tape.elu(x);
        }
        x
    }

    fn ffn_apply(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        prefix: &str,
        bi: usize,
        y: NodeId,
    ) -> NodeId {
        let h = self.linear_node(tape, binder, &format!("{prefix}.blocks.{bi}.ffn.l1"), y);
        let h = tape.elu(h);
        let f = self.linear_node(tape, binder, &format!("{prefix}.blocks.{bi}.ffn.l2"), h);
        if self.cfg.ffn_residual {
            tape.add(y, f)
        } else {
            f
        }
    }

    /// Full-sequence embeddings `[steps * batch, post_width]`.
    pub fn seq_forward(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        prefix: &str,
        inputs: &SeqInputs,
        layout: &SeqLayout,
        parallel_scan: bool,
    ) -> NodeId {
        let c = &self.cfg;
        let obs = tape.constant(inputs.obs.clone());
        let (po, pa, pr) = if c.kind == EncoderKind::Mlp {
            (None, None, None)
        } else {
            (
                Some(tape.constant(inputs.prev_obs.clone())),
                Some(tape.constant(inputs.prev_act.clone())),
                c.feed_last_reward.then(|| tape.constant(inputs.prev_rew.clone())),
            )
        };
        let mask_node = if c.conv_kernel > 0 {
            inputs.mask.map(|m| tape.constant(m.clone()))
        } else {
            None
        };
        let mut x = self.front(tape, binder, prefix, obs, po, pa, pr);
        if c.kind != EncoderKind::Mlp {
            for bi in 0..c.blocks {
                if c.conv_kernel > 0 {
                    if let Some(m) = mask_node {
                        x = tape.mul_col(x, m);
                    }
                    let w = binder.node(tape, &format!("{prefix}.blocks.{bi}.conv.w"));
                    x = tape.causal_conv(x, w, layout.clone());
                }
                let mut y = match c.kind {
                    EncoderKind::Gru => {
                        self.gru(bi).seq(tape, binder, &format!("{prefix}.blocks.{bi}.gru"), x, layout)
                    }
                    EncoderKind::Ssm => self.ssm(bi).seq(
                        tape,
                        binder,
                        &format!("{prefix}.blocks.{bi}.ssm"),
                        x,
                        layout,
                        parallel_scan,
                    ),
                    EncoderKind::Mlp => unreachable!(),
                };
                if c.ffn {
                    y = self.ffn_apply(tape, binder, prefix, bi, y);
                }
                x = y;
            }
        }
        self.linear_node(tape, binder, &format!("{prefix}.post"), x)
    }

    /// One step with explicit state; returns the embedding node and the new
    /// state values. Batch row count of the input arrays must match the
    /// state's (normally 1).
    pub fn step_forward(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        prefix: &str,
        obs: &Array,
        ctx: &StepContext,
        state: &RecurrentState,
    ) -> (NodeId, RecurrentState) {
        let c = &self.cfg;
        let obs_n = tape.constant(obs.clone());
        let (po, pa, pr) = if c.kind == EncoderKind::Mlp {
            (None, None, None)
        } else {
            (
                Some(tape.constant(Array::mat(1, self.obs_dim, ctx.prev_obs.clone()))),
                Some(tape.constant(Array::mat(1, self.act_dim, ctx.prev_act.clone()))),
                c.feed_last_reward
                    .then(|| tape.constant(Array::mat(1, 1, vec![ctx.prev_rew]))),
            )
        };
        let mut x = self.front(tape, binder, prefix, obs_n, po, pa, pr);
        let mut new_state = state.clone();
        if c.kind != EncoderKind::Mlp {
            for bi in 0..c.blocks {
                if c.conv_kernel > 0 {
                    x = self.conv_step(tape, binder, prefix, bi, x, &mut new_state);
                }
                let h = tape.constant(state.hidden[bi].clone());
                let (y_node, h_next) = match c.kind {
                    EncoderKind::Gru => {
                        let hn = self.gru(bi).step(
                            tape,
                            binder,
                            &format!("{prefix}.blocks.{bi}.gru"),
                            x,
                            h,
                        );
                        (hn, hn)
                    }
                    EncoderKind::Ssm => self.ssm(bi).step(
                        tape,
                        binder,
                        &format!("{prefix}.blocks.{bi}.ssm"),
                        x,
                        h,
                    ),
                    EncoderKind::Mlp => unreachable!(),
                };
                new_state.hidden[bi] = tape.value(h_next).clone();
                let mut y = y_node;
                if c.ffn {
                    y = self.ffn_apply(tape, binder, prefix, bi, y);
                }
                x = y;
            }
        }
        let emb = self.linear_node(tape, binder, &format!("{prefix}.post"), x);
        (emb, new_state)
    }

    /// Step-mode causal conv over the stored history ring (newest first).
    fn conv_step(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        prefix: &str,
        bi: usize,
        x: NodeId,
        state: &mut RecurrentState,
    ) -> NodeId {
        let k = self.cfg.conv_kernel;
        let w = binder.node(tape, &format!("{prefix}.blocks.{bi}.conv.w"));
        let ones = tape.constant(Array::full(&[1, 1], 1.0));
        let w0 = tape.slice_rows(w, 0, 1);
        let w0b = tape.matmul(ones, w0);
        let mut acc = tape.mul(x, w0b);
        if k > 1 {
            let hist = state.conv_hist[bi].clone();
            let in_dim = hist.cols();
            for lag in 1..k {
                let row = Array::mat(
                    1,
                    in_dim,
                    hist.data()[(lag - 1) * in_dim..lag * in_dim].to_vec(),
                );
                let rnode = tape.constant(row);
                let wl = tape.slice_rows(w, lag, 1);
                let wlb = tape.matmul(ones, wl);
                let term = tape.mul(rnode, wlb);
                acc = tape.add(acc, term);
            }
            // shift: newest input becomes history row 0
            let mut new_hist = Array::zeros(&[k - 1, in_dim]);
            let xval = tape.value(x).clone();
            new_hist.data_mut()[0..in_dim].copy_from_slice(xval.data());
            if k > 2 {
                let old = state.conv_hist[bi].data()[0..(k - 2) * in_dim].to_vec();
                new_hist.data_mut()[in_dim..].copy_from_slice(&old);
            }
            state.conv_hist[bi] = new_hist;
        }
        acc
    }
}
