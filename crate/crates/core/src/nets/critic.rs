use rand::Rng;

use crate::autodiff::{NodeId, ParamBinder, ParamGroup, ParameterSet, SeqLayout, Tape};
use crate::nets::encoder::{ContextEncoder, SeqInputs};
use crate::nets::{init, EncoderConfig, HeadConfig};

pub const ENSEMBLE_SIZE: usize = 8;

/// Ensemble critic: one context encoder shared by 8 independent two-layer
/// MLP heads over [embedding, obs, action]. Output is `[n, 8]`.
#[derive(Clone, Debug)]
pub struct CriticNet {
    pub encoder: ContextEncoder,
    pub head: HeadConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl CriticNet {
    pub fn new(enc_cfg: EncoderConfig, head: HeadConfig, obs_dim: usize, act_dim: usize) -> Self {
        let encoder = ContextEncoder::new(enc_cfg, obs_dim, act_dim);
        CriticNet { encoder, head, obs_dim, act_dim }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParameterSet {
        let mut params = ParameterSet::new();
        self.encoder.init_params(&mut params, rng, "enc");
        let g = ParamGroup::Other;
        let in_dim = self.encoder.cfg.post_width + self.obs_dim + self.act_dim;
        for i in 0..ENSEMBLE_SIZE {
            init::linear(&mut params, g, rng, &format!("heads.{i}.l1"), in_dim, self.head.hidden);
            init::linear(
                &mut params,
                g,
                rng,
                &format!("heads.{i}.l2"),
                self.head.hidden,
                self.head.hidden,
            );
            init::linear(&mut params, g, rng, &format!("heads.{i}.out"), self.head.hidden, 1);
        }
        params
    }

    /// Q-values for a stacked batch at an action node (graph input so the
    /// policy loss can differentiate through it).
    pub fn seq_forward(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        inputs: &SeqInputs,
        action: NodeId,
        layout: &SeqLayout,
        parallel_scan: bool,
    ) -> NodeId {
        let emb = self.encoder.seq_forward(tape, binder, "enc", inputs, layout, parallel_scan);
        let obs = tape.constant(inputs.obs.clone());
        let x = tape.concat_cols(&[emb, obs, action]);
        let lin = |tape: &mut Tape, binder: &mut ParamBinder, name: &str, v: NodeId| {
            let w = binder.node(tape, &format!("{name}.w"));
            let b = binder.node(tape, &format!("{name}.b"));
            tape.affine(v, w, b)
        };
        // layer 1 shares the input: concatenate the per-head weights and run
        // one wide matmul, then slice activations back out per head
        let w1: Vec<NodeId> =
            (0..ENSEMBLE_SIZE).map(|i| binder.node(tape, &format!("heads.{i}.l1.w"))).collect();
        let b1: Vec<NodeId> =
            (0..ENSEMBLE_SIZE).map(|i| binder.node(tape, &format!("heads.{i}.l1.b"))).collect();
        let w1_cat = tape.concat_cols(&w1);
        let b1_cat = tape.concat_cols(&b1);
        let l1 = tape.affine(x, w1_cat, b1_cat);
        let l1 = tape.elu(l1);
        let hidden = self.head.hidden;
        let mut qs = Vec::with_capacity(ENSEMBLE_SIZE);
        for i in 0..ENSEMBLE_SIZE {
            let h = tape.slice_cols(l1, i * hidden, (i + 1) * hidden);
            let h = lin(tape, binder, &format!("heads.{i}.l2"), h);
            let h = tape.elu(h);
            qs.push(lin(tape, binder, &format!("heads.{i}.out"), h));
        }
        tape.concat_cols(&qs)
    }
}
