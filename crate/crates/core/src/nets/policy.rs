use rand::Rng;

use crate::array::Array;
use crate::autodiff::{NodeId, ParamBinder, ParamGroup, ParameterSet, SeqLayout, Tape};
use crate::nets::encoder::{ContextEncoder, RecurrentState, SeqInputs, StepContext};
use crate::nets::{init, EncoderConfig, HeadConfig, LOG_STD_MAX, LOG_STD_MIN};

const LN_2PI: f64 = 1.8378770664093453;
const LN_2: f64 = std::f64::consts::LN_2;
// keep |action| strictly below 1 even where tanh rounds to +-1
const ACTION_LIMIT: f64 = 1.0 - 1e-12;

/// Squashed-Gaussian recurrent policy: context encoder plus a two-hidden-layer
/// MLP emitting mean and clamped log-std; actions are tanh(mean + std * xi)
/// with the tanh change-of-variables folded into the log-probability.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub encoder: ContextEncoder,
    pub head: HeadConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
}

/// Graph handles of one sequence evaluation.
pub struct PolicyNodes {
    pub mean: NodeId,
    pub log_std: NodeId,
    /// `[n, act_dim]`, strictly inside (-1, 1)
    pub action: NodeId,
    /// `[n, 1]`, summed over action dims
    pub log_prob: NodeId,
}

/// Values of one rollout step.
pub struct PolicyStep {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub state: RecurrentState,
}

impl PolicyNet {
    pub fn new(enc_cfg: EncoderConfig, head: HeadConfig, obs_dim: usize, act_dim: usize) -> Self {
        let encoder = ContextEncoder::new(enc_cfg, obs_dim, act_dim);
        PolicyNet { encoder, head, obs_dim, act_dim }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParameterSet {
        let mut params = ParameterSet::new();
        self.encoder.init_params(&mut params, rng, "enc");
        let g = ParamGroup::Other;
        let in_dim = self.encoder.cfg.post_width + self.obs_dim;
        init::linear(&mut params, g, rng, "head.l1", in_dim, self.head.hidden);
        init::linear(&mut params, g, rng, "head.l2", self.head.hidden, self.head.hidden);
        init::linear(&mut params, g, rng, "head.mean", self.head.hidden, self.act_dim);
        init::linear(&mut params, g, rng, "head.log_std", self.head.hidden, self.act_dim);
        params
    }

    fn head_forward(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        emb: NodeId,
        obs: NodeId,
        noise: NodeId,
    ) -> PolicyNodes {
        let lin = |tape: &mut Tape, binder: &mut ParamBinder, name: &str, x: NodeId| {
            let w = binder.node(tape, &format!("{name}.w"));
            let b = binder.node(tape, &format!("{name}.b"));
            tape.affine(x, w, b)
        };
        let x = tape.concat_cols(&[emb, obs]);
        let h = lin(tape, binder, "head.l1", x);
        let h = tape.elu(h);
        let h = lin(tape, binder, "head.l2", h);
        let h = tape.elu(h);
        let mean = lin(tape, binder, "head.mean", h);
        let ls_raw = lin(tape, binder, "head.log_std", h);
        let log_std = tape.clamp(ls_raw, LOG_STD_MIN, LOG_STD_MAX);

        let std = tape.exp(log_std);
        let eps = tape.mul(std, noise);
        let u = tape.add(mean, eps);
        let tanh_u = tape.tanh(u);
        let action = tape.clamp(tanh_u, -ACTION_LIMIT, ACTION_LIMIT);

        // per-dim log N(u; mean, std) = -xi^2/2 - log_std - ln(2pi)/2, since
        // (u - mean)/std = xi exactly under reparameterization
        let xi_sq = tape.square(noise);
        let g_const = tape.scale(xi_sq, -0.5);
        let neg_ls = tape.neg(log_std);
        let gauss = tape.add(g_const, neg_ls);
        let gauss = tape.add_const(gauss, -0.5 * LN_2PI);
        // -log(1 - tanh(u)^2) = 2 (u + softplus(-2u) - ln 2)
        let m2u = tape.scale(u, -2.0);
        let sp = tape.softplus(m2u);
        let inner = tape.add(u, sp);
        let inner = tape.add_const(inner, -LN_2);
        let corr = tape.scale(inner, 2.0);
        let per_dim = tape.add(gauss, corr);
        let log_prob = tape.sum_cols(per_dim);
        PolicyNodes { mean, log_std, action, log_prob }
    }

    /// Autoregressive evaluation over a stacked time-major batch. `noise`
    /// carries the reparameterization draws (`[n, act_dim]`); pass zeros for
    /// the deterministic policy tanh(mean).
    pub fn seq_forward(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        inputs: &SeqInputs,
        noise: &Array,
        layout: &SeqLayout,
        parallel_scan: bool,
    ) -> PolicyNodes {
        let emb = self.encoder.seq_forward(tape, binder, "enc", inputs, layout, parallel_scan);
        let obs = tape.constant(inputs.obs.clone());
        let xi = tape.constant(noise.clone());
        self.head_forward(tape, binder, emb, obs, xi)
    }

    /// One environment step (batch row = 1). `noise` of length act_dim, or
    /// zeros for the deterministic action.
    pub fn step(
        &self,
        params: &ParameterSet,
        obs: &[f64],
        ctx: &StepContext,
        state: &RecurrentState,
        noise: &[f64],
    ) -> PolicyStep {
        assert_eq!(obs.len(), self.obs_dim, "policy step: obs dim");
        assert_eq!(noise.len(), self.act_dim, "policy step: noise dim");
        let mut tape = Tape::new();
        let mut binder = ParamBinder::frozen(params);
        let obs_arr = Array::mat(1, self.obs_dim, obs.to_vec());
        let (emb, new_state) =
            self.encoder.step_forward(&mut tape, &mut binder, "enc", &obs_arr, ctx, state);
        let obs_n = tape.constant(obs_arr);
        let xi = tape.constant(Array::mat(1, self.act_dim, noise.to_vec()));
        let nodes = self.head_forward(&mut tape, &mut binder, emb, obs_n, xi);
        PolicyStep {
            action: tape.value(nodes.action).data().to_vec(),
            log_prob: tape.value(nodes.log_prob).data()[0],
            state: new_state,
        }
    }

    pub fn zero_state(&self) -> RecurrentState {
        self.encoder.zero_state()
    }
}
