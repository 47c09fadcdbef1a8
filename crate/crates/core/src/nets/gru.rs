use rand::Rng;

use crate::array::Array;
use crate::autodiff::{NodeId, ParamBinder, ParamGroup, ParameterSet, SeqLayout, Tape};

/// Standard GRU cell: sigmoid update/reset gates, tanh candidate,
/// h' = (1 - z) * h + z * cand. With all-zero weights: z = 0.5, cand = 0,
/// so h' = 0.5 h (the gate algebra the contraction tests rely on).
#[derive(Clone, Debug)]
pub struct GruCore {
    pub input_dim: usize,
    pub state_dim: usize,
}

impl GruCore {
    pub fn init_params(&self, params: &mut ParameterSet, rng: &mut impl Rng, prefix: &str) {
        let (i, s) = (self.input_dim, self.state_dim);
        let wb = 1.0 / (i as f64).sqrt();
        let ub = 1.0 / (s as f64).sqrt();
        for gate in ["z", "r", "c"] {
            let w: Vec<f64> = (0..i * s).map(|_| rng.random_range(-wb..wb)).collect();
            let u: Vec<f64> = (0..s * s).map(|_| rng.random_range(-ub..ub)).collect();
            let b: Vec<f64> = (0..s).map(|_| rng.random_range(-ub..ub)).collect();
            params.insert(
                &format!("{prefix}.w{gate}"),
                ParamGroup::ContextEncoder,
                Array::mat(i, s, w),
            );
            params.insert(
                &format!("{prefix}.u{gate}"),
                ParamGroup::ContextEncoder,
                Array::mat(s, s, u),
            );
            params.insert(
                &format!("{prefix}.b{gate}"),
                ParamGroup::ContextEncoder,
                Array::new(vec![s], b),
            );
        }
    }

    /// One cell application: x `[b, in]`, h `[b, s]` -> h' `[b, s]`.
    pub fn step(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        prefix: &str,
        x: NodeId,
        h: NodeId,
    ) -> NodeId {
        let gate = |tape: &mut Tape, binder: &mut ParamBinder, name: &str, hin: NodeId| {
            let w = binder.node(tape, &format!("{prefix}.w{name}"));
            let u = binder.node(tape, &format!("{prefix}.u{name}"));
            let b = binder.node(tape, &format!("{prefix}.b{name}"));
            let xwb = tape.affine(x, w, b);
            let hu = tape.matmul(hin, u);
            tape.add(xwb, hu)
        };
        let z_pre = gate(tape, binder, "z", h);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, binder, "r", h);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let c_pre = gate(tape, binder, "c", rh);
        let cand = tape.tanh(c_pre);
        let neg_z = tape.neg(z);
        let keep = tape.add_const(neg_z, 1.0);
        let a = tape.mul(keep, h);
        let b = tape.mul(z, cand);
        tape.add(a, b)
    }

    /// Unrolled sequence over a time-major `[t * b, in]` input; hidden state
    /// starts at zero and is zeroed again wherever the layout's reset flag
    /// is set. Returns outputs `[t * b, s]` (y = h').
    pub fn seq(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        prefix: &str,
        x_all: NodeId,
        layout: &SeqLayout,
    ) -> NodeId {
        let (steps, batch) = (layout.steps, layout.batch);
        let mut h = tape.constant(Array::zeros(&[batch, self.state_dim]));
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = tape.slice_rows(x_all, t * batch, batch);
            let keep: Vec<f64> = (0..batch)
                .map(|b| if layout.reset[t * batch + b] { 0.0 } else { 1.0 })
                .collect();
            if keep.iter().any(|&k| k == 0.0) {
                let keep_col = tape.constant(Array::mat(batch, 1, keep));
                h = tape.mul_col(h, keep_col);
            }
            h = self.step(tape, binder, prefix, xt, h);
            outs.push(h);
        }
        tape.concat_rows(&outs)
    }
}
