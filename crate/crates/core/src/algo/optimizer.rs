use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;
use crate::autodiff::{ParamGroup, ParameterSet};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter sets differ: {0}")]
    SchemaMismatch(String),
    #[error("gradient missing for parameter {0}")]
    MissingGrad(String),
}

/// Per-group learning rates: the context encoder trains at its own (usually
/// much smaller) step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupLrs {
    pub context_encoder: f64,
    pub other: f64,
}

impl GroupLrs {
    pub fn uniform(lr: f64) -> Self {
        GroupLrs { context_encoder: lr, other: lr }
    }

    fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::ContextEncoder => self.context_encoder,
            ParamGroup::Other => self.other,
        }
    }
}

/// Norms observed during one optimizer step, split by group.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct GradStats {
    pub grad_norm_ce: f64,
    pub grad_norm_other: f64,
    pub update_norm_ce: f64,
    pub update_norm_other: f64,
}

/// AdamW with decoupled weight decay and a per-group learning rate.
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8. A zero group learning rate
/// leaves that group's parameters bitwise untouched.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupedAdamW {
    pub lrs: GroupLrs,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Array>,
    v: BTreeMap<String, Array>,
}

impl GroupedAdamW {
    pub fn new(params: &ParameterSet, lrs: GroupLrs, weight_decay: f64) -> Self {
        let m = params.iter().map(|(n, _, a)| (n.to_string(), Array::zeros(a.shape()))).collect();
        let v = params.iter().map(|(n, _, a)| (n.to_string(), Array::zeros(a.shape()))).collect();
        GroupedAdamW { lrs, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Optional global-norm clip, then one AdamW step per parameter.
    pub fn step(
        &mut self,
        params: &mut ParameterSet,
        grads: &BTreeMap<String, Array>,
        clip_global_norm: Option<f64>,
    ) -> Result<GradStats, OptimError> {
        let mut sq_ce = 0.0;
        let mut sq_other = 0.0;
        for (name, group, _) in params.iter() {
            let g = grads.get(name).ok_or_else(|| OptimError::MissingGrad(name.to_string()))?;
            match group {
                ParamGroup::ContextEncoder => sq_ce += g.sq_l2(),
                ParamGroup::Other => sq_other += g.sq_l2(),
            }
        }
        let total_norm = (sq_ce + sq_other).sqrt();
        let clip_scale = match clip_global_norm {
            Some(c) if total_norm > c => c / total_norm,
            _ => 1.0,
        };

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut up_ce = 0.0;
        let mut up_other = 0.0;
        for (name, group, value) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.get_mut(name).expect("moment schema");
            let v = self.v.get_mut(name).expect("moment schema");
            let lr = self.lrs.for_group(group);
            let mut up_sq = 0.0;
            for i in 0..value.numel() {
                let gi = g.data()[i] * clip_scale;
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                if lr != 0.0 {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    let old = value.data()[i];
                    let delta = lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * old);
                    value.data_mut()[i] = old - delta;
                    up_sq += delta * delta;
                }
            }
            match group {
                ParamGroup::ContextEncoder => up_ce += up_sq,
                ParamGroup::Other => up_other += up_sq,
            }
        }
        Ok(GradStats {
            grad_norm_ce: (sq_ce).sqrt() * clip_scale,
            grad_norm_other: (sq_other).sqrt() * clip_scale,
            update_norm_ce: up_ce.sqrt(),
            update_norm_other: up_other.sqrt(),
        })
    }
}

/// target <- tau * target + (1 - tau) * online, over matching names.
pub fn soft_update(
    target: &mut ParameterSet,
    online: &ParameterSet,
    tau: f64,
) -> Result<(), OptimError> {
    if !target.same_schema(online) {
        return Err(OptimError::SchemaMismatch(
            "target/online parameter sets have different schemas".into(),
        ));
    }
    let names: Vec<String> = target.names().map(String::from).collect();
    for name in names {
        let src = online.get(&name).data().to_vec();
        let dst = target.get_mut(&name);
        for (t, o) in dst.data_mut().iter_mut().zip(src) {
            *t = tau * *t + (1.0 - tau) * o;
        }
    }
    Ok(())
}
