//! Network components: per-input pre-encoders, a recurrent context encoder
//! (GRU or a simplified selective diagonal SSM), a squashed-Gaussian policy
//! head, and an 8-head MLP critic ensemble.
//!
//! Policy and critic keep separate encoders. All encoder parameters
//! (pre-encoders included) belong to the `context_encoder` optimizer group;
//! head MLPs belong to `other`.

mod critic;
mod encoder;
mod gru;
mod init;
mod policy;
mod ssm;

pub use critic::{CriticNet, ENSEMBLE_SIZE};
pub use encoder::{ContextEncoder, RecurrentState, SeqInputs, StepContext};
pub use gru::GruCore;
pub use policy::{PolicyNet, PolicyNodes, PolicyStep};
pub use ssm::{max_abar, ssm_discretize, ssm_scan_parallel, ssm_scan_sequential, SsmCore};

use serde::{Deserialize, Serialize};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gru,
    Ssm,
    /// Memoryless: current observation only, no recurrent core. Used for
    /// full-observation baselines.
    Mlp,
}

/// Architecture of one context encoder. Defaults mirror the reference
/// architecture (pre-encoders 128, trunk 256, state 64, embedding 128);
/// smaller values are used for desk-scale runs and tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Output width of each per-input pre-encoder (one linear layer each).
    pub pre_width: usize,
    /// Width of the MLP between pre-encoders and the recurrent core.
    pub trunk_width: usize,
    /// Layers in that MLP (ELU); 3 for the hardest credit-assignment runs.
    pub trunk_layers: usize,
    /// Recurrent state width.
    pub state_dim: usize,
    /// Number of recurrent blocks.
    pub blocks: usize,
    /// Position-wise feedforward after each block.
    pub ffn: bool,
    pub ffn_hidden: usize,
    pub ffn_residual: bool,
    /// Embedding width (single linear output layer).
    pub post_width: usize,
    /// Depthwise causal convolution ahead of each block; 0 disables.
    pub conv_kernel: usize,
    /// Input-dependent (affine-in-x) discretization step, B and C.
    pub selective: bool,
    /// Feed the last reward alongside last observation/action.
    pub feed_last_reward: bool,
}

impl EncoderConfig {
    pub fn reference(kind: EncoderKind) -> Self {
        EncoderConfig {
            kind,
            pre_width: 128,
            trunk_width: 256,
            trunk_layers: 1,
            state_dim: 64,
            blocks: 1,
            ffn: true,
            ffn_hidden: 256,
            ffn_residual: true,
            post_width: 128,
            conv_kernel: 0,
            selective: true,
            feed_last_reward: false,
        }
    }

    /// Small widths for 2-core desk runs and tests.
    pub fn desk(kind: EncoderKind) -> Self {
        EncoderConfig {
            pre_width: 20,
            trunk_width: 40,
            trunk_layers: 1,
            state_dim: 20,
            ffn_hidden: 64,
            post_width: 20,
            ..EncoderConfig::reference(kind)
        }
    }

    /// Width of the concatenated pre-encoded inputs.
    pub fn concat_width(&self) -> usize {
        match self.kind {
            EncoderKind::Mlp => self.pre_width,
            _ => self.pre_width * (3 + usize::from(self.feed_last_reward)),
        }
    }
}

/// Policy/critic head sizing (two ELU hidden layers each).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
}

impl HeadConfig {
    pub fn reference() -> Self {
        HeadConfig { hidden: 256 }
    }

    pub fn desk() -> Self {
        HeadConfig { hidden: 40 }
    }
}
