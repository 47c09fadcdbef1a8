//! Recurrent off-policy RL engine for POMDPs: SAC/REDQ over full-length
//! trajectories with a context-encoder-specific learning rate, plus a
//! numerical laboratory that measures RNN output divergence after parameter
//! updates and checks it against closed-form amplification bounds.

pub mod algo;
pub mod array;
pub mod checkpoint;
pub mod autodiff;
pub mod envs;
pub mod metrics;
pub mod nets;
pub mod replay;
pub mod rng;
pub mod stability;

pub use array::Array;
