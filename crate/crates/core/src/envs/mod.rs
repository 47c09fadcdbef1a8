//! Desk-scale POMDP environments: occlusion pendulums (position- or
//! velocity-only observations), a hidden-gravity randomization family, and
//! a key-to-door credit-assignment grid. Hidden factors never appear in
//! observations; they are logged only as trajectory metadata.

mod gravity;
mod key_door;
mod pendulum;

pub use gravity::{gravity_multipliers, GravityPendulum, GravityTaskSet};
pub use key_door::{scripted_key_door_policy, DiscreteWrapper, KeyToDoorGrid};
pub use pendulum::{Pendulum, PendulumVariant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::DoneKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Occlusion,
    Randomized,
    Credit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    /// Box [-1, 1]^dim.
    Continuous(usize),
    Discrete(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub obs_dim: usize,
    /// Agent-facing continuous action dimension.
    pub act_dim: usize,
    pub horizon: usize,
    pub family: Family,
    /// Whether configs should feed the last reward to the encoder by default.
    pub default_reward_feed: bool,
    pub action_space: ActionSpace,
}

#[derive(Clone, Debug)]
pub struct StepOut {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: Option<DoneKind>,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment id {0}")]
    UnknownId(String),
    #[error("bad state snapshot: {0}")]
    BadState(String),
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode and returns the first observation.
    fn reset(&mut self) -> Vec<f64>;
    /// Continuous agent-facing step; out-of-range components are clipped
    /// (with a once-per-instance warning).
    fn step(&mut self, action: &[f64]) -> StepOut;
    /// Hidden factors of the running episode, for diagnostics only.
    fn hidden_metadata(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
    /// Task success of the finished episode, where defined.
    fn episode_success(&self) -> Option<bool> {
        None
    }
    fn save_state(&self) -> serde_json::Value;
    fn restore_state(&mut self, state: &serde_json::Value) -> Result<(), EnvError>;
}

pub(crate) fn clip_action(action: &[f64], warned: &mut bool, id: &str) -> Vec<f64> {
    let mut out = Vec::with_capacity(action.len());
    let mut clipped = false;
    for &a in action {
        if !(-1.0..=1.0).contains(&a) {
            clipped = true;
        }
        out.push(a.clamp(-1.0, 1.0));
    }
    if clipped && !*warned {
        eprintln!("warning: {id}: action outside [-1, 1], clipping (reported once)");
        *warned = true;
    }
    out
}

pub fn env_ids() -> &'static [&'static str] {
    &[
        "pendulum-v",
        "pendulum-p",
        "pendulum-full",
        "pendulum-gravity",
        "pendulum-gravity-test",
        "key-to-door-20",
        "key-to-door-60",
    ]
}

/// Environment registry by string id.
pub fn make_env(id: &str, seed: u64) -> Result<Box<dyn Env>, EnvError> {
    match id {
        "pendulum-v" => Ok(Box::new(Pendulum::new(PendulumVariant::Velocity, seed))),
        "pendulum-p" => Ok(Box::new(Pendulum::new(PendulumVariant::Position, seed))),
        "pendulum-full" => Ok(Box::new(Pendulum::new(PendulumVariant::Full, seed))),
        "pendulum-gravity" => Ok(Box::new(GravityPendulum::new(seed, false))),
        "pendulum-gravity-test" => Ok(Box::new(GravityPendulum::new(seed, true))),
        "key-to-door-20" => Ok(Box::new(DiscreteWrapper::new(KeyToDoorGrid::new(20, seed)))),
        "key-to-door-60" => Ok(Box::new(DiscreteWrapper::new(KeyToDoorGrid::new(60, seed)))),
        other => Err(EnvError::UnknownId(other.to_string())),
    }
}
