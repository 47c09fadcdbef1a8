use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{clip_action, ActionSpace, Env, EnvError, EnvSpec, Family, StepOut};
use crate::replay::DoneKind;
use crate::rng::{load_rng, save_rng, stream_rng, RngState, Stream};

/// Torque-controlled pendulum, theta measured from upright and wrapped to
/// [-pi, pi] (theta = pi hangs at the bottom, a stable equilibrium of
/// thetadd = (g/l) sin(theta) + torque_gain * u).
///
/// Reward: -(theta^2 + 0.1 thetadot^2 + 0.001 u^2) with u the raw action.
/// dt = 0.05, horizon 200, |thetadot| clamped to 8. Episodes only time out;
/// there is no failure state.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    variant: PendulumVariant,
    pub gravity_scale: f64,
    theta: f64,
    thetadot: f64,
    step_count: usize,
    rng: ChaCha8Rng,
    warned: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PendulumVariant {
    /// obs = [cos theta, sin theta]
    Position,
    /// obs = [thetadot]
    Velocity,
    /// obs = [cos theta, sin theta, thetadot]
    Full,
}

pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_HORIZON: usize = 200;
pub const PENDULUM_GRAVITY: f64 = 10.0;
pub const PENDULUM_TORQUE_GAIN: f64 = 8.0;
pub const PENDULUM_SPEED_LIMIT: f64 = 8.0;

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = (theta + std::f64::consts::PI) % two_pi;
    if t < 0.0 {
        t += two_pi;
    }
    t - std::f64::consts::PI
}

impl Pendulum {
    pub fn new(variant: PendulumVariant, seed: u64) -> Self {
        let (obs_dim, id) = match variant {
            PendulumVariant::Position => (2, "pendulum-p"),
            PendulumVariant::Velocity => (1, "pendulum-v"),
            PendulumVariant::Full => (3, "pendulum-full"),
        };
        let spec = EnvSpec {
            id: id.to_string(),
            obs_dim,
            act_dim: 1,
            horizon: PENDULUM_HORIZON,
            family: Family::Occlusion,
            default_reward_feed: false,
            action_space: ActionSpace::Continuous(1),
        };
        let mut env = Pendulum {
            spec,
            variant,
            gravity_scale: 1.0,
            theta: 0.0,
            thetadot: 0.0,
            step_count: 0,
            rng: stream_rng(seed, Stream::EnvInit),
            warned: false,
        };
        env.reset();
        env
    }

    pub fn observe(&self) -> Vec<f64> {
        match self.variant {
            PendulumVariant::Position => vec![self.theta.cos(), self.theta.sin()],
            PendulumVariant::Velocity => vec![self.thetadot],
            PendulumVariant::Full => vec![self.theta.cos(), self.theta.sin(), self.thetadot],
        }
    }

    pub fn set_gravity_scale(&mut self, scale: f64) {
        self.gravity_scale = scale;
    }

    /// Start an episode from an explicit state (tests / scripted rollouts).
    pub fn reset_to(&mut self, theta: f64, thetadot: f64) -> Vec<f64> {
        self.theta = wrap_angle(theta);
        self.thetadot = thetadot;
        self.step_count = 0;
        self.observe()
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.thetadot)
    }

    /// Dynamics step without episode bookkeeping; used by both `step` and
    /// the gravity wrapper.
    pub fn integrate(&mut self, u_raw: f64) -> f64 {
        let g = PENDULUM_GRAVITY * self.gravity_scale;
        let torque = PENDULUM_TORQUE_GAIN * u_raw;
        let acc = g * self.theta.sin() + torque; // l = 1
        self.thetadot = (self.thetadot + PENDULUM_DT * acc)
            .clamp(-PENDULUM_SPEED_LIMIT, PENDULUM_SPEED_LIMIT);
        self.theta = wrap_angle(self.theta + PENDULUM_DT * self.thetadot);
        -(self.theta * self.theta
            + 0.1 * self.thetadot * self.thetadot
            + 0.001 * u_raw * u_raw)
    }
}

#[derive(Serialize, Deserialize)]
struct PendulumState {
    theta: f64,
    thetadot: f64,
    step_count: usize,
    gravity_scale: f64,
    rng: RngState,
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.theta = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.thetadot = self.rng.random_range(-1.0..1.0);
        self.step_count = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOut {
        let a = clip_action(action, &mut self.warned, &self.spec.id);
        let reward = self.integrate(a[0]);
        self.step_count += 1;
        let done = (self.step_count >= self.spec.horizon).then_some(DoneKind::Timeout);
        StepOut { obs: self.observe(), reward, done }
    }

    fn save_state(&self) -> serde_json::Value {
        serde_json::to_value(PendulumState {
            theta: self.theta,
            thetadot: self.thetadot,
            step_count: self.step_count,
            gravity_scale: self.gravity_scale,
            rng: save_rng(&self.rng),
        })
        .expect("pendulum state serializes")
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<(), EnvError> {
        let s: PendulumState = serde_json::from_value(state.clone())
            .map_err(|e| EnvError::BadState(e.to_string()))?;
        self.theta = s.theta;
        self.thetadot = s.thetadot;
        self.step_count = s.step_count;
        self.gravity_scale = s.gravity_scale;
        self.rng = load_rng(&s.rng);
        Ok(())
    }
}
