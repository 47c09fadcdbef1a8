use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionSpace, Env, EnvError, EnvSpec, Family, Pendulum, PendulumVariant, StepOut};
use crate::rng::{load_rng, save_rng, stream_rng, RngState, Stream};

/// 60 gravity multipliers 1.5^a, a ~ U(-3, 3), sampled once per seed;
/// the first 40 train, the remaining 20 test.
pub fn gravity_multipliers(seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, Stream::EnvInit);
    (0..60).map(|_| 1.5f64.powf(rng.random_range(-3.0..3.0))).collect()
}

#[derive(Clone, Debug)]
pub struct GravityTaskSet {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

impl GravityTaskSet {
    pub fn new(seed: u64) -> Self {
        let all = gravity_multipliers(seed);
        GravityTaskSet { train: all[..40].to_vec(), test: all[40..].to_vec() }
    }
}

/// Fully observed pendulum whose gravity multiplier is redrawn from the
/// split at every reset and never observed.
pub struct GravityPendulum {
    spec: EnvSpec,
    core: Pendulum,
    tasks: Vec<f64>,
    task_rng: ChaCha8Rng,
    current_multiplier: f64,
    test_split: bool,
}

impl GravityPendulum {
    pub fn new(seed: u64, test_split: bool) -> Self {
        let set = GravityTaskSet::new(seed);
        let tasks = if test_split { set.test } else { set.train };
        let core = Pendulum::new(PendulumVariant::Full, seed.wrapping_add(1));
        let spec = EnvSpec {
            id: if test_split { "pendulum-gravity-test" } else { "pendulum-gravity" }.to_string(),
            obs_dim: 3,
            act_dim: 1,
            horizon: core.spec().horizon,
            family: Family::Randomized,
            default_reward_feed: true,
            action_space: ActionSpace::Continuous(1),
        };
        let mut env = GravityPendulum {
            spec,
            core,
            tasks,
            task_rng: stream_rng(seed.wrapping_add(2), Stream::EnvInit),
            current_multiplier: 1.0,
            test_split,
        };
        Env::reset(&mut env);
        env
    }

    pub fn current_multiplier(&self) -> f64 {
        self.current_multiplier
    }
}

#[derive(Serialize, Deserialize)]
struct GravityState {
    core: serde_json::Value,
    current_multiplier: f64,
    task_rng: RngState,
}

impl Env for GravityPendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let pick = self.task_rng.random_range(0..self.tasks.len());
        self.current_multiplier = self.tasks[pick];
        self.core.set_gravity_scale(self.current_multiplier);
        self.core.reset()
    }

    fn step(&mut self, action: &[f64]) -> StepOut {
        self.core.step(action)
    }

    fn hidden_metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "gravity_multiplier": self.current_multiplier,
            "split": if self.test_split { "test" } else { "train" },
        })
    }

    fn save_state(&self) -> serde_json::Value {
        serde_json::to_value(GravityState {
            core: self.core.save_state(),
            current_multiplier: self.current_multiplier,
            task_rng: save_rng(&self.task_rng),
        })
        .expect("gravity state serializes")
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<(), EnvError> {
        let s: GravityState = serde_json::from_value(state.clone())
            .map_err(|e| EnvError::BadState(e.to_string()))?;
        self.core.restore_state(&s.core)?;
        self.current_multiplier = s.current_multiplier;
        self.core.set_gravity_scale(s.current_multiplier);
        self.task_rng = load_rng(&s.task_rng);
        Ok(())
    }
}
