use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{clip_action, ActionSpace, Env, EnvError, EnvSpec, Family, StepOut};
use crate::replay::DoneKind;
use crate::rng::{load_rng, save_rng, stream_rng, RngState, Stream};

pub const GRID: usize = 5;
pub const PHASE1_LEN: usize = 10;
pub const PHASE3_LEN: usize = 5;
pub const DOOR_REWARD: f64 = 5.0;
pub const APPLE_REWARD: f64 = 1.0;

/// Three-phase 5x5 credit-assignment grid (discrete-4 moves).
///
/// Phase 1 (10 steps): agent and key spawn at random cells; walking onto the
/// key sets a latent bit and removes the key. Phase 2 (`phase2_len` steps):
/// one apple is visible at a time, +1 on touch, respawns elsewhere. Phase 3
/// (5 steps): +5 at its first step iff the key bit is set. The key bit never
/// appears in observations, so the final reward must be credited across the
/// whole of phase 2 to the phase-1 touch.
///
/// Observation: one-hot agent cell (25) | phase one-hot (3) | key cell
/// (25, phase 1 and key not yet taken) | apple cell (25, phase 2) = 78.
#[derive(Clone, Debug)]
pub struct KeyToDoorGrid {
    pub phase2_len: usize,
    agent: (usize, usize),
    key: (usize, usize),
    key_taken: bool,
    apple: (usize, usize),
    step_count: usize,
    door_given: bool,
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
    Three,
}

impl KeyToDoorGrid {
    pub fn new(phase2_len: usize, seed: u64) -> Self {
        assert!(phase2_len >= 1);
        let mut env = KeyToDoorGrid {
            phase2_len,
            agent: (0, 0),
            key: (0, 0),
            key_taken: false,
            apple: (0, 0),
            step_count: 0,
            door_given: false,
            rng: stream_rng(seed, Stream::EnvInit),
        };
        env.reset_grid();
        env
    }

    pub fn horizon(&self) -> usize {
        PHASE1_LEN + self.phase2_len + PHASE3_LEN
    }

    pub fn obs_dim() -> usize {
        GRID * GRID + 3 + GRID * GRID + GRID * GRID
    }

    pub fn phase(&self) -> Phase {
        if self.step_count < PHASE1_LEN {
            Phase::One
        } else if self.step_count < PHASE1_LEN + self.phase2_len {
            Phase::Two
        } else {
            Phase::Three
        }
    }

    pub fn key_taken(&self) -> bool {
        self.key_taken
    }

    fn random_cell(&mut self) -> (usize, usize) {
        (self.rng.random_range(0..GRID), self.rng.random_range(0..GRID))
    }

    pub fn reset_grid(&mut self) -> Vec<f64> {
        self.agent = self.random_cell();
        loop {
            self.key = self.random_cell();
            if self.key != self.agent {
                break;
            }
        }
        self.key_taken = false;
        self.apple = (0, 0);
        self.step_count = 0;
        self.door_given = false;
        self.observe()
    }

    fn spawn_apple(&mut self) {
        loop {
            let c = self.random_cell();
            if c != self.agent {
                self.apple = c;
                break;
            }
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; Self::obs_dim()];
        let cell = |p: (usize, usize)| p.1 * GRID + p.0;
        obs[cell(self.agent)] = 1.0;
        let phase_idx = match self.phase() {
            Phase::One => 0,
            Phase::Two => 1,
            Phase::Three => 2,
        };
        obs[GRID * GRID + phase_idx] = 1.0;
        if self.phase() == Phase::One && !self.key_taken {
            obs[GRID * GRID + 3 + cell(self.key)] = 1.0;
        }
        if self.phase() == Phase::Two {
            obs[GRID * GRID + 3 + GRID * GRID + cell(self.apple)] = 1.0;
        }
        obs
    }

    /// Moves: 0 = up (+y), 1 = down, 2 = left, 3 = right.
    pub fn step_discrete(&mut self, action: usize) -> StepOut {
        assert!(action < 4, "key-to-door: discrete action {action} out of range");
        let prev_phase = self.phase();
        let (x, y) = self.agent;
        self.agent = match action {
            0 => (x, (y + 1).min(GRID - 1)),
            1 => (x, y.saturating_sub(1)),
            2 => (x.saturating_sub(1), y),
            _ => ((x + 1).min(GRID - 1), y),
        };
        let mut reward = 0.0;
        if prev_phase == Phase::One && !self.key_taken && self.agent == self.key {
            self.key_taken = true;
        }
        if prev_phase == Phase::Two && self.agent == self.apple {
            reward += APPLE_REWARD;
            self.spawn_apple();
        }
        self.step_count += 1;
        // entering phase 2: place the first apple
        if prev_phase == Phase::One && self.phase() == Phase::Two {
            self.spawn_apple();
        }
        // first step of phase 3 pays the door reward iff the key was taken
        if prev_phase == Phase::Two && self.phase() == Phase::Three && !self.door_given {
            self.door_given = true;
            if self.key_taken {
                reward += DOOR_REWARD;
            }
        }
        let done = (self.step_count >= self.horizon()).then_some(DoneKind::Timeout);
        StepOut { obs: self.observe(), reward, done }
    }
}

#[derive(Serialize, Deserialize)]
struct KeyDoorState {
    agent: (usize, usize),
    key: (usize, usize),
    key_taken: bool,
    apple: (usize, usize),
    step_count: usize,
    door_given: bool,
    rng: RngState,
}

/// Exposes the discrete-4 grid through the engine's continuous [-1,1]^2
/// interface: the dominant axis (larger |component|) picks the move, the
/// sign picks the direction. axis 0 = left/right, axis 1 = down/up.
pub struct DiscreteWrapper {
    spec: EnvSpec,
    core: KeyToDoorGrid,
    warned: bool,
}

impl DiscreteWrapper {
    pub fn new(core: KeyToDoorGrid) -> Self {
        let spec = EnvSpec {
            id: format!("key-to-door-{}", core.phase2_len),
            obs_dim: KeyToDoorGrid::obs_dim(),
            act_dim: 2,
            horizon: core.horizon(),
            family: Family::Credit,
            default_reward_feed: false,
            action_space: ActionSpace::Discrete(4),
        };
        DiscreteWrapper { spec, core, warned: false }
    }

    pub fn decode(action: &[f64]) -> usize {
        if action[0].abs() >= action[1].abs() {
            if action[0] >= 0.0 {
                3 // right
            } else {
                2 // left
            }
        } else if action[1] >= 0.0 {
            0 // up
        } else {
            1 // down
        }
    }

    pub fn core(&self) -> &KeyToDoorGrid {
        &self.core
    }
}

impl Env for DiscreteWrapper {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.core.reset_grid()
    }

    fn step(&mut self, action: &[f64]) -> StepOut {
        let a = clip_action(action, &mut self.warned, &self.spec.id);
        self.core.step_discrete(Self::decode(&a))
    }

    fn hidden_metadata(&self) -> serde_json::Value {
        serde_json::json!({ "key_taken": self.core.key_taken })
    }

    fn episode_success(&self) -> Option<bool> {
        Some(self.core.key_taken)
    }

    fn save_state(&self) -> serde_json::Value {
        serde_json::to_value(KeyDoorState {
            agent: self.core.agent,
            key: self.core.key,
            key_taken: self.core.key_taken,
            apple: self.core.apple,
            step_count: self.core.step_count,
            door_given: self.core.door_given,
            rng: save_rng(&self.core.rng),
        })
        .expect("key-door state serializes")
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<(), EnvError> {
        let s: KeyDoorState = serde_json::from_value(state.clone())
            .map_err(|e| EnvError::BadState(e.to_string()))?;
        self.core.agent = s.agent;
        self.core.key = s.key;
        self.core.key_taken = s.key_taken;
        self.core.apple = s.apple;
        self.core.step_count = s.step_count;
        self.core.door_given = s.door_given;
        self.core.rng = load_rng(&s.rng);
        Ok(())
    }
}

/// Greedy scripted policy used as the solvability oracle: walk to the key in
/// phase 1, chase apples in phase 2, idle in phase 3. Returns the discrete
/// move for the core grid.
pub fn scripted_key_door_policy(env: &KeyToDoorGrid) -> usize {
    let target = match env.phase() {
        Phase::One if !env.key_taken => Some(env.key),
        Phase::Two => Some(env.apple),
        _ => None,
    };
    match target {
        Some((tx, ty)) => {
            let (x, y) = env.agent;
            if tx > x {
                3
            } else if tx < x {
                2
            } else if ty > y {
                0
            } else {
                1
            }
        }
        None => 0,
    }
}
