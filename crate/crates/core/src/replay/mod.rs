//! Full-trajectory replay storage and the stacked-batch sampler: whole
//! episodes are packed along the time axis with validity masks, hidden-reset
//! flags at every embedded trajectory start, optional zero gaps between
//! trajectories (for the causal convolution), and the extended (+1 step)
//! arrays used to build bootstrap targets.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;
use crate::autodiff::SeqLayout;

pub use crate::array::mask_mean;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoneKind {
    /// True environment termination: the final step does not bootstrap.
    Terminal,
    /// Horizon/timeout truncation: the final step bootstraps normally.
    Timeout,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    /// `[len + 1, obs_dim]`: includes the observation after the last step.
    pub obs: Array,
    /// `[len, act_dim]`
    pub actions: Array,
    pub rewards: Vec<f64>,
    pub done_kind: DoneKind,
    pub episode_id: u64,
    /// Hidden factors (e.g. the gravity multiplier) for diagnostics only;
    /// never fed to networks.
    pub metadata: serde_json::Value,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.cols()
    }

    pub fn act_dim(&self) -> usize {
        self.actions.cols()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        let l = self.len();
        if l < 1 {
            return Err(ReplayError::Malformed("empty trajectory".into()));
        }
        if self.obs.rows() != l + 1 {
            return Err(ReplayError::Malformed(format!(
                "obs rows {} != len + 1 = {}",
                self.obs.rows(),
                l + 1
            )));
        }
        if self.actions.rows() != l {
            return Err(ReplayError::Malformed(format!(
                "action rows {} != len {}",
                self.actions.rows(),
                l
            )));
        }
        if !self.obs.all_finite()
            || !self.actions.all_finite()
            || !self.rewards.iter().all(|r| r.is_finite())
        {
            return Err(ReplayError::Malformed("non-finite trajectory data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("malformed trajectory: {0}")]
    Malformed(String),
    #[error("replay buffer is empty")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad snapshot magic")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

/// Ring of whole trajectories with a transition-count capacity; eviction is
/// oldest-first by whole trajectory.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    trajectories: VecDeque<Trajectory>,
    capacity: usize,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity_transitions: usize) -> Self {
        assert!(capacity_transitions >= 1);
        ReplayBuffer { trajectories: VecDeque::new(), capacity: capacity_transitions, transitions: 0 }
    }

    pub fn insert(&mut self, traj: Trajectory) -> Result<(), ReplayError> {
        traj.validate()?;
        self.transitions += traj.len();
        self.trajectories.push_back(traj);
        while self.transitions > self.capacity && self.trajectories.len() > 1 {
            let old = self.trajectories.pop_front().expect("non-empty");
            self.transitions -= old.len();
        }
        Ok(())
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, index: usize) -> &Trajectory {
        &self.trajectories[index]
    }

    /// Uniform without-replacement draw of whole trajectories until the
    /// valid-step count reaches `batch_transitions` (or the buffer is
    /// exhausted), packed first-fit-decreasing with `gap` zero steps between
    /// trajectories sharing a row.
    pub fn sample_stacked(
        &self,
        batch_transitions: usize,
        gap: usize,
        rng: &mut impl Rng,
    ) -> Result<StackedBatch, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        assert!(batch_transitions >= 1, "sample_stacked: batch size must be >= 1");
        let n = self.trajectories.len();
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut picked = Vec::new();
        let mut total = 0usize;
        while total < batch_transitions && !remaining.is_empty() {
            let slot = rng.random_range(0..remaining.len());
            let idx = remaining.swap_remove(slot);
            total += self.trajectories[idx].len();
            picked.push(idx);
        }
        let trajs: Vec<&Trajectory> = picked.iter().map(|&i| &self.trajectories[i]).collect();
        Ok(StackedBatch::build(&trajs, gap))
    }

    /// Build a batch from explicit trajectory indices (test/diagnostic path).
    pub fn stack_indices(&self, indices: &[usize], gap: usize) -> StackedBatch {
        let trajs: Vec<&Trajectory> = indices.iter().map(|&i| &self.trajectories[i]).collect();
        StackedBatch::build(&trajs, gap)
    }

    const MAGIC: &'static [u8; 4] = b"RRLB";
    const VERSION: u32 = 1;

    /// Versioned little-endian snapshot of the stored trajectories.
    pub fn write_snapshot(&self, w: &mut impl Write) -> Result<(), ReplayError> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.trajectories.len() as u64).to_le_bytes())?;
        for t in &self.trajectories {
            w.write_all(&t.episode_id.to_le_bytes())?;
            w.write_all(&[match t.done_kind {
                DoneKind::Terminal => 0u8,
                DoneKind::Timeout => 1u8,
            }])?;
            let meta = serde_json::to_vec(&t.metadata)
                .map_err(|e| ReplayError::Snapshot(e.to_string()))?;
            w.write_all(&(meta.len() as u32).to_le_bytes())?;
            w.write_all(&meta)?;
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            w.write_all(&(t.obs_dim() as u32).to_le_bytes())?;
            w.write_all(&(t.act_dim() as u32).to_le_bytes())?;
            for v in t.obs.data().iter().chain(t.actions.data()).chain(&t.rewards) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot(r: &mut impl Read) -> Result<Self, ReplayError> {
        let mut m = [0u8; 4];
        r.read_exact(&mut m)?;
        if &m != Self::MAGIC {
            return Err(ReplayError::BadMagic);
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::VERSION {
            return Err(ReplayError::Version(version));
        }
        r.read_exact(&mut b8)?;
        let capacity = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut buf = ReplayBuffer::new(capacity);
        let read_f64s = |r: &mut dyn Read, n: usize| -> Result<Vec<f64>, ReplayError> {
            let mut out = vec![0.0; n];
            let mut b = [0u8; 8];
            for v in out.iter_mut() {
                r.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
            }
            Ok(out)
        };
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            let episode_id = u64::from_le_bytes(b8);
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let done_kind = match kind[0] {
                0 => DoneKind::Terminal,
                1 => DoneKind::Timeout,
                k => return Err(ReplayError::Snapshot(format!("bad done kind {k}"))),
            };
            r.read_exact(&mut b4)?;
            let mlen = u32::from_le_bytes(b4) as usize;
            let mut mbuf = vec![0u8; mlen];
            r.read_exact(&mut mbuf)?;
            let metadata = serde_json::from_slice(&mbuf)
                .map_err(|e| ReplayError::Snapshot(e.to_string()))?;
            r.read_exact(&mut b4)?;
            let len = u32::from_le_bytes(b4) as usize;
            r.read_exact(&mut b4)?;
            let obs_dim = u32::from_le_bytes(b4) as usize;
            r.read_exact(&mut b4)?;
            let act_dim = u32::from_le_bytes(b4) as usize;
            let obs = read_f64s(r, (len + 1) * obs_dim)?;
            let actions = read_f64s(r, len * act_dim)?;
            let rewards = read_f64s(r, len)?;
            buf.insert(Trajectory {
                obs: Array::mat(len + 1, obs_dim, obs),
                actions: Array::mat(len, act_dim, actions),
                rewards,
                done_kind,
                episode_id,
                metadata,
            })?;
        }
        Ok(buf)
    }
}

/// Placement of one embedded trajectory inside a packed tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentRef {
    pub row: usize,
    pub start: usize,
    pub len: usize,
}

/// One packed tensor family: time-major `[steps * rows, dim]` arrays.
#[derive(Clone, Debug)]
pub struct StackedPack {
    pub rows: usize,
    pub steps: usize,
    pub obs: Array,
    pub prev_obs: Array,
    pub prev_act: Array,
    pub prev_rew: Array,
    pub actions: Array,
    pub rewards: Array,
    /// 1.0 on valid steps, 0.0 on padding and gaps; `[steps * rows, 1]`.
    pub mask: Array,
    /// 1.0 at the first step of every embedded trajectory.
    pub reset: Array,
    /// 1.0 where the target may bootstrap, 0.0 on true-terminal final steps.
    pub bootstrap: Array,
    pub layout: SeqLayout,
    pub segments: Vec<SegmentRef>,
}

impl StackedPack {
    fn index(&self, t: usize, row: usize) -> usize {
        t * self.rows + row
    }
}

/// Stacked batch: base arrays for the squared-error pass plus independently
/// packed extended (+1 step) arrays for target construction. `segments[k]`
/// of both packs refer to the same k-th sampled trajectory.
#[derive(Clone, Debug)]
pub struct StackedBatch {
    pub base: StackedPack,
    pub ext: StackedPack,
    pub valid_transitions: usize,
    pub traj_lens: Vec<usize>,
    pub episode_ids: Vec<u64>,
}

impl StackedBatch {
    /// Default row budget: the longest trajectory in the batch.
    pub fn build(trajs: &[&Trajectory], gap: usize) -> Self {
        Self::build_with_budget(trajs, gap, None)
    }

    /// Pack with an explicit row budget (must cover the longest trajectory).
    pub fn build_with_budget(trajs: &[&Trajectory], gap: usize, budget: Option<usize>) -> Self {
        assert!(!trajs.is_empty(), "stack: no trajectories");
        let obs_dim = trajs[0].obs_dim();
        let act_dim = trajs[0].act_dim();
        for t in trajs {
            assert_eq!(t.obs_dim(), obs_dim, "stack: obs dim mismatch");
            assert_eq!(t.act_dim(), act_dim, "stack: act dim mismatch");
        }
        // first-fit decreasing on length; stable order on ties
        let mut order: Vec<usize> = (0..trajs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(trajs[i].len()));
        let sorted: Vec<&Trajectory> = order.iter().map(|&i| trajs[i]).collect();

        let base = pack(&sorted, gap, false, obs_dim, act_dim, budget);
        let ext = pack(&sorted, gap, true, obs_dim, act_dim, budget.map(|b| b + 1));
        let valid: usize = sorted.iter().map(|t| t.len()).sum();
        StackedBatch {
            base,
            ext,
            valid_transitions: valid,
            traj_lens: sorted.iter().map(|t| t.len()).collect(),
            episode_ids: sorted.iter().map(|t| t.episode_id).collect(),
        }
    }

    pub fn num_trajectories(&self) -> usize {
        self.traj_lens.len()
    }

    /// Scatter per-trajectory extended-row values (the last len rows of each
    /// segment) into base layout positions. `values` is indexed by ext rows.
    pub fn ext_to_base_rows(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.base.steps * self.base.rows];
        for (k, len) in self.traj_lens.iter().enumerate() {
            let bs = self.base.segments[k];
            let es = self.ext.segments[k];
            for t in 0..*len {
                let src = self.ext.index(es.start + t + 1, es.row);
                let dst = self.base.index(bs.start + t, bs.row);
                out[dst] = values[src];
            }
        }
        out
    }
}

fn pack(
    sorted: &[&Trajectory],
    gap: usize,
    extended: bool,
    obs_dim: usize,
    act_dim: usize,
    explicit_budget: Option<usize>,
) -> StackedPack {
    let seg_len = |t: &Trajectory| t.len() + usize::from(extended);
    let longest = sorted.iter().map(|t| seg_len(t)).max().unwrap();
    let budget = match explicit_budget {
        Some(b) => {
            assert!(b >= longest, "row budget {b} below longest segment {longest}");
            b
        }
        None => longest,
    };
    // rows hold (used_until) cursors
    let mut row_used: Vec<usize> = Vec::new();
    let mut segments = vec![SegmentRef { row: 0, start: 0, len: 0 }; sorted.len()];
    for (k, traj) in sorted.iter().enumerate() {
        let len = seg_len(traj);
        let mut placed = false;
        for (r, used) in row_used.iter_mut().enumerate() {
            let start = if *used == 0 { 0 } else { *used + gap };
            if start + len <= budget {
                segments[k] = SegmentRef { row: r, start, len };
                *used = start + len;
                placed = true;
                break;
            }
        }
        if !placed {
            segments[k] = SegmentRef { row: row_used.len(), start: 0, len };
            row_used.push(len);
        }
    }
    let rows = row_used.len();
    let steps = budget;
    let n = steps * rows;
    let mut obs = Array::zeros(&[n, obs_dim]);
    let mut prev_obs = Array::zeros(&[n, obs_dim]);
    let mut prev_act = Array::zeros(&[n, act_dim]);
    let mut prev_rew = Array::zeros(&[n, 1]);
    let mut actions = Array::zeros(&[n, act_dim]);
    let mut rewards = Array::zeros(&[n, 1]);
    let mut mask = Array::zeros(&[n, 1]);
    let mut reset = Array::zeros(&[n, 1]);
    let mut bootstrap = Array::zeros(&[n, 1]);
    let mut reset_flags = vec![false; n];

    for (k, traj) in sorted.iter().enumerate() {
        let seg = segments[k];
        let l = traj.len();
        for t in 0..seg.len {
            let idx = (seg.start + t) * rows + seg.row;
            mask.data_mut()[idx] = 1.0;
            if t == 0 {
                reset.data_mut()[idx] = 1.0;
                reset_flags[idx] = true;
            }
            // base rows run 0..l; the extended pack appends one more row
            let in_base = t < l;
            let ob_row = if in_base { t } else { l };
            obs.data_mut()[idx * obs_dim..(idx + 1) * obs_dim]
                .copy_from_slice(&traj.obs.data()[ob_row * obs_dim..(ob_row + 1) * obs_dim]);
            if t > 0 {
                let p = t - 1;
                prev_obs.data_mut()[idx * obs_dim..(idx + 1) * obs_dim]
                    .copy_from_slice(&traj.obs.data()[p * obs_dim..(p + 1) * obs_dim]);
                prev_act.data_mut()[idx * act_dim..(idx + 1) * act_dim]
                    .copy_from_slice(&traj.actions.data()[p * act_dim..(p + 1) * act_dim]);
                prev_rew.data_mut()[idx] = traj.rewards[p];
            }
            if in_base {
                actions.data_mut()[idx * act_dim..(idx + 1) * act_dim]
                    .copy_from_slice(&traj.actions.data()[t * act_dim..(t + 1) * act_dim]);
            }
            if extended {
                // r+ prepends zero: row 0 carries 0.0, row t carries r[t-1]
                rewards.data_mut()[idx] = if t == 0 { 0.0 } else { traj.rewards[t - 1] };
            } else {
                rewards.data_mut()[idx] = traj.rewards[t];
            }
            // the final extended row of a true-terminal episode must not
            // bootstrap; every other valid row does
            let is_final_ext = extended && t == l;
            bootstrap.data_mut()[idx] =
                if is_final_ext && traj.done_kind == DoneKind::Terminal { 0.0 } else { 1.0 };
        }
    }
    let layout = SeqLayout::new(steps, rows, Arc::new(reset_flags));
    StackedPack {
        rows,
        steps,
        obs,
        prev_obs,
        prev_act,
        prev_rew,
        actions,
        rewards,
        mask,
        reset,
        bootstrap,
        layout,
        segments,
    }
}
