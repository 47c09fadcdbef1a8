use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::run_config::Resolved;

/// Everything needed to re-derive a run: the resolved config, a content
/// hash of it, the code version, and where the artifacts live.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub code_version: String,
    pub metrics_path: String,
    pub learning_curve_path: String,
    pub final_checkpoint: String,
    pub completed_steps: u64,
    pub wall_seconds: f64,
    pub aborted: bool,
}

/// Small stable FNV-1a over the canonical config text.
fn fnv1a(text: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

impl RunRecord {
    pub fn new(resolved: &Resolved, out_dir: &Path) -> Self {
        RunRecord {
            config_hash: fnv1a(&crate::run_config::canonical_json(resolved)),
            code_version: rrl_core::checkpoint::code_version(),
            metrics_path: out_dir.join("metrics.jsonl").display().to_string(),
            learning_curve_path: out_dir.join("learning_curve.csv").display().to_string(),
            final_checkpoint: out_dir.join("ckpt-final").display().to_string(),
            completed_steps: 0,
            wall_seconds: 0.0,
            aborted: false,
        }
    }

    pub fn finish(&mut self, wall: Duration, steps: u64, aborted: bool) {
        self.wall_seconds = wall.as_secs_f64();
        self.completed_steps = steps;
        self.aborted = aborted;
    }
}
