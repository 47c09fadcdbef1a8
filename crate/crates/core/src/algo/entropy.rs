use serde::{Deserialize, Serialize};

/// Dual-variable entropy temperature: one Adam step per policy update on
/// log_alpha, minimizing log_alpha * (observed_entropy - target), where
/// observed entropy is the masked mean of -log p over valid steps. alpha
/// stays positive by construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyTuner {
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub lr: f64,
    m: f64,
    v: f64,
    t: u64,
}

impl EntropyTuner {
    pub fn new(initial_alpha: f64, target_entropy: f64, lr: f64) -> Self {
        assert!(initial_alpha > 0.0);
        EntropyTuner { log_alpha: initial_alpha.ln(), target_entropy, lr, m: 0.0, v: 0.0, t: 0 }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// `mean_log_prob` is mask_mean(log p) over valid steps (stop-gradient
    /// through the policy). Returns the new alpha.
    pub fn update(&mut self, mean_log_prob: f64) -> f64 {
        // d/dlog_alpha [log_alpha * (-mean_log_prob - target)]
        let grad = -mean_log_prob - self.target_entropy;
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * grad;
        self.v = 0.999 * self.v + 0.001 * grad * grad;
        let mhat = self.m / (1.0 - 0.9f64.powi(self.t as i32));
        let vhat = self.v / (1.0 - 0.999f64.powi(self.t as i32));
        self.log_alpha -= self.lr * mhat / (vhat.sqrt() + 1e-8);
        self.alpha()
    }
}
