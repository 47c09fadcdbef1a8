//! Command-line shell: train / eval / stability / scan-bench.
//!
//! Environment variables: RRL_OUT_ROOT (default output root), RRL_THREADS
//! (rayon pool size), RRL_SEED (seed override applied after flags).

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use rrl_cli::{eval, run_config, scan_bench, stability_cmd, train};
use rrl_core::nets::EncoderKind;
use run_config::{ArchPreset, Profile, RunConfig};

#[derive(Parser)]
#[command(name = "rrl", about = "Recurrent off-policy RL engine and divergence lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum EncoderArg {
    Gru,
    Ssm,
    Mlp,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Gru => EncoderKind::Gru,
            EncoderArg::Ssm => EncoderKind::Ssm,
            EncoderArg::Mlp => EncoderKind::Mlp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the training loop from a config file and/or flags.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_enum)]
        encoder: Option<EncoderArg>,
        #[arg(long, value_enum)]
        arch: Option<ArchPreset>,
        #[arg(long)]
        out: Option<String>,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Deterministic rollouts of a checkpointed policy.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample actions instead of taking tanh(mean).
        #[arg(long)]
        stochastic: bool,
    },
    /// Divergence lab: one-step updates at listed (lr_ce:lr_other) pairs,
    /// measured per-step output divergence plus bound envelopes.
    Stability {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Random-init model on this environment instead of a checkpoint.
        #[arg(long)]
        random: Option<String>,
        #[arg(long, value_enum, default_value = "ssm")]
        encoder: EncoderArg,
        /// Comma-separated ce:other pairs, e.g. "3e-4:3e-4,1e-5:3e-4".
        #[arg(long, default_value = "3e-4:3e-4,1e-5:3e-4")]
        lrs: String,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 400)]
        batch: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the sequential GRU unroll against the SSM scans.
    ScanBench {
        #[arg(long, default_value = "64,256,1024,4096", value_delimiter = ',')]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() {
    if let Ok(n) = std::env::var("RRL_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> Result<()> {
    init_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, seed, profile, env, steps, encoder, arch, out, resume } => {
            let mut cfg = match config {
                Some(path) => run_config::load_config(&path)?,
                None => RunConfig::default(),
            };
            if let Some(e) = env {
                cfg.env = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = profile {
                cfg.profile = p;
            }
            if let Some(s) = steps {
                cfg.total_steps = s;
            }
            if let Some(e) = encoder {
                cfg.encoder = e.into();
            }
            if let Some(a) = arch {
                cfg.arch = a;
            }
            if let Some(o) = out {
                cfg.out = Some(o);
            }
            if let Ok(s) = std::env::var("RRL_SEED") {
                cfg.seed = s.parse()?;
            }
            let outcome = train::cmd_train(cfg, resume.as_deref())?;
            println!("{}", train::describe_outcome(&outcome));
            if outcome.aborted {
                std::process::exit(2);
            }
            Ok(())
        }
        Command::Eval { ckpt, env, episodes, seed, stochastic } => {
            let summary = eval::cmd_eval(&ckpt, &env, episodes, seed, stochastic)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Stability { ckpt, random, encoder, lrs, horizon, seeds, batch, out } => {
            let args = stability_cmd::StabilityArgs {
                ckpt,
                random_env: random,
                encoder: encoder.into(),
                lrs: stability_cmd::parse_lr_pairs(&lrs)?,
                horizon,
                seeds,
                batch_transitions: batch,
                out: out.unwrap_or_else(|| stability_cmd::default_out("stability")),
            };
            let summaries = stability_cmd::cmd_stability(args)?;
            for s in &summaries {
                println!(
                    "lr_ce {:>8.1e} lr_other {:>8.1e} seed {}: div[0] {:.3e} div[T] {:.3e} x{:.2} (K_h {:.3}, eps {:.3e})",
                    s.lr_ce, s.lr_other, s.seed, s.divergence_first, s.divergence_last,
                    s.amplification, s.k_h, s.epsilon
                );
            }
            Ok(())
        }
        Command::ScanBench { lengths, width, trials, out } => {
            scan_bench::cmd_scan_bench(scan_bench::ScanBenchArgs { lengths, width, trials, out })?;
            Ok(())
        }
    }
}
