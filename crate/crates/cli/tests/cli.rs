//! Shell-level contracts: profile resolution, config purity, run
//! determinism, checkpoint resume, eval, and the lab/bench subcommands.

use std::path::Path;
use std::process::Command;

use rrl_cli::run_config::{canonical_json, resolve, ArchPreset, Overrides, Profile, RunConfig};
use rrl_cli::scan_bench::{cmd_scan_bench, ScanBenchArgs};
use rrl_cli::train::cmd_train;
use rrl_core::nets::EncoderKind;

fn tiny_run(env: &str, seed: u64, steps: u64, out: &Path) -> RunConfig {
    RunConfig {
        env: env.into(),
        seed,
        total_steps: steps,
        profile: Profile::Pomdp,
        encoder: EncoderKind::Ssm,
        arch: ArchPreset::Desk,
        overrides: Overrides {
            batch_transitions: Some(32),
            warmup_steps: Some(150),
            buffer_capacity: Some(50_000),
            pre_width: Some(6),
            trunk_width: Some(10),
            state_dim: Some(6),
            ffn_hidden: Some(12),
            post_width: Some(6),
            head_hidden: Some(8),
            ..Overrides::default()
        },
        eval_every: 250,
        eval_episodes: 2,
        eval_env: None,
        stochastic_eval: false,
        log_every: 50,
        checkpoint_every: 0,
        out: Some(out.display().to_string()),
    }
}

#[test]
fn profiles_expand_to_the_table_rows() {
    let mut cfg = RunConfig { profile: Profile::Pomdp, ..RunConfig::default() };
    let r = resolve(&cfg).unwrap();
    assert_eq!(r.trainer.lr_ce, 1e-5);
    assert_eq!(r.trainer.lr_policy, 3e-4);
    assert_eq!(r.trainer.lr_value, 1e-3);
    assert_eq!(r.trainer.batch_transitions, 2000);
    assert_eq!(r.trainer.gamma, 0.99);
    assert_eq!(r.trainer.lr_alpha, 1e-4);
    assert_eq!(r.trainer.soft_update_tau, 0.995);
    assert_eq!(r.trainer.warmup_steps, 5000);
    assert!(!r.encoder_cfg.feed_last_reward);

    cfg.profile = Profile::MujocoMeta;
    let r = resolve(&cfg).unwrap();
    assert_eq!(r.trainer.lr_ce, 2e-6);
    assert_eq!(r.trainer.lr_policy, 6e-5);
    assert_eq!(r.trainer.lr_value, 2e-4);
    assert_eq!(r.trainer.batch_transitions, 1000);
    assert!(r.encoder_cfg.feed_last_reward);

    cfg.profile = Profile::KeyToDoor;
    cfg.env = "key-to-door-20".into();
    let r = resolve(&cfg).unwrap();
    assert_eq!(r.trainer.gamma, 0.9999);
    assert_eq!(r.trainer.lr_ce, 1e-5);
    assert_eq!(r.trainer.batch_transitions, 1000);
}

#[test]
fn explicit_fields_override_profiles_and_resolution_is_pure() {
    let cfg = RunConfig {
        profile: Profile::Pomdp,
        overrides: Overrides {
            lr_ce: Some(3e-4),
            batch_transitions: Some(123),
            state_dim: Some(7),
            ..Overrides::default()
        },
        ..RunConfig::default()
    };
    let a = resolve(&cfg).unwrap();
    assert_eq!(a.trainer.lr_ce, 3e-4);
    assert_eq!(a.trainer.batch_transitions, 123);
    assert_eq!(a.encoder_cfg.state_dim, 7);
    // unchanged profile rows keep their values
    assert_eq!(a.trainer.lr_value, 1e-3);
    // purity: identical canonical output
    let b = resolve(&cfg).unwrap();
    assert_eq!(canonical_json(&a), canonical_json(&b));
}

#[test]
fn identical_seed_and_config_give_byte_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let out1 = tmp.path().join("a");
    let out2 = tmp.path().join("b");
    let o1 = cmd_train(tiny_run("pendulum-v", 7, 450, &out1), None).unwrap();
    let o2 = cmd_train(tiny_run("pendulum-v", 7, 450, &out2), None).unwrap();
    assert!(!o1.aborted && !o2.aborted);
    let m1 = std::fs::read(out1.join("metrics.jsonl")).unwrap();
    let m2 = std::fs::read(out2.join("metrics.jsonl")).unwrap();
    assert!(!m1.is_empty());
    assert_eq!(m1, m2, "metric streams differ between identical runs");

    // different seed produces a different stream
    let out3 = tmp.path().join("c");
    cmd_train(tiny_run("pendulum-v", 8, 450, &out3), None).unwrap();
    let m3 = std::fs::read(out3.join("metrics.jsonl")).unwrap();
    assert_ne!(m1, m3);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    // uninterrupted 500 steps
    let full_out = tmp.path().join("full");
    let full = cmd_train(tiny_run("pendulum-v", 11, 500, &full_out), None).unwrap();
    assert!(!full.aborted);

    // 250 steps, checkpoint, resume to 500
    let part_out = tmp.path().join("part");
    let mut part_cfg = tiny_run("pendulum-v", 11, 250, &part_out);
    part_cfg.checkpoint_every = 250;
    cmd_train(part_cfg, None).unwrap();
    let resume_out = tmp.path().join("resumed");
    let mut resume_cfg = tiny_run("pendulum-v", 11, 500, &resume_out);
    resume_cfg.checkpoint_every = 0;
    let ckpt = part_out.join("ckpt-000000250");
    assert!(ckpt.exists());
    cmd_train(resume_cfg, Some(&ckpt)).unwrap();

    // the resumed stream must continue exactly where the full run's does
    let full_lines: Vec<String> = std::fs::read_to_string(full_out.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let resumed_lines: Vec<String> = std::fs::read_to_string(resume_out.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let tail = &full_lines[full_lines.len() - resumed_lines.len()..];
    assert_eq!(tail, resumed_lines.as_slice(), "resumed metrics diverge from uninterrupted run");

    // and the final parameters agree bitwise
    let p_full =
        rrl_core::autodiff::ParameterSet::load(&full_out.join("ckpt-final/policy.params")).unwrap();
    let p_res = rrl_core::autodiff::ParameterSet::load(&resume_out.join("ckpt-final/policy.params"))
        .unwrap();
    for ((_, _, a), (_, _, b)) in p_full.iter().zip(p_res.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn eval_command_round_trips_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let outcome = cmd_train(tiny_run("pendulum-v", 3, 300, &out), None).unwrap();
    let ckpt = outcome.out_dir.join("ckpt-final");
    let summary = rrl_cli::eval::cmd_eval(&ckpt, "pendulum-v", 3, 5, false).unwrap();
    assert_eq!(summary.episodes, 3);
    assert!(summary.return_mean.is_finite());
    assert!(summary.return_mean <= 0.0);
    // deterministic evaluation twice gives the same numbers
    let again = rrl_cli::eval::cmd_eval(&ckpt, "pendulum-v", 3, 5, false).unwrap();
    assert_eq!(summary.return_mean.to_bits(), again.return_mean.to_bits());
    // episode count of zero is rejected
    assert!(rrl_cli::eval::cmd_eval(&ckpt, "pendulum-v", 0, 5, false).is_err());
    // architecture/env mismatch is rejected
    assert!(rrl_cli::eval::cmd_eval(&ckpt, "key-to-door-20", 2, 5, false).is_err());
}

#[test]
fn scan_bench_gates_on_correctness_and_reports_rows() {
    let rows = cmd_scan_bench(ScanBenchArgs {
        lengths: vec![64, 256],
        width: 8,
        trials: 2,
        out: None,
    })
    .unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r.gru_ms > 0.0 && r.ssm_seq_ms > 0.0 && r.ssm_par_ms > 0.0);
    }
    // unsorted lengths are rejected
    assert!(cmd_scan_bench(ScanBenchArgs {
        lengths: vec![256, 64],
        width: 8,
        trials: 1,
        out: None
    })
    .is_err());
}

#[test]
fn stability_cmd_writes_curves_and_envelopes() {
    let tmp = tempfile::tempdir().unwrap();
    let args = rrl_cli::stability_cmd::StabilityArgs {
        ckpt: None,
        random_env: Some("pendulum-v".into()),
        encoder: EncoderKind::Ssm,
        lrs: vec![(3e-4, 3e-4), (1e-5, 3e-4)],
        horizon: 60,
        seeds: vec![1],
        batch_transitions: 64,
        out: tmp.path().join("lab"),
    };
    let summaries = rrl_cli::stability_cmd::cmd_stability(args).unwrap();
    assert_eq!(summaries.len(), 2);
    let csvs: Vec<_> = std::fs::read_dir(tmp.path().join("lab"))
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    assert!(csvs.iter().any(|n| n.starts_with("divergence-") && n.ends_with(".csv")));
    assert!(csvs.iter().any(|n| n == "summary.json"));
    let one = csvs.iter().find(|n| n.starts_with("divergence-")).unwrap();
    let text = std::fs::read_to_string(tmp.path().join("lab").join(one)).unwrap();
    assert!(text.starts_with("t,measured,bound,running_avg,avg_bound"));
    assert_eq!(text.lines().count(), 62); // header + horizon + 1 rows
}

#[test]
fn binary_surface_smoke() {
    let bin = env!("CARGO_BIN_EXE_rrl");
    let out = Command::new(bin).arg("--help").output().unwrap();
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for sub in ["train", "eval", "stability", "scan-bench"] {
        assert!(help.contains(sub), "missing subcommand {sub}");
    }
}
