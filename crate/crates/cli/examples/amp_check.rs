use rrl_cli::stability_cmd::run_pair_with;
use rrl_core::algo::{Trainer, TrainerConfig};
use rrl_core::envs::make_env;
use rrl_core::nets::*;

fn main() {
    // short training run so the gradient step is structured, then measure
    // divergence pairs on the trained snapshot
    let enc = EncoderConfig {
        conv_kernel: 0,
        ..EncoderConfig::desk(EncoderKind::Ssm)
    };
    let head = HeadConfig { hidden: 16 };
    let cfg = TrainerConfig {
        warmup_steps: 2000,
        batch_transitions: 200,
        buffer_capacity: 100_000,
        ..TrainerConfig::default()
    };
    let env = make_env("pendulum-v", 900).unwrap();
    let mut trainer = Trainer::new(cfg, enc.clone(), head.clone(), env, 900);
    // lab instance: mid-range contraction so the bound's 1/(1 - K_h)
    // amplification is pronounced but not saturating
    for params in [&mut trainer.policy_params, &mut trainer.critic_params, &mut trainer.target_params] {
        let a = params.get_mut("enc.blocks.0.ssm.a_log");
        let n = a.numel();
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v = -2.97 + 1.15 * (i as f64 + 0.5) / n as f64; // abar in (0.85, 0.95)
        }
    }
    let t0 = std::time::Instant::now();
    for _ in 0..12_000 {
        trainer.env_step().unwrap();
    }
    eprintln!("trained 12k steps in {:.0}s", t0.elapsed().as_secs_f64());

    for seed in 1..=8u64 {
        let mut env = make_env("pendulum-v", seed).unwrap();
        for (lr_ce, lr_other) in [(3e-4, 3e-4), (1e-5, 3e-4)] {
            let (s, _, _) = run_pair_with(
                env.as_mut(),
                &trainer.policy,
                &trainer.policy_params,
                &trainer.critic,
                &trainer.critic_params,
                lr_ce,
                lr_other,
                seed,
                1000,
                400,
            )
            .unwrap();
            println!(
                "seed {seed} lr_ce {lr_ce:.0e}: div0 {:.3e} divT {:.3e} ratio {:.2} K_h {:.3}",
                s.divergence_first, s.divergence_last, s.amplification, s.k_h
            );
        }
    }
}
