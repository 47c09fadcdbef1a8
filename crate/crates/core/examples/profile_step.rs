use std::time::Instant;
use rrl_core::algo::*;
use rrl_core::array::Array;
use rrl_core::autodiff::{ParamBinder, Tape};
use rrl_core::envs::make_env;
use rrl_core::nets::*;
use rrl_core::rng::{stream_rng, NormalSource, Stream};

fn main() {
    let env = make_env("pendulum-v", 1).unwrap();
    let cfg = TrainerConfig {
        warmup_steps: 300,
        batch_transitions: 200,
        buffer_capacity: 100_000,
        ..TrainerConfig::default()
    };
    let enc = EncoderConfig {
        pre_width: 16, trunk_width: 32, state_dim: 16, ffn_hidden: 48, post_width: 16,
        ..EncoderConfig::desk(EncoderKind::Ssm)
    };
    let mut tr = Trainer::new(cfg, enc.clone(), HeadConfig { hidden: 32 }, env, 1);
    for _ in 0..305 {
        tr.env_step().unwrap();
    }
    // manual once: reproduce the update pieces
    let mut rng = stream_rng(9, Stream::Lab);
    let batch = tr.buffer.sample_stacked(200, 0, &mut rng).unwrap();
    println!("batch: base {}x{}, ext {}x{}", batch.base.steps, batch.base.rows, batch.ext.steps, batch.ext.rows);
    let mut normal = NormalSource::new();
    let mut noise_ext = Array::zeros(&[batch.ext.steps * batch.ext.rows, 1]);
    normal.fill(&mut rng, noise_ext.data_mut());
    let mut noise = Array::zeros(&[batch.base.steps * batch.base.rows, 1]);
    normal.fill(&mut rng, noise.data_mut());

    let reps = 20;
    let t = Instant::now();
    for _ in 0..reps {
        let _ = critic_targets(&batch, &tr.policy, &tr.policy_params, &tr.critic, &tr.target_params,
            0.2, 0.99, &[0, 3], &noise_ext, true).unwrap();
    }
    println!("targets: {:.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new(&tr.critic_params);
        let y = Array::zeros(&[batch.base.steps * batch.base.rows, 1]);
        let loss = critic_loss_graph(&mut tape, &mut binder, &tr.critic, &batch, &y, true);
        let grads = tape.backward(loss).unwrap();
        let _named = binder.collect(&grads);
    }
    println!("critic fwd+bwd+collect: {:.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new(&tr.critic_params);
        let y = Array::zeros(&[batch.base.steps * batch.base.rows, 1]);
        let loss = critic_loss_graph(&mut tape, &mut binder, &tr.critic, &batch, &y, true);
        let _ = tape.value(loss);
    }
    println!("critic fwd only: {:.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let mut pb = ParamBinder::new(&tr.policy_params);
        let mut cb = ParamBinder::frozen(&tr.critic_params);
        let out = policy_loss_graph(&mut tape, &mut pb, &mut cb, &tr.policy, &tr.critic, &batch, 0.2, &noise, true);
        let grads = tape.backward(out.loss).unwrap();
        let _named = pb.collect(&grads);
    }
    println!("policy fwd+bwd+collect: {:.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
}
