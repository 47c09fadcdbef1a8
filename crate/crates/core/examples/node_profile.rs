use std::time::Instant;
use rrl_core::array::Array;
use rrl_core::autodiff::{ParamBinder, SeqLayout, Tape};
use rrl_core::nets::*;
use rrl_core::rng::{stream_rng, NormalSource, Stream};

fn main() {
    let enc = EncoderConfig {
        pre_width: 16, trunk_width: 32, state_dim: 16, ffn_hidden: 48, post_width: 16,
        ..EncoderConfig::desk(EncoderKind::Ssm)
    };
    let critic = CriticNet::new(enc, HeadConfig { hidden: 32 }, 1, 1);
    let params = critic.init_params(&mut stream_rng(0, Stream::ParamInit));
    let n = 200;
    let mut rng = stream_rng(1, Stream::Lab);
    let mut src = NormalSource::new();
    let mk = |rng: &mut _, src: &mut NormalSource, r: usize, c: usize| {
        let mut a = Array::zeros(&[r, c]);
        src.fill(rng, a.data_mut());
        a
    };
    let o = mk(&mut rng, &mut src, n, 1);
    let po = mk(&mut rng, &mut src, n, 1);
    let pa = mk(&mut rng, &mut src, n, 1);
    let pr = mk(&mut rng, &mut src, n, 1);
    let act = mk(&mut rng, &mut src, n, 1);
    let layout = SeqLayout::unbroken(n, 1);

    // forward + backward timing, and a raw-kernel baseline of the same flops
    let reps = 300;
    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new(&params);
        let inputs = SeqInputs { obs: &o, prev_obs: &po, prev_act: &pa, prev_rew: &pr, mask: None };
        let a = tape.constant(act.clone());
        let q = critic.seq_forward(&mut tape, &mut binder, &inputs, a, &layout, false);
        let sq = tape.square(q);
        let root = tape.sum_all(sq);
        let grads = tape.backward(root).unwrap();
        let _named = binder.collect(&grads);
        std::hint::black_box(_named);
    }
    println!("critic fwd+bwd+collect: {:.3} ms", t.elapsed().as_secs_f64()*1e3/reps as f64);

    // raw kernels: the four biggest matmuls repeated to match flop scale
    let x1 = mk(&mut rng, &mut src, 200, 18);
    let w1 = mk(&mut rng, &mut src, 18, 256);
    let x2 = mk(&mut rng, &mut src, 200, 32);
    let w2 = mk(&mut rng, &mut src, 32, 32);
    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(rrl_core::array::matmul(&x1, &w1));
        for _ in 0..8 {
            std::hint::black_box(rrl_core::array::matmul(&x2, &w2));
        }

    }
    println!("raw kernel baseline: {:.3} ms", t.elapsed().as_secs_f64()*1e3/reps as f64);
}
