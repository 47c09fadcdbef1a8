//! CPU scan microbenchmark: sequential GRU unroll vs sequential and
//! chunked-parallel SSM scans across sequence lengths. Outputs agree with
//! the sequential scan (1e-10 gate) before any timing is reported.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};

use rrl_core::array::Array;
use rrl_core::autodiff::{scan_parallel, scan_sequential, ParamBinder, SeqLayout, Tape};
use rrl_core::metrics::write_csv;
use rrl_core::nets::GruCore;
use rrl_core::rng::{stream_rng, NormalSource, Stream};

pub struct ScanBenchArgs {
    pub lengths: Vec<usize>,
    pub width: usize,
    pub trials: usize,
    pub out: Option<PathBuf>,
}

pub struct BenchRow {
    pub length: usize,
    pub gru_ms: f64,
    pub ssm_seq_ms: f64,
    pub ssm_par_ms: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

pub fn cmd_scan_bench(args: ScanBenchArgs) -> Result<Vec<BenchRow>> {
    if args.lengths.is_empty() {
        bail!("no lengths given");
    }
    let mut sorted = args.lengths.clone();
    sorted.sort_unstable();
    if sorted != args.lengths {
        bail!("lengths must be sorted ascending");
    }
    let width = args.width;
    let mut rng = stream_rng(0, Stream::Lab);
    let mut normal = NormalSource::new();

    let gru = GruCore { input_dim: width, state_dim: width };
    let mut gru_params = rrl_core::autodiff::ParameterSet::new();
    gru.init_params(&mut gru_params, &mut rng, "g");

    println!(
        "scan benchmark: width {width}, {} trials, {} rayon threads",
        args.trials,
        rayon::current_num_threads()
    );
    println!("{:>8} {:>12} {:>12} {:>12}", "length", "gru_ms", "ssm_seq_ms", "ssm_par_ms");
    let mut rows = Vec::new();
    for &len in &args.lengths {
        let mut a = Array::zeros(&[len, width]);
        for v in a.data_mut() {
            *v = 0.5 + 0.49 * normal.sample(&mut rng).tanh();
        }
        let mut b = Array::zeros(&[len, width]);
        normal.fill(&mut rng, b.data_mut());
        let layout = SeqLayout::unbroken(len, 1);

        // correctness gate before timing
        let seq = scan_sequential(&a, &b, &layout);
        let par = scan_parallel(&a, &b, &layout);
        let max_diff = seq
            .data()
            .iter()
            .zip(par.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        if max_diff > 1e-10 {
            bail!("parallel scan disagrees with sequential at length {len}: {max_diff}");
        }

        let mut x = Array::zeros(&[len, width]);
        normal.fill(&mut rng, x.data_mut());

        let mut gru_times = Vec::new();
        let mut seq_times = Vec::new();
        let mut par_times = Vec::new();
        for _ in 0..args.trials {
            let t0 = Instant::now();
            {
                let mut tape = Tape::new();
                let mut binder = ParamBinder::frozen(&gru_params);
                let xn = tape.constant(x.clone());
                let _ = gru.seq(&mut tape, &mut binder, "g", xn, &layout);
            }
            gru_times.push(t0.elapsed().as_secs_f64() * 1e3);

            let t1 = Instant::now();
            let _ = scan_sequential(&a, &b, &layout);
            seq_times.push(t1.elapsed().as_secs_f64() * 1e3);

            let t2 = Instant::now();
            let _ = scan_parallel(&a, &b, &layout);
            par_times.push(t2.elapsed().as_secs_f64() * 1e3);
        }
        let row = BenchRow {
            length: len,
            gru_ms: median(gru_times),
            ssm_seq_ms: median(seq_times),
            ssm_par_ms: median(par_times),
        };
        println!(
            "{:>8} {:>12.3} {:>12.3} {:>12.3}",
            row.length, row.gru_ms, row.ssm_seq_ms, row.ssm_par_ms
        );
        rows.push(row);
    }
    if let Some(out) = &args.out {
        let table: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![r.length as f64, r.gru_ms, r.ssm_seq_ms, r.ssm_par_ms])
            .collect();
        write_csv(out, &["length", "gru_ms", "ssm_seq_ms", "ssm_par_ms"], &table)?;
        println!("written {}", out.display());
    }
    Ok(rows)
}
