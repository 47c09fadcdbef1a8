//! Operational shell for the recurrent RL engine: configuration and
//! profiles, run orchestration (train/eval), the divergence lab, and the
//! scan microbenchmark. The `rrl` binary is a thin wrapper over this crate.

pub mod eval;
pub mod record;
pub mod run_config;
pub mod scan_bench;
pub mod stability_cmd;
pub mod train;
