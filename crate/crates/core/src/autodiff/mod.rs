//! Minimal reverse-mode differentiation over dense f64 arrays.
//!
//! Values are computed eagerly as nodes are appended to a [`Tape`], so the
//! node id order is already a topological order; backward walks ids in
//! reverse, which fixes the gradient accumulation order and makes repeated
//! runs bitwise reproducible.
//!
//! Shape errors are construction-time contract violations and panic with a
//! message naming the primitive and the offending shapes. Data-dependent
//! failures (a non-finite intermediate) poison the tape instead and surface
//! as an error from [`Tape::status`] or [`Tape::backward`].

mod fd;
mod params;
mod tape;

pub use fd::{finite_diff_check, FdiffReport};
pub use params::{ParamBinder, ParamGroup, ParamIoError, ParameterSet};
pub use tape::{expm1_over_x, scan_parallel, scan_sequential, AdError, NodeId, SeqLayout, Tape};
