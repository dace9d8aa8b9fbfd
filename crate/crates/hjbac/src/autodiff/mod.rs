//! Minimal reverse-mode autodiff, flat parameter storage, and Adam.

mod adam;
pub mod finite_diff;
mod params;
mod tape;

pub use adam::{adam_step, AdamState};
pub use params::{ParamVector, ParamView};
pub use tape::{AutodiffError, NodeId, Tape};
