//! Neural actor-critic solver for static Hamilton-Jacobi-Bellman equations.
//!
//! Solves elliptic HJB equations of the form
//!
//! ```text
//! inf_u [ 1/2 Tr(sigma sigma^T Hess V) + b^T grad V + f ] - gamma V = 0   in Omega
//! V = g                                                                   on dOmega
//! ```
//!
//! over a ball `Omega`, by recasting them as infinite-horizon stochastic
//! control stopped at the boundary. A value network (critic), an optional
//! value-gradient network, and a control network (actor) are trained on
//! batches of Euler-Maruyama trajectories: the critic minimizes a squared
//! temporal-difference residual (the variance-reduced `TD1` subtracts the
//! Ito stochastic-integral term, plain `TD2` does not) plus a boundary
//! penalty, and the actor does policy gradient on the discounted rollout
//! cost with a bootstrapped terminal value.
//!
//! The crate is organized as:
//!
//! - [`autodiff`]: tape-based reverse-mode AD, flat parameters, Adam;
//! - [`networks`]: residual MLPs and the norm-constrained control head;
//! - [`problems`]: four benchmark problems with closed-form solutions and a
//!   finite-difference HJB-residual oracle;
//! - [`rollout`]: naive and adaptive-step trajectory simulation;
//! - [`losses`]: critic / actor losses and their gradients;
//! - [`trainer`]: the alternating training loop with validation and
//!   checkpointing;
//! - [`cli`] (feature `cli`): the `hjbac` command-line front end.
//!
//! Everything is deterministic given a seed: random draws come from
//! counter-based ChaCha streams keyed by purpose, iteration, and batch
//! index, and batch gradients reduce over fixed chunks in index order.

pub mod autodiff;
pub mod losses;
pub mod networks;
pub mod problems;
pub mod rng;
pub mod rollout;
pub mod trainer;
pub(crate) mod util;

#[cfg(feature = "cli")]
pub mod cli;
