//! Quantum multi-agent actor-critic training for cooperative UAV mobile access.
//!
//! Modules, bottom up:
//!
//! - [`qsim`]: dense statevector simulation.
//! - [`vqc`]: re-uploading variational circuits, shift-rule gradients, policy
//!   and value heads.
//! - [`channel`]: 60 GHz link budget and 802.11ad MCS lookup.
//! - [`stochastics`]: GPS and wind noise samplers.
//! - [`env`]: the multi-UAV access environment.
//! - [`optim`], [`mlp`], [`replay`]: Adam, the classical baseline network
//!   and experience replay.
//! - [`trainer`]: exploration, actor-critic updates, rollouts and baselines.
//! - [`config`]: the experiment configuration tree.
//! - [`gradcheck`]: finite-difference audit of all gradient paths.

pub mod channel;
pub mod config;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod qsim;
pub mod replay;
pub mod stochastics;
pub mod trainer;
pub mod vqc;

pub use error::{Error, Result};
