//! Cooperative multi-agent learning over a channel with cross-step delays.
//!
//! * [`channel`]: delay distributions and the per-pair in-flight buffer.
//! * [`env`]: particle tasks with discrete actions and no teammate vision.
//! * [`cgdc`]: critic-based message gain, delay cost, and exact tabular
//!   oracles for both.
//! * [`agent`]: encoder, partner selection, observation-trajectory
//!   generation, prior-weighted attention and the actor.
//! * [`training`]: replay, losses, the episode loop and the trainer.

pub mod agent;
pub mod cgdc;
pub mod channel;
pub mod env;
pub mod error;
pub mod rng;
pub mod training;

pub use error::{CoreError, Result};
