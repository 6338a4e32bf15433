//! Data-driven feedback linearization in discrete-time Brunovsky form.
//!
//! A sampled-data plant `x⁺ = f(x, u)` is identified as a shift register
//! `z⁺ = σ(z, v)` sandwiched between four learned transformations: a state
//! encoder/decoder pair (`Φx`, `Φx⁻¹`) and an input encoder/decoder pair
//! (`Φu`, `Φu⁻¹`). Trajectories are then planned and stabilized in the
//! linear coordinates, and the learned transformations can be fine-tuned on
//! recordings from a perturbed plant.
//!
//! Module map:
//! - [`dynamics`]: ground-truth plants (academic system, stacker crane).
//! - [`nn`]: one-hidden-layer networks, manual backprop, Adam.
//! - [`canonical`]: shift system, auto-encoder, composite loss, training.
//! - [`control`]: trajectory planning, pole placement, closed loop.
//! - [`datastore`]: dataset generation, normalization, persistence.
//! - [`config`] / [`pipeline`]: run configuration and the CLI commands.

pub mod canonical;
pub mod config;
pub mod control;
pub mod datastore;
pub mod dynamics;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod plot;

pub use error::{Error, Result};
