//! Text-guided sequence infilling with conditional flow matching, built
//! against a synthetic speech-like process with known ground truth.
//!
//! The crate provides the numeric substrate (arrays, deterministic RNG,
//! reverse-mode autodiff), the optimal-transport conditional path and CFM
//! losses, ODE solvers with NFE accounting, phone/duration sequence
//! bookkeeping, the vector-field and duration networks, the in-context
//! task recipes, distribution metrics, and the toy data process with its
//! training driver.

pub mod array;
pub mod audio_net;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod duration;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod ode;
pub mod ops;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod seq;
pub mod synth;
pub mod tasks;
pub mod train;

pub use array::Array;
pub use error::{Error, Result};
pub use rng::Rng;
