//! Stochastic decomposition layers on a convolutional forecast emulator.

pub mod container;
pub mod emulator;
pub mod error;
pub mod fft;
pub mod latents;
pub mod losses;
pub mod pipeline;
pub mod sdl;
pub mod synthgen;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
