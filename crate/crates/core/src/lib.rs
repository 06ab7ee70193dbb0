//! Deep-unfolded hyperspectral/multispectral image fusion.
//!
//! The crate covers the explicit observation model (spectral response and
//! blur-plus-decimation), a classical proximal-gradient solver, a small
//! reverse-mode autodiff engine, the neural layers of the unfolded network
//! (convolutions, layer norm, windowed self-attention), the unfolded network
//! itself, quality metrics, and the batch pipeline driven by the CLI.

pub mod error;
pub mod io;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod observation;
pub mod pipeline;
pub mod rng;
pub mod selftest;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
