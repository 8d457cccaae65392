//! Bidirectional selective state-space denoiser for hyperspectral cubes.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense row-major tensors and a reverse-mode tape.
//! * [`ssm`]: zero-order-hold discretization and the selective scan
//!   (sequential reference, chunked linear-time variant, analytic backward).
//! * [`scan_path`]: the eight continuous serpentine traversals of an H×W grid.
//! * [`model`]: the denoising network built from the pieces above.
//! * [`noise`], [`metrics`], [`train`], [`bench`], [`io`], [`denoise`]:
//!   synthesis, evaluation, optimization, scaling benchmarks and file formats.

pub mod bench;
pub mod denoise;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod rng;
pub mod scan_path;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use noise::HsiCube;
pub use tensor::{Scalar, Tape, Tensor, Var};
