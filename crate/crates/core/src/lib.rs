//! Two-stage patch-based inpainting with attention adapters.
//!
//! A frozen token-grid diffusion denoiser is extended with a Dual Context
//! Adapter for low-resolution inpainting and a Reference Patch Adapter plus
//! a zero-initialised control branch for per-patch high-resolution
//! refinement.

pub mod backbone;
pub mod data;
pub mod dca;
pub mod diffusion;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod image;
pub mod netpbm;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod rpa;
pub mod store;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::Tensor;
