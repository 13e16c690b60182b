//! Action-unit conditioned portrait animation: networks, losses, alternating
//! adversarial training, post-processing, evaluation and a synthetic benchmark.

pub mod autograd;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod postprocess;
pub mod service;
pub mod synthbench;
pub mod tensor;
pub mod training;

pub use error::{GathError, Result};
pub use tensor::{Real, Tensor};
