//! Recurrent entity networks with an optional question-dependent gate.
//!
//! The crate is self-contained: dense tensors and a reverse-mode tape
//! ([`tensor`], [`tape`]), optimizers ([`optim`]), a finite-difference
//! oracle ([`gradcheck`]), the model pieces ([`encoding`], [`memory`],
//! [`output`], [`model`]), data handling ([`data`]) and the training
//! protocol ([`training`]).

pub mod data;
pub mod encoding;
pub mod error;
pub mod gradcheck;
pub mod memory;
pub mod model;
pub mod optim;
pub mod output;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use memory::Mode;
pub use model::{InputStyle, ModelConfig, ModelParams, Slot};
pub use tensor::{Activation, Real, Tensor};
