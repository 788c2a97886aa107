//! Video vision transformers for word-level sign language recognition.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors with reverse-mode differentiation, gradient
//!   checking and the binary checkpoint format.
//! - [`video`]: manifest ingestion, frame sampling, padding, resizing,
//!   color conversion, augmentation and synthetic data.
//! - [`embedding`]: 2D patch and 3D cube tokenization, positional tables and
//!   the classification token.
//! - [`attention`]: multi-head attention, divided and joint space-time
//!   blocks, encoder stacks and attention rollout.
//! - [`mae`]: tube masking and masked-autoencoder pretraining.
//! - [`train`]: classifier, Adam, layer freezing, top-K evaluation,
//!   fine-tuning and ablation grids.

pub mod attention;
pub mod config;
pub mod embedding;
pub mod error;
pub mod mae;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{ModelError, Result};
pub use tensor::{Scalar, Tensor, TensorError};
