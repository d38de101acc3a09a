//! DCT-based multi-frequency channel attention for speaker embedding networks.
//!
//! The crate contains the attention blocks themselves ([`attention`]), the DCT
//! machinery they are built on ([`dct`]), a small dense tensor kernel with
//! hand-written backward rules ([`tensor`]), and a miniature speaker
//! verification pipeline around them: log-mel front end ([`features`]), a tiny
//! convolutional embedding network trained with AAM-softmax ([`speakernet`]),
//! and trial scoring with EER / minDCF ([`eval`]).

pub mod attention;
pub mod cli;
pub mod config;
pub mod dct;
pub mod error;
pub mod eval;
pub mod features;
pub mod speakernet;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Parameter, Tensor};
