//! Utterance encoder, sequential context encoder, graph context encoder and
//! the decision/generation head.
//!
//! Parameters live in [`ModelParams`] as named tensors in a fixed layout
//! that depends only on the configuration and vocabulary size. A forward
//! pass binds them onto a tape ([`Net`]) so the same code serves training
//! (f32), gradient checking (f64) and inference.

mod config;
mod generate;
mod net;
mod params;

pub use config::{EncoderMode, ModelConfig};
pub use generate::{generate, DecodeMode, Generation};
pub use net::{BatchForward, CellId, ForwardTrace, Net};
pub use params::{param_group, ModelParams};

use thiserror::Error;
use w2t_numerics::NumericsError;

use crate::corpus::Vocab;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("cannot encode an empty utterance")]
    EmptyUtterance,
    #[error("cannot encode an empty context")]
    EmptyContext,
    #[error("speaker index {0} is not 0 (agent) or 1 (user)")]
    Speaker(usize),
    #[error("token index {index} outside vocabulary of {size}")]
    Token { index: usize, size: usize },
    #[error("the decision head is disabled in this configuration")]
    DecisionDisabled,
    #[error("parameter {name:?}: {message}")]
    Param { name: String, message: String },
}

/// Configuration, vocabulary and parameters travelling together.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams<f32>,
}

impl Model {
    pub fn new<R: rand::Rng + ?Sized>(
        config: ModelConfig,
        vocab: Vocab,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, vocab.len(), rng);
        Ok(Self {
            config,
            vocab,
            params,
        })
    }
}
