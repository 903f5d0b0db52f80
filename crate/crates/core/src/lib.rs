//! MOJITO: time-aware sequential recommendation with attention mixtures of
//! item and temporal-context embeddings.

pub mod attention;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
mod init;
pub mod long_term;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use config::{AttentionMode, MojitoConfig};
pub use error::{Error, Result};
