pub mod autodiff;
pub mod classifier;
pub mod corpus;
pub mod embeddings;
pub mod emojinet;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod pipeline;
pub mod synthetic;
pub mod text_encoder;
pub mod vgae;

pub use error::{Error, Result};
