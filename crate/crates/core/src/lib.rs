pub mod albert_retro;
pub mod attention;
pub mod bidaf;
pub mod config;
pub mod docqa;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod squad;
pub mod tensor;

pub use config::{Architecture, ConfidenceMode};
pub use error::{Error, Result};
