pub mod error;
pub mod attributes;
pub mod cli;
pub mod datapipe;
pub mod encoders;
pub mod numcore;
pub mod objectives;
pub mod retrieval;

pub use error::{Error, Result};
