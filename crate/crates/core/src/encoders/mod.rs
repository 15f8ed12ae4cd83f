//! Transformer encoders for images, text and their fusion, plus the heads.

mod config;
mod layers;
mod model;
mod params;

pub use config::{ImageEncoderConfig, ModelConfig, TextEncoderConfig};
pub use model::{patchify, Model, TEMPERATURE_INIT, TEMPERATURE_MAX, TEMPERATURE_MIN};
pub use params::{Bound, ParamId, ParamStore};
