pub mod archive;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod head;
pub mod label;
pub mod lora;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;
pub mod vit;
pub mod zero_shot;

pub use error::{Error, Result};
pub use label::Label;
