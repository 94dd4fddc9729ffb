pub mod attack;
pub mod cost;
pub mod defense;
pub mod error;
pub mod models;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
