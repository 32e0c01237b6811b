pub mod annotation;
pub mod budget;
pub mod ema;
pub mod error;
pub mod filtering;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod matching;
pub mod matrix;
pub mod prediction;
pub mod quality;
pub mod synthetic;

pub use error::{Error, Result};
