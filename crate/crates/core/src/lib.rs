pub mod cli;
pub mod error;
pub mod nn;
pub mod numeric;
pub mod obs;
pub mod protocol;
pub mod unlearn;

mod codec;

pub use error::{Error, Result};
