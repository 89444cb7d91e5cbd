pub mod bilateral;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod refine;
pub mod types;
pub mod uiou;

pub use error::{Error, Result};
