pub mod adapt;
pub mod assembly;
pub mod cli;
pub mod convnet;
pub mod error;
pub mod estimator;
pub mod field;
pub mod mesh;
pub mod problems;
pub mod reference;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
