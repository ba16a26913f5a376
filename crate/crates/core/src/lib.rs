pub mod augment;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod runner;
pub mod scorer;
pub mod synthdata;

pub use error::{Error, Result};
