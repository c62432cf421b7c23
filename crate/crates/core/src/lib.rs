pub mod baseline;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod lgm;
pub mod linalg;
pub mod mesh;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;
