pub mod error;
pub mod hybrid;
pub mod variational;
pub mod ilqr;
pub mod models;
pub mod bench;
pub mod oracles;

pub use error::{Error, Result};
pub use nalgebra;
