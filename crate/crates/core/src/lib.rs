pub mod cli;
pub mod compress;
pub mod embedding;
pub mod error;
pub mod io;
pub mod linalg;
pub mod measures;
pub mod rng;
pub mod selection;
pub mod theory;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
