pub mod analysis;
pub mod cli;
pub mod detect;
pub mod dft;
pub mod dimincr;
pub mod error;
pub mod freqset;
pub mod lattice;
pub mod polyeval;
pub mod seed;

pub use error::{Error, Result};
