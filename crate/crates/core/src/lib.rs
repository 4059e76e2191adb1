pub mod asymptotics;
pub mod cli;
pub mod config;
pub mod density;
pub mod error;
pub mod gfunc;
pub mod io;
pub mod par;
pub mod quad;
pub mod rng;
pub mod sampler;
pub mod sde;
pub mod volatility;

pub use error::{Error, Result};
