pub mod checks;
pub mod env;
pub mod equilibrium;
pub mod error;
pub mod game_model;
pub mod protocol;
pub mod scenario;
pub mod sweep;

pub use error::{Error, Result};
