//! Configuration, mode drivers and the verification suite behind the CLI.

mod config;
mod modes;
mod verify;

pub use config::*;
pub use modes::*;
pub use verify::*;
