//! File formats, configuration and the experiment driver around
//! [`geocal_core`].

pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod report;
pub mod sim;

pub use config::{Mode, SimConfig};
pub use error::{GeocalError, Result};
