//! File formats and the batch driver around `sfm-core`: tensor bundles,
//! text trajectories and graphs, PLY clouds, flat run configs and the
//! subcommands built from them.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod convert;
pub mod error;
pub mod ply;
pub mod text;

pub use error::{CliError, Result};
