//! Pointmap-based structure-from-motion by first-order global optimization.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the full optimization
//! backend: retrieval-driven scene-graph construction, per-view canonical
//! pointmaps and focal estimation, coarse 3D alignment followed by a robust 2D
//! reprojection refinement, and the pose-accuracy metrics used to evaluate the
//! result. A synthetic scene generator stands in for the pairwise 3D predictor
//! so the whole pipeline can be checked against ground truth.
//!
//! File formats and the command-line driver live in the companion `sfm-cli`
//! crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod linalg;
pub mod local;
pub mod optim;
pub mod pipeline;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
