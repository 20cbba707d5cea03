//! Coherent-set detection from sparse, gappy Lagrangian trajectories via a
//! finite-element dynamic Laplacian.
//!
//! Stages: [`trajectory`] binning, per-month [`mesh`]ing, [`fem`] assembly
//! and time averaging, the [`eigen`] solve, [`seba`] disentangling and
//! [`sets`] extraction with Cheeger-ratio threshold optimization.
//! [`pipeline`] chains them through on-disk artifacts.

pub mod config;
pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod fem;
pub mod geo;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod seba;
pub mod sets;
pub mod sparse;
pub mod synth;
pub mod trajectory;

pub use config::RunConfig;
pub use error::{Error, ErrorClass, Result};
pub use geo::LonLat;
