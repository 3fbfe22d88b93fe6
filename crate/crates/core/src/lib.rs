//! Weighted Sobolev metrics on the space of immersed closed curves.
//!
//! The crate discretizes curves f : S¹ → N (N = ℝ² / ℝ³ or a round sphere) on a
//! uniform periodic grid and provides the induced geometry, the Bochner
//! Laplacian and its powers, metric evaluation, first variations, metric
//! gradients, geodesic shooting in momentum and velocity form, horizontal
//! decomposition and lifting, path-energy matching, and the conserved
//! quantities and distance bounds that go with these metrics.

pub mod ambient;
pub mod calculus;
pub mod error;
pub mod geodesic;
pub mod geometry;
pub mod invariants;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod operators;
pub mod samples;
pub mod variations;

pub use ambient::Ambient;
pub use calculus::Grid;
pub use error::{Error, Result};
pub use geometry::{induced_geometry, Geometry, Immersion};
pub use metrics::{eval_metric, MetricAt, MetricSpec, WeightFunction};
pub use operators::{assemble_p, OperatorHandle};

/// Ambient vectors; planar curves keep z = 0.
pub type Vec3 = nalgebra::Vector3<f64>;
