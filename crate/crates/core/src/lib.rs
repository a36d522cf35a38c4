//! Joint direction-of-arrival and power spectrum estimation from an array
//! that keeps only some antennas and only some time samples per frame.
//!
//! The core is generic over the real scalar ([`scalar::Real`], implemented
//! for `f32` and `f64`); geometry checks run on exact rationals. The aliases
//! below fix the scalar for the common cases.

pub mod cli;
pub mod config;
pub mod estimate;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod simulate;

pub use geometry::Rational;
pub use scalar::Real;

pub type Matrix = linalg::CMatrix<f64>;
pub type Matrix32 = linalg::CMatrix<f32>;
pub type Grid = model::AngularGrid<f64>;
pub type Grid32 = model::AngularGrid<f32>;
pub type Spectrum = estimate::SpectrumMatrix<f64>;
pub type Spectrum32 = estimate::SpectrumMatrix<f32>;
pub type Design = pipeline::Design<f64>;
pub type Design32 = pipeline::Design<f32>;
pub type Snapshots = simulate::SnapshotBlocks<f64>;
pub type Snapshots32 = simulate::SnapshotBlocks<f32>;
