//! Volume correlation between nominal CAD voxel volumes and XCT scans.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`volume`] – dense grids, trilinear warping, patch tiling and blending, VVOL I/O.
//! * [`tpms`] – gyroid phantoms with known ground-truth deformations.
//! * [`preprocess`] – thresholding, morphology, component isolation and dataset assembly.
//! * [`regnet`] – the encoder/decoder registration network with hand-written backprop.
//! * [`dvc`] – a node-based local-correlation baseline.
//! * [`metrics`] – Dice, binary difference maps, endpoint error and slice exports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dvc;
pub mod error;
pub mod metrics;
pub mod preprocess;
pub mod real;
pub mod regnet;
pub mod tpms;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryVolume, Dims, DisplacementField, ScalarVolume, VoxelSize};
