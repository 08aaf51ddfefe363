//! Progressive point-based neural light fields.
//!
//! A ray is parameterized by its intersections with two planes, sampled at
//! fixed depths, and a staged set of SIREN subnetworks predicts density and
//! color for every sample in one forward pass. Training starts with fully
//! disconnected per-depth subnetworks and merges them stage by stage while
//! preserving the rendered function exactly; multi-view consistency
//! penalties on the light field's input Jacobian keep geometry coherent.

pub mod diffcore;
pub mod error;
pub mod eval;
pub mod lfnet;
pub mod losses;
pub mod real;
pub mod rays;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use real::{Precision, Real};
