//! Dual-primal tearing and interconnecting for 3D magnetostatics on
//! multipatch spline discretizations, gauged by a weighted tree-cotree
//! decomposition.
//!
//! The pipeline runs geometry → partition → control graph → gauge →
//! assembly → dual-primal solve → error evaluation; see [`harness::run_case`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod fetidp;
pub mod gauge;
pub mod geometry;
pub mod harness;
pub mod par;
pub mod partition;
pub mod sparse;
pub mod splines;

pub mod acceptance;
