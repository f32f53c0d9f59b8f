//! Tensor-product spline spaces on the reference cube and the Greville
//! control graph that carries the tree-cotree gauge.

mod basis;
mod graph;

use thiserror::Error;

pub(crate) use basis::{cell_rule, for_each_cell_function, local_value_curl};
pub use basis::{gauss_legendre, make_spaces, CurlSample, CurlSpace, KnotVector, ScalarSpace};
pub use graph::{control_graph, discrete_gradient, tag_graph, ControlGraph, GraphTags, LocalEdge};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("degree {0} is not supported (expected 1, 2 or 3)")]
    UnsupportedDegree(usize),
    #[error("at least one cell per direction is required")]
    NoCells,
    #[error("interface {a:?} <-> {b:?}: glued control points do not coincide")]
    OrientationMismatch {
        a: crate::geometry::PatchFacet,
        b: crate::geometry::PatchFacet,
    },
}
