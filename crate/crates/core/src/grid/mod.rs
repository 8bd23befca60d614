//! Domains, grid-sampled fields and the discrete operators acting on them.

mod domain;
pub mod expr;
mod field;
mod ops;
pub mod quad;

pub use domain::{
    build_domain, BoundingBox, CellPolygon, DomainGrid, DomainSpec, GridGeometry, NodeKind,
    PolyVertex, Shape, VertexId, EAST, MIN_RESOLUTION, NORTH, SOUTH, WEST,
};
pub use field::{BoundaryMode, FieldFile, ScalarField, VectorField};
pub use ops::{
    divergence, gradient, gradient_at, interpolate, interpolate_vector, laplacian, perp_gradient,
    stencil, Stencil,
};
pub use quad::{integrate, level_segments, superlevel_integrals, SuperlevelTable};
