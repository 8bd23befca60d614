//! Exit times of diffusions with incompressible drift on planar domains.

pub mod elliptic;
pub mod critpoint;
pub mod error;
pub mod flows;
pub mod freidlin;
pub mod grid;
pub mod levelset;
pub mod montecarlo;
pub mod numerics;
pub mod rearrange;
pub mod report;

pub use error::{Error, Result};
pub use report::{Check, Relation, VerificationReport};
pub use grid::{
    build_domain, BoundaryMode, DomainGrid, DomainSpec, ScalarField, Shape, VectorField,
};
