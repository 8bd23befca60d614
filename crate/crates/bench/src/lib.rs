//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use exitlab::elliptic::torsion;
use exitlab::{build_domain, DomainGrid, DomainSpec, ScalarField};

pub fn ellipse(n: usize) -> Arc<DomainGrid> {
    build_domain(DomainSpec::ellipse(2.0, 1.0, n)).expect("ellipse grid")
}

pub fn disc(n: usize) -> Arc<DomainGrid> {
    build_domain(DomainSpec::unit_disc(n)).expect("disc grid")
}

/// Torsion function of the 2:1 ellipse, the usual stream function input.
pub fn ellipse_torsion(n: usize) -> ScalarField {
    torsion(&ellipse(n)).expect("torsion solve")
}
