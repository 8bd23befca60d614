//! Named incompressible test flows `u = ∇⊥ψ` with `ψ = 0` on ∂Ω.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elliptic::torsion;
use crate::error::{Error, Result};
use crate::grid::{expr::Expr, perp_gradient, BoundaryMode, DomainGrid, ScalarField, VectorField};

/// Stream functions are built from the bubble `b = τ⁰/max τ⁰`, which vanishes
/// on the boundary of any domain, and from coordinates `X, Y` rescaled to
/// `[0, 1]` over the shape's bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    Zero,
    /// `ψ = 0.1·sin(2πX)·sin(2πY)·b`, four counter-rotating cells.
    Cellular,
    /// `ψ = (2Y − 1)·b`.
    Shear,
    /// `ψ = τ⁰`, whose own exit time it leaves unchanged.
    Torsion,
    /// Stream function given by an expression in `x, y`; it must vanish on ∂Ω.
    Stream(String),
}

impl FromStr for FlowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zero" => FlowKind::Zero,
            "cellular" => FlowKind::Cellular,
            "shear" => FlowKind::Shear,
            "torsion" => FlowKind::Torsion,
            other => match other.strip_prefix("stream:") {
                Some(e) => {
                    Expr::parse(e)?;
                    FlowKind::Stream(e.to_string())
                }
                None => {
                    return Err(Error::InvalidArgument(format!("unknown flow {other:?}")))
                }
            },
        })
    }
}

impl std::fmt::Display for FlowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlowKind::Zero => f.write_str("zero"),
            FlowKind::Cellular => f.write_str("cellular"),
            FlowKind::Shear => f.write_str("shear"),
            FlowKind::Torsion => f.write_str("torsion"),
            FlowKind::Stream(e) => write!(f, "stream:{e}"),
        }
    }
}

fn unit_coords(grid: &DomainGrid) -> impl Fn(f64, f64) -> (f64, f64) {
    let [x0, x1, y0, y1] = grid.shape().extent().unwrap_or_else(|| {
        let b = grid.spec().bbox;
        [b.xmin, b.xmax, b.ymin, b.ymax]
    });
    move |x, y| ((x - x0) / (x1 - x0), (y - y0) / (y1 - y0))
}

pub fn stream_function(grid: &Arc<DomainGrid>, kind: &FlowKind) -> Result<ScalarField> {
    let psi = match kind {
        FlowKind::Zero => ScalarField::constant(grid, 0.0),
        FlowKind::Torsion => torsion(grid)?,
        FlowKind::Cellular | FlowKind::Shear => {
            let t = torsion(grid)?;
            let m = t.max();
            let unit = unit_coords(grid);
            let tau = std::f64::consts::TAU;
            let values = (0..grid.n_unknowns())
                .map(|u| {
                    let [x, y] = grid.position(u);
                    let (px, py) = unit(x, y);
                    let b = t.get(u) / m;
                    match kind {
                        FlowKind::Cellular => 0.1 * (tau * px).sin() * (tau * py).sin() * b,
                        _ => (2.0 * py - 1.0) * b,
                    }
                })
                .collect();
            ScalarField::new(grid, values, BoundaryMode::Dirichlet)?
        }
        FlowKind::Stream(src) => {
            let e = Expr::parse(src)?;
            ScalarField::from_fn(grid, |x, y| e.eval(x, y))
        }
    };
    Ok(psi.with_mode(BoundaryMode::Dirichlet))
}

/// `u = ∇⊥ψ` for the named flow.
pub fn velocity(grid: &Arc<DomainGrid>, kind: &FlowKind) -> Result<VectorField> {
    if *kind == FlowKind::Zero {
        return Ok(VectorField::zeros(grid));
    }
    Ok(perp_gradient(&stream_function(grid, kind)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::check_flow;
    use crate::grid::{build_domain, DomainSpec};

    #[test]
    fn named_flows_are_incompressible() {
        for spec in [
            DomainSpec::unit_disc(64),
            DomainSpec::ellipse(2.0, 1.0, 64),
            DomainSpec::unit_square(64),
        ] {
            let g = build_domain(spec).unwrap();
            for kind in [FlowKind::Cellular, FlowKind::Shear, FlowKind::Torsion] {
                let u = velocity(&g, &kind).unwrap();
                assert!(u.max_norm() > 0.0);
                assert!(check_flow(&u).divergence_free, "{kind}");
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for s in ["zero", "cellular", "shear", "torsion", "stream:sin(pi*x)*sin(pi*y)/10"] {
            assert_eq!(s.parse::<FlowKind>().unwrap().to_string(), s);
        }
        assert!("vortex".parse::<FlowKind>().is_err());
        assert!("stream:sin(".parse::<FlowKind>().is_err());
    }
}
