//! Discrete differential operators and interpolation on cut-cell grids.

use super::domain::{DomainGrid, VertexId, EAST, NORTH, SOUTH, WEST};
use super::field::{BoundaryMode, ScalarField, VectorField};
use crate::error::{Error, Result};

/// Sample at distance `d` from a node along one arm.
#[derive(Clone, Copy)]
struct Arm {
    d: f64,
    v: f64,
}

#[inline]
fn arm(f: &ScalarField, u: usize, dir: usize, h: f64) -> Option<Arm> {
    let g = f.grid();
    match g.neighbor(u, dir) {
        Some(n) => Some(Arm { d: h, v: f.get(n) }),
        None => match f.mode() {
            BoundaryMode::Dirichlet => Some(Arm {
                d: g.arms(u)[dir] * h,
                v: 0.0,
            }),
            BoundaryMode::Free => None,
        },
    }
}

/// Second neighbor along `dir` for one-sided stencils of free fields.
#[inline]
fn far(f: &ScalarField, u: usize, dir: usize) -> Option<(f64, f64)> {
    let g = f.grid();
    let n = g.neighbor(u, dir)?;
    let nn = g.neighbor(n, dir)?;
    Some((f.get(n), f.get(nn)))
}

fn first_derivative(f: &ScalarField, u: usize, plus: usize, minus: usize, h: f64) -> f64 {
    let f0 = f.get(u);
    match (arm(f, u, minus, h), arm(f, u, plus, h)) {
        (Some(m), Some(p)) => {
            if m.d == h && p.d == h {
                (p.v - m.v) / (2.0 * h)
            } else {
                let (a, b) = (m.d, p.d);
                -b / (a * (a + b)) * m.v + (b - a) / (a * b) * f0 + a / (b * (a + b)) * p.v
            }
        }
        (Some(m), None) => match far(f, u, minus) {
            Some((f1, f2)) => (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h),
            None => (f0 - m.v) / m.d,
        },
        (None, Some(p)) => match far(f, u, plus) {
            Some((f1, f2)) => (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h),
            None => (p.v - f0) / p.d,
        },
        (None, None) => 0.0,
    }
}

fn second_derivative(f: &ScalarField, u: usize, plus: usize, minus: usize, h: f64) -> f64 {
    let f0 = f.get(u);
    match (arm(f, u, minus, h), arm(f, u, plus, h)) {
        (Some(m), Some(p)) => {
            let (a, b) = (m.d, p.d);
            2.0 * (p.v / (b * (a + b)) + m.v / (a * (a + b)) - f0 / (a * b))
        }
        (Some(_), None) => far(f, u, minus)
            .map(|(f1, f2)| (f0 - 2.0 * f1 + f2) / (h * h))
            .unwrap_or(0.0),
        (None, Some(_)) => far(f, u, plus)
            .map(|(f1, f2)| (f0 - 2.0 * f1 + f2) / (h * h))
            .unwrap_or(0.0),
        (None, None) => 0.0,
    }
}

/// `∂f/∂x` and `∂f/∂y` at node `u`.
pub fn gradient_at(f: &ScalarField, u: usize) -> [f64; 2] {
    let g = f.grid();
    [
        first_derivative(f, u, EAST, WEST, g.hx()),
        first_derivative(f, u, NORTH, SOUTH, g.hy()),
    ]
}

/// Centered differences where both axis neighbors are inside, second-order
/// cut-fraction stencils next to the boundary.
pub fn gradient(f: &ScalarField) -> VectorField {
    let n = f.grid().n_unknowns();
    let (mut gx, mut gy) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for u in 0..n {
        let [a, b] = gradient_at(f, u);
        gx.push(a);
        gy.push(b);
    }
    VectorField::new(f.grid(), gx, gy).expect("finite gradient of a finite field")
}

/// `∇⊥f = (−∂f/∂y, ∂f/∂x)`.
pub fn perp_gradient(f: &ScalarField) -> VectorField {
    let g = gradient(f);
    let x = g.ys().iter().map(|v| -v).collect();
    VectorField::new(f.grid(), x, g.xs().to_vec()).expect("finite")
}

/// Five-point Laplacian with Shortley–Weller arms at boundary-adjacent nodes.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid();
    let values = (0..g.n_unknowns())
        .map(|u| {
            second_derivative(f, u, EAST, WEST, g.hx())
                + second_derivative(f, u, NORTH, SOUTH, g.hy())
        })
        .collect();
    ScalarField::new(g, values, BoundaryMode::Free).expect("finite laplacian")
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid();
    let (vx, vy) = (v.component(0), v.component(1));
    let values = (0..g.n_unknowns())
        .map(|u| {
            first_derivative(&vx, u, EAST, WEST, g.hx())
                + first_derivative(&vy, u, NORTH, SOUTH, g.hy())
        })
        .collect();
    ScalarField::new(g, values, BoundaryMode::Free).expect("finite divergence")
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)`.
fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det.abs() < 1e-300 {
        return None;
    }
    let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    Some([l1, l2, 1.0 - l1 - l2])
}

/// Interpolation stencil: up to four polygon vertices with weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub ids: [VertexId; 4],
    pub weights: [f64; 4],
    pub len: usize,
}

impl Stencil {
    fn single(id: VertexId) -> Self {
        Self {
            ids: [id; 4],
            weights: [1.0, 0.0, 0.0, 0.0],
            len: 1,
        }
    }

    #[inline]
    pub fn apply(&self, value: impl Fn(VertexId) -> f64) -> f64 {
        (0..self.len).map(|k| self.weights[k] * value(self.ids[k])).sum()
    }
}

/// Interpolation weights at a point of Ω.
///
/// Bilinear in full cells; in cut cells, linear on a fan triangulation of the
/// cut-cell polygon, whose boundary vertices carry the boundary value.
pub fn stencil(grid: &DomainGrid, x: f64, y: f64) -> Result<Stencil> {
    if !grid.contains(x, y) {
        return Err(Error::OutsideDomain { x, y });
    }
    let geom = grid.geometry();
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let fx = snap((x - geom.x0) / geom.hx);
    let fy = snap((y - geom.y0) / geom.hy);
    if fx.fract() == 0.0 && fy.fract() == 0.0 {
        if let Some(u) = grid.unknown(fx as usize, fy as usize) {
            return Ok(Stencil::single(VertexId::Node(u as u32)));
        }
    }
    let i = fx.floor().clamp(0.0, (geom.nx - 1) as f64) as usize;
    let j = fy.floor().clamp(0.0, (geom.ny - 1) as f64) as usize;
    let corners = [
        grid.unknown(i, j),
        grid.unknown(i + 1, j),
        grid.unknown(i + 1, j + 1),
        grid.unknown(i, j + 1),
    ];
    if let [Some(a), Some(b), Some(c), Some(d)] = corners {
        let s = (fx - i as f64).clamp(0.0, 1.0);
        let t = (fy - j as f64).clamp(0.0, 1.0);
        return Ok(Stencil {
            ids: [a, b, c, d].map(|u| VertexId::Node(u as u32)),
            weights: [
                (1.0 - s) * (1.0 - t),
                s * (1.0 - t),
                s * t,
                (1.0 - s) * t,
            ],
            len: 4,
        });
    }
    let p = [x, y];
    let mut best: Option<(f64, Stencil)> = None;
    for poly in grid.cell_polygons(i, j) {
        let vs = &poly.vertices;
        for k in 1..vs.len().saturating_sub(1) {
            let tri = [&vs[0], &vs[k], &vs[k + 1]];
            let Some(l) = barycentric(
                p,
                [tri[0].x, tri[0].y],
                [tri[1].x, tri[1].y],
                [tri[2].x, tri[2].y],
            ) else {
                continue;
            };
            let worst = l.iter().copied().fold(f64::INFINITY, f64::min);
            if best.as_ref().map_or(true, |(w, _)| worst > *w) {
                // Points between a polygon chord and the curved boundary fall
                // slightly outside every triangle; clamp to the nearest one.
                let lc = l.map(|c| c.max(0.0));
                let sum: f64 = lc.iter().sum();
                best = Some((
                    worst,
                    Stencil {
                        ids: [tri[0].id, tri[1].id, tri[2].id, tri[2].id],
                        weights: [lc[0] / sum, lc[1] / sum, lc[2] / sum, 0.0],
                        len: 3,
                    },
                ));
            }
        }
    }
    best.map(|(_, s)| s).ok_or(Error::OutsideDomain { x, y })
}

/// Interpolates `f` at a point of Ω; errors outside Ω.
pub fn interpolate(f: &ScalarField, x: f64, y: f64) -> Result<f64> {
    Ok(stencil(f.grid(), x, y)?.apply(|id| f.vertex_value(id)))
}

/// Interpolates both components of a vector field; boundary points take the
/// adjacent node value.
pub fn interpolate_vector(v: &VectorField, x: f64, y: f64) -> Result<[f64; 2]> {
    let s = stencil(v.grid(), x, y)?;
    Ok([
        s.apply(|id| v.xs()[id.unknown()]),
        s.apply(|id| v.ys()[id.unknown()]),
    ])
}
