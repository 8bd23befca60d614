//! Solver for `−Δτ + A u·∇τ = f` with homogeneous Dirichlet data.

pub mod sparse;

use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    divergence, integrate, BoundaryMode, DomainGrid, NodeKind, ScalarField, VectorField, EAST,
    NORTH, SOUTH, WEST,
};
use sparse::{bicgstab, gmres, relative_residual, Csr, Ilu0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Centered,
    Upwind,
    Auto,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Centered => "centered",
            Scheme::Upwind => "upwind",
            Scheme::Auto => "auto",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(Scheme::Centered),
            "upwind" => Ok(Scheme::Upwind),
            "auto" => Ok(Scheme::Auto),
            _ => Err(Error::InvalidArgument(format!("unknown scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub amplitude: f64,
    pub scheme: Scheme,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            scheme: Scheme::Auto,
            tolerance: 1e-10,
            max_iterations: 5000,
        }
    }
}

impl SolveOptions {
    pub fn with_amplitude(amplitude: f64) -> Self {
        Self {
            amplitude,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "amplitude must be finite and non-negative, got {}",
                self.amplitude
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-4) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must lie in (0, 1e-4], got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Discrete incompressibility and tangency of a sampled flow.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowCheck {
    /// Max divergence over nodes whose 3×3 neighborhood is inside Ω.
    pub divergence: f64,
    /// Max normal component at boundary-adjacent nodes.
    pub normal: f64,
    pub max_speed: f64,
    pub divergence_free: bool,
    pub tangential: bool,
}

pub fn check_flow(u: &VectorField) -> FlowCheck {
    let grid = u.grid();
    let div = divergence(u);
    let max_speed = u.max_norm();
    let mut d = 0.0_f64;
    let mut nrm = 0.0_f64;
    for k in 0..grid.n_unknowns() {
        if grid.is_deep_interior(k) {
            d = d.max(div.get(k).abs());
        }
        if grid.kind(k) == NodeKind::BoundaryAdjacent {
            let [x, y] = grid.position(k);
            let [gx, gy] = grid.shape().level_gradient(x, y);
            let gn = gx.hypot(gy);
            if gn > 0.0 {
                let [ux, uy] = u.get(k);
                nrm = nrm.max((ux * gx + uy * gy).abs() / gn);
            }
        }
    }
    FlowCheck {
        divergence: d,
        normal: nrm,
        max_speed,
        divergence_free: d <= 1e-8 * max_speed.max(1.0),
        tangential: nrm <= 1e-6 * max_speed,
    }
}

#[derive(Debug, Clone)]
pub struct ExitTimeSolution {
    pub tau: ScalarField,
    pub residual: f64,
    pub iterations: usize,
    /// Scheme actually used for the advection term.
    pub scheme: Scheme,
    pub upwinded: bool,
    pub peclet: f64,
    pub flow: Option<FlowCheck>,
}

impl ExitTimeSolution {
    /// Flag raised when the flow failed the incompressibility or tangency check.
    pub fn flow_warning(&self) -> bool {
        self.flow
            .map_or(false, |f| !(f.divergence_free && f.tangential))
    }
}

/// Grid Péclet number `A‖u‖∞h/2`.
pub fn grid_peclet(grid: &DomainGrid, u: &VectorField, amplitude: f64) -> f64 {
    amplitude * u.max_norm() * grid.hx().max(grid.hy()) / 2.0
}

fn assemble(grid: &DomainGrid, drift: Option<(&VectorField, f64)>, upwind: bool) -> Csr {
    let n = grid.n_unknowns();
    let mut rows = Vec::with_capacity(n);
    for p in 0..n {
        let mut row = Vec::with_capacity(5);
        let arms = grid.arms(p);
        let vel = drift.map(|(u, a)| {
            let [ux, uy] = u.get(p);
            [a * ux, a * uy]
        });
        for (axis, (plus, minus, h)) in [(EAST, WEST, grid.hx()), (NORTH, SOUTH, grid.hy())]
            .into_iter()
            .enumerate()
        {
            let a = arms[minus] * h;
            let b = arms[plus] * h;
            let mut cm = -2.0 / (a * (a + b));
            let mut cp = -2.0 / (b * (a + b));
            let mut c0 = 2.0 / (a * b);
            if let Some(v) = vel {
                let c = v[axis];
                if upwind {
                    if c > 0.0 {
                        c0 += c / a;
                        cm -= c / a;
                    } else {
                        c0 -= c / b;
                        cp += c / b;
                    }
                } else {
                    cm -= c * b / (a * (a + b));
                    c0 += c * (b - a) / (a * b);
                    cp += c * a / (b * (a + b));
                }
            }
            row.push((p, c0));
            if let Some(m) = grid.neighbor(p, minus) {
                row.push((m, cm));
            }
            if let Some(q) = grid.neighbor(p, plus) {
                row.push((q, cp));
            }
        }
        rows.push(row);
    }
    Csr::from_rows(rows)
}

/// Sparse LU with iterative refinement.
fn direct(a: &Csr, b: &[f64], tol: f64) -> Option<(Vec<f64>, usize, f64)> {
    let mut trip = Vec::with_capacity(a.data.len());
    for i in 0..a.n {
        for k in a.indptr[i]..a.indptr[i + 1] {
            trip.push(Triplet::new(i, a.indices[k], a.data[k]));
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.n, a.n, &trip).ok()?;
    let lu = m.sp_lu().ok()?;
    let mut x = lu.solve(Col::<f64>::from_fn(a.n, |i| b[i]));
    let mut xv: Vec<f64> = (0..a.n).map(|i| x[i]).collect();
    let mut res = relative_residual(a, &xv, b);
    let mut steps = 0;
    while res > tol && steps < 5 {
        let mut r = vec![0.0; a.n];
        a.matvec(&xv, &mut r);
        let dx = lu.solve(Col::<f64>::from_fn(a.n, |i| b[i] - r[i]));
        x += &dx;
        let cand: Vec<f64> = (0..a.n).map(|i| x[i]).collect();
        let cres = relative_residual(a, &cand, b);
        steps += 1;
        if !(cres < res) {
            break;
        }
        xv = cand;
        res = cres;
    }
    xv.iter().all(|v| v.is_finite()).then_some((xv, steps, res))
}

fn krylov(a: &Csr, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, usize, f64)> {
    let m = Ilu0::new(a)?;
    let mut x = vec![0.0; a.n];
    let s = bicgstab(a, &m, b, &mut x, opts.tolerance, opts.max_iterations);
    if s.residual <= opts.tolerance && x.iter().all(|v| v.is_finite()) {
        return Ok((x, s.iterations, s.residual));
    }
    let mut x = vec![0.0; a.n];
    let g = gmres(a, &m, b, &mut x, opts.tolerance, 60, opts.max_iterations);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear solve"));
    }
    let res = relative_residual(a, &x, b);
    if res <= opts.tolerance {
        Ok((x, s.iterations + g.iterations, res))
    } else {
        Err(Error::NotConverged {
            residual: res,
            iterations: s.iterations + g.iterations,
        })
    }
}

fn linear_solve(a: &Csr, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, usize, f64)> {
    match direct(a, b, opts.tolerance) {
        Some(sol) if sol.2 <= opts.tolerance => Ok(sol),
        _ => krylov(a, b, opts),
    }
}

/// Solves `−Δτ + A u·∇τ = rhs`, `τ = 0` on ∂Ω.
///
/// `Scheme::Auto` runs the centered scheme, which keeps the exact discrete
/// identity `∇⊥ψ·∇_h ψ = 0`, and falls back to first-order upwinding when the
/// grid Péclet exceeds one and the centered solution violates the maximum
/// principle or the solver fails.
pub fn solve_advection_diffusion(
    grid: &Arc<DomainGrid>,
    u: Option<&VectorField>,
    rhs: &[f64],
    opts: &SolveOptions,
) -> Result<ExitTimeSolution> {
    opts.validate()?;
    if rhs.len() != grid.n_unknowns() {
        return Err(Error::GridMismatch("right-hand side length".into()));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    if let Some(u) = u {
        if u.grid().geometry() != grid.geometry() {
            return Err(Error::GridMismatch("flow lives on a different grid".into()));
        }
    }
    let drift = u.filter(|_| opts.amplitude > 0.0).map(|u| (u, opts.amplitude));
    let peclet = drift.map_or(0.0, |(u, a)| grid_peclet(grid, u, a));
    let flow = drift.map(|(u, _)| check_flow(u));

    let run = |upwind: bool| -> Result<(Vec<f64>, usize, f64)> {
        let a = assemble(grid, drift, upwind);
        linear_solve(&a, rhs, opts)
    };
    let rhs_nonneg = rhs.iter().all(|&v| v >= 0.0);
    let (scheme, (x, iterations, residual)) = match opts.scheme {
        Scheme::Centered => (Scheme::Centered, run(false)?),
        Scheme::Upwind => (Scheme::Upwind, run(true)?),
        Scheme::Auto => {
            if drift.is_none() || peclet <= 1.0 {
                (Scheme::Centered, run(false)?)
            } else {
                match run(false) {
                    Ok(sol) if !rhs_nonneg || min_principle_holds(&sol.0) => {
                        (Scheme::Centered, sol)
                    }
                    _ => (Scheme::Upwind, run(true)?),
                }
            }
        }
    };
    let tau = ScalarField::new(grid, x, BoundaryMode::Dirichlet)?;
    Ok(ExitTimeSolution {
        tau,
        residual,
        iterations,
        scheme,
        upwinded: scheme == Scheme::Upwind,
        peclet,
        flow,
    })
}

fn min_principle_holds(x: &[f64]) -> bool {
    let max = x.iter().copied().fold(0.0, f64::max);
    x.iter().all(|&v| v >= -1e-10 * max.max(1.0))
}

/// Expected exit time: solves `−Δτ + A u·∇τ = 1`, `τ = 0` on ∂Ω.
pub fn solve_exit_time(
    grid: &Arc<DomainGrid>,
    u: &VectorField,
    opts: &SolveOptions,
) -> Result<ExitTimeSolution> {
    let rhs = vec![1.0; grid.n_unknowns()];
    solve_advection_diffusion(grid, Some(u), &rhs, opts)
}

/// Torsion function `τ⁰`: `−Δτ = 1`, `τ = 0` on ∂Ω.
pub fn torsion(grid: &Arc<DomainGrid>) -> Result<ScalarField> {
    let rhs = vec![1.0; grid.n_unknowns()];
    Ok(solve_advection_diffusion(grid, None, &rhs, &SolveOptions::default())?.tau)
}

/// `‖f‖_p` over Ω; `p = ∞` is the nodal maximum of `|f|`.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.values().iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    let g = f.map(|v| v.abs().powf(p));
    Ok(integrate(&g).max(0.0).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, perp_gradient, DomainSpec};
    use std::f64::consts::PI;

    #[test]
    fn disc_torsion_matches_closed_form() {
        let g = build_domain(DomainSpec::unit_disc(128)).unwrap();
        let t = torsion(&g).unwrap();
        let err = (0..g.n_unknowns())
            .map(|u| {
                let [x, y] = g.position(u);
                (t.get(u) - (1.0 - x * x - y * y) / 4.0).abs()
            })
            .fold(0.0, f64::max);
        // Quadratic fields are reproduced exactly by Shortley–Weller.
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn options_are_validated() {
        let g = build_domain(DomainSpec::unit_disc(32)).unwrap();
        let u = VectorField::zeros(&g);
        let mut o = SolveOptions::default();
        o.tolerance = 1e-3;
        assert!(solve_exit_time(&g, &u, &o).is_err());
        o.tolerance = 1e-10;
        o.amplitude = -1.0;
        assert!(solve_exit_time(&g, &u, &o).is_err());
    }

    #[test]
    fn lp_norms_of_disc_torsion() {
        let g = build_domain(DomainSpec::unit_disc(256)).unwrap();
        let t = torsion(&g).unwrap();
        assert!((lp_norm(&t, f64::INFINITY).unwrap() - 0.25).abs() < 2e-4);
        assert!((lp_norm(&t, 1.0).unwrap() - PI / 8.0).abs() < 1e-3);
        let one = ScalarField::constant(&g, 1.0);
        assert!((lp_norm(&one, 1.0).unwrap() - PI).abs() < 1e-3);
        assert!(lp_norm(&t, 0.5).is_err());
    }

    #[test]
    fn own_flow_leaves_torsion_invariant_with_centered_scheme() {
        let g = build_domain(DomainSpec::unit_disc(64)).unwrap();
        let t0 = torsion(&g).unwrap();
        let u0 = perp_gradient(&t0);
        for a in [1.0, 100.0, 1e4] {
            let mut o = SolveOptions::with_amplitude(a);
            o.scheme = Scheme::Centered;
            let s = solve_exit_time(&g, &u0, &o).unwrap();
            assert!(s.tau.max_abs_diff(&t0) < 1e-8, "A={a}");
        }
    }

    #[test]
    fn upwind_scheme_satisfies_the_maximum_principle() {
        let g = build_domain(DomainSpec::unit_square(48)).unwrap();
        let u = VectorField::from_fn(&g, |x, y| {
            let s = PI;
            [
                -s * (s * x).sin() * (s * y).cos(),
                s * (s * x).cos() * (s * y).sin(),
            ]
        });
        let mut o = SolveOptions::with_amplitude(1e3);
        o.scheme = Scheme::Upwind;
        let s = solve_exit_time(&g, &u, &o).unwrap();
        assert!(s.tau.min() >= -1e-10);
        assert!(s.upwinded);
    }
}
