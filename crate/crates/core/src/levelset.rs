//! Level-set geometry of scalar fields: super-level areas, contours, the
//! coefficients `T(h) = ∮ dσ/|∇ψ|` and `p(h) = ∮ |∇ψ| dσ`, critical points.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    gradient, laplacian, level_segments, quad::CrossingKey, stencil, superlevel_integrals,
    BoundaryMode, ScalarField, VectorField,
};
use crate::numerics::isotonic_nonincreasing;

/// Default number of level intervals.
pub const DEFAULT_LEVELS: usize = 200;

/// Fraction of the level range below the maximum treated asymptotically.
pub const TOP_FRACTION: f64 = 0.02;

/// Relative tolerance on upward jumps of the raw area curve.
const MONOTONE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct AreaProfile {
    /// Levels `h_0 = 0 < … < h_K = M`.
    pub levels: Vec<f64>,
    /// Monotonized areas `|{ψ > h_k}|`.
    pub area: Vec<f64>,
    pub raw_area: Vec<f64>,
    /// `T_k = −a′(h_k)`.
    pub t: Vec<f64>,
    /// `p_k = −∫_{ψ > h_k} Δψ`.
    pub p: Vec<f64>,
    pub max: f64,
    pub domain_area: f64,
}

impl AreaProfile {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Index of the last level at or below `(1 − TOP_FRACTION)·M`.
    pub fn last_regular(&self) -> usize {
        let cut = (1.0 - TOP_FRACTION) * self.max;
        self.levels.partition_point(|&h| h <= cut * (1.0 + 1e-12)) - 1
    }

    /// Writes `h,a,T,p` rows, optionally followed by a τ̄ column.
    pub fn write_csv(&self, mut w: impl std::io::Write, tau_bar: Option<&[f64]>) -> Result<()> {
        writeln!(w, "h,a,T,p,tau_bar")?;
        for k in 0..self.len() {
            let tb = tau_bar.map_or(String::new(), |t| t[k].to_string());
            writeln!(
                w,
                "{},{},{},{},{}",
                self.levels[k], self.area[k], self.t[k], self.p[k], tb
            )?;
        }
        Ok(())
    }
}

/// Central differences of a sampled function on a uniform grid.
pub(crate) fn derivative_uniform(y: &[f64], dh: f64) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|k| {
            if n < 2 {
                0.0
            } else if k == 0 {
                (y[1] - y[0]) / dh
            } else if k == n - 1 {
                (y[n - 1] - y[n - 2]) / dh
            } else {
                (y[k + 1] - y[k - 1]) / (2.0 * dh)
            }
        })
        .collect()
}

/// Super-level areas and Freidlin coefficients on `k_levels + 1` uniform levels.
///
/// `ψ` is treated as vanishing on ∂Ω.
pub fn area_profile(psi: &ScalarField, k_levels: usize) -> Result<AreaProfile> {
    if k_levels < 2 {
        return Err(Error::InvalidArgument("need at least 2 level intervals".into()));
    }
    let psi = psi.clone().with_mode(BoundaryMode::Dirichlet);
    let max = psi.max();
    if !(max > 0.0) {
        return Err(Error::InvalidArgument("field has no positive values".into()));
    }
    if psi.min() < -1e-8 * max {
        return Err(Error::InvalidArgument(format!(
            "field must be non-negative, min {}",
            psi.min()
        )));
    }
    let dh = max / k_levels as f64;
    let mut levels: Vec<f64> = (0..=k_levels).map(|k| k as f64 * dh).collect();
    levels[k_levels] = max;
    let neg_lap = laplacian(&psi).map(|v| -v);
    let table = superlevel_integrals(&psi, &levels, &[&neg_lap]);
    let raw = table.areas;
    let domain_area = psi.grid().area();
    let violation = raw
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    if violation > MONOTONE_TOL * domain_area {
        return Err(Error::NonMonotoneArea { violation });
    }
    let area = isotonic_nonincreasing(&raw);
    let t = derivative_uniform(&area, dh)
        .into_iter()
        .map(|d| (-d).max(0.0))
        .collect();
    Ok(AreaProfile {
        levels,
        area,
        raw_area: raw,
        t,
        p: table.integrals[0].clone(),
        max,
        domain_area,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Contour {
    pub points: Vec<[f64; 2]>,
    /// `|∇ψ|` at segment midpoints; `grad_mid[k]` belongs to segment `k → k+1`.
    pub grad_mid: Vec<f64>,
    pub closed: bool,
}

impl Contour {
    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1])).sum()
    }

    /// Signed enclosed area (positive for counter-clockwise curves).
    pub fn signed_area(&self) -> f64 {
        self.segments()
            .map(|(a, b)| 0.5 * (a[0] * b[1] - b[0] * a[1]))
            .sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        let m = if self.closed { n } else { n.saturating_sub(1) };
        (0..m).map(move |k| (self.points[k], self.points[(k + 1) % n]))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContourSet {
    pub level: f64,
    pub curves: Vec<Contour>,
}

impl ContourSet {
    pub fn enclosed_area(&self) -> f64 {
        self.curves.iter().map(Contour::signed_area).sum()
    }

    pub fn write_csv(&self, mut w: impl std::io::Write, header: bool) -> Result<()> {
        if header {
            writeln!(w, "level,curve_id,x,y")?;
        }
        for (id, c) in self.curves.iter().enumerate() {
            for p in &c.points {
                writeln!(w, "{},{},{},{}", self.level, id, p[0], p[1])?;
            }
        }
        Ok(())
    }
}

/// Chains cut-cell level segments into polylines with `{ψ > h}` on the left.
fn chain(psi: &ScalarField, h: f64) -> Vec<(Vec<[f64; 2]>, bool)> {
    let segs = level_segments(psi, h);
    let mut by_start: HashMap<CrossingKey, Vec<usize>> = HashMap::with_capacity(segs.len());
    for (k, s) in segs.iter().enumerate() {
        by_start.entry(s.from_key).or_default().push(k);
    }
    let mut used = vec![false; segs.len()];
    let mut out = Vec::new();
    for start in 0..segs.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut pts = vec![segs[start].from];
        let mut cur = start;
        let closed = loop {
            pts.push(segs[cur].to);
            let key = segs[cur].to_key;
            if key == segs[start].from_key {
                pts.pop();
                break true;
            }
            let next = by_start
                .get(&key)
                .and_then(|c| c.iter().copied().find(|&k| !used[k]));
            match next {
                Some(n) => {
                    used[n] = true;
                    cur = n;
                }
                None => break false,
            }
        };
        out.push((pts, closed));
    }
    out
}

/// Contours of `ψ` at level `h`, which must lie strictly between 0 and `max ψ`.
pub fn contour_extract(psi: &ScalarField, h: f64) -> Result<ContourSet> {
    let grad = gradient(&psi.clone().with_mode(BoundaryMode::Dirichlet));
    contour_with_gradient(psi, &grad, h)
}

pub(crate) fn contour_with_gradient(
    psi: &ScalarField,
    grad: &VectorField,
    h: f64,
) -> Result<ContourSet> {
    let max = psi.max();
    if !(h > 0.0 && h < max) {
        return Err(Error::LevelOutOfRange { level: h, max });
    }
    let psi = psi.clone().with_mode(BoundaryMode::Dirichlet);
    let grid = psi.grid();
    let curves = chain(&psi, h)
        .into_iter()
        .map(|(points, closed)| {
            let n = points.len();
            let m = if closed { n } else { n - 1 };
            let grad_mid = (0..m)
                .map(|k| {
                    let (a, b) = (points[k], points[(k + 1) % n]);
                    let (x, y) = (0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]));
                    match stencil(grid, x, y) {
                        Ok(s) => {
                            let gx = s.apply(|id| grad.xs()[id.unknown()]);
                            let gy = s.apply(|id| grad.ys()[id.unknown()]);
                            gx.hypot(gy)
                        }
                        Err(_) => 0.0,
                    }
                })
                .collect();
            Contour {
                points,
                grad_mid,
                closed,
            }
        })
        .collect();
    Ok(ContourSet { level: h, curves })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralMode {
    /// `∮ |∇ψ| dσ`
    Grad,
    /// `∮ dσ / |∇ψ|`
    InvGrad,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryIntegral {
    pub value: f64,
    /// Set when `|∇ψ|` drops below `1e-3·max|∇ψ|` somewhere on the contour.
    pub near_critical: bool,
    pub min_grad: f64,
}

/// Midpoint quadrature of `|∇ψ|^{±1}` along the contours at level `h`.
pub fn boundary_integral(psi: &ScalarField, h: f64, mode: IntegralMode) -> Result<BoundaryIntegral> {
    let grad = gradient(&psi.clone().with_mode(BoundaryMode::Dirichlet));
    boundary_integral_with(psi, &grad, h, mode)
}

pub(crate) fn boundary_integral_with(
    psi: &ScalarField,
    grad: &VectorField,
    h: f64,
    mode: IntegralMode,
) -> Result<BoundaryIntegral> {
    let set = contour_with_gradient(psi, grad, h)?;
    let eps = 1e-3 * grad.max_norm();
    let mut value = 0.0;
    let mut min_grad = f64::INFINITY;
    for c in &set.curves {
        for ((a, b), &g) in c.segments().zip(&c.grad_mid) {
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            min_grad = min_grad.min(g);
            value += match mode {
                IntegralMode::Grad => g * len,
                IntegralMode::InvGrad => len / g.max(1e-300),
            };
        }
    }
    Ok(BoundaryIntegral {
        value,
        near_critical: min_grad < eps,
        min_grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Max,
    Saddle,
    Min,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriticalPoint {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub kind: CriticalKind,
}

/// Interior critical points by comparison with the 8-neighbor ring, located
/// to sub-cell accuracy by a local quadratic fit.
pub fn critical_points(psi: &ScalarField) -> Vec<CriticalPoint> {
    let grid = psi.grid();
    let ring: [(isize, isize); 8] = [
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
    ];
    // Ties are broken by unknown index so plateaus do not produce spurious
    // extrema.
    let above = |a: usize, b: usize| {
        let (va, vb) = (psi.get(a), psi.get(b));
        va > vb || (va == vb && a > b)
    };
    let mut out = Vec::new();
    for u in 0..grid.n_unknowns() {
        if !grid.is_deep_interior(u) {
            continue;
        }
        let (i, j) = grid.node_of(u);
        let nb: Vec<usize> = ring
            .iter()
            .map(|&(di, dj)| {
                grid.unknown((i as isize + di) as usize, (j as isize + dj) as usize)
                    .expect("deep interior")
            })
            .collect();
        let signs: Vec<bool> = nb.iter().map(|&n| above(n, u)).collect();
        let ups = signs.iter().filter(|&&s| s).count();
        let kind = if ups == 0 {
            CriticalKind::Max
        } else if ups == 8 {
            CriticalKind::Min
        } else {
            let changes = (0..8).filter(|&k| signs[k] != signs[(k + 1) % 8]).count();
            if changes >= 4 {
                CriticalKind::Saddle
            } else {
                continue;
            }
        };
        let [x, y] = grid.position(u);
        let (hx, hy) = (grid.hx(), grid.hy());
        let f = |k: usize| psi.get(nb[k]);
        let c = psi.get(u);
        let fx = (f(0) - f(4)) / (2.0 * hx);
        let fy = (f(2) - f(6)) / (2.0 * hy);
        let fxx = (f(0) - 2.0 * c + f(4)) / (hx * hx);
        let fyy = (f(2) - 2.0 * c + f(6)) / (hy * hy);
        let fxy = (f(1) - f(3) + f(5) - f(7)) / (4.0 * hx * hy);
        let det = fxx * fyy - fxy * fxy;
        let (mut dx, mut dy) = (0.0, 0.0);
        if det.abs() > 1e-300 {
            dx = -(fyy * fx - fxy * fy) / det;
            dy = -(fxx * fy - fxy * fx) / det;
            if dx.abs() > hx || dy.abs() > hy {
                dx = 0.0;
                dy = 0.0;
            }
        }
        let value = c + 0.5 * (fx * dx + fy * dy);
        out.push(CriticalPoint {
            x: x + dx,
            y: y + dy,
            value,
            kind,
        });
    }
    out
}

/// Counts of (maxima, saddles, minima).
pub fn critical_counts(points: &[CriticalPoint]) -> (usize, usize, usize) {
    let count = |k| points.iter().filter(|p| p.kind == k).count();
    (
        count(CriticalKind::Max),
        count(CriticalKind::Saddle),
        count(CriticalKind::Min),
    )
}

/// Fails unless the field has a single interior maximum and no other
/// critical points.
pub fn require_single_max(psi: &ScalarField) -> Result<CriticalPoint> {
    let pts = critical_points(psi);
    let (maxima, saddles, minima) = critical_counts(&pts);
    if maxima == 1 && saddles == 0 && minima == 0 {
        Ok(pts[0])
    } else {
        Err(Error::CriticalPoints {
            maxima,
            saddles,
            minima,
        })
    }
}
