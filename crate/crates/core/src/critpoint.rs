//! Critical points of the maximal exit-time functional: the nonlocal
//! equation `−2Δφ = 1 + |∇φ|² T(φ)/a(φ)`, its iteration schemes, and the
//! variation `V(ψ, v)` of `max τ̄` under domain deformations.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::elliptic::{grid_peclet, solve_advection_diffusion, torsion, SolveOptions};
use crate::error::{Error, Result};
use crate::freidlin::{effective_profile, freidlin_limit_unchecked};
use crate::grid::{
    gradient, integrate, laplacian, perp_gradient, stencil, BoundaryMode, DomainGrid, ScalarField,
    VectorField,
};
use crate::levelset::{
    area_profile, critical_counts, critical_points, derivative_uniform, AreaProfile,
    DEFAULT_LEVELS, TOP_FRACTION,
};
use crate::numerics::{cumulative_trapezoid, lerp_table};

/// Relative L∞ change below which an iteration stops.
pub const STOP_TOLERANCE: f64 = 1e-6;

/// Multiple of `|Ω|/4π` beyond which an iteration is declared divergent.
pub const DIVERGENCE_FACTOR: f64 = 3.0;

/// Grid Péclet number targeted by the default advective amplitude.
pub const DEFAULT_PECLET: f64 = 50.0;

/// `q = |∇φ|² T(φ)/a(φ)` at every unknown, with the top levels flagged.
struct Nonlocal {
    q: Vec<f64>,
    masked: Vec<bool>,
}

fn nonlocal_term(phi: &ScalarField) -> Result<Nonlocal> {
    let phi = phi.clone().with_mode(BoundaryMode::Dirichlet);
    let profile = area_profile(&phi, DEFAULT_LEVELS)?;
    let last = profile.last_regular();
    let levels = &profile.levels[..=last];
    let ratio: Vec<f64> = (0..=last)
        .map(|k| profile.t[k] / profile.area[k].max(f64::MIN_POSITIVE))
        .collect();
    let h_last = levels[last];
    let grad = gradient(&phi);
    let grid = phi.grid();
    let mut q = Vec::with_capacity(phi.values().len());
    let mut masked = Vec::with_capacity(phi.values().len());
    for (u, &s) in phi.values().iter().enumerate() {
        let [gx, gy] = grad.get(u);
        let top = s > h_last;
        q.push(if top {
            0.0
        } else {
            (gx * gx + gy * gy) * lerp_table(levels, &ratio, s.max(0.0))
        });
        masked.push(top);
    }
    // In the cap T/a ~ c/(M − φ). Both |∇φ|² and M − φ vanish at the
    // maximum, so they are taken from a quadratic model of φ there; the
    // constant c is matched at the last regular level.
    let [x0, y0] = grid.position(phi.argmax());
    let (hx, hy) = (grid.hx(), grid.hy());
    let local = |u: usize| {
        let [x, y] = grid.position(u);
        ((x - x0) / hx, (y - y0) / hy)
    };
    let basis = |(x, y): (f64, f64)| [1.0, x, y, x * x, x * y, y * y];
    // Weights rise smoothly from zero so the fit does not jump when nodes
    // cross the cut level between iterations.
    let lo = (1.0 - 2.5 * TOP_FRACTION) * profile.max;
    let weight = |s: f64| ((s - lo) / (profile.max - lo)).max(0.0).powi(2);
    let mut fit_nodes: Vec<(usize, f64)> = (0..q.len())
        .filter(|&u| phi.get(u) > lo)
        .map(|u| (u, weight(phi.get(u))))
        .collect();
    if fit_nodes.len() < 12 {
        fit_nodes = (0..q.len())
            .filter(|&u| {
                let (x, y) = local(u);
                x.abs() <= 2.5 && y.abs() <= 2.5
            })
            .map(|u| (u, 1.0))
            .collect();
    }
    let model = fit_least_squares(
        fit_nodes
            .iter()
            .map(|&(u, w)| (basis(local(u)), phi.get(u), w)),
    )
    .and_then(|c| QuadraticPeak::new(&c, hx, hy));
    let c_match = ratio[last] * (profile.max - h_last);
    // The model takes over smoothly across a band below the cut.
    let band = TOP_FRACTION * profile.max;
    for u in 0..q.len() {
        let s = phi.get(u);
        let beta = ((s - (h_last - band)) / band).clamp(0.0, 1.0);
        if beta == 0.0 {
            continue;
        }
        let beta = beta * beta * (3.0 - 2.0 * beta);
        let cap = match &model {
            Some(m) => {
                let [x, y] = grid.position(u);
                c_match * m.ratio(x - x0, y - y0)
            }
            None => gx2(&grad, u) * ratio[last],
        };
        let nodal = if masked[u] { cap } else { q[u] };
        q[u] = (1.0 - beta) * nodal + beta * cap;
    }
    Ok(Nonlocal { q, masked })
}

fn gx2(grad: &VectorField, u: usize) -> f64 {
    let [gx, gy] = grad.get(u);
    gx * gx + gy * gy
}

/// `φ ≈ M + ½ eᵀHe` with `e` the offset from the peak, `H` negative definite.
struct QuadraticPeak {
    peak: [f64; 2],
    h: [[f64; 2]; 2],
    trace: f64,
}

impl QuadraticPeak {
    /// From coefficients of `1, X, Y, X², XY, Y²` in grid-scaled offsets.
    fn new(c: &[f64], hx: f64, hy: f64) -> Option<Self> {
        let h = [
            [2.0 * c[3] / (hx * hx), c[4] / (hx * hy)],
            [c[4] / (hx * hy), 2.0 * c[5] / (hy * hy)],
        ];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if !(h[0][0] < 0.0 && det > 0.0) {
            return None;
        }
        let (gx, gy) = (c[1] / hx, c[2] / hy);
        let peak = [
            -(h[1][1] * gx - h[0][1] * gy) / det,
            -(h[0][0] * gy - h[1][0] * gx) / det,
        ];
        Some(QuadraticPeak {
            peak,
            h,
            trace: h[0][0] + h[1][1],
        })
    }

    /// `|∇φ|²/(M − φ)` of the model at an offset from the fit origin.
    fn ratio(&self, dx: f64, dy: f64) -> f64 {
        let e = [dx - self.peak[0], dy - self.peak[1]];
        let he = [
            self.h[0][0] * e[0] + self.h[0][1] * e[1],
            self.h[1][0] * e[0] + self.h[1][1] * e[1],
        ];
        let drop = -0.5 * (e[0] * he[0] + e[1] * he[1]);
        let g2 = he[0] * he[0] + he[1] * he[1];
        if drop <= 1e-14 * self.trace.abs() * (e[0] * e[0] + e[1] * e[1] + 1e-300) || drop == 0.0 {
            -self.trace
        } else {
            g2 / drop
        }
    }
}

fn fit_least_squares(rows: impl Iterator<Item = ([f64; 6], f64, f64)>) -> Option<Vec<f64>> {
    let mut ata = vec![vec![0.0; 6]; 6];
    let mut atb = vec![0.0; 6];
    let mut count = 0;
    for (row, y, w) in rows {
        for r in 0..6 {
            for c in 0..6 {
                ata[r][c] += w * row[r] * row[c];
            }
            atb[r] += w * row[r] * y;
        }
        count += 1;
    }
    if count < 12 {
        return None;
    }
    solve_small(ata, atb)
}

/// Residual `−2Δφ − 1 − |∇φ|² T(φ)/a(φ)` of the critical-point equation.
///
/// Nodes above the top 2% of levels are set to zero.
pub fn residual(phi: &ScalarField) -> Result<ScalarField> {
    single_max(phi)?;
    residual_unchecked(phi).map(|(r, _)| r)
}

fn single_max(phi: &ScalarField) -> Result<()> {
    let pts = critical_points(phi);
    let (maxima, saddles, minima) = critical_counts(&pts);
    if maxima != 1 {
        return Err(Error::CriticalPoints {
            maxima,
            saddles,
            minima,
        });
    }
    Ok(())
}

fn residual_unchecked(phi: &ScalarField) -> Result<(ScalarField, Nonlocal)> {
    let nl = nonlocal_term(phi)?;
    let lap = laplacian(&phi.clone().with_mode(BoundaryMode::Dirichlet));
    let values = lap
        .values()
        .iter()
        .zip(&nl.q)
        .zip(&nl.masked)
        .map(|((&l, &q), &m)| if m { 0.0 } else { -2.0 * l - 1.0 - q })
        .collect();
    let r = ScalarField::new(phi.grid(), values, BoundaryMode::Free)?;
    Ok((r, nl))
}

fn l2(f: &ScalarField) -> f64 {
    integrate(&f.map(|v| v * v)).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    Diverged,
    MaxIterations,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Converged => "converged",
            Verdict::Diverged => "diverged",
            Verdict::MaxIterations => "max-iterations",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Reparam {
    Freidlin,
    Advective,
}

impl std::str::FromStr for Reparam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freidlin" => Ok(Reparam::Freidlin),
            "advective" => Ok(Reparam::Advective),
            _ => Err(Error::InvalidArgument(format!("unknown reparametrization {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub step: usize,
    pub sup_norm: f64,
    /// L² norm of the residual outside the top levels; NaN when it could
    /// not be evaluated.
    pub residual_l2: f64,
    /// `‖φ‖∞ / (|Ω|/4π)`, at most 1 for a solution.
    pub apriori1: f64,
    /// `∫|Δφ| / |Ω|`, equal to 1 for a solution.
    pub apriori2: f64,
    /// `∫|Δφ − Δτ⁰| / |Ω|`, below 1 for a solution.
    pub apriori3: f64,
    pub scheme: String,
    pub rel_change: f64,
    pub maxima: usize,
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub verdict: Verdict,
    pub phi: ScalarField,
    /// Set when an iterate had more than one maximum.
    pub multiple_maxima: bool,
    pub amplitude: Option<f64>,
}

impl IterationTrace {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "step,sup_norm,residual_l2,apriori1,apriori2,apriori3")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.step, r.sup_norm, r.residual_l2, r.apriori1, r.apriori2, r.apriori3
            )?;
        }
        Ok(())
    }
}

/// A priori quantities of a candidate solution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Apriori {
    pub sup_ratio: f64,
    pub laplacian_l1_ratio: f64,
    pub deviation_ratio: f64,
}

pub fn apriori(phi: &ScalarField, tau0: &ScalarField) -> Result<Apriori> {
    phi.check_same_grid(tau0.grid())?;
    let area = phi.grid().area();
    let lap = laplacian(&phi.clone().with_mode(BoundaryMode::Dirichlet));
    let lap0 = laplacian(&tau0.clone().with_mode(BoundaryMode::Dirichlet));
    let l1 = integrate(&lap.map(f64::abs));
    let dev = integrate(&lap.zip_with(&lap0, |a, b| (a - b).abs())?);
    Ok(Apriori {
        sup_ratio: phi.values().iter().fold(0.0_f64, |m, v| m.max(v.abs())) / (area / (4.0 * PI)),
        laplacian_l1_ratio: l1 / area,
        deviation_ratio: dev / area,
    })
}

struct Driver {
    grid: Arc<DomainGrid>,
    tau0: ScalarField,
    bound: f64,
    records: Vec<IterationRecord>,
    multiple_maxima: bool,
}

impl Driver {
    fn new(grid: &Arc<DomainGrid>) -> Result<Self> {
        let tau0 = torsion(grid)?;
        Ok(Driver {
            grid: grid.clone(),
            bound: DIVERGENCE_FACTOR * grid.area() / (4.0 * PI),
            tau0,
            records: Vec::new(),
            multiple_maxima: false,
        })
    }

    /// Records `φ` and returns its nonlocal coefficient when available.
    fn record(
        &mut self,
        step: usize,
        phi: &ScalarField,
        scheme: &str,
        prev: Option<&ScalarField>,
    ) -> Result<Option<Nonlocal>> {
        let maxima = critical_counts(&critical_points(phi)).0;
        if maxima > 1 {
            self.multiple_maxima = true;
        }
        let (res, nl) = match residual_unchecked(phi) {
            Ok((r, nl)) => (l2(&r), Some(nl)),
            Err(_) => (f64::NAN, None),
        };
        let ap = apriori(phi, &self.tau0)?;
        let sup = phi.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let rel_change = prev.map_or(f64::NAN, |p| {
            let ps = p.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            phi.max_abs_diff(p) / ps.max(f64::MIN_POSITIVE)
        });
        self.records.push(IterationRecord {
            step,
            sup_norm: sup,
            residual_l2: res,
            apriori1: ap.sup_ratio,
            apriori2: ap.laplacian_l1_ratio,
            apriori3: ap.deviation_ratio,
            scheme: scheme.to_string(),
            rel_change,
            maxima,
        });
        Ok(nl)
    }

    fn status(&self) -> Option<Verdict> {
        let r = self.records.last()?;
        if !(r.sup_norm <= self.bound) {
            Some(Verdict::Diverged)
        } else if r.rel_change < STOP_TOLERANCE {
            Some(Verdict::Converged)
        } else {
            None
        }
    }

    /// Solves `−2Δφ = 1 + q`.
    fn half_step(&self, nl: &Nonlocal) -> Result<ScalarField> {
        let rhs: Vec<f64> = nl.q.iter().map(|q| 0.5 * (1.0 + q)).collect();
        Ok(solve_advection_diffusion(&self.grid, None, &rhs, &SolveOptions::default())?.tau)
    }

    fn finish(self, verdict: Verdict, phi: ScalarField, amplitude: Option<f64>) -> IterationTrace {
        IterationTrace {
            records: self.records,
            verdict,
            phi,
            multiple_maxima: self.multiple_maxima,
            amplitude,
        }
    }
}

/// Naive fixed-point iteration `−2Δφ_{n+1} = 1 + |∇φ_n|² T_n(φ_n)/a_n(φ_n)`
/// started from the torsion function.
pub fn iterate_naive(grid: &Arc<DomainGrid>, max_steps: usize) -> Result<IterationTrace> {
    let mut d = Driver::new(grid)?;
    let mut phi = d.tau0.clone();
    let mut nl = d.record(0, &phi, "naive", None)?;
    for step in 1..=max_steps {
        let Some(coef) = nl else {
            return Ok(d.finish(Verdict::Diverged, phi, None));
        };
        let next = d.half_step(&coef)?;
        nl = d.record(step, &next, "naive", Some(&phi))?;
        phi = next;
        if let Some(v) = d.status() {
            return Ok(d.finish(v, phi, None));
        }
    }
    Ok(d.finish(Verdict::MaxIterations, phi, None))
}

/// Amplitude giving grid Péclet number [`DEFAULT_PECLET`] for the flow
/// `∇⊥τ⁰`.
pub fn default_amplitude(grid: &Arc<DomainGrid>) -> Result<f64> {
    let tau0 = torsion(grid)?;
    let pe = grid_peclet(grid, &perp_gradient(&tau0), 1.0);
    if !(pe > 0.0) {
        return Err(Error::InvalidArgument("torsion function has no gradient".into()));
    }
    Ok(DEFAULT_PECLET / pe)
}

/// Stabilized iteration: the naive update followed by a reparametrization
/// of its level sets, either by the Freidlin profile of the half step or by
/// a large-amplitude exit-time solve along its level lines.
pub fn iterate_stabilized(
    grid: &Arc<DomainGrid>,
    max_steps: usize,
    reparam: Reparam,
    amplitude: Option<f64>,
) -> Result<IterationTrace> {
    let amplitude = match reparam {
        Reparam::Freidlin => None,
        Reparam::Advective => Some(match amplitude {
            Some(a) if a > 0.0 && a.is_finite() => a,
            Some(a) => {
                return Err(Error::InvalidArgument(format!(
                    "amplitude must be positive, got {a}"
                )))
            }
            None => default_amplitude(grid)?,
        }),
    };
    let mut d = Driver::new(grid)?;
    let mut phi = d.tau0.clone();
    let mut nl = d.record(0, &phi, "stabilized", None)?;
    for step in 1..=max_steps {
        let Some(coef) = nl else {
            return Ok(d.finish(Verdict::Diverged, phi, amplitude));
        };
        let half = d.half_step(&coef)?;
        let (next, label) = match amplitude {
            None => (freidlin_limit_unchecked(&half)?.tau_bar, "freidlin".to_string()),
            Some(a) => {
                let u = perp_gradient(&half.clone().with_mode(BoundaryMode::Dirichlet));
                let opts = SolveOptions::with_amplitude(a);
                let rhs = vec![1.0; grid.n_unknowns()];
                let sol = solve_advection_diffusion(grid, Some(&u), &rhs, &opts)?;
                (sol.tau, format!("advective-{}", sol.scheme))
            }
        };
        nl = d.record(step, &next, &label, Some(&phi))?;
        phi = next;
        if let Some(v) = d.status() {
            return Ok(d.finish(v, phi, amplitude));
        }
    }
    Ok(d.finish(Verdict::MaxIterations, phi, amplitude))
}

/// Level-set coefficients of `ψ` as tables on the regular levels.
struct Coefficients {
    profile: AreaProfile,
    last: usize,
    f: Vec<f64>,
    g: Vec<f64>,
    df: Vec<f64>,
}

/// Super-level sets smaller than this many cells are left unresolved.
const MIN_CAP_CELLS: f64 = 32.0;

/// Last level whose super-level set is still resolved by the grid.
fn last_resolved(profile: &AreaProfile, cell: f64) -> usize {
    let min = MIN_CAP_CELLS * cell;
    (0..profile.len())
        .rev()
        .find(|&k| profile.area[k] >= min && profile.p[k] > 0.0)
        .unwrap_or(0)
}

fn coefficients(psi: &ScalarField, resolved: bool) -> Result<Coefficients> {
    single_max(psi)?;
    let profile = area_profile(psi, DEFAULT_LEVELS)?;
    let last = if resolved {
        last_resolved(&profile, psi.grid().hx() * psi.grid().hy())
    } else {
        profile.last_regular()
    };
    for k in 0..=last {
        if !(profile.p[k] > 0.0) {
            return Err(Error::NonPositiveFlux {
                level: profile.levels[k],
                value: profile.p[k],
            });
        }
    }
    let dh = profile.levels[1] - profile.levels[0];
    let dp = derivative_uniform(&profile.p, dh);
    let (mut f, mut g, mut df) = (vec![], vec![], vec![]);
    for k in 0..=last {
        let (a, p, t) = (profile.area[k], profile.p[k], profile.t[k]);
        g.push(-1.0 / p);
        f.push(a / (p * p));
        df.push(-t / (p * p) - 2.0 * a * dp[k] / (p * p * p));
    }
    Ok(Coefficients {
        profile,
        last,
        f,
        g,
        df,
    })
}

#[derive(Debug, Clone)]
pub struct FgFields {
    /// `F = a(ψ)/p(ψ)²`.
    pub f: ScalarField,
    /// `G = −1/p(ψ)`.
    pub g: ScalarField,
    /// Nodes above the regular levels, where the values are held at the
    /// last regular level.
    pub masked: Vec<bool>,
}

/// The coefficient fields `F_ψ`, `G_ψ` of the critical-point equation.
pub fn fg_fields(psi: &ScalarField) -> Result<FgFields> {
    let c = coefficients(psi, false)?;
    let levels = &c.profile.levels[..=c.last];
    let h_last = levels[c.last];
    let at = |table: &[f64]| -> Result<ScalarField> {
        let v = psi
            .values()
            .iter()
            .map(|&s| lerp_table(levels, table, s.clamp(0.0, h_last)))
            .collect();
        ScalarField::new(psi.grid(), v, BoundaryMode::Free)
    };
    Ok(FgFields {
        f: at(&c.f)?,
        g: at(&c.g)?,
        masked: psi.values().iter().map(|&s| s > h_last).collect(),
    })
}

/// `V(ψ, v) = ∫ (v·∇ψ)[∇F·∇ψ + 2FΔψ − G]`, with `∇F = F′(ψ)∇ψ` and the top
/// 2% of levels excluded.
pub fn variation(psi: &ScalarField, v: &VectorField) -> Result<f64> {
    psi.check_same_grid(v.grid())?;
    let c = coefficients(psi, true)?;
    let levels = &c.profile.levels[..=c.last];
    let h_last = levels[c.last];
    let psi_d = psi.clone().with_mode(BoundaryMode::Dirichlet);
    let grad = gradient(&psi_d);
    let lap = laplacian(&psi_d);
    let values = (0..psi.values().len())
        .map(|u| {
            let s = psi.get(u);
            if s > h_last {
                return 0.0;
            }
            let [gx, gy] = grad.get(u);
            let [vx, vy] = v.get(u);
            let s = s.max(0.0);
            let f = lerp_table(levels, &c.f, s);
            let g = lerp_table(levels, &c.g, s);
            let df = lerp_table(levels, &c.df, s);
            (vx * gx + vy * gy) * (df * (gx * gx + gy * gy) + 2.0 * f * lap.get(u) - g)
        })
        .collect();
    Ok(integrate(&ScalarField::new(psi.grid(), values, BoundaryMode::Free)?))
}

/// `max τ̄ = ∫₀^M a/p` of a stream function.
///
/// The ratio is integrated while the super-level sets are resolved; the
/// remaining sliver closes linearly to `a/p → −1/tr H` at the fitted peak.
pub fn max_tau_bar(psi: &ScalarField) -> Result<f64> {
    let profile = area_profile(psi, DEFAULT_LEVELS)?;
    let fit = match peak_fit(psi) {
        Ok(fit) => fit,
        Err(_) => return Ok(effective_profile(&profile)?.max()),
    };
    let last = last_resolved(&profile, psi.grid().hx() * psi.grid().hy());
    if last == 0 {
        return Ok(effective_profile(&profile)?.max());
    }
    let ratio: Vec<f64> = (0..=last).map(|k| profile.area[k] / profile.p[k]).collect();
    let body = cumulative_trapezoid(&profile.levels[..=last], &ratio)[last];
    let top = fit.value.max(profile.max);
    let r_peak = -1.0 / (fit.lambda1 + fit.lambda2);
    Ok(body + 0.5 * (ratio[last] + r_peak) * (top - profile.levels[last]))
}

fn rk4(v: &dyn Fn(f64, f64) -> [f64; 2], mut p: [f64; 2], t: f64, steps: usize) -> [f64; 2] {
    let dt = t / steps as f64;
    for _ in 0..steps {
        let k1 = v(p[0], p[1]);
        let k2 = v(p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]);
        let k3 = v(p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]);
        let k4 = v(p[0] + dt * k3[0], p[1] + dt * k3[1]);
        p[0] += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        p[1] += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    }
    p
}

/// Cubic Lagrange weights on nodes −1, 0, 1, 2 for offset `t ∈ [0, 1)`.
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Evaluates a grid field off the nodes: bicubic where the 4×4 node block is
/// inside Ω, otherwise the cut-cell stencil.
pub fn sample(psi: &ScalarField, x: f64, y: f64) -> Result<f64> {
    let grid = psi.grid();
    let geo = grid.geometry();
    let fx = (x - geo.x0) / geo.hx;
    let fy = (y - geo.y0) / geo.hy;
    let (i, j) = (fx.floor(), fy.floor());
    if i >= 1.0 && j >= 1.0 && (i as usize) + 2 <= geo.nx && (j as usize) + 2 <= geo.ny {
        let (i, j) = (i as usize, j as usize);
        let mut block = [[0.0; 4]; 4];
        let mut inside = true;
        'outer: for (b, row) in block.iter_mut().enumerate() {
            for (a, cell) in row.iter_mut().enumerate() {
                match grid.unknown(i + a - 1, j + b - 1) {
                    Some(u) => *cell = psi.get(u),
                    None => {
                        inside = false;
                        break 'outer;
                    }
                }
            }
        }
        if inside {
            let wx = cubic_weights(fx - i as f64);
            let wy = cubic_weights(fy - j as f64);
            let mut s = 0.0;
            for b in 0..4 {
                for a in 0..4 {
                    s += wy[b] * wx[a] * block[b][a];
                }
            }
            return Ok(s);
        }
    }
    let st = stencil(grid, x, y)?;
    Ok(st.apply(|id| psi.vertex_value(id)))
}

/// Central difference of `max τ̄` along `ψ^ε = ψ∘X_ε`, where `X_ε` is the
/// time-ε flow of `v`.
///
/// `psi_at` evaluates `ψ` off the nodes; use [`sample`] for grid data.
pub fn variation_fd(
    psi: &ScalarField,
    psi_at: &dyn Fn(f64, f64) -> f64,
    v: &dyn Fn(f64, f64) -> [f64; 2],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {eps}")));
    }
    let grid = psi.grid();
    let deformed = |sign: f64| -> Result<ScalarField> {
        let mut values = Vec::with_capacity(grid.n_unknowns());
        for u in 0..grid.n_unknowns() {
            let p = grid.position(u);
            let q = rk4(v, p, sign * eps, 8);
            if q == p {
                values.push(psi.get(u));
                continue;
            }
            if !grid.contains(q[0], q[1]) {
                return Err(Error::StepTooLarge(eps));
            }
            values.push(psi_at(q[0], q[1]));
        }
        ScalarField::new(grid, values, BoundaryMode::Dirichlet)
    };
    let plus = max_tau_bar(&deformed(1.0)?)?;
    let minus = max_tau_bar(&deformed(-1.0)?)?;
    Ok((plus - minus) / (2.0 * eps))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HessianFit {
    pub x: f64,
    pub y: f64,
    /// Peak value of the fitted quadratic.
    pub value: f64,
    /// Eigenvalue of smaller magnitude.
    pub lambda1: f64,
    pub lambda2: f64,
    /// `√(λ₁/λ₂)`; 1 for circular level sets near the maximum.
    pub ratio: f64,
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let m = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= m * a[col][c];
            }
            b[r] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Least-squares quadratic fit on the 5×5 nodes around the argmax.
pub fn hessian_at_max(phi: &ScalarField) -> Result<HessianFit> {
    single_max(phi)?;
    peak_fit(phi)
}

fn peak_fit(phi: &ScalarField) -> Result<HessianFit> {
    let grid = phi.grid();
    let (ci, cj) = grid.node_of(phi.argmax());
    let [x0, y0] = grid.position(phi.argmax());
    let (hx, hy) = (grid.hx(), grid.hy());
    let mut rows = Vec::with_capacity(25);
    for dj in -2_isize..=2 {
        for di in -2_isize..=2 {
            let (i, j) = (ci as isize + di, cj as isize + dj);
            let u = (i >= 0 && j >= 0)
                .then(|| grid.unknown(i as usize, j as usize))
                .flatten()
                .ok_or(Error::DegenerateFit)?;
            let (x, y) = (di as f64, dj as f64);
            rows.push(([1.0, x, y, x * x, x * y, y * y], phi.get(u), 1.0));
        }
    }
    let c = fit_least_squares(rows.into_iter()).ok_or(Error::DegenerateFit)?;
    let fxx = 2.0 * c[3] / (hx * hx);
    let fxy = c[4] / (hx * hy);
    let fyy = 2.0 * c[5] / (hy * hy);
    let mean = 0.5 * (fxx + fyy);
    let rad = (0.25 * (fxx - fyy).powi(2) + fxy * fxy).sqrt();
    let (l_a, l_b) = (mean - rad, mean + rad);
    let (lambda1, lambda2) = if l_a.abs() <= l_b.abs() { (l_a, l_b) } else { (l_b, l_a) };
    if lambda2 == 0.0 || lambda1 * lambda2 <= 0.0 {
        return Err(Error::DegenerateFit);
    }
    let (gx, gy) = (c[1] / hx, c[2] / hy);
    let det = fxx * fyy - fxy * fxy;
    let dx = -(fyy * gx - fxy * gy) / det;
    let dy = -(fxx * gy - fxy * gx) / det;
    Ok(HessianFit {
        x: x0 + dx,
        y: y0 + dy,
        value: c[0] + 0.5 * (gx * dx + gy * dy),
        lambda1,
        lambda2,
        ratio: (lambda1 / lambda2).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};

    fn disc(n: usize) -> Arc<DomainGrid> {
        build_domain(DomainSpec::unit_disc(n)).unwrap()
    }

    fn ellipse(n: usize) -> Arc<DomainGrid> {
        build_domain(DomainSpec::ellipse(2.0, 1.0, n)).unwrap()
    }

    fn masked_sup(r: &ScalarField) -> f64 {
        r.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn disc_torsion_has_small_residual() {
        let g = disc(256);
        let phi = torsion(&g).unwrap();
        let r = residual(&phi).unwrap();
        let sup = masked_sup(&r);
        assert!(sup < 0.03, "{sup}");
    }

    #[test]
    fn ellipse_torsion_is_not_critical() {
        let d = l2(&residual(&torsion(&disc(256)).unwrap()).unwrap());
        let e = l2(&residual(&torsion(&ellipse(256)).unwrap()).unwrap());
        assert!(e > 5.0 * d, "disc {d} ellipse {e}");
    }

    #[test]
    fn residual_rejects_two_maxima() {
        let g = build_domain(DomainSpec::unit_square(64)).unwrap();
        let bump = |x: f64, y: f64, cx: f64| (-((x - cx).powi(2) + (y - 0.5).powi(2)) * 60.0).exp();
        let f = ScalarField::from_fn(&g, |x, y| {
            (bump(x, y, 0.3) + bump(x, y, 0.7)) * x * (1.0 - x) * y * (1.0 - y)
        });
        assert!(matches!(residual(&f), Err(Error::CriticalPoints { .. })));
    }

    #[test]
    fn naive_zero_steps_keeps_torsion() {
        let g = disc(64);
        let t = iterate_naive(&g, 0).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.verdict, Verdict::MaxIterations);
        assert!(t.phi.max_abs_diff(&torsion(&g).unwrap()) == 0.0);
    }

    #[test]
    fn disc_iterations_stay_at_torsion() {
        let g = disc(128);
        let exact = torsion(&g).unwrap();
        for trace in [
            iterate_naive(&g, 40).unwrap(),
            iterate_stabilized(&g, 40, Reparam::Freidlin, None).unwrap(),
        ] {
            assert_eq!(trace.verdict, Verdict::Converged, "{:?}", trace.records.last());
            let err = trace.phi.max_abs_diff(&exact) / exact.max();
            assert!(err < 0.02, "{err}");
        }
    }

    #[test]
    fn fg_on_torsion_fields() {
        for g in [disc(128), ellipse(128)] {
            let psi = torsion(&g).unwrap();
            let fg = fg_fields(&psi).unwrap();
            for u in 0..g.n_unknowns() {
                let (f, gv) = (fg.f.get(u), fg.g.get(u));
                assert!(gv < 0.0 && f > 0.0);
                assert!((f + gv).abs() <= 0.01 * gv.abs(), "{f} {gv}");
            }
        }
    }

    #[test]
    fn fg_scaling_halves_g() {
        let g = ellipse(128);
        let psi = torsion(&g).unwrap();
        let a = fg_fields(&psi).unwrap();
        let b = fg_fields(&psi.map(|v| 2.0 * v)).unwrap();
        for u in 0..g.n_unknowns() {
            if a.masked[u] {
                continue;
            }
            let r = b.g.get(u) / a.g.get(u);
            assert!((r - 0.5).abs() < 1e-6, "{r}");
        }
    }

    #[test]
    fn variation_vanishes_for_tangential_fields() {
        let g = ellipse(128);
        let psi = torsion(&g).unwrap();
        let v = perp_gradient(&psi);
        let scale = psi.max() * v.max_norm();
        assert!(variation(&psi, &v).unwrap().abs() < 1e-10 * scale);
    }

    #[test]
    fn zero_field_has_zero_fd_variation() {
        let g = disc(64);
        let psi = torsion(&g).unwrap();
        let at = |x: f64, y: f64| sample(&psi, x, y).unwrap();
        assert_eq!(variation_fd(&psi, &at, &|_, _| [0.0, 0.0], 0.01).unwrap(), 0.0);
    }

    #[test]
    fn bicubic_sample_reproduces_cubics() {
        let g = disc(64);
        let f = |x: f64, y: f64| 0.3 + x * x * y - 0.2 * y * y * y + x;
        let psi = ScalarField::from_fn(&g, f);
        for (x, y) in [(0.013, -0.2), (0.41, 0.377), (-0.6, 0.1)] {
            assert!((sample(&psi, x, y).unwrap() - f(x, y)).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_ratio_of_torsion_functions() {
        let d = hessian_at_max(&torsion(&disc(128)).unwrap()).unwrap();
        assert!((d.ratio - 1.0).abs() < 0.02, "{d:?}");
        let e = hessian_at_max(&torsion(&ellipse(128)).unwrap()).unwrap();
        assert!((e.ratio - 0.5).abs() < 0.025, "{e:?}");
        assert!((e.lambda1 + 0.2).abs() < 1e-3 && (e.lambda2 + 0.8).abs() < 1e-3, "{e:?}");
    }

    #[test]
    fn apriori_of_disc_torsion() {
        let g = disc(128);
        let t = torsion(&g).unwrap();
        let a = apriori(&t, &t).unwrap();
        assert!((a.sup_ratio - 1.0).abs() < 1e-3);
        assert!((a.laplacian_l1_ratio - 1.0).abs() < 1e-3);
        assert_eq!(a.deviation_ratio, 0.0);
    }
}
