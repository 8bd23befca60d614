//! Monte Carlo estimates of exit times of `dX = −A u(X) dt + √2 dB`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{interpolate, DomainGrid, ScalarField, VectorField};
use crate::report::{Relation, VerificationReport};

/// Paths per work unit; fixed so results do not depend on the thread count.
const CHUNK: usize = 1024;

/// Largest tolerated fraction of paths stopped by `max_steps`.
pub const MAX_TRUNCATED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub start: [f64; 2],
    pub dt: f64,
    pub paths: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub amplitude: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            start: [0.0, 0.0],
            dt: 1e-4,
            paths: 100_000,
            max_steps: 1_000_000,
            seed: 0,
            amplitude: 0.0,
        }
    }
}

impl McConfig {
    pub fn validate(&self, grid: &DomainGrid) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.paths < 1000 {
            return Err(Error::InvalidArgument(format!(
                "need at least 1000 paths, got {}",
                self.paths
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        let [x, y] = self.start;
        if !grid.contains(x, y) {
            return Err(Error::OutsideDomain { x, y });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub truncated: usize,
    /// Set when the truncated fraction reaches [`MAX_TRUNCATED_FRACTION`].
    pub flagged: bool,
}

/// Bilinear drift, switched off in cells with a corner outside Ω.
struct Drift<'a> {
    grid: &'a DomainGrid,
    u: Option<&'a VectorField>,
    amplitude: f64,
}

impl Drift<'_> {
    fn at(&self, x: f64, y: f64) -> [f64; 2] {
        let Some(u) = self.u.filter(|_| self.amplitude > 0.0) else {
            return [0.0, 0.0];
        };
        let g = self.grid.geometry();
        let (i, j) = self.grid.locate(x, y);
        let corners = [
            self.grid.unknown(i, j),
            self.grid.unknown(i + 1, j),
            self.grid.unknown(i, j + 1),
            self.grid.unknown(i + 1, j + 1),
        ];
        let [Some(a), Some(b), Some(c), Some(d)] = corners else {
            return [0.0, 0.0];
        };
        let tx = ((x - g.x0) / g.hx - i as f64).clamp(0.0, 1.0);
        let ty = ((y - g.y0) / g.hy - j as f64).clamp(0.0, 1.0);
        let w = [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty];
        let mut out = [0.0; 2];
        for (k, n) in [a, b, c, d].into_iter().enumerate() {
            let v = u.get(n);
            out[0] += w[k] * v[0];
            out[1] += w[k] * v[1];
        }
        [-self.amplitude * out[0], -self.amplitude * out[1]]
    }
}

/// One path; returns the exit time and whether it was truncated.
fn run_path(grid: &DomainGrid, drift: &Drift, cfg: &McConfig, rng: &mut ChaCha8Rng) -> (f64, bool) {
    let shape = grid.shape();
    let sigma = (2.0 * cfg.dt).sqrt();
    let [mut x, mut y] = cfg.start;
    let mut d = shape.signed_distance(x, y);
    for step in 0..cfg.max_steps {
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        // Heun step on the drift; explicit Euler spirals outward under
        // strong rotation.
        let [bx, by] = drift.at(x, y);
        let [cx, cy] = if bx == 0.0 && by == 0.0 {
            [0.0, 0.0]
        } else {
            let (px, py) = (x + bx * cfg.dt, y + by * cfg.dt);
            let [qx, qy] = drift.at(px, py);
            [0.5 * (bx + qx), 0.5 * (by + qy)]
        };
        let (nx, ny) = (x + cx * cfg.dt + sigma * zx, y + cy * cfg.dt + sigma * zy);
        let nd = shape.signed_distance(nx, ny);
        let t = step as f64 * cfg.dt;
        if nd >= 0.0 {
            let frac = if nd - d > 0.0 { -d / (nd - d) } else { 1.0 };
            return (t + frac.clamp(0.0, 1.0) * cfg.dt, false);
        }
        // Brownian-bridge probability of an unseen excursion across a
        // locally flat boundary.
        let u: f64 = rng.gen();
        if u < (-(d * nd) / cfg.dt).exp() {
            return (t + 0.5 * cfg.dt, false);
        }
        x = nx;
        y = ny;
        d = nd;
    }
    (cfg.max_steps as f64 * cfg.dt, true)
}

/// Estimates `τ(start)` by Euler–Maruyama paths with independent
/// counter-derived random streams; output is identical for a fixed seed.
pub fn sample_exit_time(
    grid: &Arc<DomainGrid>,
    u: Option<&VectorField>,
    cfg: &McConfig,
) -> Result<McEstimate> {
    cfg.validate(grid)?;
    if let Some(u) = u {
        if u.grid().geometry() != grid.geometry() {
            return Err(Error::GridMismatch("flow lives on a different grid".into()));
        }
    }
    let drift = Drift {
        grid,
        u,
        amplitude: cfg.amplitude,
    };
    let chunks = cfg.paths.div_ceil(CHUNK);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(chunks);
    let mut partial = vec![(0.0, 0.0, 0usize); chunks];
    std::thread::scope(|s| {
        for (w, slots) in partial.chunks_mut(chunks.div_ceil(workers)).enumerate() {
            let drift = &drift;
            let first = w * chunks.div_ceil(workers);
            s.spawn(move || {
                for (k, slot) in slots.iter_mut().enumerate() {
                    let c = first + k;
                    let (mut s1, mut s2, mut trunc) = (0.0, 0.0, 0);
                    for path in c * CHUNK..((c + 1) * CHUNK).min(cfg.paths) {
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                        rng.set_stream(path as u64);
                        let (t, truncated) = run_path(grid, drift, cfg, &mut rng);
                        s1 += t;
                        s2 += t * t;
                        trunc += truncated as usize;
                    }
                    *slot = (s1, s2, trunc);
                }
            });
        }
    });
    let n = cfg.paths as f64;
    let (s1, s2, truncated) = partial
        .iter()
        .fold((0.0, 0.0, 0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        stderr: (var / n).sqrt(),
        paths: cfg.paths,
        truncated,
        flagged: truncated as f64 >= MAX_TRUNCATED_FRACTION * n,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CrosscheckRow {
    pub point: [f64; 2],
    pub pde: f64,
    pub estimate: McEstimate,
    pub allowance: f64,
    pub passed: bool,
}

/// Discretization allowance `2√Δt` added to the statistical band.
pub fn allowance(dt: f64) -> f64 {
    2.0 * dt.sqrt()
}

/// Compares Monte Carlo estimates against an interpolated PDE solution;
/// a point passes when `|MC − PDE| ≤ 3·stderr + 2√Δt`.
pub fn field_crosscheck(
    tau: &ScalarField,
    u: Option<&VectorField>,
    points: &[[f64; 2]],
    cfg: &McConfig,
) -> Result<(Vec<CrosscheckRow>, VerificationReport)> {
    let grid = tau.grid();
    let mut rows = Vec::with_capacity(points.len());
    let mut report = VerificationReport::new();
    for &point in points {
        let pde = interpolate(tau, point[0], point[1])?;
        let estimate = sample_exit_time(grid, u, &McConfig { start: point, ..*cfg })?;
        let allowance = allowance(cfg.dt);
        let check = report.push(
            format!("mc-vs-pde@({:.4},{:.4})", point[0], point[1]),
            (estimate.mean - pde).abs(),
            Relation::AtMost,
            3.0 * estimate.stderr,
            allowance,
            "montecarlo",
        );
        let passed = check.passed && !estimate.flagged;
        report.checks.last_mut().unwrap().passed = passed;
        rows.push(CrosscheckRow {
            point,
            pde,
            estimate,
            allowance,
            passed,
        });
    }
    Ok((rows, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};

    fn small(seed: u64) -> McConfig {
        McConfig {
            dt: 1e-3,
            paths: 4000,
            seed,
            ..McConfig::default()
        }
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let g = build_domain(DomainSpec::unit_disc(32)).unwrap();
        let a = sample_exit_time(&g, None, &small(3)).unwrap();
        let b = sample_exit_time(&g, None, &small(3)).unwrap();
        assert_eq!(a, b);
        let c = sample_exit_time(&g, None, &small(4)).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn coarse_disc_estimate() {
        let g = build_domain(DomainSpec::unit_disc(32)).unwrap();
        let e = sample_exit_time(&g, None, &small(1)).unwrap();
        assert!((e.mean - 0.25).abs() < 3.0 * e.stderr + allowance(1e-3), "{e:?}");
        assert_eq!(e.truncated, 0);
    }

    #[test]
    fn config_validation() {
        let g = build_domain(DomainSpec::unit_disc(32)).unwrap();
        let bad = [
            McConfig { dt: 0.0, ..small(0) },
            McConfig { paths: 10, ..small(0) },
            McConfig { start: [2.0, 0.0], ..small(0) },
            McConfig { max_steps: 0, ..small(0) },
        ];
        for cfg in bad {
            assert!(sample_exit_time(&g, None, &cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn truncation_is_flagged() {
        let g = build_domain(DomainSpec::unit_disc(32)).unwrap();
        let cfg = McConfig {
            max_steps: 5,
            ..small(2)
        };
        let e = sample_exit_time(&g, None, &cfg).unwrap();
        assert!(e.flagged && e.truncated > 0);
    }
}
