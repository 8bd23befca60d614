//! Large-amplitude limit `τ̄` of exit times for the flow `A∇⊥ψ`.
//!
//! `τ̄` is constant on the level sets of `ψ`, with profile
//! `τ̄(h) = ∫₀ʰ a(s)/p(s) ds`.

use serde::Serialize;

use crate::elliptic::{solve_exit_time, Scheme, SolveOptions};
use crate::error::{Error, Result};
use crate::grid::{perp_gradient, BoundaryMode, ScalarField};
use crate::levelset::{area_profile, require_single_max, AreaProfile, DEFAULT_LEVELS};
use crate::numerics::{cumulative_trapezoid, Pchip};

/// `τ̄(h)` sampled on the levels of an [`AreaProfile`].
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveProfile {
    pub levels: Vec<f64>,
    pub tau_bar: Vec<f64>,
    /// Integrand `a/p` actually used (regularized near the maximum).
    pub ratio: Vec<f64>,
}

impl EffectiveProfile {
    pub fn max(&self) -> f64 {
        *self.tau_bar.last().unwrap_or(&0.0)
    }

    pub fn interpolant(&self) -> Result<Pchip> {
        Pchip::new(self.levels.clone(), self.tau_bar.clone())
    }
}

#[derive(Debug, Clone)]
pub struct FreidlinResult {
    pub tau_bar: ScalarField,
    pub profile: EffectiveProfile,
    pub areas: AreaProfile,
}

/// Integrates `τ̄′ = a/p`.
///
/// Levels in the top 2% below the maximum, where `a` and `p` both vanish,
/// use a least-squares line through the ratio on `[0.9M, 0.98M]`.
pub fn effective_profile(areas: &AreaProfile) -> Result<EffectiveProfile> {
    let n = areas.len();
    if n < 3 {
        return Err(Error::InvalidArgument("profile needs at least 3 levels".into()));
    }
    let last = areas.last_regular();
    let mut ratio = vec![0.0; n];
    for k in 0..=last {
        let p = areas.p[k];
        if !(p > 0.0) {
            return Err(Error::NonPositiveFlux {
                level: areas.levels[k],
                value: p,
            });
        }
        ratio[k] = areas.area[k] / p;
    }
    let lo = 0.9 * areas.max;
    let fit: Vec<usize> = (0..=last).filter(|&k| areas.levels[k] >= lo).collect();
    let line = if fit.len() >= 2 {
        let m = fit.len() as f64;
        let (sx, sy) = fit.iter().fold((0.0, 0.0), |(a, b), &k| {
            (a + areas.levels[k], b + ratio[k])
        });
        let (mx, my) = (sx / m, sy / m);
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for &k in &fit {
            let dx = areas.levels[k] - mx;
            sxx += dx * dx;
            sxy += dx * (ratio[k] - my);
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Some((mx, my, slope))
    } else {
        None
    };
    for k in last + 1..n {
        let held = ratio[last];
        ratio[k] = match line {
            Some((mx, my, slope)) => {
                let v = my + slope * (areas.levels[k] - mx);
                if v > 0.0 {
                    v
                } else {
                    held
                }
            }
            None => held,
        };
    }
    let tau_bar = cumulative_trapezoid(&areas.levels, &ratio);
    Ok(EffectiveProfile {
        levels: areas.levels.clone(),
        tau_bar,
        ratio,
    })
}

/// Composes an effective profile with `ψ`.
pub fn compose(psi: &ScalarField, profile: &EffectiveProfile) -> Result<ScalarField> {
    let interp = profile.interpolant()?;
    let values = psi.values().iter().map(|&v| interp.eval(v.max(0.0))).collect();
    ScalarField::new(psi.grid(), values, BoundaryMode::Dirichlet)
}

/// Freidlin limit without the single-maximum precondition.
pub fn freidlin_limit_unchecked(psi: &ScalarField) -> Result<FreidlinResult> {
    let areas = area_profile(psi, DEFAULT_LEVELS)?;
    let profile = effective_profile(&areas)?;
    let tau_bar = compose(psi, &profile)?;
    Ok(FreidlinResult {
        tau_bar,
        profile,
        areas,
    })
}

/// Freidlin limit `τ̄` of the stream function `ψ`, which must be positive in
/// Ω with a single interior maximum and no other critical points.
pub fn freidlin_limit(psi: &ScalarField) -> Result<FreidlinResult> {
    require_single_max(psi)?;
    if psi.min() <= 0.0 {
        return Err(Error::InvalidArgument(
            "stream function must be positive inside the domain".into(),
        ));
    }
    freidlin_limit_unchecked(psi)
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub amplitude: f64,
    pub deviation: f64,
    pub scheme: Scheme,
    pub peclet: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<StudyRow>,
    /// Set when deviations grow after their largest value.
    pub flagged: bool,
}

/// Deviation `‖τ^{A∇⊥ψ} − τ̄‖∞` for each amplitude.
pub fn convergence_study(
    psi: &ScalarField,
    amplitudes: &[f64],
    opts: &SolveOptions,
) -> Result<ConvergenceStudy> {
    let limit = freidlin_limit(psi)?;
    let u = perp_gradient(&psi.clone().with_mode(BoundaryMode::Dirichlet));
    let mut rows = Vec::with_capacity(amplitudes.len());
    for &a in amplitudes {
        let o = SolveOptions {
            amplitude: a,
            ..*opts
        };
        let sol = solve_exit_time(psi.grid(), &u, &o)?;
        rows.push(StudyRow {
            amplitude: a,
            deviation: sol.tau.max_abs_diff(&limit.tau_bar),
            scheme: sol.scheme,
            peclet: sol.peclet,
        });
    }
    let flagged = !non_increasing_after_peak(&rows.iter().map(|r| r.deviation).collect::<Vec<_>>(), 0.0);
    Ok(ConvergenceStudy { rows, flagged })
}

/// True when the sequence never rises by more than `floor` after its peak.
pub fn non_increasing_after_peak(v: &[f64], floor: f64) -> bool {
    let Some(peak) = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])) else {
        return true;
    };
    v[peak..].windows(2).all(|w| w[1] <= w[0] + floor)
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalityRow {
    pub amplitude: f64,
    /// `‖τ − τ′‖∞` over nodes with `ψ ≤ h₀`.
    pub difference: f64,
    pub scheme: Scheme,
}

/// Compares exit times for two stream functions that agree outside
/// `{ψ > h₁}`, measuring the difference outside `{ψ > h₀}`.
pub fn locality_experiment(
    psi: &ScalarField,
    psi_mod: &ScalarField,
    h0: f64,
    h1: f64,
    amplitudes: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<LocalityRow>> {
    psi.check_same_grid(psi_mod.grid())?;
    let max = psi.max();
    if !(0.0 < h0 && h0 < h1 && h1 < max) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < h0 < h1 < max, got h0={h0}, h1={h1}, max={max}"
        )));
    }
    let outside = psi
        .values()
        .iter()
        .zip(psi_mod.values())
        .filter(|(&a, _)| a <= h1)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if outside > 1e-12 * max {
        return Err(Error::PerturbationNotLocal(outside));
    }
    let u = perp_gradient(&psi.clone().with_mode(BoundaryMode::Dirichlet));
    let u_mod = perp_gradient(&psi_mod.clone().with_mode(BoundaryMode::Dirichlet));
    let mask: Vec<bool> = psi.values().iter().map(|&v| v <= h0).collect();
    amplitudes
        .iter()
        .map(|&a| {
            let o = SolveOptions {
                amplitude: a,
                ..*opts
            };
            let t = solve_exit_time(psi.grid(), &u, &o)?;
            let tm = solve_exit_time(psi.grid(), &u_mod, &o)?;
            let difference = t
                .tau
                .values()
                .iter()
                .zip(tm.tau.values())
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|((x, y), _)| (x - y).abs())
                .fold(0.0, f64::max);
            let scheme = if t.upwinded || tm.upwinded {
                Scheme::Upwind
            } else {
                Scheme::Centered
            };
            Ok(LocalityRow {
                amplitude: a,
                difference,
                scheme,
            })
        })
        .collect()
}

/// Smooth cap of a stream function above `h1`: identity below, and
/// `s − (s − h1)²/(2(M − h1))` above, which is C¹ and increasing up to `M`.
pub fn smooth_cap(psi: &ScalarField, h1: f64) -> ScalarField {
    let m = psi.max();
    psi.map(|s| {
        if s <= h1 {
            s
        } else {
            s - (s - h1).powi(2) / (2.0 * (m - h1))
        }
    })
}

/// Non-radial modification above `h1`: `ψ + c·(ψ − h1)₊²·(x − x_max)`.
/// Agrees with `ψ` outside `{ψ > h1}` and is C¹.
pub fn skew_above(psi: &ScalarField, h1: f64, c: f64) -> ScalarField {
    let grid = psi.grid();
    let x0 = grid.position(psi.argmax())[0];
    let values = (0..grid.n_unknowns())
        .map(|u| {
            let s = psi.get(u);
            s + c * (s - h1).max(0.0).powi(2) * (grid.position(u)[0] - x0)
        })
        .collect();
    ScalarField::new(grid, values, psi.mode()).expect("same grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::torsion;
    use crate::grid::{build_domain, DomainSpec};
    use std::f64::consts::PI;

    fn synthetic(levels: Vec<f64>, a: Vec<f64>, p: Vec<f64>) -> AreaProfile {
        let n = levels.len();
        AreaProfile {
            max: *levels.last().unwrap(),
            domain_area: a[0],
            raw_area: a.clone(),
            t: vec![0.0; n],
            levels,
            area: a,
            p,
        }
    }

    #[test]
    fn equal_area_and_flux_give_identity_profile() {
        let h: Vec<f64> = (0..=200).map(|k| k as f64 / 800.0).collect();
        let a: Vec<f64> = h.iter().map(|v| PI * (1.0 - 4.0 * v)).collect();
        let e = effective_profile(&synthetic(h.clone(), a.clone(), a)).unwrap();
        for (x, t) in h.iter().zip(&e.tau_bar) {
            assert!((x - t).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_area_unit_flux() {
        let h: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
        let a: Vec<f64> = h.iter().map(|v| 1.0 - v).collect();
        let e = effective_profile(&synthetic(h.clone(), a, vec![1.0; 201])).unwrap();
        for (x, t) in h.iter().zip(&e.tau_bar) {
            assert!((t - (x - x * x / 2.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn non_positive_flux_is_an_error() {
        let h: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let mut p = vec![1.0; 11];
        p[3] = 0.0;
        let r = effective_profile(&synthetic(h, vec![1.0; 11], p));
        assert!(matches!(r, Err(Error::NonPositiveFlux { .. })));
    }

    #[test]
    fn torsion_solves_its_own_freidlin_problem() {
        let g = build_domain(DomainSpec::ellipse(2.0, 1.0, 128)).unwrap();
        let t = torsion(&g).unwrap();
        let f = freidlin_limit(&t).unwrap();
        assert!(f.tau_bar.max_abs_diff(&t) < 1e-3 * t.max());
    }

    #[test]
    fn doubled_disc_torsion_has_same_limit() {
        let g = build_domain(DomainSpec::unit_disc(128)).unwrap();
        let t = torsion(&g).unwrap();
        let f = freidlin_limit(&t.map(|v| 2.0 * v)).unwrap();
        assert!((f.profile.max() - 0.25).abs() < 1e-3);
        assert!(f.tau_bar.max_abs_diff(&t) < 1e-3);
    }

    #[test]
    fn limit_is_maximal_where_stream_function_is() {
        let g = build_domain(DomainSpec::ellipse(2.0, 1.0, 96)).unwrap();
        let psi = ScalarField::from_fn(&g, |x, y| (1.0 - x * x / 4.0 - y * y) * (1.0 + 0.2 * x))
            .with_mode(BoundaryMode::Dirichlet);
        let f = freidlin_limit(&psi).unwrap();
        assert_eq!(f.tau_bar.argmax(), psi.argmax());
    }

    #[test]
    fn multiple_maxima_are_rejected() {
        let g = build_domain(DomainSpec::ellipse(2.0, 1.0, 96)).unwrap();
        let psi = ScalarField::from_fn(&g, |x, y| {
            (1.0 - x * x / 4.0 - y * y) * (1.0 + 2.0 * (-(x - 1.0).powi(2) * 8.0).exp() + 2.0 * (-(x + 1.0).powi(2) * 8.0).exp())
        });
        assert!(matches!(
            freidlin_limit(&psi),
            Err(Error::CriticalPoints { .. })
        ));
    }

    #[test]
    fn peak_monotonicity_helper() {
        assert!(non_increasing_after_peak(&[0.0, 0.3, 0.2, 0.1], 0.0));
        assert!(!non_increasing_after_peak(&[0.3, 0.2, 0.25], 0.0));
        assert!(non_increasing_after_peak(&[0.3, 0.2, 0.2001], 1e-3));
    }

    #[test]
    fn identical_stream_functions_have_zero_locality_difference() {
        let g = build_domain(DomainSpec::unit_disc(48)).unwrap();
        let t = torsion(&g).unwrap();
        let rows = locality_experiment(&t, &t, 0.15, 0.2, &[0.0, 10.0], &SolveOptions::default()).unwrap();
        assert!(rows.iter().all(|r| r.difference == 0.0));
    }

    #[test]
    fn non_local_perturbation_is_rejected() {
        let g = build_domain(DomainSpec::unit_disc(48)).unwrap();
        let t = torsion(&g).unwrap();
        let t2 = t.map(|v| v * 1.01);
        assert!(matches!(
            locality_experiment(&t, &t2, 0.15, 0.2, &[1.0], &SolveOptions::default()),
            Err(Error::PerturbationNotLocal(_))
        ));
    }

    #[test]
    fn skewed_perturbation_is_local_and_decays() {
        let g = build_domain(DomainSpec::unit_disc(64)).unwrap();
        let psi = torsion(&g).unwrap().map(|v| 10.0 * v);
        let skewed = skew_above(&psi, 2.0, 1.0);
        assert!(skewed.max_abs_diff(&psi) > 1e-3);
        let rows =
            locality_experiment(&psi, &skewed, 1.5, 2.0, &[0.0, 10.0, 1000.0], &SolveOptions::default())
                .unwrap();
        assert_eq!(rows[0].difference, 0.0);
        assert!(rows[2].difference < 0.2 * rows[1].difference, "{rows:?}");
    }
}
