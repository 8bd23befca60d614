//! Symmetric decreasing rearrangement and the ball comparison for exit times.

use std::f64::consts::PI;

use serde::Serialize;

use crate::critpoint::apriori;
use crate::elliptic::lp_norm;
use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::levelset::{area_profile, DEFAULT_LEVELS};
use crate::numerics::lerp_table;
use crate::report::{Relation, VerificationReport};

/// Relative slack on inequality checks.
pub const SLACK: f64 = 0.01;

/// Relative tolerance on the identities of candidate critical points.
pub const IDENTITY_TOL: f64 = 0.03;

/// Radial profile `γ(|x|) = τ*(x)` on the ball of the same area.
#[derive(Debug, Clone, Serialize)]
pub struct RadialProfile {
    /// Increasing radii from 0 to `rho`.
    pub radius: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rho: f64,
}

impl RadialProfile {
    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.rho {
            0.0
        } else {
            lerp_table(&self.radius, &self.gamma, r.max(0.0))
        }
    }

    /// `‖γ(|·|)‖_p` over the disc of radius `rho`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.gamma.iter().copied().fold(0.0, f64::max);
        }
        let mut s = 0.0;
        for w in self.radius.windows(2).zip(self.gamma.windows(2)) {
            let ([r0, r1], [g0, g1]) = (w.0, w.1) else { unreachable!() };
            // Exact for the integrand 2πr·g^p with g^p linear on the piece.
            let (f0, f1) = (g0.powf(p), g1.powf(p));
            let dr = r1 - r0;
            s += 2.0 * PI * dr * (r0 * (2.0 * f0 + f1) + r1 * (f0 + 2.0 * f1)) / 6.0;
        }
        s.powf(1.0 / p)
    }

    /// Upper bound `(ρ² − r²)/4` at each radius.
    pub fn bound(&self) -> Vec<f64> {
        self.radius
            .iter()
            .map(|r| (self.rho * self.rho - r * r) / 4.0)
            .collect()
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "r,gamma,bound")?;
        for ((r, g), b) in self.radius.iter().zip(&self.gamma).zip(self.bound()) {
            writeln!(w, "{r},{g},{b}")?;
        }
        Ok(())
    }
}

/// Rearranges a non-negative field by inverting its super-level areas:
/// `γ(r) = sup{h : |{τ > h}| ≥ πr²}`.
pub fn symmetric_rearrangement(tau: &ScalarField) -> Result<RadialProfile> {
    let tau = tau.map(|v| v.max(0.0));
    let rho = (tau.grid().area() / PI).sqrt();
    if !(tau.max() > 0.0) {
        return Ok(RadialProfile {
            radius: vec![0.0, rho],
            gamma: vec![0.0, 0.0],
            rho,
        });
    }
    let profile = area_profile(&tau, DEFAULT_LEVELS)?;
    let mut radius = vec![rho];
    let mut gamma = vec![0.0];
    for (h, a) in profile.levels.iter().zip(&profile.area) {
        let r = (a / PI).sqrt().min(rho);
        // Flat stretches of the area curve map to one radius; keep the
        // largest level there.
        if r < *radius.last().unwrap() {
            radius.push(r);
            gamma.push(*h);
        } else {
            *gamma.last_mut().unwrap() = *h;
        }
    }
    if *radius.last().unwrap() > 0.0 {
        radius.push(0.0);
        gamma.push(profile.max);
    }
    radius.reverse();
    gamma.reverse();
    Ok(RadialProfile { radius, gamma, rho })
}

/// Volume of the unit ball in `n` dimensions.
pub fn unit_ball_volume(n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Torsion function of the ball of volume `volume` centred at the origin,
/// `(ρ² − |x|²)/(2n)`.
pub fn ball_exit_time(n: u32, volume: f64, x: &[f64]) -> Result<f64> {
    if n == 0 || x.len() != n as usize {
        return Err(Error::InvalidArgument(format!(
            "point has {} coordinates for dimension {n}",
            x.len()
        )));
    }
    if !(volume > 0.0) {
        return Err(Error::InvalidArgument(format!("volume must be positive, got {volume}")));
    }
    let rho2 = (volume / unit_ball_volume(n)).powf(2.0 / n as f64);
    let r2: f64 = x.iter().map(|c| c * c).sum();
    if r2 > rho2 * (1.0 + 1e-12) {
        return Err(Error::OutsideDomain { x: x[0], y: x.get(1).copied().unwrap_or(0.0) });
    }
    Ok(((rho2 - r2) / (2.0 * n as f64)).max(0.0))
}

/// `‖τ^{0,D}‖_p` for the disc `D` of area `area`.
pub fn ball_norm(area: f64, p: f64) -> f64 {
    let rho2 = area / PI;
    if p.is_infinite() {
        rho2 / 4.0
    } else {
        (PI * rho2.powf(p + 1.0) / (4f64.powf(p) * (p + 1.0))).powf(1.0 / p)
    }
}

fn p_label(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

/// Compares `‖τ‖_p` with the torsion function of the disc of equal area,
/// and checks the rearranged pointwise bound `γ(r) ≤ (ρ² − r²)/4`.
pub fn verify_theorem_12(tau: &ScalarField, p_list: &[f64]) -> Result<VerificationReport> {
    let area = tau.grid().area();
    let mut report = VerificationReport::new();
    for &p in p_list {
        let measured = lp_norm(tau, p)?;
        let bound = ball_norm(area, p);
        report.push(
            format!("lp-comparison-p{}", p_label(p)),
            measured,
            Relation::AtMost,
            bound,
            SLACK * bound,
            "rearrange",
        );
    }
    let gamma = symmetric_rearrangement(tau)?;
    let excess = gamma
        .gamma
        .iter()
        .zip(gamma.bound())
        .map(|(g, b)| g - b)
        .fold(f64::NEG_INFINITY, f64::max);
    report.push(
        "rearranged-pointwise-bound",
        excess,
        Relation::AtMost,
        0.0,
        SLACK * gamma.rho * gamma.rho / 4.0,
        "rearrange",
    );
    Ok(report)
}

/// A priori identities of a candidate critical point `φ`, plus the
/// self-consistency `a(h) = ∮|∇φ|` of its level sets.
pub fn apriori_checks(phi: &ScalarField, tau0: &ScalarField) -> Result<VerificationReport> {
    let area = phi.grid().area();
    let a = apriori(phi, tau0)?;
    let mut report = VerificationReport::new();
    let sup_bound = area / (4.0 * PI);
    report.push(
        "sup-norm-bound",
        a.sup_ratio * sup_bound,
        Relation::AtMost,
        sup_bound,
        SLACK * sup_bound,
        "critpoint",
    );
    report.push(
        "laplacian-l1-identity",
        a.laplacian_l1_ratio * area,
        Relation::Equal,
        area,
        IDENTITY_TOL * area,
        "critpoint",
    );
    report.push(
        "laplacian-deviation-bound",
        a.deviation_ratio * area,
        Relation::LessThan,
        area,
        0.0,
        "critpoint",
    );
    let profile = area_profile(phi, DEFAULT_LEVELS)?;
    let worst = (0..=profile.last_regular())
        .filter(|&k| profile.area[k] > 0.0)
        .map(|k| (profile.area[k] - profile.p[k]).abs() / profile.area[k])
        .fold(0.0, f64::max);
    report.push(
        "freidlin-constraint",
        worst,
        Relation::AtMost,
        0.0,
        IDENTITY_TOL,
        "levelset",
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::torsion;
    use crate::grid::{build_domain, DomainSpec};

    #[test]
    fn disc_torsion_is_already_radial() {
        let g = build_domain(DomainSpec::unit_disc(256)).unwrap();
        let t = torsion(&g).unwrap();
        let gamma = symmetric_rearrangement(&t).unwrap();
        for k in 0..=50 {
            let r = k as f64 / 50.0 * gamma.rho;
            assert!((gamma.eval(r) - (1.0 - r * r) / 4.0).abs() < 2e-3, "{r}");
        }
    }

    #[test]
    fn ellipse_rearrangement() {
        let g = build_domain(DomainSpec::ellipse(2.0, 1.0, 256)).unwrap();
        let t = torsion(&g).unwrap();
        let gamma = symmetric_rearrangement(&t).unwrap();
        assert!((gamma.eval(0.0) - 0.4).abs() < 1e-3);
        assert!((gamma.rho - 2f64.sqrt()).abs() < 1e-3);
        for p in [1.0, 2.0, 4.0, f64::INFINITY] {
            let a = gamma.lp_norm(p);
            let b = lp_norm(&t, p).unwrap();
            assert!((a - b).abs() <= 0.01 * b, "p={p}: {a} vs {b}");
        }
    }

    #[test]
    fn ball_formula() {
        assert!((ball_exit_time(2, PI, &[0.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((ball_exit_time(3, 4.0 * PI / 3.0, &[0.0; 3]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(ball_exit_time(2, PI, &[1.0, 0.0]).unwrap().abs() < 1e-15);
        assert!(ball_exit_time(2, PI, &[1.1, 0.0]).is_err());
        assert!((unit_ball_volume(5) - 8.0 * PI * PI / 15.0).abs() < 1e-14);
    }

    #[test]
    fn ball_norms_match_quadrature() {
        let gamma = RadialProfile {
            radius: (0..=2000).map(|k| k as f64 / 2000.0).collect(),
            gamma: (0..=2000)
                .map(|k| {
                    let r = k as f64 / 2000.0;
                    (1.0 - r * r) / 4.0
                })
                .collect(),
            rho: 1.0,
        };
        for p in [1.0, 2.0, 3.0, f64::INFINITY] {
            let (a, b) = (gamma.lp_norm(p), ball_norm(PI, p));
            assert!((a - b).abs() < 1e-6 * b, "{p}: {a} {b}");
        }
    }

    #[test]
    fn theorem_checks_on_torsion_functions() {
        let ps = [1.0, 2.0, f64::INFINITY];
        let disc = build_domain(DomainSpec::unit_disc(128)).unwrap();
        let r = verify_theorem_12(&torsion(&disc).unwrap(), &ps).unwrap();
        assert!(r.passed(), "{r:?}");
        let sup = &r.checks[2];
        assert!((sup.measured - sup.bound).abs() < 0.01 * sup.bound);
        let ell = build_domain(DomainSpec::ellipse(2.0, 1.0, 128)).unwrap();
        let r = verify_theorem_12(&torsion(&ell).unwrap(), &ps).unwrap();
        assert!(r.passed());
        assert!((r.checks[2].bound - r.checks[2].measured - 0.1).abs() < 2e-3);
    }

    #[test]
    fn apriori_report_flags_violation() {
        let g = build_domain(DomainSpec::unit_disc(128)).unwrap();
        let t = torsion(&g).unwrap();
        let r = apriori_checks(&t, &t).unwrap();
        assert!(r.passed(), "{r:?}");
        let twice = t.map(|v| 2.0 * v);
        let r = apriori_checks(&twice, &t).unwrap();
        assert!(!r.checks[0].passed);
    }
}
