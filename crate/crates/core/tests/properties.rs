use std::f64::consts::PI;
use std::sync::Arc;

use exitlab::elliptic::{lp_norm, solve_exit_time, torsion, SolveOptions};
use exitlab::flows::{velocity, FlowKind};
use exitlab::freidlin::freidlin_limit;
use exitlab::grid::{divergence, perp_gradient};
use exitlab::levelset::{area_profile, DEFAULT_LEVELS};
use exitlab::montecarlo::{sample_exit_time, McConfig};
use exitlab::rearrange::symmetric_rearrangement;
use exitlab::{build_domain, BoundaryMode, DomainGrid, DomainSpec, Relation, ScalarField, VerificationReport};
use proptest::prelude::*;

fn ellipse(a: f64, b: f64, n: usize) -> Arc<DomainGrid> {
    build_domain(DomainSpec::ellipse(a, b, n)).unwrap()
}

fn flow() -> impl Strategy<Value = FlowKind> {
    prop_oneof![
        Just(FlowKind::Zero),
        Just(FlowKind::Cellular),
        Just(FlowKind::Shear),
        Just(FlowKind::Torsion),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn perp_gradient_is_discretely_divergence_free(
        a in 1.0f64..2.5, b in 0.6f64..1.5, k in 0.5f64..4.0, c in -1.0f64..1.0,
    ) {
        let g = ellipse(a, b, 48);
        let f = ScalarField::from_fn(&g, |x, y| (k * x).sin() * (y + c).cosh() + c * x * y * y)
            .with_mode(BoundaryMode::Dirichlet);
        let div = divergence(&perp_gradient(&f));
        let interior: Vec<usize> = (0..g.n_unknowns()).filter(|&u| g.is_deep_interior(u)).collect();
        let worst = interior.iter().map(|&u| div.get(u).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn domain_area_matches_profile_base(a in 0.8f64..2.5, b in 0.8f64..2.0) {
        let g = ellipse(a, b, 64);
        prop_assert!((g.area() - PI * a * b).abs() < 0.01 * PI * a * b);
        let p = area_profile(&torsion(&g).unwrap(), DEFAULT_LEVELS).unwrap();
        prop_assert!((p.area[0] - g.area()).abs() <= 0.01 * g.area());
    }

    #[test]
    fn exit_times_obey_maximum_principle_and_ball_bound(
        kind in flow(), amp in prop_oneof![Just(0.0), 1.0f64..10.0, 10.0f64..1000.0],
    ) {
        let g = build_domain(DomainSpec::unit_disc(48)).unwrap();
        let u = velocity(&g, &kind).unwrap();
        let tau = solve_exit_time(&g, &u, &SolveOptions::with_amplitude(amp)).unwrap().tau;
        prop_assert!(tau.min() >= -1e-10);
        // The disc is its own equal-measure ball.
        let tau0 = torsion(&g).unwrap();
        prop_assert!(tau.max() <= tau0.max() * 1.01, "{} vs {}", tau.max(), tau0.max());
        let gamma = symmetric_rearrangement(&tau).unwrap();
        let slack = 0.01 * gamma.rho * gamma.rho / 4.0;
        for (r, v) in gamma.radius.iter().zip(&gamma.gamma) {
            prop_assert!(*v <= (gamma.rho * gamma.rho - r * r) / 4.0 + slack);
        }
    }

    #[test]
    fn freidlin_limit_is_reparametrization_invariant(
        a in 1.0f64..2.0, alpha in 0.0f64..4.0, lambda in 0.1f64..6.0,
    ) {
        let g = ellipse(a, 1.0, 96);
        let psi = torsion(&g).unwrap();
        let base = freidlin_limit(&psi).unwrap();
        let scale = base.tau_bar.max();
        for f in [
            psi.map(|s| s + alpha * s * s),
            psi.map(|s| ((lambda * s).exp() - 1.0) / lambda),
        ] {
            let other = freidlin_limit(&f).unwrap();
            let dev = other.tau_bar.max_abs_diff(&base.tau_bar);
            prop_assert!(dev <= 0.02 * scale, "{dev}");
            prop_assert_eq!(other.tau_bar.argmax(), f.argmax());
        }
    }

    #[test]
    fn rearrangement_is_equimeasurable(a in 1.0f64..2.5, amp in 0.0f64..50.0, kind in flow()) {
        let g = ellipse(a, 1.0, 64);
        let u = velocity(&g, &kind).unwrap();
        let tau = solve_exit_time(&g, &u, &SolveOptions::with_amplitude(amp)).unwrap().tau;
        let gamma = symmetric_rearrangement(&tau).unwrap();
        let profile = area_profile(&tau, DEFAULT_LEVELS).unwrap();
        let m = profile.max;
        for k in 1..=20 {
            let h = m * k as f64 / 21.0;
            let idx = profile.levels.partition_point(|&l| l < h).min(profile.len() - 1);
            let area = profile.area[idx];
            // Radius where γ drops to the level.
            let mut lo = 0.0;
            let mut hi = gamma.rho;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if gamma.eval(mid) > profile.levels[idx] { lo = mid } else { hi = mid }
            }
            let ball = PI * lo * lo;
            prop_assert!((ball - area).abs() <= 0.01 * g.area(), "h={h}: {ball} vs {area}");
        }
        for p in [1.0, 2.0, 4.0, f64::INFINITY] {
            let (x, y) = (gamma.lp_norm(p), lp_norm(&tau, p).unwrap());
            prop_assert!((x - y).abs() <= 0.01 * y, "p={p}: {x} vs {y}");
        }
    }

    #[test]
    fn lp_norm_is_homogeneous(s in 0.1f64..10.0, p in prop_oneof![Just(f64::INFINITY), 1.0f64..6.0]) {
        let g = build_domain(DomainSpec::unit_disc(32)).unwrap();
        let t = torsion(&g).unwrap();
        let (a, b) = (lp_norm(&t.map(|v| s * v), p).unwrap(), lp_norm(&t, p).unwrap());
        prop_assert!((a - s * b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn report_verdict_is_conjunction(entries in prop::collection::vec((0.0f64..2.0, 0usize..3), 0..12)) {
        let mut r = VerificationReport::new();
        for (i, (m, rel)) in entries.iter().enumerate() {
            let rel = [Relation::AtMost, Relation::LessThan, Relation::Equal][*rel];
            r.push(format!("c{i}"), *m, rel, 1.0, 0.1, "test");
        }
        prop_assert_eq!(r.passed(), r.checks.iter().all(|c| c.passed));
        prop_assert_eq!(r.failures().count(), r.checks.iter().filter(|c| !c.passed).count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn monte_carlo_is_reproducible(seed in any::<u64>(), x in -0.5f64..0.5, amp in 0.0f64..20.0) {
        let g = build_domain(DomainSpec::unit_disc(32)).unwrap();
        let u = velocity(&g, &FlowKind::Torsion).unwrap();
        let cfg = McConfig { start: [x, 0.1], dt: 2e-3, paths: 1000, seed, amplitude: amp, ..McConfig::default() };
        let a = sample_exit_time(&g, Some(&u), &cfg).unwrap();
        let b = sample_exit_time(&g, Some(&u), &cfg).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }
}
