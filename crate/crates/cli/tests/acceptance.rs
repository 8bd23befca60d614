//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p exitlab-cli --test acceptance -- --nocapture` to
//! see the lines; the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use exitlab::critpoint::{
    hessian_at_max, iterate_stabilized, max_tau_bar, sample, variation, variation_fd, Reparam,
    Verdict,
};
use exitlab::elliptic::{solve_exit_time, torsion, SolveOptions};
use exitlab::flows::{velocity, FlowKind};
use exitlab::freidlin::{freidlin_limit, locality_experiment, non_increasing_after_peak, skew_above};
use exitlab::grid::perp_gradient;
use exitlab::montecarlo::{field_crosscheck, McConfig};
use exitlab::rearrange::apriori_checks;
use exitlab::{build_domain, BoundaryMode, DomainGrid, DomainSpec, ScalarField, VectorField};
use exitlab_cli::plan::{run_plan, ExperimentPlan, PlanOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 256;

/// Unit-square torsion maximum from the single-sine series
/// `x(1−x)/2 − (4/π³) Σ sin(nπx) cosh(nπ(y−½)) / (n³ cosh(nπ/2))` at the centre.
fn square_oracle() -> f64 {
    let tail: f64 = (0..20)
        .map(|k| {
            let n = (2 * k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign / (n.powi(3) * (n * PI / 2.0).cosh())
        })
        .sum();
    0.125 - 4.0 / PI.powi(3) * tail
}

/// Double sine series at the centre, summed to `m, n < terms`.
fn square_oracle_double(terms: usize) -> f64 {
    let mut s = 0.0;
    for m in (1..terms).step_by(2) {
        for n in (1..terms).step_by(2) {
            let sign = if (m + n) % 4 == 2 { 1.0 } else { -1.0 };
            let (m, n) = (m as f64, n as f64);
            s += sign / (m * n * (m * m + n * n));
        }
    }
    16.0 / PI.powi(4) * s
}

fn disc() -> Arc<DomainGrid> {
    build_domain(DomainSpec::unit_disc(N)).unwrap()
}

fn ellipse() -> Arc<DomainGrid> {
    build_domain(DomainSpec::ellipse(2.0, 1.0, N)).unwrap()
}

fn square() -> Arc<DomainGrid> {
    build_domain(DomainSpec::unit_square(N)).unwrap()
}

fn error_against(f: &ScalarField, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let g = f.grid();
    (0..g.n_unknowns())
        .map(|u| {
            let [x, y] = g.position(u);
            (f.get(u) - exact(x, y)).abs()
        })
        .fold(0.0, f64::max)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

struct Line {
    passed: bool,
    text: String,
}

fn line(passed: bool, text: String) -> Line {
    Line { passed, text }
}

struct Shared {
    ellipse_error: f64,
}

fn criterion1() -> (Line, Shared) {
    let oracle = square_oracle();
    let double = square_oracle_double(4001);
    let (d, td) = timed(|| torsion(&disc()).unwrap());
    let (e, te) = timed(|| torsion(&ellipse()).unwrap());
    let (s, ts) = timed(|| torsion(&square()).unwrap());
    let de = error_against(&d, |x, y| (1.0 - x * x - y * y) / 4.0);
    let ee = error_against(&e, |x, y| 0.4 * (1.0 - x * x / 4.0 - y * y));
    let se = (s.max() - oracle).abs();
    let slowest = td.max(te).max(ts);
    let passed = (oracle - 0.0736713).abs() < 1e-7
        && (double - oracle).abs() < 1e-6
        && de <= 5e-4
        && ee <= 1e-3
        && se <= 2e-4
        && slowest <= Duration::from_secs(30);
    let text = format!(
        "disc err {de:.2e} (<= 5e-4), ellipse err {ee:.2e} (<= 1e-3), square max {:.6} vs oracle {oracle:.6} (diff {se:.2e} <= 2e-4), slowest solve {:.1}s",
        s.max(),
        slowest.as_secs_f64()
    );
    (line(passed, text), Shared { ellipse_error: ee })
}

fn criterion2() -> Line {
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for (name, g) in [("disc", disc()), ("ellipse", ellipse()), ("square", square())] {
        let psi = torsion(&g).unwrap();
        let rel = freidlin_limit(&psi).unwrap().tau_bar.max_abs_diff(&psi) / psi.max();
        worst = worst.max(rel);
        parts.push(format!("{name} {rel:.1e}"));
    }
    line(worst <= 0.01, format!("|tau_bar - psi| / |psi|: {} (<= 1e-2)", parts.join(", ")))
}

fn criterion3() -> Line {
    let g = disc();
    let tau0 = torsion(&g).unwrap();
    let u = perp_gradient(&tau0.clone().with_mode(BoundaryMode::Dirichlet));
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for a in [1.0, 10.0, 100.0, 1000.0] {
        let sol = solve_exit_time(&g, &u, &SolveOptions::with_amplitude(a)).unwrap();
        let rel = sol.tau.max_abs_diff(&tau0) / tau0.max();
        worst = worst.max(rel);
        parts.push(format!("A={a} {rel:.1e}"));
    }
    line(worst <= 0.01, format!("relative deviation from tau0: {} (<= 1%)", parts.join(", ")))
}

fn criterion4(matrix: &PlanOutcome, elapsed: Duration) -> Line {
    let checks = matrix.report.checks.len();
    let failures: Vec<&str> = matrix.report.failures().map(|c| c.name.as_str()).collect();
    // 3 domains x 4 flows x 4 amplitudes, each with three norms and the pointwise bound.
    let expected = 3 * 4 * 4 * 4;
    let passed = matrix.success() && checks == expected && elapsed <= Duration::from_secs(1800);
    line(
        passed,
        format!(
            "{checks}/{expected} checks, {} failures {:?}, {:.0}s (<= 1800s)",
            failures.len(),
            failures,
            elapsed.as_secs_f64()
        ),
    )
}

struct Iterates {
    freidlin: exitlab::critpoint::IterationTrace,
    advective: exitlab::critpoint::IterationTrace,
    tau0: ScalarField,
}

fn criterion5(shared: &Shared) -> (Line, Iterates) {
    let g = ellipse();
    let freidlin = iterate_stabilized(&g, 200, Reparam::Freidlin, None).unwrap();
    let advective = iterate_stabilized(&g, 200, Reparam::Advective, None).unwrap();
    let sup = freidlin.phi.max();
    let lower = 0.4 + 5.0 * shared.ellipse_error;
    let upper = 0.5 * 1.01;
    let agree = freidlin.phi.max_abs_diff(&advective.phi) / sup;
    let converged = |t: &exitlab::critpoint::IterationTrace| {
        t.verdict == Verdict::Converged && t.records.len() <= 201
    };
    let passed = converged(&freidlin)
        && converged(&advective)
        && sup >= lower
        && sup <= upper
        && agree <= 0.03;
    let text = format!(
        "freidlin {} in {} steps, advective {} in {} steps; sup {sup:.5} in [{lower:.5}, {upper:.3}]; variants differ {:.2}% (<= 3%)",
        freidlin.verdict,
        freidlin.records.len() - 1,
        advective.verdict,
        advective.records.len() - 1,
        100.0 * agree
    );
    let tau0 = torsion(&g).unwrap();
    (
        line(passed, text),
        Iterates {
            freidlin,
            advective,
            tau0,
        },
    )
}

fn criterion6(it: &Iterates, figure: &PlanOutcome) -> Line {
    let mut names = Vec::new();
    let mut failures = Vec::new();
    let mut total = 0;
    for (label, trace) in [("ellipse-freidlin", &it.freidlin), ("ellipse-advective", &it.advective)] {
        let r = apriori_checks(&trace.phi, &it.tau0).unwrap();
        total += r.checks.len();
        for c in r.failures() {
            failures.push(format!("{label}:{}", c.name));
        }
        names.push(label.to_string());
    }
    // The figure plan verifies the a priori identities on its own iterates.
    let plan_checks: Vec<_> = figure
        .report
        .checks
        .iter()
        .filter(|c| c.provenance == "critpoint" || c.provenance == "levelset")
        .collect();
    total += plan_checks.len();
    failures.extend(plan_checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()));
    let plan_converged = figure
        .report
        .checks
        .iter()
        .filter(|c| c.name.ends_with("iteration-converged"))
        .all(|c| c.passed);
    let passed = failures.is_empty() && plan_checks.len() >= 8 && plan_converged;
    line(
        passed,
        format!(
            "{total} checks on {} and the figure plan iterates, failures {failures:?}",
            names.join(", ")
        ),
    )
}

fn criterion7(it: &Iterates) -> Line {
    let phi = hessian_at_max(&it.freidlin.phi).unwrap().ratio;
    let t = hessian_at_max(&it.tau0).unwrap().ratio;
    let passed = (0.95..=1.05).contains(&phi) && (0.475..=0.525).contains(&t);
    line(
        passed,
        format!("axis ratio phi* {phi:.4} (in [0.95, 1.05]), tau0 {t:.4} (in [0.475, 0.525])"),
    )
}

fn criterion8() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, g, (ea, eb)) in [("disc", disc(), (1.0, 1.0)), ("ellipse", ellipse(), (2.0, 1.0))] {
        let psi = torsion(&g).unwrap();
        let top = max_tau_bar(&psi).unwrap();
        let at = |x: f64, y: f64| sample(&psi, x, y).unwrap();
        let mut worst = 0.0_f64;
        let mut largest = 0.0_f64;
        for _ in 0..5 {
            let cx = rng.gen_range(-0.5..0.5) * ea;
            let cy = rng.gen_range(-0.5..0.5) * eb;
            let rho: f64 = rng.gen_range(0.2..0.4);
            let (dx, dy): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let v = move |x: f64, y: f64| {
                let r2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (rho * rho);
                if r2 >= 1.0 {
                    [0.0, 0.0]
                } else {
                    let b = (1.0 - r2).powi(3);
                    [dx * b, dy * b]
                }
            };
            let field = VectorField::from_fn(&g, v);
            let analytic = variation(&psi, &field).unwrap();
            let fd = variation_fd(&psi, &at, &v, 1e-2).unwrap();
            let floor = 5e-3 * top * field.max_norm();
            let tol = (0.05 * fd.abs()).max(floor);
            let gap = (analytic - fd).abs();
            passed &= gap <= tol;
            if name == "disc" {
                passed &= analytic.abs() <= floor && fd.abs() <= floor;
            }
            worst = worst.max(gap / tol);
            largest = largest.max(analytic.abs() / floor);
        }
        parts.push(format!("{name}: worst gap/tol {worst:.2}, max |V|/floor {largest:.2}"));
    }
    line(passed, format!("5 bump directions per domain; {}", parts.join("; ")))
}

fn criterion9() -> Line {
    let t = Instant::now();
    let cfg = McConfig {
        dt: 1e-4,
        paths: 100_000,
        seed: 2024,
        ..McConfig::default()
    };
    let mut passed = true;
    let mut parts = Vec::new();

    let g = disc();
    let u = velocity(&g, &FlowKind::Torsion).unwrap();
    let a = 100.0;
    let tau = solve_exit_time(&g, &u, &SolveOptions::with_amplitude(a)).unwrap().tau;
    let points = [[0.0, 0.0], [0.3, 0.2], [-0.5, 0.1], [0.1, -0.6], [-0.25, -0.35]];
    let (rows, report) =
        field_crosscheck(&tau, Some(&u), &points, &McConfig { amplitude: a, ..cfg }).unwrap();
    let centre = &rows[0].estimate;
    let z = (centre.mean - 0.25) / centre.stderr;
    passed &= report.passed() && z.abs() <= 3.0;
    parts.push(format!(
        "disc (torsion flow, A={a}) {}/5, centre {:.5} (z={z:.2})",
        rows.iter().filter(|r| r.passed).count(),
        centre.mean
    ));

    let g = ellipse();
    let tau = torsion(&g).unwrap();
    let points = [[0.0, 0.0], [1.0, 0.3], [-1.2, -0.2], [0.5, -0.5], [-0.4, 0.6]];
    let (rows, report) = field_crosscheck(&tau, None, &points, &cfg).unwrap();
    passed &= report.passed();
    parts.push(format!("ellipse (no flow) {}/5", rows.iter().filter(|r| r.passed).count()));

    let elapsed = t.elapsed();
    passed &= elapsed <= Duration::from_secs(600);
    line(
        passed,
        format!("{}; {:.0}s (<= 600s)", parts.join("; "), elapsed.as_secs_f64()),
    )
}

fn criterion10() -> Line {
    let g = disc();
    let psi = torsion(&g).unwrap().map(|v| 10.0 * v);
    let (h0, h1) = (1.5, 2.0);
    let modified = skew_above(&psi, h1, 1.0);
    let amps = [10.0, 100.0, 1000.0];
    let rows =
        locality_experiment(&psi, &modified, h0, h1, &amps, &SolveOptions::default()).unwrap();
    let diffs: Vec<f64> = rows.iter().map(|r| r.difference).collect();
    let floor = 1e-6 * psi.max() / 10.0;
    let monotone = diffs.windows(2).all(|w| w[1] <= w[0] + floor);
    let passed = monotone && non_increasing_after_peak(&diffs, floor);
    line(
        passed,
        format!(
            "outside the h0 level: {} (non-increasing up to {floor:.1e})",
            rows.iter()
                .map(|r| format!("A={} {:.2e}", r.amplitude, r.difference))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

struct PlanRuns {
    matrix: PlanOutcome,
    matrix_time: Duration,
    figure: PlanOutcome,
    identical: Vec<(String, usize, Vec<String>)>,
}

fn run_plans() -> PlanRuns {
    let mut identical = Vec::new();
    let mut outcomes = Vec::new();
    for name in ["theorem12-matrix", "reproduce-figure1"] {
        let plan = ExperimentPlan::load(name).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (first, elapsed) = timed(|| run_plan(&plan, a.path(), Some(11)).unwrap());
        run_plan(&plan, b.path(), Some(11)).unwrap();
        let (fa, fb) = (files(a.path()), files(b.path()));
        let differing: Vec<String> = fa
            .keys()
            .chain(fb.keys())
            .filter(|k| fa.get(*k) != fb.get(*k))
            .cloned()
            .collect();
        identical.push((name.to_string(), fa.len(), differing));
        outcomes.push((first, elapsed));
    }
    let (figure, _) = outcomes.pop().unwrap();
    let (matrix, matrix_time) = outcomes.pop().unwrap();
    PlanRuns {
        matrix,
        matrix_time,
        figure,
        identical,
    }
}

fn criterion11(runs: &PlanRuns) -> Line {
    let passed = runs
        .identical
        .iter()
        .all(|(_, n, diff)| *n > 0 && diff.is_empty());
    line(
        passed,
        runs.identical
            .iter()
            .map(|(name, n, diff)| format!("{name}: {n} files, differing {diff:?}"))
            .collect::<Vec<_>>()
            .join("; "),
    )
}

#[test]
fn acceptance_criteria() {
    let runs = run_plans();
    let (l1, shared) = criterion1();
    let (l5, iterates) = criterion5(&shared);
    let lines = [
        l1,
        criterion2(),
        criterion3(),
        criterion4(&runs.matrix, runs.matrix_time),
        l5,
        criterion6(&iterates, &runs.figure),
        criterion7(&iterates),
        criterion8(),
        criterion9(),
        criterion10(),
        criterion11(&runs),
    ];
    let mut summary = String::new();
    for (k, l) in lines.iter().enumerate() {
        let verdict = if l.passed { "PASS" } else { "FAIL" };
        summary += &format!("{verdict} criterion {}: {}\n", k + 1, l.text);
    }
    print!("{summary}");
    assert!(lines.iter().all(|l| l.passed), "\n{summary}");
}
