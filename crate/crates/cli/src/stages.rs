//! Work performed by subcommands and plan stages. Every function writes its
//! artifacts under `out` and returns them together with any checks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use exitlab::critpoint::{hessian_at_max, iterate_naive, iterate_stabilized, IterationTrace, Reparam};
use exitlab::elliptic::{solve_exit_time, torsion, ExitTimeSolution};
use exitlab::flows::{stream_function, velocity, FlowKind};
use exitlab::freidlin::{convergence_study, freidlin_limit, locality_experiment, skew_above};
use exitlab::montecarlo::{field_crosscheck, sample_exit_time, McEstimate};
use exitlab::rearrange::{apriori_checks, symmetric_rearrangement, verify_theorem_12};
use exitlab::{BoundaryMode, DomainGrid, Relation, ScalarField, VerificationReport};
use serde::Serialize;

use crate::config::{Config, DomainConfig};
use crate::plot::{render_svg, Panel, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Exit time of some flow; subject to the ball comparison.
    ExitTime,
    /// Candidate critical point; subject to the a priori checks.
    CriticalPoint,
    Other,
}

#[derive(Debug, Clone)]
pub struct Artifact {
    /// Name unique within its stage, e.g. `phi` or `tau-A10`.
    pub key: String,
    pub path: PathBuf,
    pub role: Role,
    pub title: String,
    pub note: Option<String>,
    pub domain: Option<DomainConfig>,
}

#[derive(Debug, Default)]
pub struct StageOutput {
    pub artifacts: Vec<Artifact>,
    pub report: VerificationReport,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn write_field(f: &ScalarField, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    f.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> exitlab::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_field(grid: &Arc<DomainGrid>, path: &Path, mode: BoundaryMode) -> Result<ScalarField> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ScalarField::read_csv(grid, BufReader::new(f), mode)
        .with_context(|| format!("reading field {}", path.display()))
}

fn amp_label(a: f64) -> String {
    format!("A{a}")
}

#[derive(Serialize)]
struct SolveRecord {
    amplitude: f64,
    flow: String,
    residual: f64,
    iterations: usize,
    scheme: String,
    upwinded: bool,
    peclet: f64,
    flow_warning: bool,
    max: f64,
    l1: f64,
    l2: f64,
}

fn record(sol: &ExitTimeSolution, flow: &FlowKind, amplitude: f64) -> Result<SolveRecord> {
    Ok(SolveRecord {
        amplitude,
        flow: flow.to_string(),
        residual: sol.residual,
        iterations: sol.iterations,
        scheme: sol.scheme.to_string(),
        upwinded: sol.upwinded,
        peclet: sol.peclet,
        flow_warning: sol.flow_warning(),
        max: sol.tau.max(),
        l1: exitlab::elliptic::lp_norm(&sol.tau, 1.0)?,
        l2: exitlab::elliptic::lp_norm(&sol.tau, 2.0)?,
    })
}

/// Solves for the exit time at each amplitude; fields go to
/// `out/tau-A{a}.csv`, run records to `out/solve.json`.
pub fn solve(cfg: &Config, amplitudes: &[f64], out: &Path) -> Result<StageOutput> {
    let domain = cfg.domain()?;
    let grid = domain.build()?;
    let kind = cfg.flow_kind()?;
    let u = velocity(&grid, &kind)?;
    let mut output = StageOutput::default();
    let mut records = Vec::new();
    for &a in amplitudes {
        let sol = solve_exit_time(&grid, &u, &cfg.solve_options(a)?)?;
        let key = format!("tau-{}", amp_label(a));
        let path = out.join(format!("{key}.csv"));
        write_field(&sol.tau, &path)?;
        records.push(record(&sol, &kind, a)?);
        output.artifacts.push(Artifact {
            key,
            path,
            role: Role::ExitTime,
            title: format!("{} {kind} A={a}", domain.label()),
            note: None,
            domain: Some(domain.clone()),
        });
    }
    write_json(&records, &out.join("solve.json"))?;
    Ok(output)
}

/// Freidlin limit of a stream function read from `stream` or named in the
/// config, with the optional convergence study and locality experiment.
pub fn freidlin(cfg: &Config, stream: Option<&Path>, out: &Path) -> Result<StageOutput> {
    let domain = cfg.domain()?;
    let grid = domain.build()?;
    let psi = match stream {
        Some(p) => read_field(&grid, p, BoundaryMode::Dirichlet)?,
        None => {
            let kind: FlowKind = cfg.freidlin.stream.as_deref().unwrap_or("torsion").parse()?;
            stream_function(&grid, &kind)?
        }
    };
    let limit = freidlin_limit(&psi)?;
    write_with(&out.join("profile.csv"), |w| {
        limit.areas.write_csv(w, Some(&limit.profile.tau_bar))
    })?;
    let tau_bar_path = out.join("tau_bar.csv");
    write_field(&limit.tau_bar, &tau_bar_path)?;
    let mut output = StageOutput::default();
    output.artifacts.push(Artifact {
        key: "tau_bar".into(),
        path: tau_bar_path,
        role: Role::Other,
        title: format!("{} Freidlin limit", domain.label()),
        note: None,
        domain: Some(domain.clone()),
    });
    let opts = cfg.solve_options(0.0)?;
    if !cfg.freidlin.amplitudes.is_empty() {
        let study = convergence_study(&psi, &cfg.freidlin.amplitudes, &opts)?;
        write_with(&out.join("study.csv"), |w| {
            writeln!(w, "amplitude,deviation,scheme,peclet")?;
            for r in &study.rows {
                writeln!(w, "{},{},{},{}", r.amplitude, r.deviation, r.scheme, r.peclet)?;
            }
            Ok(())
        })?;
        write_json(&study, &out.join("study.json"))?;
    }
    if let Some(loc) = &cfg.freidlin.locality {
        let modified = skew_above(&psi, loc.h1, loc.strength);
        let amplitudes = if cfg.freidlin.amplitudes.is_empty() {
            vec![10.0, 100.0, 1000.0]
        } else {
            cfg.freidlin.amplitudes.clone()
        };
        let rows = locality_experiment(&psi, &modified, loc.h0, loc.h1, &amplitudes, &opts)?;
        write_with(&out.join("locality.csv"), |w| {
            writeln!(w, "amplitude,difference,scheme")?;
            for r in &rows {
                writeln!(w, "{},{},{}", r.amplitude, r.difference, r.scheme)?;
            }
            Ok(())
        })?;
        let floor = LOCALITY_FLOOR * torsion(&grid)?.max();
        let rise = rows
            .windows(2)
            .filter(|w| w[0].amplitude > 0.0)
            .map(|w| w[1].difference - w[0].difference)
            .fold(f64::NEG_INFINITY, f64::max);
        if rise.is_finite() {
            output.report.push(
                format!("{}:locality-non-increasing", domain.label()),
                rise,
                Relation::AtMost,
                0.0,
                floor,
                "freidlin",
            );
        }
    }
    Ok(output)
}

/// Differences below this fraction of `‖τ⁰‖∞` count as discretization
/// noise in the locality experiment.
pub const LOCALITY_FLOOR: f64 = 1e-6;

pub fn run_iteration(grid: &Arc<DomainGrid>, cfg: &Config) -> Result<IterationTrace> {
    let it = &cfg.iterate;
    Ok(match it.scheme.as_str() {
        "naive" => iterate_naive(grid, it.max_steps)?,
        s => iterate_stabilized(grid, it.max_steps, s.parse::<Reparam>()?, it.amplitude)?,
    })
}

#[derive(Serialize)]
struct IterateSummary<'a> {
    scheme: &'a str,
    verdict: String,
    steps: usize,
    amplitude: Option<f64>,
    multiple_maxima: bool,
    sup_norm: f64,
    hessian_phi: Option<exitlab::critpoint::HessianFit>,
    hessian_tau0: Option<exitlab::critpoint::HessianFit>,
}

/// Runs the critical-point iteration and writes the trace, the final iterate,
/// `τ⁰`, a side-by-side contour figure and the a priori checks.
pub fn iterate(cfg: &Config, out: &Path) -> Result<StageOutput> {
    let domain = cfg.domain()?;
    let grid = domain.build()?;
    let trace = run_iteration(&grid, cfg)?;
    let tau0 = torsion(&grid)?;
    write_with(&out.join("trace.csv"), |w| trace.write_csv(w))?;
    let phi_path = out.join("phi.csv");
    let tau0_path = out.join("tau0.csv");
    write_field(&trace.phi, &phi_path)?;
    write_field(&tau0, &tau0_path)?;
    let h_phi = hessian_at_max(&trace.phi).ok();
    let h_tau = hessian_at_max(&tau0).ok();
    let ratio_note = |h: Option<exitlab::critpoint::HessianFit>| {
        h.map(|h| format!("axis ratio at max {:.3}", h.ratio))
    };
    let label = domain.label();
    let mut phi_art = Artifact {
        key: "phi".into(),
        path: phi_path,
        role: Role::CriticalPoint,
        title: format!("Maximiser, {label}"),
        note: ratio_note(h_phi),
        domain: Some(domain.clone()),
    };
    let tau_art = Artifact {
        key: "tau0".into(),
        path: tau0_path,
        role: Role::ExitTime,
        title: format!("Expected exit time, {label}"),
        note: ratio_note(h_tau),
        domain: Some(domain.clone()),
    };
    let levels = cfg.plot.levels;
    let mut panels = Vec::new();
    for (a, f) in [(&phi_art, &trace.phi), (&tau_art, &tau0)] {
        let mut p = Panel::new(a.title.clone(), Raster::from_field(f), levels);
        p.note = a.note.clone();
        panels.push(p);
    }
    std::fs::write(out.join("figure.svg"), render_svg(&panels, 2))?;
    let mut output = StageOutput::default();
    let converged = trace.verdict == exitlab::critpoint::Verdict::Converged;
    output.report.push(
        format!("{label}:iteration-converged"),
        if converged { 1.0 } else { 0.0 },
        Relation::Equal,
        1.0,
        0.0,
        "critpoint",
    );
    // A priori checks are reported by verify stages; here they are only
    // written alongside the iterate.
    if converged {
        write_json(&apriori_checks(&trace.phi, &tau0)?, &out.join("apriori.json"))?;
    } else {
        phi_art.role = Role::Other;
    }
    write_json(
        &IterateSummary {
            scheme: &cfg.iterate.scheme,
            verdict: trace.verdict.to_string(),
            steps: trace.records.len(),
            amplitude: trace.amplitude,
            multiple_maxima: trace.multiple_maxima,
            sup_norm: trace.phi.max(),
            hessian_phi: h_phi,
            hessian_tau0: h_tau,
        },
        &out.join("iterate.json"),
    )?;
    output.artifacts.push(phi_art);
    output.artifacts.push(tau_art);
    Ok(output)
}

/// Ball comparison for exit-time fields and a priori checks for candidate
/// critical points. Check names carry the field label.
pub fn verify(
    fields: &[(String, ScalarField, Role)],
    p_list: &[f64],
    out: &Path,
) -> Result<StageOutput> {
    let mut output = StageOutput::default();
    for (label, f, role) in fields {
        let checks = match role {
            Role::ExitTime => {
                let gamma = symmetric_rearrangement(f)?;
                let file = format!("{}-gamma.csv", label.replace(['/', ':'], "-"));
                write_with(&out.join(file), |w| gamma.write_csv(w))?;
                verify_theorem_12(f, p_list)?
            }
            Role::CriticalPoint => apriori_checks(f, &torsion(f.grid())?)?,
            Role::Other => continue,
        };
        for mut c in checks.checks {
            c.name = format!("{label}:{}", c.name);
            output.report.checks.push(c);
        }
    }
    write_report(&output.report, out)?;
    Ok(output)
}

pub fn write_report(report: &VerificationReport, out: &Path) -> Result<()> {
    write_json(report, &out.join("report.json"))?;
    write_with(&out.join("report.csv"), |w| report.write_csv(w))
}

#[derive(Serialize)]
struct McRecord {
    x: f64,
    y: f64,
    amplitude: f64,
    dt: f64,
    seed: u64,
    #[serde(flatten)]
    estimate: McEstimate,
}

/// One estimate at `cfg.montecarlo.start`, or a cross-check against the PDE
/// solution when points are configured.
pub fn montecarlo(cfg: &Config, out: &Path) -> Result<StageOutput> {
    let domain = cfg.domain()?;
    let grid = domain.build()?;
    let kind = cfg.flow_kind()?;
    let u = velocity(&grid, &kind)?;
    let amplitude = cfg.flow.amplitude;
    let mut output = StageOutput::default();
    let header = "x,y,amplitude,dt,seed,mean,stderr,paths,truncated,flagged";
    if cfg.montecarlo.points.is_empty() {
        let mc = cfg.mc_config(cfg.montecarlo.start);
        let est = sample_exit_time(&grid, Some(&u), &mc)?;
        let rec = McRecord {
            x: mc.start[0],
            y: mc.start[1],
            amplitude,
            dt: mc.dt,
            seed: mc.seed,
            estimate: est,
        };
        write_with(&out.join("estimate.csv"), |w| {
            writeln!(w, "{header}")?;
            writeln!(w, "{}", mc_line(&rec))?;
            Ok(())
        })?;
        write_json(&rec, &out.join("estimate.json"))?;
        return Ok(output);
    }
    let tau = solve_exit_time(&grid, &u, &cfg.solve_options(amplitude)?)?.tau;
    let mc = cfg.mc_config([0.0, 0.0]);
    let (rows, report) = field_crosscheck(&tau, Some(&u), &cfg.montecarlo.points, &mc)?;
    write_with(&out.join("crosscheck.csv"), |w| {
        writeln!(w, "{header},pde,allowance,passed")?;
        for r in &rows {
            let rec = McRecord {
                x: r.point[0],
                y: r.point[1],
                amplitude,
                dt: mc.dt,
                seed: mc.seed,
                estimate: r.estimate,
            };
            writeln!(w, "{},{},{},{}", mc_line(&rec), r.pde, r.allowance, r.passed)?;
        }
        Ok(())
    })?;
    for mut c in report.checks {
        c.name = format!("{}:{}", domain.label(), c.name);
        output.report.checks.push(c);
    }
    Ok(output)
}

fn mc_line(r: &McRecord) -> String {
    let e = &r.estimate;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.x, r.y, r.amplitude, r.dt, r.seed, e.mean, e.stderr, e.paths, e.truncated, e.flagged
    )
}
