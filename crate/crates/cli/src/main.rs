use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use exitlab::BoundaryMode;
use exitlab_cli::config::{parse_p_list, Config};
use exitlab_cli::plan::{run_plan, ExperimentPlan, StageStatus};
use exitlab_cli::stages::{self, read_field, Role};
use exitlab_cli::{plot, resolve_output, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "exitlab", version, about = "Exit times of diffusions with incompressible drift")]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, env = OUTPUT_ROOT_ENV, default_value = ".", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve −Δτ + A u·∇τ = 1 with τ = 0 on the boundary.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long, default_value = "solve")]
        out: PathBuf,
    },
    /// Large-amplitude limit of the exit time from a stream function.
    Freidlin {
        #[arg(long)]
        config: PathBuf,
        /// Stream function field CSV; defaults to the configured stream.
        #[arg(long)]
        stream: Option<PathBuf>,
        /// Amplitudes for the convergence study, e.g. `1,10,100`.
        #[arg(long, value_delimiter = ',')]
        amplitudes: Option<Vec<f64>>,
        #[arg(long, default_value = "freidlin")]
        out: PathBuf,
    },
    /// Fixed-point iteration for the exit-time maximising flow.
    Iterate {
        #[arg(long)]
        config: PathBuf,
        /// `naive`, `freidlin` or `advective`.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, default_value = "iterate")]
        out: PathBuf,
    },
    /// Ball comparison of a field's L^p norms, or a priori checks of a
    /// candidate critical point.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value = "1,2,inf")]
        p: String,
        /// Treat the field as a candidate critical point.
        #[arg(long)]
        apriori: bool,
        #[arg(long, default_value = "verify")]
        out: PathBuf,
    },
    /// Monte Carlo estimate of the exit time from one point.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 2)]
        start: Option<Vec<f64>>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long, default_value = "montecarlo")]
        out: PathBuf,
    },
    /// Contour plot of a field CSV as SVG.
    Plot {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 10)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a plan file or a bundled plan (`reproduce-figure1`, `theorem12-matrix`).
    RunPlan {
        plan: String,
        /// Overrides the seed of every Monte Carlo stage.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn print_report(dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let root = cli.output_root;
    match cli.command {
        Command::Solve { config, amplitude, out } => {
            let cfg = Config::load(&config)?;
            let out = resolve_output(&root, &out);
            stages::solve(&cfg, &[amplitude.unwrap_or(cfg.flow.amplitude)], &out)?;
            print!("{}", std::fs::read_to_string(out.join("solve.json"))?);
            Ok(true)
        }
        Command::Freidlin { config, stream, amplitudes, out } => {
            let mut cfg = Config::load(&config)?;
            if let Some(a) = amplitudes {
                cfg.freidlin.amplitudes = a;
            }
            let out = resolve_output(&root, &out);
            let res = stages::freidlin(&cfg, stream.as_deref(), &out)?;
            println!("wrote {}", out.display());
            Ok(res.report.passed())
        }
        Command::Iterate { config, scheme, amplitude, max_steps, out } => {
            let mut cfg = Config::load(&config)?;
            if let Some(s) = scheme {
                cfg.iterate.scheme = s;
            }
            if amplitude.is_some() {
                cfg.iterate.amplitude = amplitude;
            }
            if let Some(n) = max_steps {
                cfg.iterate.max_steps = n;
            }
            let out = resolve_output(&root, &out);
            let res = stages::iterate(&cfg, &out)?;
            print!("{}", std::fs::read_to_string(out.join("iterate.json"))?);
            Ok(res.report.passed())
        }
        Command::Verify { config, field, p, apriori, out } => {
            let cfg = Config::load(&config)?;
            let grid = cfg.domain()?.build()?;
            let f = read_field(&grid, &field, BoundaryMode::Dirichlet)?;
            let role = if apriori { Role::CriticalPoint } else { Role::ExitTime };
            let label = field.file_stem().map_or("field".into(), |s| s.to_string_lossy().into_owned());
            let out = resolve_output(&root, &out);
            let res = stages::verify(&[(label, f, role)], &parse_p_list(&p)?, &out)?;
            print_report(&out)?;
            Ok(res.report.passed())
        }
        Command::Montecarlo { config, start, paths, dt, seed, amplitude, out } => {
            let mut cfg = Config::load(&config)?;
            let m = &mut cfg.montecarlo;
            if let Some(s) = start {
                m.start = [s[0], s[1]];
            }
            m.paths = paths.unwrap_or(m.paths);
            m.dt = dt.unwrap_or(m.dt);
            m.seed = seed.unwrap_or(m.seed);
            m.points.clear();
            cfg.flow.amplitude = amplitude.unwrap_or(cfg.flow.amplitude);
            let out = resolve_output(&root, &out);
            stages::montecarlo(&cfg, &out)?;
            print!("{}", std::fs::read_to_string(out.join("estimate.csv"))?);
            print!("{}", std::fs::read_to_string(out.join("estimate.json"))?);
            Ok(true)
        }
        Command::Plot { field, levels, out } => {
            let out = resolve_output(&root, &out);
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            plot::plot_contours(&field, levels, &out)?;
            Ok(true)
        }
        Command::RunPlan { plan, seed } => {
            let plan = ExperimentPlan::load(&plan)?;
            let outcome = run_plan(&plan, &root, seed)?;
            for s in &outcome.stages {
                match &s.status {
                    StageStatus::Ok => println!("{}: ok", s.name),
                    StageStatus::Failed(m) => println!("{}: failed: {m}", s.name),
                    StageStatus::Skipped(m) => println!("{}: skipped: {m}", s.name),
                }
            }
            for c in outcome.report.failures() {
                println!("check failed: {} measured {} bound {}", c.name, c.measured, c.bound);
            }
            println!(
                "{} checks, {} failed; artifacts in {}",
                outcome.report.checks.len(),
                outcome.report.failures().count(),
                outcome.output.display()
            );
            Ok(outcome.success())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()).context("exitlab") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
