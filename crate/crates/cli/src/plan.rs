//! Experiment plans: ordered, named stages sharing artifacts on disk.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use exitlab::{BoundaryMode, DomainGrid, VerificationReport};
use serde::{Deserialize, Serialize};

use crate::config::{Config, DomainConfig};
use crate::plot::{render_svg, Panel, Raster};
use crate::stages::{self, write_with, Artifact, Role, StageOutput};

pub const BUNDLED: &[(&str, &str)] = &[
    ("reproduce-figure1", include_str!("../plans/reproduce-figure1.toml")),
    ("theorem12-matrix", include_str!("../plans/theorem12-matrix.toml")),
];

pub fn bundled_plan(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    Solve,
    Freidlin,
    Iterate,
    Verify,
    Montecarlo,
    Plot,
}

/// A stage table holds `name`, `kind`, the optional references below and
/// any config sections.
#[derive(Debug, Clone, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
    /// Stages whose artifacts a verify stage consumes.
    pub inputs: Vec<String>,
    /// `stage:key` artifact used as the stream function of a freidlin stage.
    pub stream: Option<String>,
    pub config: Config,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StageHead {
    name: String,
    kind: StageKind,
    #[serde(default)]
    inputs: Vec<String>,
    stream: Option<String>,
}

impl TryFrom<toml::Table> for Stage {
    type Error = String;

    fn try_from(mut t: toml::Table) -> std::result::Result<Self, String> {
        let mut head = toml::Table::new();
        for k in ["name", "kind", "inputs", "stream"] {
            if let Some(v) = t.remove(k) {
                head.insert(k.into(), v);
            }
        }
        let head: StageHead = head.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        let config: Config = t
            .try_into()
            .map_err(|e: toml::de::Error| format!("stage {:?}: {e}", head.name))?;
        Ok(Stage {
            name: head.name,
            kind: head.kind,
            inputs: head.inputs,
            stream: head.stream,
            config,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    /// Output directory relative to the output root; defaults to `name`.
    pub output: Option<String>,
    #[serde(default, rename = "stage")]
    pub stages: Vec<Stage>,
}

fn split_ref(r: &str) -> Result<(&str, &str)> {
    r.split_once(':')
        .with_context(|| format!("artifact reference {r:?} is not of the form stage:key"))
}

impl Stage {
    /// Names of the stages this one reads from.
    pub fn dependencies(&self) -> Result<Vec<&str>> {
        let mut deps: Vec<&str> = self.inputs.iter().map(String::as_str).collect();
        if let Some(s) = &self.stream {
            deps.push(split_ref(s)?.0);
        }
        for p in &self.config.plot.panels {
            deps.push(split_ref(p)?.0);
        }
        deps.dedup();
        Ok(deps)
    }
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).context("parsing plan")?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(name_or_path: &str) -> Result<Self> {
        match bundled_plan(name_or_path) {
            Some(text) => Self::parse(text),
            None => {
                let text = std::fs::read_to_string(name_or_path)
                    .with_context(|| format!("reading plan {name_or_path}"))?;
                Self::parse(&text)
            }
        }
    }

    /// Stage names must be unique and inputs must name earlier stages.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.stages {
            for d in s.dependencies()? {
                if !seen.contains(d) {
                    bail!("stage {:?} depends on {d:?}, which is not an earlier stage", s.name);
                }
            }
            if !seen.insert(s.name.as_str()) {
                bail!("duplicate stage name {:?}", s.name);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "message")]
pub enum StageStatus {
    Ok,
    Failed(String),
    Skipped(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub kind: StageKind,
    pub status: StageStatus,
}

#[derive(Debug, Clone, Default)]
pub struct PlanOutcome {
    pub stages: Vec<StageRecord>,
    pub report: VerificationReport,
    pub output: PathBuf,
}

impl PlanOutcome {
    /// True when every stage ran and every check passed.
    pub fn success(&self) -> bool {
        self.report.passed() && self.stages.iter().all(|s| s.status == StageStatus::Ok)
    }
}

#[derive(Default)]
struct Registry {
    artifacts: HashMap<String, Vec<Artifact>>,
    grids: Vec<(DomainConfig, Arc<DomainGrid>)>,
}

impl Registry {
    fn grid(&mut self, d: &DomainConfig) -> Result<Arc<DomainGrid>> {
        if let Some((_, g)) = self.grids.iter().find(|(c, _)| c == d) {
            return Ok(g.clone());
        }
        let g = d.build()?;
        self.grids.push((d.clone(), g.clone()));
        Ok(g)
    }

    fn lookup(&self, r: &str) -> Result<&Artifact> {
        let (stage, key) = split_ref(r)?;
        self.artifacts
            .get(stage)
            .and_then(|a| a.iter().find(|a| a.key == key))
            .with_context(|| format!("stage {stage:?} produced no artifact {key:?}"))
    }
}

fn require_exists(a: &Artifact) -> Result<()> {
    if !a.path.exists() {
        bail!("input artifact {} does not exist", a.path.display());
    }
    Ok(())
}

fn run_stage(stage: &Stage, reg: &mut Registry, dir: &Path) -> Result<StageOutput> {
    let cfg = &stage.config;
    match stage.kind {
        StageKind::Solve => {
            let amps = cfg.solve.amplitudes.clone().unwrap_or_else(|| vec![cfg.flow.amplitude]);
            stages::solve(cfg, &amps, dir)
        }
        StageKind::Freidlin => {
            let stream = match &stage.stream {
                Some(r) => {
                    let a = reg.lookup(r)?;
                    require_exists(a)?;
                    Some(a.path.clone())
                }
                None => None,
            };
            stages::freidlin(cfg, stream.as_deref(), dir)
        }
        StageKind::Iterate => stages::iterate(cfg, dir),
        StageKind::Montecarlo => stages::montecarlo(cfg, dir),
        StageKind::Verify => {
            let mut fields = Vec::new();
            for input in &stage.inputs {
                let arts = reg.artifacts.get(input).cloned().unwrap_or_default();
                for a in arts.iter().filter(|a| a.role != Role::Other) {
                    require_exists(a)?;
                    let d = a.domain.as_ref().context("artifact has no domain")?;
                    let grid = reg.grid(d)?;
                    let f = stages::read_field(&grid, &a.path, BoundaryMode::Dirichlet)?;
                    fields.push((format!("{input}/{}", a.key), f, a.role));
                }
            }
            stages::verify(&fields, &cfg.p_list()?, dir)
        }
        StageKind::Plot => {
            let mut panels = Vec::new();
            for r in &cfg.plot.panels {
                let a = reg.lookup(r)?;
                require_exists(a)?;
                let mut p = Panel::new(a.title.clone(), Raster::read(&a.path)?, cfg.plot.levels);
                p.note = a.note.clone();
                panels.push(p);
            }
            let path = dir.join(format!("{}.svg", stage.name));
            std::fs::create_dir_all(dir)?;
            std::fs::write(&path, render_svg(&panels, cfg.plot.cols))?;
            Ok(StageOutput::default())
        }
    }
}

/// Runs the stages in order under `root`. A failing stage is recorded and
/// every stage depending on it is skipped.
pub fn run_plan(plan: &ExperimentPlan, root: &Path, seed: Option<u64>) -> Result<PlanOutcome> {
    plan.validate()?;
    let output = root.join(plan.output.as_deref().unwrap_or(&plan.name));
    let mut outcome = PlanOutcome {
        output: output.clone(),
        ..PlanOutcome::default()
    };
    if plan.stages.is_empty() {
        return Ok(outcome);
    }
    std::fs::create_dir_all(&output)
        .with_context(|| format!("creating {}", output.display()))?;
    let mut reg = Registry::default();
    let mut ok: HashSet<String> = HashSet::new();
    for stage in &plan.stages {
        let mut stage = stage.clone();
        if let Some(s) = seed {
            stage.config.montecarlo.seed = s;
        }
        let blocked: Vec<&str> = stage
            .dependencies()?
            .into_iter()
            .filter(|d| !ok.contains(*d))
            .collect();
        let status = if !blocked.is_empty() {
            StageStatus::Skipped(format!("depends on unfinished {}", blocked.join(", ")))
        } else {
            match run_stage(&stage, &mut reg, &output.join(&stage.name)) {
                Ok(out) => {
                    outcome.report.extend(out.report);
                    reg.artifacts.insert(stage.name.clone(), out.artifacts);
                    ok.insert(stage.name.clone());
                    StageStatus::Ok
                }
                Err(e) => StageStatus::Failed(format!("{e:#}")),
            }
        };
        outcome.stages.push(StageRecord {
            name: stage.name.clone(),
            kind: stage.kind,
            status,
        });
    }
    stages::write_report(&outcome.report, &output)?;
    write_with(&output.join("stages.csv"), |w| {
        writeln!(w, "name,kind,status,message")?;
        for s in &outcome.stages {
            let (status, msg) = match &s.status {
                StageStatus::Ok => ("ok", String::new()),
                StageStatus::Failed(m) => ("failed", m.replace(['\n', ','], " ")),
                StageStatus::Skipped(m) => ("skipped", m.replace(['\n', ','], " ")),
            };
            let kind = serde_json::to_value(s.kind).ok();
            let kind = kind.as_ref().and_then(|v| v.as_str()).unwrap_or("");
            writeln!(w, "{},{kind},{status},{msg}", s.name)?;
        }
        Ok(())
    })?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_plans_parse() {
        for (name, _) in BUNDLED {
            let p = ExperimentPlan::load(name).unwrap();
            assert_eq!(&p.name, name);
            assert!(!p.stages.is_empty());
        }
    }

    #[test]
    fn empty_plan_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let plan = ExperimentPlan::parse("name = \"empty\"").unwrap();
        let out = run_plan(&plan, dir.path(), None).unwrap();
        assert!(out.success());
        assert!(!dir.path().join("empty").exists());
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let dup = "name = \"d\"\n[[stage]]\nname = \"a\"\nkind = \"solve\"\n[[stage]]\nname = \"a\"\nkind = \"solve\"\n";
        assert!(ExperimentPlan::parse(dup).is_err());
        let fwd = "name = \"f\"\n[[stage]]\nname = \"v\"\nkind = \"verify\"\ninputs = [\"later\"]\n";
        assert!(ExperimentPlan::parse(fwd).is_err());
        let typo = "name = \"t\"\n[[stage]]\nname = \"a\"\nkind = \"solve\"\n[stage.domian]\nshape = \"disc\"\n";
        assert!(ExperimentPlan::parse(typo).is_err());
    }

    #[test]
    fn failure_skips_dependents() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
            name = "broken"
            [[stage]]
            name = "solve"
            kind = "solve"
            [stage.domain]
            shape = "blob"

            [[stage]]
            name = "check"
            kind = "verify"
            inputs = ["solve"]

            [[stage]]
            name = "independent"
            kind = "solve"
            [stage.domain]
            shape = "disc"
            resolution = 32
        "#;
        let out = run_plan(&ExperimentPlan::parse(text).unwrap(), dir.path(), None).unwrap();
        assert!(matches!(out.stages[0].status, StageStatus::Failed(_)));
        assert!(matches!(out.stages[1].status, StageStatus::Skipped(_)));
        assert_eq!(out.stages[2].status, StageStatus::Ok);
        assert!(!out.success());
        let csv = std::fs::read_to_string(dir.path().join("broken/stages.csv")).unwrap();
        assert!(csv.contains("check,verify,skipped"));
    }
}
