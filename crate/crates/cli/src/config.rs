//! TOML configuration shared by every subcommand and plan stage.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use exitlab::elliptic::{Scheme, SolveOptions};
use exitlab::flows::FlowKind;
use exitlab::grid::BoundingBox;
use exitlab::montecarlo::McConfig;
use exitlab::{build_domain, DomainGrid, DomainSpec, Shape};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub freidlin: FreidlinConfig,
    #[serde(default)]
    pub iterate: IterateConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub montecarlo: MonteCarloConfig,
    #[serde(default)]
    pub plot: PlotConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// `disc`, `ellipse`, `rectangle` or `implicit`.
    pub shape: String,
    pub radius: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// Rectangle corners `[x0, y0, x1, y1]`.
    pub corners: Option<[f64; 4]>,
    /// Implicit level function; the domain is `{expr < 0}`.
    pub expr: Option<String>,
    /// `[xmin, xmax, ymin, ymax]`; defaults to the padded shape extent.
    pub bbox: Option<[f64; 4]>,
    pub resolution: Option<usize>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// `zero`, `cellular`, `shear`, `torsion` or `stream:<expr>`.
    pub kind: String,
    pub amplitude: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            kind: "zero".into(),
            amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub scheme: String,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Amplitudes swept by a plan stage; the flow amplitude otherwise.
    pub amplitudes: Option<Vec<f64>>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self {
            scheme: d.scheme.to_string(),
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            amplitudes: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreidlinConfig {
    pub amplitudes: Vec<f64>,
    /// Stream function used when no field is given; defaults to `torsion`.
    pub stream: Option<String>,
    /// Locality experiment: cap levels `[h0, h1]` and skew strength.
    pub locality: Option<LocalityConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalityConfig {
    pub h0: f64,
    pub h1: f64,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterateConfig {
    /// `naive`, `freidlin` or `advective`.
    pub scheme: String,
    pub max_steps: usize,
    pub amplitude: Option<f64>,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self {
            scheme: "freidlin".into(),
            max_steps: 200,
            amplitude: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Exponents as strings so that `inf` is allowed.
    pub p: Vec<String>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            p: vec!["1".into(), "2".into(), "inf".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub start: [f64; 2],
    /// Cross-check points for plan stages.
    pub points: Vec<[f64; 2]>,
    pub paths: usize,
    pub dt: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        let d = McConfig::default();
        Self {
            start: d.start,
            points: Vec::new(),
            paths: d.paths,
            dt: d.dt,
            max_steps: d.max_steps,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub levels: usize,
    /// Panels of a plan's plot stage as `stage:key` artifact references.
    pub panels: Vec<String>,
    pub cols: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            levels: 10,
            panels: Vec::new(),
            cols: 2,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn domain(&self) -> Result<&DomainConfig> {
        self.domain.as_ref().context("config has no [domain] section")
    }

    pub fn flow_kind(&self) -> Result<FlowKind> {
        Ok(self.flow.kind.parse()?)
    }

    pub fn solve_options(&self, amplitude: f64) -> Result<SolveOptions> {
        let o = SolveOptions {
            amplitude,
            scheme: self.solve.scheme.parse::<Scheme>()?,
            tolerance: self.solve.tolerance,
            max_iterations: self.solve.max_iterations,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn mc_config(&self, start: [f64; 2]) -> McConfig {
        let m = &self.montecarlo;
        McConfig {
            start,
            dt: m.dt,
            paths: m.paths,
            max_steps: m.max_steps,
            seed: m.seed,
            amplitude: self.flow.amplitude,
        }
    }

    pub fn p_list(&self) -> Result<Vec<f64>> {
        parse_p_list(&self.verify.p.join(","))
    }
}

/// Parses `1,2,inf`.
pub fn parse_p_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "inf" | "∞" => Ok(f64::INFINITY),
            _ => {
                let p: f64 = t.parse().with_context(|| format!("bad exponent {t:?}"))?;
                if p < 1.0 {
                    bail!("exponent {p} below 1");
                }
                Ok(p)
            }
        })
        .collect()
}

impl DomainConfig {
    pub fn shape(&self) -> Result<Shape> {
        let need = |v: Option<f64>, name: &str| {
            v.with_context(|| format!("{} domain needs `{name}`", self.shape))
        };
        Ok(match self.shape.as_str() {
            "disc" => Shape::disc(self.radius.unwrap_or(1.0)),
            "ellipse" => Shape::ellipse(need(self.a, "a")?, need(self.b, "b")?),
            "rectangle" => {
                let [x0, y0, x1, y1] = self.corners.unwrap_or([0.0, 0.0, 1.0, 1.0]);
                Shape::rectangle(x0, y0, x1, y1)
            }
            "implicit" => {
                Shape::implicit(self.expr.as_deref().context("implicit domain needs `expr`")?)?
            }
            other => bail!("unknown shape {other:?}"),
        })
    }

    pub fn spec(&self) -> Result<DomainSpec> {
        let shape = self.shape()?;
        let n = self.resolution.unwrap_or(256);
        let (nx, ny) = (self.nx.unwrap_or(n), self.ny.unwrap_or(n));
        Ok(match self.bbox {
            Some([xmin, xmax, ymin, ymax]) => DomainSpec {
                shape,
                bbox: BoundingBox {
                    xmin,
                    xmax,
                    ymin,
                    ymax,
                },
                nx,
                ny,
            },
            None => DomainSpec::fitted(shape, nx, ny)?,
        })
    }

    pub fn build(&self) -> Result<Arc<DomainGrid>> {
        Ok(build_domain(self.spec()?)?)
    }

    /// Short label used in report names.
    pub fn label(&self) -> String {
        match self.shape.as_str() {
            "ellipse" => format!(
                "ellipse-{}x{}",
                self.a.unwrap_or_default(),
                self.b.unwrap_or_default()
            ),
            s => s.to_string(),
        }
    }
}
