use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("empty interior")]
    EmptyInterior,

    #[error("interior is not connected ({components} components)")]
    DisconnectedInterior { components: usize },

    #[error("domain is not simply connected ({holes} exterior pockets)")]
    MultiplyConnected { holes: usize },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("field does not match grid: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("NaN or infinite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("level {level} outside field range (0, {max})")]
    LevelOutOfRange { level: f64, max: f64 },

    #[error("area profile is not monotone (violation {violation:.3e})")]
    NonMonotoneArea { violation: f64 },

    #[error("expected a single interior maximum, found {maxima} maxima, {saddles} saddles, {minima} minima")]
    CriticalPoints {
        maxima: usize,
        saddles: usize,
        minima: usize,
    },

    #[error("flux coefficient p(h) = {value:.3e} is not positive at level {level:.4e}")]
    NonPositiveFlux { level: f64, value: f64 },

    #[error("degenerate quadratic fit at the maximum")]
    DegenerateFit,

    #[error("stream functions differ outside the perturbation region (max difference {0:.3e})")]
    PerturbationNotLocal(f64),

    #[error("flow map leaves the domain for step {0}")]
    StepTooLarge(f64),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
