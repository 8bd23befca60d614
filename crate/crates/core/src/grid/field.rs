use std::io::{BufRead, Write};
use std::sync::Arc;

use super::domain::{DomainGrid, GridGeometry, VertexId};
use crate::error::{Error, Result};

/// How a field behaves at boundary intersection points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// The field vanishes on ∂Ω; cut-fraction ghosts carry the value 0.
    Dirichlet,
    /// No boundary data; boundary points take the value of the adjacent node
    /// and derivatives there are one-sided.
    Free,
}

/// Node values of a scalar function on the inside nodes of a [`DomainGrid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<DomainGrid>,
    values: Vec<f64>,
    mode: BoundaryMode,
}

impl ScalarField {
    pub fn new(grid: &Arc<DomainGrid>, values: Vec<f64>, mode: BoundaryMode) -> Result<Self> {
        if values.len() != grid.n_unknowns() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.n_unknowns()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field"));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
            mode,
        })
    }

    /// Samples `f` at the inside nodes. The result is a free field.
    pub fn from_fn(grid: &Arc<DomainGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.n_unknowns())
            .map(|u| {
                let [x, y] = grid.position(u);
                f(x, y)
            })
            .collect();
        Self {
            grid: grid.clone(),
            values,
            mode: BoundaryMode::Free,
        }
    }

    pub fn constant(grid: &Arc<DomainGrid>, c: f64) -> Self {
        Self::from_fn(grid, |_, _| c)
    }

    pub fn with_mode(mut self, mode: BoundaryMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn grid(&self) -> &Arc<DomainGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    #[inline]
    pub fn get(&self, u: usize) -> f64 {
        self.values[u]
    }

    /// Value at a cut-cell polygon vertex.
    #[inline]
    pub fn vertex_value(&self, id: VertexId) -> f64 {
        match id {
            VertexId::Node(u) => self.values[u as usize],
            VertexId::Boundary { node, .. } => match self.mode {
                BoundaryMode::Dirichlet => 0.0,
                BoundaryMode::Free => self.values[node as usize],
            },
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            mode: self.mode,
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other.grid())?;
        let mode = if self.mode == BoundaryMode::Dirichlet && other.mode == BoundaryMode::Dirichlet
        {
            BoundaryMode::Dirichlet
        } else {
            BoundaryMode::Free
        };
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            mode,
        })
    }

    pub fn check_same_grid(&self, grid: &Arc<DomainGrid>) -> Result<()> {
        if Arc::ptr_eq(&self.grid, grid) || self.grid.geometry() == grid.geometry() {
            Ok(())
        } else {
            Err(Error::GridMismatch("fields live on different grids".into()))
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (u, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = u;
            }
        }
        best
    }

    /// Largest absolute nodal difference.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the field as CSV: a geometry row, then `i,j,value` per inside node.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let g = self.grid.geometry();
        writeln!(w, "nx,ny,hx,hy,x0,y0")?;
        writeln!(w, "{},{},{},{},{},{}", g.nx, g.ny, g.hx, g.hy, g.x0, g.y0)?;
        for u in 0..self.values.len() {
            let (i, j) = self.grid.node_of(u);
            writeln!(w, "{i},{j},{}", self.values[u])?;
        }
        Ok(())
    }

    /// Reads a field written by [`ScalarField::write_csv`] onto a matching grid.
    pub fn read_csv(grid: &Arc<DomainGrid>, r: impl BufRead, mode: BoundaryMode) -> Result<Self> {
        let file = FieldFile::read(r)?;
        let g = grid.geometry();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        let h = file.geometry;
        if h.nx != g.nx
            || h.ny != g.ny
            || !close(h.hx, g.hx)
            || !close(h.hy, g.hy)
            || !close(h.x0, g.x0)
            || !close(h.y0, g.y0)
        {
            return Err(Error::GridMismatch(format!(
                "file geometry {h:?} does not match grid {g:?}"
            )));
        }
        let mut values = vec![f64::NAN; grid.n_unknowns()];
        for &(i, j, v) in &file.entries {
            match grid.unknown(i, j) {
                Some(u) => values[u] = v,
                None => {
                    return Err(Error::GridMismatch(format!(
                        "node ({i},{j}) is outside the domain"
                    )))
                }
            }
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::GridMismatch("field file misses inside nodes".into()));
        }
        Self::new(grid, values, mode)
    }
}

/// Grid-free contents of a field CSV file.
#[derive(Debug, Clone)]
pub struct FieldFile {
    pub geometry: GridGeometry,
    pub entries: Vec<(usize, usize, f64)>,
}

impl FieldFile {
    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(n, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((n + 1, other)),
        });
        let parse_err = |n: usize, msg: &str| Error::Parse(format!("line {n}: {msg}"));
        let (mut n, mut first) = match lines.next() {
            Some((n, l)) => (n, l?),
            None => return Err(Error::Parse("empty field file".into())),
        };
        if first.trim_start().starts_with("nx") {
            match lines.next() {
                Some((m, l)) => {
                    n = m;
                    first = l?;
                }
                None => return Err(Error::Parse("missing geometry row".into())),
            }
        }
        let head: Vec<&str> = first.split(',').map(str::trim).collect();
        if head.len() != 6 {
            return Err(parse_err(n, "geometry row needs 6 values"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| parse_err(n, "bad integer"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(n, "bad number"));
        let geometry = GridGeometry {
            nx: int(head[0])?,
            ny: int(head[1])?,
            hx: num(head[2])?,
            hy: num(head[3])?,
            x0: num(head[4])?,
            y0: num(head[5])?,
        };
        let mut entries = Vec::new();
        for (n, line) in lines {
            let line = line?;
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(parse_err(n, "expected i,j,value"));
            }
            let i = parts[0].parse::<usize>().map_err(|_| parse_err(n, "bad index"))?;
            let j = parts[1].parse::<usize>().map_err(|_| parse_err(n, "bad index"))?;
            let v = parts[2].parse::<f64>().map_err(|_| parse_err(n, "bad value"))?;
            if i > geometry.nx || j > geometry.ny {
                return Err(parse_err(n, "index out of range"));
            }
            if !v.is_finite() {
                return Err(parse_err(n, "non-finite value"));
            }
            entries.push((i, j, v));
        }
        Ok(Self { geometry, entries })
    }

    /// Dense node array with `None` for nodes missing from the file.
    pub fn dense(&self) -> Vec<Option<f64>> {
        let g = self.geometry;
        let mut out = vec![None; g.n_nodes()];
        for &(i, j, v) in &self.entries {
            out[g.node_id(i, j)] = Some(v);
        }
        out
    }
}

/// Two-component field on the inside nodes, e.g. a velocity `u = ∇⊥ψ`.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<DomainGrid>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: &Arc<DomainGrid>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = grid.n_unknowns();
        if x.len() != n || y.len() != n {
            return Err(Error::GridMismatch("vector field length".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector field"));
        }
        Ok(Self {
            grid: grid.clone(),
            x,
            y,
        })
    }

    pub fn zeros(grid: &Arc<DomainGrid>) -> Self {
        let n = grid.n_unknowns();
        Self {
            grid: grid.clone(),
            x: vec![0.0; n],
            y: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: &Arc<DomainGrid>, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let (x, y) = (0..grid.n_unknowns())
            .map(|u| {
                let [px, py] = grid.position(u);
                let [a, b] = f(px, py);
                (a, b)
            })
            .unzip();
        Self {
            grid: grid.clone(),
            x,
            y,
        }
    }

    pub fn grid(&self) -> &Arc<DomainGrid> {
        &self.grid
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn get(&self, u: usize) -> [f64; 2] {
        [self.x[u], self.y[u]]
    }

    pub fn component(&self, k: usize) -> ScalarField {
        let v = if k == 0 { &self.x } else { &self.y };
        ScalarField {
            grid: self.grid.clone(),
            values: v.clone(),
            mode: BoundaryMode::Free,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            x: self.x.iter().map(|v| v * s).collect(),
            y: self.y.iter().map(|v| v * s).collect(),
        }
    }

    /// `max |u|` over the nodes.
    pub fn max_norm(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn magnitude(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.x.iter().zip(&self.y).map(|(a, b)| a.hypot(*b)).collect(),
            mode: BoundaryMode::Free,
        }
    }
}
