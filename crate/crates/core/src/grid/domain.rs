use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use super::expr::Expr;
use crate::error::{Error, Result};

/// Minimum number of cells per direction.
pub const MIN_RESOLUTION: usize = 16;

/// Direction indices for the four grid arms of a node.
pub const EAST: usize = 0;
pub const WEST: usize = 1;
pub const NORTH: usize = 2;
pub const SOUTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Ellipse { cx: f64, cy: f64, a: f64, b: f64 },
    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`. Has corners, so the
    /// boundary is only Lipschitz.
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// `Ω = {g < 0}` for a parsed expression `g`.
    Implicit { source: String, expr: Expr },
}

impl Shape {
    pub fn disc(r: f64) -> Self {
        Shape::Disc { cx: 0.0, cy: 0.0, r }
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        Shape::Ellipse { cx: 0.0, cy: 0.0, a, b }
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Shape::Rectangle { x0, y0, x1, y1 }
    }

    pub fn implicit(source: &str) -> Result<Self> {
        Ok(Shape::Implicit {
            source: source.to_string(),
            expr: Expr::parse(source)?,
        })
    }

    /// Level function; the domain is `{level < 0}`.
    pub fn level(&self, x: f64, y: f64) -> f64 {
        match self {
            Shape::Disc { cx, cy, r } => ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r,
            Shape::Ellipse { cx, cy, a, b } => {
                ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2) - 1.0
            }
            Shape::Rectangle { x0, y0, x1, y1 } => {
                let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
                let qx = (x - cx).abs() - 0.5 * (x1 - x0);
                let qy = (y - cy).abs() - 0.5 * (y1 - y0);
                let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
                outside + qx.max(qy).min(0.0)
            }
            Shape::Implicit { expr, .. } => expr.eval(x, y),
        }
    }

    pub fn level_gradient(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            Shape::Disc { cx, cy, .. } => {
                let (dx, dy) = (x - cx, y - cy);
                let r = (dx * dx + dy * dy).sqrt();
                if r == 0.0 {
                    [0.0, 0.0]
                } else {
                    [dx / r, dy / r]
                }
            }
            Shape::Ellipse { cx, cy, a, b } => {
                [2.0 * (x - cx) / (a * a), 2.0 * (y - cy) / (b * b)]
            }
            _ => {
                let e = 1e-6;
                [
                    (self.level(x + e, y) - self.level(x - e, y)) / (2.0 * e),
                    (self.level(x, y + e) - self.level(x, y - e)) / (2.0 * e),
                ]
            }
        }
    }

    /// Signed distance to the boundary (negative inside). Exact for discs
    /// and rectangles, first-order `g/|∇g|` otherwise.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        match self {
            Shape::Disc { .. } | Shape::Rectangle { .. } => self.level(x, y),
            _ => {
                let g = self.level(x, y);
                let [gx, gy] = self.level_gradient(x, y);
                let n = (gx * gx + gy * gy).sqrt();
                if n > 0.0 {
                    g / n
                } else {
                    g
                }
            }
        }
    }

    /// Bounding rectangle `[xmin, xmax, ymin, ymax]` of the shape when known.
    pub fn extent(&self) -> Option<[f64; 4]> {
        match *self {
            Shape::Disc { cx, cy, r } => Some([cx - r, cx + r, cy - r, cy + r]),
            Shape::Ellipse { cx, cy, a, b } => Some([cx - a, cx + a, cy - b, cy + b]),
            Shape::Rectangle { x0, y0, x1, y1 } => Some([x0, x1, y0, y1]),
            Shape::Implicit { .. } => None,
        }
    }

    pub fn exact_area(&self) -> Option<f64> {
        match *self {
            Shape::Disc { r, .. } => Some(PI * r * r),
            Shape::Ellipse { a, b, .. } => Some(PI * a * b),
            Shape::Rectangle { x0, y0, x1, y1 } => Some((x1 - x0) * (y1 - y0)),
            Shape::Implicit { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub shape: Shape,
    pub bbox: BoundingBox,
    pub nx: usize,
    pub ny: usize,
}

impl DomainSpec {
    /// Spec whose bounding box is the shape extent padded by 5% per side.
    pub fn fitted(shape: Shape, nx: usize, ny: usize) -> Result<Self> {
        let [x0, x1, y0, y1] = shape.extent().ok_or_else(|| {
            Error::InvalidDomain("implicit shapes need an explicit bounding box".into())
        })?;
        let (mx, my) = (0.05 * (x1 - x0), 0.05 * (y1 - y0));
        Ok(DomainSpec {
            shape,
            bbox: BoundingBox {
                xmin: x0 - mx,
                xmax: x1 + mx,
                ymin: y0 - my,
                ymax: y1 + my,
            },
            nx,
            ny,
        })
    }

    pub fn unit_disc(n: usize) -> Self {
        Self::fitted(Shape::disc(1.0), n, n).expect("disc has an extent")
    }

    pub fn ellipse(a: f64, b: f64, n: usize) -> Self {
        Self::fitted(Shape::ellipse(a, b), n, n).expect("ellipse has an extent")
    }

    pub fn unit_square(n: usize) -> Self {
        Self::fitted(Shape::rectangle(0.0, 0.0, 1.0, 1.0), n, n).expect("rectangle has an extent")
    }

    fn validate(&self) -> Result<()> {
        if self.nx < MIN_RESOLUTION || self.ny < MIN_RESOLUTION {
            return Err(Error::InvalidDomain(format!(
                "resolution {}x{} below minimum {MIN_RESOLUTION}",
                self.nx, self.ny
            )));
        }
        let b = &self.bbox;
        if !(b.xmax > b.xmin && b.ymax > b.ymin) {
            return Err(Error::InvalidDomain("degenerate bounding box".into()));
        }
        Ok(())
    }
}

/// Uniform grid geometry: `nx × ny` cells, `(nx+1) × (ny+1)` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl GridGeometry {
    #[inline]
    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn node_ij(&self, id: usize) -> (usize, usize) {
        (id % (self.nx + 1), id / (self.nx + 1))
    }

    #[inline]
    pub fn node_xy(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x0 + i as f64 * self.hx, self.y0 + j as f64 * self.hy]
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    BoundaryAdjacent,
}

/// Identity of a cut-cell polygon vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexId {
    /// A grid node, by unknown index.
    Node(u32),
    /// The boundary intersection on arm `dir` of unknown `node`.
    Boundary { node: u32, dir: u8 },
}

impl VertexId {
    #[inline]
    pub fn unknown(self) -> usize {
        match self {
            VertexId::Node(u) => u as usize,
            VertexId::Boundary { node, .. } => node as usize,
        }
    }

    #[inline]
    pub fn on_boundary(self) -> bool {
        matches!(self, VertexId::Boundary { .. })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolyVertex {
    pub x: f64,
    pub y: f64,
    pub id: VertexId,
}

/// The part of one grid cell that lies inside Ω, as a counter-clockwise polygon.
#[derive(Debug, Clone)]
pub struct CellPolygon {
    pub cell: (u32, u32),
    pub vertices: Vec<PolyVertex>,
}

impl CellPolygon {
    pub fn area(&self) -> f64 {
        shoelace(self.vertices.iter().map(|v| [v.x, v.y]))
    }
}

pub(crate) fn shoelace(pts: impl Iterator<Item = [f64; 2]>) -> f64 {
    let pts: Vec<[f64; 2]> = pts.collect();
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..n {
        let [x1, y1] = pts[k];
        let [x2, y2] = pts[(k + 1) % n];
        s += x1 * y2 - x2 * y1;
    }
    0.5 * s
}

/// Rasterized domain: node classification, Shortley–Weller arm fractions and
/// cut-cell polygons.
#[derive(Debug)]
pub struct DomainGrid {
    spec: DomainSpec,
    geom: GridGeometry,
    unknown_of_node: Vec<u32>,
    node_of_unknown: Vec<u32>,
    kinds: Vec<NodeKind>,
    arms: Vec<[f64; 4]>,
    polygons: Vec<CellPolygon>,
    cell_start: Vec<u32>,
    area: f64,
}

pub const NOT_INSIDE: u32 = u32::MAX;

/// Smallest admissible arm fraction; keeps Shortley–Weller coefficients finite.
const MIN_ARM: f64 = 1e-6;

fn edge_root(shape: &Shape, p: [f64; 2], q: [f64; 2], gp: f64, gq: f64) -> f64 {
    // gp < 0 <= gq; returns t in (0, 1] with g(p + t (q - p)) = 0.
    if gq == 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let (mut glo, mut ghi) = (gp, gq);
    let mut side = 0i8;
    for _ in 0..100 {
        // Illinois variant of regula falsi.
        let t = (lo * ghi - hi * glo) / (ghi - glo);
        let t = if t.is_finite() && t > lo && t < hi {
            t
        } else {
            0.5 * (lo + hi)
        };
        let g = shape.level(p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]));
        if g < 0.0 {
            lo = t;
            glo = g;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            ghi = g;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    hi.clamp(MIN_ARM, 1.0)
}

/// Rasterizes a domain spec.
///
/// Fails on an empty interior, on a disconnected interior and on interiors
/// with holes.
pub fn build_domain(spec: DomainSpec) -> Result<Arc<DomainGrid>> {
    spec.validate()?;
    let b = spec.bbox;
    let geom = GridGeometry {
        nx: spec.nx,
        ny: spec.ny,
        hx: (b.xmax - b.xmin) / spec.nx as f64,
        hy: (b.ymax - b.ymin) / spec.ny as f64,
        x0: b.xmin,
        y0: b.ymin,
    };
    let (nxn, nyn) = (geom.nx + 1, geom.ny + 1);
    let shape = &spec.shape;

    let level: Vec<f64> = (0..geom.n_nodes())
        .map(|id| {
            let (i, j) = geom.node_ij(id);
            let [x, y] = geom.node_xy(i, j);
            shape.level(x, y)
        })
        .collect();
    if level.iter().any(|g| g.is_nan()) {
        return Err(Error::NonFinite("domain level function"));
    }
    let inside = |i: usize, j: usize| level[geom.node_id(i, j)] < 0.0;

    for i in 0..nxn {
        for j in [0, nyn - 1] {
            if inside(i, j) {
                return Err(Error::InvalidDomain(
                    "domain touches the bounding box".into(),
                ));
            }
        }
    }
    for j in 0..nyn {
        for i in [0, nxn - 1] {
            if inside(i, j) {
                return Err(Error::InvalidDomain(
                    "domain touches the bounding box".into(),
                ));
            }
        }
    }

    let mut unknown_of_node = vec![NOT_INSIDE; geom.n_nodes()];
    let mut node_of_unknown = Vec::new();
    for j in 0..nyn {
        for i in 0..nxn {
            let id = geom.node_id(i, j);
            if level[id] < 0.0 {
                unknown_of_node[id] = node_of_unknown.len() as u32;
                node_of_unknown.push(id as u32);
            }
        }
    }
    if node_of_unknown.is_empty() {
        return Err(Error::EmptyInterior);
    }

    let components = count_components(&geom, |id| level[id] < 0.0, false);
    if components.0 > 1 {
        return Err(Error::DisconnectedInterior {
            components: components.0,
        });
    }
    // Exterior reachable from the bounding-box border (8-connected).
    let holes = exterior_pockets(&geom, &level);
    if holes > 0 {
        return Err(Error::MultiplyConnected { holes });
    }

    let offsets: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    let mut arms = Vec::with_capacity(node_of_unknown.len());
    let mut kinds = Vec::with_capacity(node_of_unknown.len());
    for &id in &node_of_unknown {
        let (i, j) = geom.node_ij(id as usize);
        let p = geom.node_xy(i, j);
        let gp = level[id as usize];
        let mut arm = [1.0; 4];
        for (d, (di, dj)) in offsets.iter().enumerate() {
            let (ni, nj) = ((i as isize + di) as usize, (j as isize + dj) as usize);
            let nid = geom.node_id(ni, nj);
            if level[nid] >= 0.0 {
                let q = geom.node_xy(ni, nj);
                arm[d] = edge_root(shape, p, q, gp, level[nid]);
            }
        }
        kinds.push(if arm.iter().all(|&a| a == 1.0) {
            NodeKind::Interior
        } else {
            NodeKind::BoundaryAdjacent
        });
        arms.push(arm);
    }

    let mut grid = DomainGrid {
        spec,
        geom,
        unknown_of_node,
        node_of_unknown,
        kinds,
        arms,
        polygons: Vec::new(),
        cell_start: Vec::new(),
        area: 0.0,
    };
    grid.polygons = grid.build_polygons();
    let mut start = vec![0u32; geom.nx * geom.ny + 1];
    for p in &grid.polygons {
        start[p.cell.1 as usize * geom.nx + p.cell.0 as usize + 1] += 1;
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    grid.cell_start = start;
    grid.area = grid.polygons.iter().map(CellPolygon::area).sum();
    Ok(Arc::new(grid))
}

/// Counts 4-connected components of the node set selected by `pred`.
fn count_components(
    geom: &GridGeometry,
    pred: impl Fn(usize) -> bool,
    eight: bool,
) -> (usize, Vec<u32>) {
    let n = geom.n_nodes();
    let mut label = vec![u32::MAX; n];
    let mut count = 0usize;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !pred(start) || label[start] != u32::MAX {
            continue;
        }
        label[start] = count as u32;
        queue.push_back(start);
        while let Some(id) = queue.pop_front() {
            let (i, j) = geom.node_ij(id);
            for (di, dj) in neighbor_offsets(eight) {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 || ni > geom.nx as isize || nj > geom.ny as isize {
                    continue;
                }
                let nid = geom.node_id(ni as usize, nj as usize);
                if pred(nid) && label[nid] == u32::MAX {
                    label[nid] = count as u32;
                    queue.push_back(nid);
                }
            }
        }
        count += 1;
    }
    (count, label)
}

fn neighbor_offsets(eight: bool) -> impl Iterator<Item = (isize, isize)> {
    const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    const DIAG: [(isize, isize); 4] = [(1, 1), (-1, 1), (1, -1), (-1, -1)];
    FOUR.into_iter()
        .chain(DIAG.into_iter().filter(move |_| eight))
}

fn exterior_pockets(geom: &GridGeometry, level: &[f64]) -> usize {
    let (count, label) = count_components(geom, |id| level[id] >= 0.0, true);
    if count <= 1 {
        return 0;
    }
    // The component holding node 0 (a bbox corner, always exterior) is the
    // unbounded one; everything else is a hole.
    let outer = label[0];
    let mut seen = vec![false; count];
    for (id, &l) in label.iter().enumerate() {
        if l != u32::MAX && level[id] >= 0.0 {
            seen[l as usize] = true;
        }
    }
    seen.iter()
        .enumerate()
        .filter(|&(c, &s)| s && c as u32 != outer)
        .count()
}

impl DomainGrid {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn shape(&self) -> &Shape {
        &self.spec.shape
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geom
    }

    pub fn hx(&self) -> f64 {
        self.geom.hx
    }

    pub fn hy(&self) -> f64 {
        self.geom.hy
    }

    /// Measured area |Ω| from cut-cell summation.
    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn n_unknowns(&self) -> usize {
        self.node_of_unknown.len()
    }

    /// Unknown index of node `(i, j)`, if it lies inside Ω.
    #[inline]
    pub fn unknown(&self, i: usize, j: usize) -> Option<usize> {
        if i > self.geom.nx || j > self.geom.ny {
            return None;
        }
        let u = self.unknown_of_node[self.geom.node_id(i, j)];
        (u != NOT_INSIDE).then_some(u as usize)
    }

    #[inline]
    pub fn node_of(&self, u: usize) -> (usize, usize) {
        self.geom.node_ij(self.node_of_unknown[u] as usize)
    }

    #[inline]
    pub fn position(&self, u: usize) -> [f64; 2] {
        let (i, j) = self.node_of(u);
        self.geom.node_xy(i, j)
    }

    pub fn kind(&self, u: usize) -> NodeKind {
        self.kinds[u]
    }

    /// Arm fractions `[E, W, N, S]` in `(0, 1]`; 1 when the neighbor is inside.
    #[inline]
    pub fn arms(&self, u: usize) -> [f64; 4] {
        self.arms[u]
    }

    /// Unknown index of the neighbor in direction `dir` when it is inside Ω.
    #[inline]
    pub fn neighbor(&self, u: usize, dir: usize) -> Option<usize> {
        if self.arms[u][dir] < 1.0 {
            return None;
        }
        let (i, j) = self.node_of(u);
        let (ni, nj) = match dir {
            EAST => (i + 1, j),
            WEST => (i - 1, j),
            NORTH => (i, j + 1),
            _ => (i, j - 1),
        };
        self.unknown(ni, nj)
    }

    /// Unknowns whose full 3×3 neighborhood lies inside Ω.
    pub fn is_deep_interior(&self, u: usize) -> bool {
        let (i, j) = self.node_of(u);
        (-1isize..=1).all(|dj| {
            (-1isize..=1).all(|di| {
                self.unknown((i as isize + di) as usize, (j as isize + dj) as usize)
                    .is_some()
            })
        })
    }

    pub fn polygons(&self) -> &[CellPolygon] {
        &self.polygons
    }

    /// Cut-cell polygons of cell `(i, j)`; empty for exterior cells.
    pub fn cell_polygons(&self, i: usize, j: usize) -> &[CellPolygon] {
        let c = j * self.geom.nx + i;
        &self.polygons[self.cell_start[c] as usize..self.cell_start[c + 1] as usize]
    }

    /// Cell containing `(x, y)`, clamped to the grid.
    pub fn locate(&self, x: f64, y: f64) -> (usize, usize) {
        let g = self.geom;
        let i = ((x - g.x0) / g.hx).floor().clamp(0.0, (g.nx - 1) as f64) as usize;
        let j = ((y - g.y0) / g.hy).floor().clamp(0.0, (g.ny - 1) as f64) as usize;
        (i, j)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.spec.shape.level(x, y) < 0.0
    }

    /// Position of a polygon vertex id.
    pub fn vertex_position(&self, id: VertexId) -> [f64; 2] {
        match id {
            VertexId::Node(u) => self.position(u as usize),
            VertexId::Boundary { node, dir } => {
                let [x, y] = self.position(node as usize);
                let t = self.arms[node as usize][dir as usize];
                match dir as usize {
                    EAST => [x + t * self.geom.hx, y],
                    WEST => [x - t * self.geom.hx, y],
                    NORTH => [x, y + t * self.geom.hy],
                    _ => [x, y - t * self.geom.hy],
                }
            }
        }
    }

    fn build_polygons(&self) -> Vec<CellPolygon> {
        let g = self.geom;
        let mut out = Vec::new();
        // corner offsets (CCW) and the arm direction of edge k -> k+1
        let corners = [(0usize, 0usize), (1, 0), (1, 1), (0, 1)];
        let fwd = [EAST, NORTH, WEST, SOUTH];
        let back = [WEST, SOUTH, EAST, NORTH];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let ids: [Option<usize>; 4] =
                    corners.map(|(di, dj)| self.unknown(i + di, j + dj));
                let n_in = ids.iter().filter(|u| u.is_some()).count();
                if n_in == 0 {
                    continue;
                }
                let cell = (i as u32, j as u32);
                let node_v = |u: usize| {
                    let [x, y] = self.position(u);
                    PolyVertex {
                        x,
                        y,
                        id: VertexId::Node(u as u32),
                    }
                };
                let bnd_v = |u: usize, dir: usize| {
                    let id = VertexId::Boundary {
                        node: u as u32,
                        dir: dir as u8,
                    };
                    let [x, y] = self.vertex_position(id);
                    PolyVertex { x, y, id }
                };
                // crossing on edge k -> k+1 (exactly one endpoint inside)
                let crossing = |k: usize| -> PolyVertex {
                    let k1 = (k + 1) % 4;
                    match (ids[k], ids[k1]) {
                        (Some(u), None) => bnd_v(u, fwd[k]),
                        (None, Some(u)) => bnd_v(u, back[k]),
                        _ => unreachable!(),
                    }
                };
                if n_in == 4 {
                    out.push(CellPolygon {
                        cell,
                        vertices: ids.iter().map(|u| node_v(u.unwrap())).collect(),
                    });
                    continue;
                }
                let saddle = n_in == 2 && ids[0].is_some() == ids[2].is_some();
                if saddle {
                    let [x, y] = g.node_xy(i, j);
                    let gc = self.spec.shape.level(x + 0.5 * g.hx, y + 0.5 * g.hy);
                    if gc >= 0.0 {
                        for k in 0..4 {
                            if let Some(u) = ids[k] {
                                out.push(CellPolygon {
                                    cell,
                                    vertices: vec![node_v(u), crossing(k), crossing((k + 3) % 4)],
                                });
                            }
                        }
                        continue;
                    }
                }
                let mut verts = Vec::with_capacity(6);
                for k in 0..4 {
                    let k1 = (k + 1) % 4;
                    if let Some(u) = ids[k] {
                        verts.push(node_v(u));
                    }
                    if ids[k].is_some() != ids[k1].is_some() {
                        verts.push(crossing(k));
                    }
                }
                out.push(CellPolygon {
                    cell,
                    vertices: verts,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_disc_area() {
        let g = build_domain(DomainSpec::unit_disc(256)).unwrap();
        assert!((g.area() - PI).abs() < 1e-3, "area {}", g.area());
    }

    #[test]
    fn ellipse_area() {
        let g = build_domain(DomainSpec::ellipse(2.0, 1.0, 256)).unwrap();
        assert!((g.area() - 2.0 * PI).abs() < 5e-3, "area {}", g.area());
    }

    #[test]
    fn square_area_loses_only_corner_triangles() {
        let g = build_domain(DomainSpec::unit_square(64)).unwrap();
        let h = g.hx();
        assert!((g.area() - 1.0).abs() < 2.0 * h * h, "area {}", g.area());
    }

    #[test]
    fn empty_interior_is_rejected() {
        let spec = DomainSpec {
            shape: Shape::implicit("1").unwrap(),
            bbox: BoundingBox {
                xmin: -1.0,
                xmax: 1.0,
                ymin: -1.0,
                ymax: 1.0,
            },
            nx: 32,
            ny: 32,
        };
        let err = build_domain(spec).unwrap_err();
        assert_eq!(err.to_string(), "empty interior");
    }

    #[test]
    fn disconnected_interior_is_rejected() {
        let spec = DomainSpec {
            shape: Shape::implicit("min(disc(-1,0,0.5), disc(1,0,0.5))").unwrap(),
            bbox: BoundingBox {
                xmin: -2.0,
                xmax: 2.0,
                ymin: -1.0,
                ymax: 1.0,
            },
            nx: 64,
            ny: 32,
        };
        assert!(matches!(
            build_domain(spec),
            Err(Error::DisconnectedInterior { components: 2 })
        ));
    }

    #[test]
    fn annulus_is_rejected() {
        let spec = DomainSpec {
            shape: Shape::implicit("max(disc(0,0,1), -disc(0,0,0.4))").unwrap(),
            bbox: BoundingBox {
                xmin: -1.2,
                xmax: 1.2,
                ymin: -1.2,
                ymax: 1.2,
            },
            nx: 64,
            ny: 64,
        };
        assert!(matches!(
            build_domain(spec),
            Err(Error::MultiplyConnected { .. })
        ));
    }

    #[test]
    fn resolution_and_bbox_are_validated() {
        assert!(build_domain(DomainSpec::unit_disc(8)).is_err());
        let spec = DomainSpec {
            shape: Shape::disc(1.0),
            bbox: BoundingBox {
                xmin: -0.5,
                xmax: 0.5,
                ymin: -0.5,
                ymax: 0.5,
            },
            nx: 32,
            ny: 32,
        };
        assert!(matches!(build_domain(spec), Err(Error::InvalidDomain(_))));
    }

    #[test]
    fn arm_fractions_are_in_unit_interval_and_hit_the_boundary() {
        let g = build_domain(DomainSpec::unit_disc(64)).unwrap();
        let mut boundary_nodes = 0;
        for u in 0..g.n_unknowns() {
            for (d, &t) in g.arms(u).iter().enumerate() {
                assert!(t > 0.0 && t <= 1.0);
                if t < 1.0 {
                    let id = VertexId::Boundary {
                        node: u as u32,
                        dir: d as u8,
                    };
                    let [x, y] = g.vertex_position(id);
                    assert!((x.hypot(y) - 1.0).abs() < 1e-12);
                }
            }
            if g.kind(u) == NodeKind::BoundaryAdjacent {
                boundary_nodes += 1;
            }
        }
        assert!(boundary_nodes > 0);
    }

    #[test]
    fn area_converges_second_order() {
        let err = |n| {
            let g = build_domain(DomainSpec::ellipse(2.0, 1.0, n)).unwrap();
            (g.area() - 2.0 * PI).abs()
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 / e2 > 3.0, "ratio {}", e1 / e2);
    }
}
