//! Cut-cell quadrature over Ω and over super-level sets `{s > h}`.

use super::domain::{CellPolygon, VertexId};
use super::field::ScalarField;

/// Identity of a point where a level line crosses a polygon edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CrossingKey {
    Edge(VertexId, VertexId),
    Vertex(VertexId),
}

#[derive(Debug, Clone, Copy)]
pub struct LevelSegment {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub from_key: CrossingKey,
    pub to_key: CrossingKey,
}

#[derive(Clone, Copy)]
struct Pt {
    x: f64,
    y: f64,
    s: f64,
    id: VertexId,
}

/// Fan-triangle integral of a linear interpolant over a polygon.
#[inline]
fn fan_integral(pts: &[[f64; 3]]) -> (f64, f64) {
    let n = pts.len();
    if n < 3 {
        return (0.0, 0.0);
    }
    let [x0, y0, f0] = pts[0];
    let (mut area, mut int) = (0.0, 0.0);
    for k in 1..n - 1 {
        let [x1, y1, f1] = pts[k];
        let [x2, y2, f2] = pts[k + 1];
        let a = 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0));
        area += a;
        int += a * (f0 + f1 + f2) / 3.0;
    }
    (area, int)
}

/// Crossing of level `h` on the edge `p -> q`, computed in a canonical edge
/// orientation so both neighboring polygons produce identical coordinates.
#[inline]
fn crossing(p: &Pt, q: &Pt, h: f64) -> ([f64; 2], f64, CrossingKey) {
    let (a, b, flip) = if p.id <= q.id { (p, q, false) } else { (q, p, true) };
    let t = ((h - a.s) / (b.s - a.s)).clamp(0.0, 1.0);
    let key = if t <= 1e-12 {
        CrossingKey::Vertex(a.id)
    } else if t >= 1.0 - 1e-12 {
        CrossingKey::Vertex(b.id)
    } else {
        CrossingKey::Edge(a.id, b.id)
    };
    let xy = [a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)];
    let w = if flip { 1.0 - t } else { t };
    (xy, w, key)
}

fn polygon_points(poly: &CellPolygon, s: &ScalarField, buf: &mut Vec<Pt>) {
    buf.clear();
    buf.extend(poly.vertices.iter().map(|v| Pt {
        x: v.x,
        y: v.y,
        s: s.vertex_value(v.id),
        id: v.id,
    }));
}

/// Integrals of several fields over `{s > h}` for each level, plus the areas.
#[derive(Debug, Clone)]
pub struct SuperlevelTable {
    pub areas: Vec<f64>,
    pub integrals: Vec<Vec<f64>>,
}

/// Computes `|{s > h_k}|` and `∫_{s > h_k} f_m` for ascending `levels`.
pub fn superlevel_integrals(
    s: &ScalarField,
    levels: &[f64],
    fields: &[&ScalarField],
) -> SuperlevelTable {
    debug_assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    let nl = levels.len();
    let nf = fields.len();
    // Full-polygon contributions are accumulated at the first level they
    // do not cover and summed from the top afterwards.
    let mut full_area = vec![0.0; nl + 1];
    let mut full_int = vec![vec![0.0; nl + 1]; nf];
    let mut areas = vec![0.0; nl];
    let mut integrals = vec![vec![0.0; nl]; nf];

    let mut pts = Vec::with_capacity(8);
    let mut fvals = vec![Vec::with_capacity(8); nf];
    let mut clip: Vec<[f64; 3]> = Vec::with_capacity(12);
    let mut clip_w: Vec<(usize, usize, f64)> = Vec::with_capacity(12);
    for poly in s.grid().polygons() {
        polygon_points(poly, s, &mut pts);
        for (m, f) in fields.iter().enumerate() {
            fvals[m].clear();
            fvals[m].extend(poly.vertices.iter().map(|v| f.vertex_value(v.id)));
        }
        let smin = pts.iter().map(|p| p.s).fold(f64::INFINITY, f64::min);
        let smax = pts.iter().map(|p| p.s).fold(f64::NEG_INFINITY, f64::max);
        let k_full = levels.partition_point(|&h| h < smin);
        let k_none = levels.partition_point(|&h| h < smax);
        if k_full > 0 {
            let xy: Vec<[f64; 3]> = pts.iter().map(|p| [p.x, p.y, 0.0]).collect();
            full_area[k_full] += fan_integral(&xy).0;
            for m in 0..nf {
                let xyf: Vec<[f64; 3]> = pts
                    .iter()
                    .zip(&fvals[m])
                    .map(|(p, &f)| [p.x, p.y, f])
                    .collect();
                full_int[m][k_full] += fan_integral(&xyf).1;
            }
        }
        for k in k_full..k_none {
            let h = levels[k];
            // Clip the polygon, remembering each output point as a blend of
            // two input vertices so every integrand reuses the geometry.
            clip.clear();
            clip_w.clear();
            let n = pts.len();
            for i in 0..n {
                let (p, q) = (&pts[i], &pts[(i + 1) % n]);
                if p.s > h {
                    clip.push([p.x, p.y, 0.0]);
                    clip_w.push((i, i, 0.0));
                }
                if (p.s > h) != (q.s > h) {
                    let (xy, w, _) = crossing(p, q, h);
                    clip.push([xy[0], xy[1], 0.0]);
                    clip_w.push((i, (i + 1) % n, w));
                }
            }
            areas[k] += fan_integral(&clip).0;
            for m in 0..nf {
                for (c, &(a, b, w)) in clip.iter_mut().zip(&clip_w) {
                    c[2] = (1.0 - w) * fvals[m][a] + w * fvals[m][b];
                }
                integrals[m][k] += fan_integral(&clip).1;
            }
        }
    }
    let mut acc = 0.0;
    let mut acc_f = vec![0.0; nf];
    for k in (0..nl).rev() {
        acc += full_area[k + 1];
        areas[k] += acc;
        for m in 0..nf {
            acc_f[m] += full_int[m][k + 1];
            integrals[m][k] += acc_f[m];
        }
    }
    SuperlevelTable { areas, integrals }
}

/// `∫_Ω f` by cut-cell quadrature.
pub fn integrate(f: &ScalarField) -> f64 {
    let mut total = 0.0;
    let mut buf = Vec::with_capacity(8);
    for poly in f.grid().polygons() {
        buf.clear();
        buf.extend(poly.vertices.iter().map(|v| [v.x, v.y, f.vertex_value(v.id)]));
        total += fan_integral(&buf).1;
    }
    total
}

/// Oriented pieces of `{s = h}` with `{s > h}` on the left.
pub fn level_segments(s: &ScalarField, h: f64) -> Vec<LevelSegment> {
    let mut out = Vec::new();
    let mut pts = Vec::with_capacity(8);
    let mut crossings: Vec<(bool, [f64; 2], CrossingKey)> = Vec::with_capacity(8);
    for poly in s.grid().polygons() {
        polygon_points(poly, s, &mut pts);
        let n = pts.len();
        crossings.clear();
        for i in 0..n {
            let (p, q) = (&pts[i], &pts[(i + 1) % n]);
            if (p.s > h) != (q.s > h) {
                let (xy, _, key) = crossing(p, q, h);
                // `true` marks an exit from the super-level set.
                crossings.push((p.s > h, xy, key));
            }
        }
        let m = crossings.len();
        for c in 0..m {
            let (exit, from, from_key) = crossings[c];
            if exit {
                let (entry, to, to_key) = crossings[(c + 1) % m];
                debug_assert!(!entry);
                if from_key != to_key {
                    out.push(LevelSegment {
                        from,
                        to,
                        from_key,
                        to_key,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, BoundaryMode, DomainSpec};
    use std::f64::consts::PI;

    #[test]
    fn integral_of_one_is_area() {
        let g = build_domain(DomainSpec::unit_disc(64)).unwrap();
        let one = ScalarField::constant(&g, 1.0);
        assert!((integrate(&one) - g.area()).abs() < 1e-12);
    }

    #[test]
    fn torsion_integral_on_disc() {
        let g = build_domain(DomainSpec::unit_disc(256)).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| (1.0 - x * x - y * y) / 4.0)
            .with_mode(BoundaryMode::Dirichlet);
        assert!((integrate(&f) - PI / 8.0).abs() < 1e-4);
    }

    #[test]
    fn superlevel_areas_of_radial_field() {
        let g = build_domain(DomainSpec::unit_disc(128)).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| (1.0 - x * x - y * y) / 4.0)
            .with_mode(BoundaryMode::Dirichlet);
        let levels: Vec<f64> = (0..25).map(|k| k as f64 * 0.01).collect();
        let one = ScalarField::constant(&g, 1.0);
        let t = superlevel_integrals(&f, &levels, &[&one]);
        for (k, &h) in levels.iter().enumerate() {
            let exact = PI * (1.0 - 4.0 * h);
            assert!((t.areas[k] - exact).abs() < 2e-3, "{h}: {}", t.areas[k]);
            assert!((t.integrals[0][k] - t.areas[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn level_segments_form_closed_chains() {
        let g = build_domain(DomainSpec::ellipse(2.0, 1.0, 64)).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| 1.0 - x * x / 4.0 - y * y)
            .with_mode(BoundaryMode::Dirichlet);
        let segs = level_segments(&f, 0.5);
        use std::collections::HashMap;
        let mut degree: HashMap<CrossingKey, i32> = HashMap::new();
        for s in &segs {
            *degree.entry(s.from_key).or_default() += 1;
            *degree.entry(s.to_key).or_default() -= 1;
        }
        assert!(degree.values().all(|&d| d == 0));
        // Shoelace over oriented segments gives the enclosed area.
        let area: f64 = segs
            .iter()
            .map(|s| 0.5 * (s.from[0] * s.to[1] - s.to[0] * s.from[1]))
            .sum();
        assert!((area - PI * 2.0 * 0.5).abs() < 5e-3, "{area}");
    }
}
