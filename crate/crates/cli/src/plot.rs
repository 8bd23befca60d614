//! Marching-squares contour plots rendered as SVG.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use exitlab::grid::{FieldFile, GridGeometry};
use exitlab::ScalarField;

/// Field values on the full node lattice; nodes outside the domain hold 0.
#[derive(Debug, Clone)]
pub struct Raster {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
    pub inside: Vec<bool>,
}

impl Raster {
    pub fn from_file(file: &FieldFile) -> Self {
        let dense = file.dense();
        Self {
            geometry: file.geometry,
            values: dense.iter().map(|v| v.unwrap_or(0.0)).collect(),
            inside: dense.iter().map(Option::is_some).collect(),
        }
    }

    pub fn from_field(f: &ScalarField) -> Self {
        let grid = f.grid();
        let g = grid.geometry();
        let mut values = vec![0.0; g.n_nodes()];
        let mut inside = vec![false; g.n_nodes()];
        for u in 0..grid.n_unknowns() {
            let (i, j) = grid.node_of(u);
            values[g.node_id(i, j)] = f.get(u);
            inside[g.node_id(i, j)] = true;
        }
        Self {
            geometry: g,
            values,
            inside,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let file = FieldFile::read(BufReader::new(f))
            .with_context(|| format!("reading field {}", path.display()))?;
        Ok(Self::from_file(&file))
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.inside)
            .filter(|(_, &i)| i)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Extent `[xmin, xmax, ymin, ymax]` of the inside nodes, padded by one cell.
    fn extent(&self) -> [f64; 4] {
        let g = self.geometry;
        let mut e = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for (id, _) in self.inside.iter().enumerate().filter(|(_, &i)| i) {
            let (i, j) = g.node_ij(id);
            let [x, y] = g.node_xy(i, j);
            e = [e[0].min(x), e[1].max(x), e[2].min(y), e[3].max(y)];
        }
        [e[0] - g.hx, e[1] + g.hx, e[2] - g.hy, e[3] + g.hy]
    }
}

/// Marching-squares segments of `values` at level `h`; saddles are resolved
/// by the cell average.
pub fn contour_segments(geometry: GridGeometry, values: &[f64], h: f64) -> Vec<[[f64; 2]; 2]> {
    let g = geometry;
    let mut out = Vec::new();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let v = [
                values[g.node_id(i, j)],
                values[g.node_id(i + 1, j)],
                values[g.node_id(i + 1, j + 1)],
                values[g.node_id(i, j + 1)],
            ];
            let above = v.map(|x| x > h);
            if above.iter().all(|&a| a) || above.iter().all(|&a| !a) {
                continue;
            }
            let p = [g.node_xy(i, j), g.node_xy(i + 1, j), g.node_xy(i + 1, j + 1), g.node_xy(i, j + 1)];
            // Edge k joins corners k and k+1 (counter-clockwise from bottom-left).
            let cross = |k: usize| -> Option<[f64; 2]> {
                let (a, b) = (k, (k + 1) % 4);
                (above[a] != above[b]).then(|| {
                    let t = (h - v[a]) / (v[b] - v[a]);
                    [p[a][0] + t * (p[b][0] - p[a][0]), p[a][1] + t * (p[b][1] - p[a][1])]
                })
            };
            let edges: Vec<(usize, [f64; 2])> = (0..4).filter_map(|k| cross(k).map(|q| (k, q))).collect();
            match edges.len() {
                2 => out.push([edges[0].1, edges[1].1]),
                4 => {
                    let centre = v.iter().sum::<f64>() / 4.0 > h;
                    let e = |k: usize| edges[k].1;
                    if centre == above[0] {
                        // Corners 0 and 2 connect through the centre.
                        out.push([e(0), e(1)]);
                        out.push([e(2), e(3)]);
                    } else {
                        out.push([e(3), e(0)]);
                        out.push([e(1), e(2)]);
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// `n` levels evenly spaced strictly inside `(0, max)`.
pub fn even_levels(max: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| max * k as f64 / (n + 1) as f64).collect()
}

pub struct Panel {
    pub title: String,
    pub note: Option<String>,
    pub raster: Raster,
    pub levels: Vec<f64>,
}

impl Panel {
    pub fn new(title: impl Into<String>, raster: Raster, n_levels: usize) -> Self {
        let levels = even_levels(raster.max(), n_levels);
        Self {
            title: title.into(),
            note: None,
            raster,
            levels,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

const PANEL_WIDTH: f64 = 320.0;
const LEGEND_WIDTH: f64 = 110.0;
const HEADER: f64 = 44.0;

fn colour(t: f64) -> String {
    let lerp = |a: f64, b: f64| (a + t * (b - a)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(40.0, 240.0), lerp(40.0, 180.0), lerp(140.0, 30.0))
}

fn path_data(segments: &[[[f64; 2]; 2]], map: impl Fn([f64; 2]) -> (f64, f64)) -> String {
    let mut d = String::new();
    for [a, b] in segments {
        let (ax, ay) = map(*a);
        let (bx, by) = map(*b);
        let _ = write!(d, "M{ax:.2} {ay:.2}L{bx:.2} {by:.2}");
    }
    d
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders panels on a grid with `cols` columns. Output depends only on
/// the inputs.
pub fn render_svg(panels: &[Panel], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols);
    let heights: Vec<f64> = panels
        .iter()
        .map(|p| {
            let [x0, x1, y0, y1] = p.raster.extent();
            PANEL_WIDTH * (y1 - y0) / (x1 - x0)
        })
        .collect();
    let row_height: Vec<f64> = (0..rows)
        .map(|r| {
            heights[r * cols..((r + 1) * cols).min(panels.len())]
                .iter()
                .fold(0.0, |a: f64, &b| a.max(b))
                .max(24.0 + 14.0 * 10.0)
                + HEADER
                + 16.0
        })
        .collect();
    let cell_w = PANEL_WIDTH + LEGEND_WIDTH + 20.0;
    let total_w = cols as f64 * cell_w;
    let total_h: f64 = row_height.iter().sum();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0}" height="{total_h:.0}" viewBox="0 0 {total_w:.0} {total_h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut top = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            let Some(p) = panels.get(k) else { break };
            let left = c as f64 * cell_w + 10.0;
            let [x0, x1, _, y1] = p.raster.extent();
            let scale = PANEL_WIDTH / (x1 - x0);
            let oy = top + HEADER;
            let map = |q: [f64; 2]| (left + (q[0] - x0) * scale, oy + (y1 - q[1]) * scale);
            let _ = writeln!(s, r#"<g id="panel-{k}">"#);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="14">{}</text>"#, left, top + 18.0, escape(&p.title));
            if let Some(n) = &p.note {
                let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, left, top + 34.0, escape(n));
            }
            let mask: Vec<f64> = p.raster.inside.iter().map(|&i| if i { 1.0 } else { 0.0 }).collect();
            let outline = contour_segments(p.raster.geometry, &mask, 0.5);
            let _ = writeln!(
                s,
                r##"<path d="{}" stroke="#777777" stroke-width="1.2" fill="none"/>"##,
                path_data(&outline, map)
            );
            let n = p.levels.len();
            for (l, &h) in p.levels.iter().enumerate() {
                let t = if n > 1 { l as f64 / (n - 1) as f64 } else { 0.0 };
                let segs = contour_segments(p.raster.geometry, &p.raster.values, h);
                let _ = writeln!(
                    s,
                    r#"<path class="level" data-level="{h:.6e}" d="{}" stroke="{}" stroke-width="1" fill="none"/>"#,
                    path_data(&segs, map),
                    colour(t)
                );
                let lx = left + PANEL_WIDTH + 12.0;
                let ly = oy + 10.0 + 14.0 * l as f64;
                let _ = writeln!(
                    s,
                    r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{h:.4}</text>"#,
                    lx + 18.0,
                    colour(t),
                    lx + 24.0,
                    ly + 4.0
                );
            }
            let _ = writeln!(s, "</g>");
        }
        top += row_height[r];
    }
    s.push_str("</svg>\n");
    s
}

/// Reads a field CSV and writes a single-panel contour plot.
pub fn plot_contours(field: &Path, levels: usize, out: &Path) -> Result<()> {
    let raster = Raster::read(field)?;
    let title = field.file_stem().map_or("field".into(), |s| s.to_string_lossy().into_owned());
    let svg = render_svg(&[Panel::new(title, raster, levels)], 1);
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))
}
