//! SVG contour plots of 2-D slices: the `V = 0` level of a value function
//! and the boundary of the failure set, extracted with marching squares.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Values of a field on the node lattice of two grid dimensions, with every
/// other dimension held at a fixed coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2d {
    pub dims: (usize, usize),
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[i * ys.len() + j]` at `(xs[i], ys[j])`.
    pub values: Vec<f64>,
    /// `(dim, coordinate)` for each fixed dimension.
    pub fixed: Vec<(usize, f64)>,
}

/// `fixed` holds one coordinate per grid dimension; entries for `dims` are
/// ignored.
pub fn slice_2d(field: &ScalarField, dims: (usize, usize), fixed: &[f64]) -> Result<Slice2d> {
    let grid = field.grid();
    let n = grid.ndim();
    if dims.0 >= n || dims.1 >= n || dims.0 == dims.1 {
        return Err(Error::param("dims", format!("{dims:?} are not two distinct grid dimensions")));
    }
    if fixed.len() != n {
        return Err(Error::Dimension(format!("slice needs {n} coordinates, got {}", fixed.len())));
    }
    let xs: Vec<f64> = (0..grid.counts()[dims.0]).map(|i| grid.axis_coord(dims.0, i)).collect();
    let ys: Vec<f64> = (0..grid.counts()[dims.1]).map(|j| grid.axis_coord(dims.1, j)).collect();
    let mut point = fixed.to_vec();
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    for &x in &xs {
        for &y in &ys {
            point[dims.0] = x;
            point[dims.1] = y;
            values.push(field.interpolate(&point)?);
        }
    }
    Ok(Slice2d {
        dims,
        xs,
        ys,
        values,
        fixed: (0..n).filter(|d| *d != dims.0 && *d != dims.1).map(|d| (d, fixed[d])).collect(),
    })
}

pub type Segment = ((f64, f64), (f64, f64));

/// Line segments of the `level` contour. Saddle cells are disambiguated by
/// the cell-center average.
pub fn contour_segments(slice: &Slice2d, level: f64) -> Vec<Segment> {
    let (nx, ny) = (slice.xs.len(), slice.ys.len());
    let v = |i: usize, j: usize| slice.values[i * ny + j] - level;
    let lerp = |a: (f64, f64), b: (f64, f64), fa: f64, fb: f64| {
        let t = if fa == fb { 0.5 } else { fa / (fa - fb) };
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    let mut out = Vec::new();
    for i in 0..nx.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            // Corners counter-clockwise from lower-left.
            let p = [
                (slice.xs[i], slice.ys[j]),
                (slice.xs[i + 1], slice.ys[j]),
                (slice.xs[i + 1], slice.ys[j + 1]),
                (slice.xs[i], slice.ys[j + 1]),
            ];
            let f = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            let case = f.iter().enumerate().fold(0u8, |c, (k, x)| c | (((*x > 0.0) as u8) << k));
            let edge = |e: usize| lerp(p[e], p[(e + 1) % 4], f[e], f[(e + 1) % 4]);
            // Edge e joins corner e and corner e+1.
            let pairs: &[(usize, usize)] = match case {
                0 | 15 => &[],
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(2, 3)],
                5 | 10 => {
                    let center = 0.25 * f.iter().sum::<f64>();
                    // Corners 0 and 2 share a sign in case 5, 1 and 3 in case 10.
                    if (center > 0.0) == (case == 5) {
                        &[(0, 1), (2, 3)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            out.extend(pairs.iter().map(|&(a, b)| (edge(a), edge(b))));
        }
    }
    out
}

/// `{prefix}_x{d}={c:.3}…_.svg` naming each fixed coordinate, or
/// `{prefix}.svg` for a full 2-D field.
pub fn slice_file_name(prefix: &str, slice: &Slice2d) -> String {
    let mut name = prefix.to_string();
    for (d, c) in &slice.fixed {
        let _ = write!(name, "_x{d}={c:.3}");
    }
    name.push_str(".svg");
    name
}

/// Standalone SVG with the `V = 0` contour (blue) and the `l = 0` contour
/// (red) over the slice's bounding box.
pub fn render_svg(value: &Slice2d, failure: &Slice2d, title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 480.0;
    const PAD: f64 = 40.0;
    let (x0, x1) = (value.xs[0], *value.xs.last().unwrap());
    let (y0, y1) = (value.ys[0], *value.ys.last().unwrap());
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(svg, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">x{}: [{x0:.3}, {x1:.3}]   x{}: [{y0:.3}, {y1:.3}]</text>"#,
        H - 12.0,
        value.dims.0,
        value.dims.1
    );
    for (slice, color, label) in [(failure, "#c0392b", "failure"), (value, "#1f5fbf", "value")] {
        let mut d = String::new();
        for ((ax, ay), (bx, by)) in contour_segments(slice, 0.0) {
            let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", sx(ax), sy(ay), sx(bx), sy(by));
        }
        let _ = writeln!(svg, r#"<path class="{label}" d="{d}" stroke="{color}" stroke-width="1.5" fill="none"/>"#);
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
