//! ASCII PLY point clouds: a colored writer and a small vertex reader.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};

/// Viridis-like ramp stops, dark purple to yellow.
pub const RAMP: [[u8; 3]; 5] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
];

/// Categorical palette for integer labels (cycled).
pub const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Per-vertex color source.
#[derive(Clone, Copy, Debug)]
pub enum Coloring<'a> {
    /// Min maps to the first ramp stop, max to the last; a constant field maps to the first.
    Scalars(&'a [f64]),
    Labels(&'a [usize]),
}

/// Position of `t` in `[0, 1]` along [`RAMP`], linearly interpolated.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (RAMP.len() - 1) as f64;
    let lo = (pos.floor() as usize).min(RAMP.len() - 2);
    let frac = pos - lo as f64;
    std::array::from_fn(|c| {
        let a = RAMP[lo][c] as f64;
        let b = RAMP[lo + 1][c] as f64;
        (a + (b - a) * frac).round() as u8
    })
}

pub fn colors_for(coloring: Coloring<'_>) -> Vec<[u8; 3]> {
    match coloring {
        Coloring::Scalars(values) => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // rounding-level spread still counts as uniform
            let span = max - min;
            let span = if span > 1e-9 * max.abs().max(min.abs()).max(1.0) { span } else { 0.0 };
            values
                .iter()
                .map(|&v| ramp_color(if span > 0.0 { (v - min) / span } else { 0.0 }))
                .collect()
        }
        Coloring::Labels(labels) => labels.iter().map(|&l| PALETTE[l % PALETTE.len()]).collect(),
    }
}

/// Renders a colored ASCII PLY document.
pub fn ply_colored_string(cloud: &PointCloud, coloring: Coloring<'_>) -> Result<String> {
    let n = match coloring {
        Coloring::Scalars(v) => v.len(),
        Coloring::Labels(l) => l.len(),
    };
    if n != cloud.len() {
        return Err(Error::invalid(format!(
            "{n} color values for {} points",
            cloud.len()
        )));
    }
    let colors = colors_for(coloring);
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment written by srinet\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals.is_some() {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(ns) = &cloud.normals {
            let _ = write!(s, " {} {} {}", ns[i].x, ns[i].y, ns[i].z);
        }
        let [r, g, b] = colors[i];
        let _ = writeln!(s, " {r} {g} {b}");
    }
    Ok(s)
}

pub fn write_ply_colored(cloud: &PointCloud, coloring: Coloring<'_>, path: &Path) -> Result<()> {
    let text = ply_colored_string(cloud, coloring)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Reads vertex positions (and `nx ny nz` normals when present) from ASCII PLY.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(text.lines().count() + 1, "header has no end_header"))?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(ln, format!("unsupported PLY format '{other}'")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(ln, format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", .., name] => elements
                .last_mut()
                .ok_or_else(|| parse_err(ln, "property before any element"))?
                .properties
                .push(name.to_string()),
            _ => return Err(parse_err(ln, format!("unexpected header line '{l}'"))),
        }
    }

    let mut cloud = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines.next();
            }
            continue;
        }
        let col = |name: &str| el.properties.iter().position(|p| p == name);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(parse_err(1, "vertex element lacks x/y/z")),
        };
        let normal_cols = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        let mut points = Vec::with_capacity(el.count);
        let mut normals = Vec::new();
        for v in 0..el.count {
            let (ln, l) = lines.next().ok_or_else(|| {
                parse_err(
                    text.lines().count() + 1,
                    format!("unexpected end of file, expected vertex {} of {}", v + 1, el.count),
                )
            })?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(ln, format!("bad vertex '{l}'")))?;
            if vals.len() < el.properties.len() {
                return Err(parse_err(ln, "too few vertex values"));
            }
            points.push(Vec3::new(vals[x], vals[y], vals[z]));
            if let Some((a, b, c)) = normal_cols {
                let n = Vec3::new(vals[a], vals[b], vals[c]);
                let len = n.norm();
                if len == 0.0 || !len.is_finite() {
                    return Err(parse_err(ln, "zero normal"));
                }
                normals.push(n / len);
            }
        }
        let mut c = PointCloud::new(points);
        if normal_cols.is_some() {
            c.normals = Some(normals);
        }
        cloud = Some(c);
        break;
    }
    cloud.ok_or_else(|| parse_err(1, "no vertex element"))
}
