//! ASCII OFF meshes.

use crate::data::mesh::TriangleMesh;
use crate::error::{Error, Result};
use crate::geom::Vec3;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses an OFF file. Polygons are fan-triangulated.
///
/// Accepts `#` comments, counts on the header line, and the `OFF123 456 0`
/// spelling where the counts are glued to the keyword.
pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let last_line = text.lines().count();

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected OFF header"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(header_line, format!("expected 'OFF', found '{header}'")))?
        .trim();

    let (count_line, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(last_line + 1, "missing vertex/face counts"))?
    } else {
        (header_line, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(count_line, format!("bad counts '{counts}'")))?;
    if counts.len() < 2 {
        return Err(parse_err(count_line, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for v in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| {
            parse_err(
                last_line + 1,
                format!("unexpected end of file, expected vertex {} of {nv}", v + 1),
            )
        })?;
        let xyz: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(ln, format!("bad vertex '{l}'")))?;
        if xyz.len() != 3 {
            return Err(parse_err(ln, format!("vertex needs 3 coordinates, got '{l}'")));
        }
        vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
    }

    let mut faces = Vec::with_capacity(nf);
    for f in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| {
            parse_err(
                last_line + 1,
                format!("unexpected end of file, expected face {} of {nf}", f + 1),
            )
        })?;
        let mut tokens = l.split_whitespace();
        let arity: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, format!("bad face '{l}'")))?;
        let idx: Vec<usize> = tokens
            .take(arity)
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(ln, format!("bad face index in '{l}'")))?;
        if arity < 3 || idx.len() != arity {
            return Err(parse_err(ln, format!("face needs at least 3 indices, got '{l}'")));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(ln, format!("vertex index {bad} out of range (0..{nv})")));
        }
        for w in 1..arity - 1 {
            faces.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Writes a mesh as ASCII OFF.
pub fn write_off(mesh: &TriangleMesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        s.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        s.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    s
}
