use std::fmt::Write as _;
use std::path::Path;

use super::{MeshError, TriangleMesh};
use crate::se3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    StlAscii,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(MeshFormat::Off),
            "stl" => Some(MeshFormat::StlAscii),
            _ => None,
        }
    }
}

/// Reads a mesh; `format` defaults to the file extension.
pub fn load_mesh(path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<TriangleMesh, MeshError> {
    let path = path.as_ref();
    let format = format
        .or_else(|| MeshFormat::from_path(path))
        .ok_or_else(|| MeshError::UnknownFormat(path.display().to_string()))?;
    let bytes = std::fs::read(path)?;
    match format {
        MeshFormat::Off => {
            let text = String::from_utf8(bytes)
                .map_err(|_| MeshError::Parse { line: 0, message: "OFF file is not UTF-8 text".into() })?;
            parse_off(&text)
        }
        MeshFormat::StlAscii => {
            let text = std::str::from_utf8(&bytes).map_err(|_| MeshError::BinaryStl)?;
            if !text.trim_start().starts_with("solid") || text.contains('\0') {
                return Err(MeshError::BinaryStl);
            }
            parse_stl_ascii(text)
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { line, message: message.into() }
}

/// Tokens of `text` with their 1-based line numbers, comments stripped.
fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().flat_map(|(i, line)| {
        let body = line.split('#').next().unwrap_or("");
        body.split_whitespace().map(move |tok| (i + 1, tok))
    })
}

/// Object File Format. Polygons with more than three vertices are
/// fan-triangulated; trailing per-face color values are ignored.
pub fn parse_off(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_line, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let header_rest = match header.strip_prefix("OFF") {
        Some(rest) => rest.trim(),
        None => return Err(parse_err(header_line, "missing OFF header")),
    };
    let (count_line, counts) = if header_rest.is_empty() {
        lines.next().ok_or_else(|| parse_err(header_line + 1, "missing element counts"))?
    } else {
        (header_line, header_rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| parse_err(count_line, format!("bad count '{t}'"))))
        .collect::<Result<_, _>>()?;
    if counts.len() < 2 {
        return Err(parse_err(count_line, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(0, "unexpected end of file in vertex list"))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, format!("bad coordinate '{t}'"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != 3 {
            return Err(parse_err(ln, "vertex needs three coordinates"));
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(parse_err(ln, "non-finite coordinate"));
        }
        vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(0, "unexpected end of file in face list"))?;
        let mut it = l.split_whitespace();
        let k: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(ln, "bad face vertex count"))?;
        if k < 3 {
            return Err(parse_err(ln, format!("face with {k} vertices")));
        }
        let idx: Vec<usize> = it
            .take(k)
            .map(|t| t.parse::<usize>().map_err(|_| parse_err(ln, format!("bad index '{t}'"))))
            .collect::<Result<_, _>>()?;
        if idx.len() != k {
            return Err(parse_err(ln, "face truncated"));
        }
        for &i in &idx {
            if i >= nv {
                return Err(MeshError::IndexOutOfRange { triangle: triangles.len(), index: i, count: nv });
            }
        }
        for j in 1..k - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// ASCII STL. Facet normals are ignored; every facet contributes three
/// unshared vertices.
pub fn parse_stl_ascii(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut toks = tokens(text).peekable();
    match toks.next() {
        Some((_, "solid")) => {}
        Some((ln, _)) => return Err(parse_err(ln, "expected 'solid'")),
        None => return Err(parse_err(1, "empty file")),
    }
    // Optional solid name: everything up to the first 'facet' or 'endsolid'.
    while let Some(&(_, t)) = toks.peek() {
        if t == "facet" || t == "endsolid" {
            break;
        }
        toks.next();
    }

    fn expect<'a>(want: &str, toks: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<usize, MeshError> {
        match toks.next() {
            Some((ln, t)) if t == want => Ok(ln),
            Some((ln, t)) => Err(parse_err(ln, format!("expected '{want}', found '{t}'"))),
            None => Err(parse_err(0, format!("unexpected end of file, expected '{want}'"))),
        }
    }
    fn number<'a>(toks: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<f64, MeshError> {
        match toks.next() {
            Some((ln, t)) => {
                let v: f64 = t.parse().map_err(|_| parse_err(ln, format!("bad number '{t}'")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(ln, "non-finite number"))
                }
            }
            None => Err(parse_err(0, "unexpected end of file in number")),
        }
    }

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    loop {
        match toks.peek().copied() {
            Some((_, "endsolid")) => break,
            Some((_, "facet")) => {
                toks.next();
                expect("normal", &mut toks)?;
                for _ in 0..3 {
                    number(&mut toks)?;
                }
                expect("outer", &mut toks)?;
                expect("loop", &mut toks)?;
                let base = vertices.len();
                for _ in 0..3 {
                    expect("vertex", &mut toks)?;
                    let x = number(&mut toks)?;
                    let y = number(&mut toks)?;
                    let z = number(&mut toks)?;
                    vertices.push(Vec3::new(x, y, z));
                }
                expect("endloop", &mut toks)?;
                expect("endfacet", &mut toks)?;
                triangles.push([base, base + 1, base + 2]);
            }
            Some((ln, t)) => return Err(parse_err(ln, format!("expected 'facet' or 'endsolid', found '{t}'"))),
            None => return Err(parse_err(0, "missing 'endsolid'")),
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn write_off(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "OFF");
    let _ = writeln!(out, "{} {} 0", mesh.vertices.len(), mesh.triangles.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}
