//! Gmsh MSH 2.2 ASCII reader.
//!
//! Only 3-node triangles (element type 2) define the domain. Line elements
//! and physical tags are read past; the boundary is recovered from the
//! triangle topology.

use std::collections::HashMap;

use nalgebra::Vector2;

use super::{Mesh, MeshError};

const TRIANGLE: u32 = 2;

fn malformed(section: &str, reason: impl Into<String>) -> MeshError {
    MeshError::MalformedSection {
        section: section.into(),
        reason: reason.into(),
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_nonempty(&mut self) -> Option<(usize, &'a str)> {
        self.inner
            .by_ref()
            .map(|(i, l)| (i + 1, l.trim()))
            .find(|(_, l)| !l.is_empty())
    }

    fn expect(&mut self, section: &str) -> Result<(usize, &'a str), MeshError> {
        self.next_nonempty()
            .ok_or_else(|| malformed(section, "unexpected end of file"))
    }

    fn expect_end(&mut self, section: &str) -> Result<(), MeshError> {
        let (ln, l) = self.expect(section)?;
        if l != format!("$End{section}") {
            return Err(malformed(section, format!("line {ln}: expected $End{section}, found `{l}`")));
        }
        Ok(())
    }
}

/// Coordinates and the file-id → index map.
type NodeTable = (Vec<Vector2<f64>>, HashMap<u64, usize>);

fn parse_count(section: &str, (ln, l): (usize, &str)) -> Result<usize, MeshError> {
    l.parse()
        .map_err(|_| malformed(section, format!("line {ln}: invalid count `{l}`")))
}

/// Parses a Gmsh MSH 2.2 ASCII document into a [`Mesh`].
pub fn parse_msh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let mut format_seen = false;
    let mut nodes: Option<NodeTable> = None;
    let mut triangles: Vec<[u64; 3]> = Vec::new();
    let mut elements_seen = false;

    while let Some((ln, header)) = lines.next_nonempty() {
        match header {
            "$MeshFormat" => {
                let (ln, l) = lines.expect("MeshFormat")?;
                let mut it = l.split_whitespace();
                let version = it.next().unwrap_or("");
                let file_type = it.next().unwrap_or("");
                if version.parse::<f64>().ok() != Some(2.2) {
                    return Err(MeshError::UnsupportedVersion(format!(
                        "MSH version `{version}` (line {ln}); only 2.2 is supported"
                    )));
                }
                if file_type != "0" {
                    return Err(MeshError::UnsupportedVersion(
                        "binary MSH files are not supported".into(),
                    ));
                }
                lines.expect_end("MeshFormat")?;
                format_seen = true;
            }
            "$Nodes" => {
                if !format_seen {
                    return Err(MeshError::UnsupportedVersion("missing $MeshFormat header".into()));
                }
                let count = parse_count("Nodes", lines.expect("Nodes")?)?;
                let mut coords = Vec::with_capacity(count);
                let mut ids = HashMap::with_capacity(count);
                for _ in 0..count {
                    let (ln, l) = lines.expect("Nodes")?;
                    let f: Vec<&str> = l.split_whitespace().collect();
                    if f.len() < 4 {
                        return Err(malformed("Nodes", format!("line {ln}: expected `id x y z`")));
                    }
                    let id: u64 = f[0]
                        .parse()
                        .map_err(|_| malformed("Nodes", format!("line {ln}: bad node id")))?;
                    let x: f64 = f[1]
                        .parse()
                        .map_err(|_| malformed("Nodes", format!("line {ln}: bad x coordinate")))?;
                    let y: f64 = f[2]
                        .parse()
                        .map_err(|_| malformed("Nodes", format!("line {ln}: bad y coordinate")))?;
                    if ids.insert(id, coords.len()).is_some() {
                        return Err(malformed("Nodes", format!("line {ln}: duplicate node id {id}")));
                    }
                    coords.push(Vector2::new(x, y));
                }
                lines.expect_end("Nodes")?;
                nodes = Some((coords, ids));
            }
            "$Elements" => {
                if !format_seen {
                    return Err(MeshError::UnsupportedVersion("missing $MeshFormat header".into()));
                }
                let count = parse_count("Elements", lines.expect("Elements")?)?;
                for _ in 0..count {
                    let (ln, l) = lines.expect("Elements")?;
                    let f: Vec<u64> = l
                        .split_whitespace()
                        .map(|s| s.parse::<u64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| malformed("Elements", format!("line {ln}: non-integer field")))?;
                    if f.len() < 3 {
                        return Err(malformed("Elements", format!("line {ln}: truncated element")));
                    }
                    let kind = f[1] as u32;
                    let ntags = f[2] as usize;
                    let node_ids = f.get(3 + ntags..).unwrap_or(&[]);
                    if kind == TRIANGLE {
                        if node_ids.len() != 3 {
                            return Err(malformed(
                                "Elements",
                                format!("line {ln}: triangle needs 3 nodes, found {}", node_ids.len()),
                            ));
                        }
                        triangles.push([node_ids[0], node_ids[1], node_ids[2]]);
                    }
                }
                lines.expect_end("Elements")?;
                elements_seen = true;
            }
            h if h.starts_with('$') && !h.starts_with("$End") => {
                let name = &h[1..];
                let end = format!("$End{name}");
                loop {
                    let (_, l) = lines.expect(name)?;
                    if l == end {
                        break;
                    }
                }
            }
            other => {
                return Err(malformed("file", format!("line {ln}: unexpected `{other}`")));
            }
        }
    }

    if !format_seen {
        return Err(MeshError::UnsupportedVersion("missing $MeshFormat header".into()));
    }
    let (coords, ids) = nodes.ok_or_else(|| malformed("Nodes", "section missing"))?;
    if !elements_seen {
        return Err(malformed("Elements", "section missing"));
    }
    if triangles.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    let tris = triangles
        .iter()
        .map(|t| {
            let mut out = [0usize; 3];
            for (k, id) in t.iter().enumerate() {
                out[k] = *ids
                    .get(id)
                    .ok_or_else(|| malformed("Elements", format!("unknown node id {id}")))?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, MeshError>>()?;
    Mesh::from_triangles(coords, tris)
}
