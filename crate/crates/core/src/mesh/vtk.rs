//! Legacy VTK ASCII output of (deformed) triangulations.

use std::fmt::Write;

use super::{Mesh, MeshError};
use crate::kinematics::DeformationField;

const VTK_TRIANGLE: u8 = 5;

/// A named scalar array attached to vertices or cells.
#[derive(Debug, Clone)]
pub enum FieldData {
    Point { name: String, values: Vec<f64> },
    Cell { name: String, values: Vec<f64> },
}

impl FieldData {
    pub fn point(name: impl Into<String>, values: Vec<f64>) -> Self {
        FieldData::Point {
            name: name.into(),
            values,
        }
    }

    pub fn cell(name: impl Into<String>, values: Vec<f64>) -> Self {
        FieldData::Cell {
            name: name.into(),
            values,
        }
    }
}

fn check(name: &str, got: usize, expected: usize) -> Result<(), MeshError> {
    if got != expected {
        return Err(MeshError::DimensionMismatch {
            name: name.into(),
            got,
            expected,
        });
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

/// Renders `mesh` at the deformed positions `x̂ + q(x̂)` as an
/// `UNSTRUCTURED_GRID`. The displacement is also written as point vectors.
pub fn write_vtk(mesh: &Mesh, q: &DeformationField, fields: &[FieldData]) -> Result<String, MeshError> {
    let nv = mesh.n_vertices();
    let nt = mesh.n_triangles();
    check("displacement", q.n_vertices(), nv)?;
    for f in fields {
        match f {
            FieldData::Point { name, values } => check(name, values.len(), nv)?,
            FieldData::Cell { name, values } => check(name, values.len(), nt)?,
        }
    }

    let mut out = String::with_capacity(64 * (nv + nt));
    out.push_str("# vtk DataFile Version 3.0\nmaxshape deformed mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {nv} double");
    for (v, x) in mesh.vertices().iter().enumerate() {
        let d = q.at(v);
        let _ = writeln!(out, "{:e} {:e} 0", x.x + d.x, x.y + d.y);
    }
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(out, "{VTK_TRIANGLE}");
    }

    let _ = writeln!(out, "POINT_DATA {nv}");
    out.push_str("VECTORS displacement double\n");
    for v in 0..nv {
        let d = q.at(v);
        let _ = writeln!(out, "{:e} {:e} 0", d.x, d.y);
    }
    for f in fields {
        if let FieldData::Point { name, values } = f {
            write_scalars(&mut out, name, values);
        }
    }
    if fields.iter().any(|f| matches!(f, FieldData::Cell { .. })) {
        let _ = writeln!(out, "CELL_DATA {nt}");
        for f in fields {
            if let FieldData::Cell { name, values } = f {
                write_scalars(&mut out, name, values);
            }
        }
    }
    Ok(out)
}

fn write_scalars(out: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(out, "SCALARS {} double 1\nLOOKUP_TABLE default", sanitize(name));
    for v in values {
        let _ = writeln!(out, "{v:e}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_unit_square;

    fn points(text: &str) -> Vec<(f64, f64)> {
        let mut it = text.lines().skip_while(|l| !l.starts_with("POINTS"));
        let n: usize = it.next().unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
        it.take(n)
            .map(|l| {
                let f: Vec<f64> = l.split_whitespace().map(|s| s.parse().unwrap()).collect();
                (f[0], f[1])
            })
            .collect()
    }

    #[test]
    fn zero_displacement_keeps_reference_points() {
        let m = generate_unit_square(3);
        let q = DeformationField::zeros(m.n_vertices());
        let text = write_vtk(&m, &q, &[]).unwrap();
        for (p, x) in points(&text).iter().zip(m.vertices()) {
            assert_eq!(*p, (x.x, x.y));
        }
    }

    #[test]
    fn constant_displacement_shifts_points() {
        let m = generate_unit_square(2);
        let q = DeformationField::from_fn(m.n_vertices(), |_| nalgebra::Vector2::new(0.1, 0.0));
        let text = write_vtk(&m, &q, &[]).unwrap();
        for (p, x) in points(&text).iter().zip(m.vertices()) {
            assert!((p.0 - (x.x + 0.1)).abs() < 1e-15);
            assert_eq!(p.1, x.y);
        }
    }

    #[test]
    fn wrong_field_length_is_rejected() {
        let m = generate_unit_square(2);
        let q = DeformationField::zeros(m.n_vertices());
        let err = write_vtk(&m, &q, &[FieldData::cell("bad", vec![0.0; 3])]).unwrap_err();
        assert!(matches!(err, MeshError::DimensionMismatch { expected: 8, .. }));
        let short_q = DeformationField::zeros(2);
        assert!(write_vtk(&m, &short_q, &[]).is_err());
    }
}
