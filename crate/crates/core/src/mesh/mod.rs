//! Reference triangulations with edge topology.
//!
//! Edges are globally oriented from the lower to the higher vertex index.
//! Each triangle stores its three edges in the counterclockwise traversal
//! order `(v0→v1, v1→v2, v2→v0)` together with a sign that is `+1` when that
//! traversal agrees with the global orientation.

mod msh;
mod vtk;

use std::collections::HashMap;

use nalgebra::Vector2;
use thiserror::Error;

pub use msh::parse_msh;
pub use vtk::{write_vtk, FieldData};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("unsupported mesh format: {0}")]
    UnsupportedVersion(String),
    #[error("malformed {section} section: {reason}")]
    MalformedSection { section: String, reason: String },
    #[error("mesh contains no triangles")]
    EmptyMesh,
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("triangle {0} has zero area")]
    DegenerateTriangle(usize),
    #[error("field `{name}` has length {got}, expected {expected}")]
    DimensionMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
}

/// Local vertex pairs of the three triangle edges, in traversal order.
pub const LOCAL_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vector2<f64>>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    triangle_edges: Vec<[(usize, f64); 3]>,
    boundary_vertices: Vec<bool>,
    boundary_edges: Vec<bool>,
}

impl Mesh {
    /// Builds the topology of a triangulation.
    ///
    /// Clockwise triangles are reoriented; vertices not referenced by any
    /// triangle are dropped and the remaining ones renumbered in their
    /// original order.
    pub fn from_triangles(
        vertices: Vec<Vector2<f64>>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        let mut used = vec![false; vertices.len()];
        for t in &triangles {
            for &v in t {
                if v >= vertices.len() {
                    return Err(MeshError::MalformedSection {
                        section: "Elements".into(),
                        reason: format!("vertex index {v} out of range"),
                    });
                }
                used[v] = true;
            }
        }
        let mut remap = vec![usize::MAX; vertices.len()];
        let mut kept = Vec::with_capacity(vertices.len());
        for (i, v) in vertices.into_iter().enumerate() {
            if used[i] {
                remap[i] = kept.len();
                kept.push(v);
            }
        }
        let vertices = kept;

        let mut tris = Vec::with_capacity(triangles.len());
        for (k, t) in triangles.iter().enumerate() {
            let mut t = t.map(|v| remap[v]);
            let area2 = signed_area2(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
            if area2 == 0.0 || t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(MeshError::DegenerateTriangle(k));
            }
            if area2 < 0.0 {
                t.swap(1, 2);
            }
            tris.push(t);
        }

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut adjacency: Vec<u32> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(tris.len());
        for t in &tris {
            let mut te = [(0usize, 0.0f64); 3];
            for (k, &(a, b)) in LOCAL_EDGES.iter().enumerate() {
                let (va, vb) = (t[a], t[b]);
                let key = (va.min(vb), va.max(vb));
                let idx = *lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    adjacency.push(0);
                    edges.len() - 1
                });
                adjacency[idx] += 1;
                if adjacency[idx] > 2 {
                    return Err(MeshError::NonManifoldEdge(key.0, key.1));
                }
                te[k] = (idx, if va < vb { 1.0 } else { -1.0 });
            }
            triangle_edges.push(te);
        }

        let boundary_edges: Vec<bool> = adjacency.iter().map(|&c| c == 1).collect();
        let mut boundary_vertices = vec![false; vertices.len()];
        for (e, &[lo, hi]) in edges.iter().enumerate() {
            if boundary_edges[e] {
                boundary_vertices[lo] = true;
                boundary_vertices[hi] = true;
            }
        }

        Ok(Self {
            vertices,
            triangles: tris,
            edges,
            triangle_edges,
            boundary_vertices,
            boundary_edges,
        })
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangle_edges(&self) -> &[[(usize, f64); 3]] {
        &self.triangle_edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertices[v]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edges[e]
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_vertices()).filter(|&v| self.boundary_vertices[v])
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_edges()).filter(|&e| self.boundary_edges[e])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * signed_area2(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Gradients of the three barycentric coordinates (P1 hat functions)
    /// on triangle `t`; constant over the triangle.
    pub fn barycentric_gradients(&self, t: usize) -> [Vector2<f64>; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let area2 = signed_area2(&a, &b, &c);
        // ∇λ_i = rot90(opposite edge) / (2|T|)
        let g = |p: Vector2<f64>, q: Vector2<f64>| Vector2::new(p.y - q.y, q.x - p.x) / area2;
        [g(b, c), g(c, a), g(a, b)]
    }

    pub fn centroid(&self, t: usize) -> Vector2<f64> {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    /// Red refinement: every triangle is split into four through its edge
    /// midpoints. New vertices are numbered after the old ones in edge order.
    pub fn refine_uniform(&self) -> Mesh {
        let nv = self.n_vertices();
        let mut vertices = self.vertices.clone();
        for &[lo, hi] in &self.edges {
            vertices.push(0.5 * (self.vertices[lo] + self.vertices[hi]));
        }
        let mut triangles = Vec::with_capacity(4 * self.n_triangles());
        for (t, tri) in self.triangles.iter().enumerate() {
            let m = self.triangle_edges[t].map(|(e, _)| nv + e);
            // m[0] on (v0,v1), m[1] on (v1,v2), m[2] on (v2,v0)
            triangles.push([tri[0], m[0], m[2]]);
            triangles.push([m[0], tri[1], m[1]]);
            triangles.push([m[2], m[1], tri[2]]);
            triangles.push([m[0], m[1], m[2]]);
        }
        Mesh::from_triangles(vertices, triangles).expect("refinement of a valid mesh is valid")
    }
}

fn signed_area2(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Structured triangulation of `[0,1]²` with `n` cells per side.
///
/// Vertices are numbered row by row (`index = j·(n+1) + i` at `(i/n, j/n)`),
/// and every cell is cut along its `(i,j)–(i+1,j+1)` diagonal.
pub fn generate_unit_square(n: usize) -> Mesh {
    assert!(n >= 1, "unit square needs at least one subdivision");
    let np = n + 1;
    let h = 1.0 / n as f64;
    let vertices = (0..np)
        .flat_map(|j| (0..np).map(move |i| Vector2::new(i as f64 * h, j as f64 * h)))
        .collect();
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = j * np + i;
            let v10 = v00 + 1;
            let v01 = v00 + np;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    Mesh::from_triangles(vertices, triangles).expect("structured mesh is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_counts() {
        let m = generate_unit_square(1);
        assert_eq!((m.n_vertices(), m.n_triangles(), m.n_edges()), (4, 2, 5));
        assert_eq!(m.boundary_edges().count(), 4);
        let m = generate_unit_square(2);
        assert_eq!((m.n_vertices(), m.n_triangles()), (9, 8));
        let m = generate_unit_square(16);
        assert_eq!((m.n_vertices(), m.n_triangles()), (289, 512));
    }

    #[test]
    fn euler_relation_and_orientation() {
        for n in 1..6 {
            let m = generate_unit_square(n);
            let euler = m.n_vertices() as i64 - m.n_edges() as i64 + m.n_triangles() as i64;
            assert_eq!(euler, 1);
            for t in 0..m.n_triangles() {
                assert!(m.triangle_area(t) > 0.0);
            }
            assert!((m.area() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn interior_edges_have_opposite_signs() {
        let m = generate_unit_square(5);
        let mut seen: Vec<Vec<f64>> = vec![Vec::new(); m.n_edges()];
        for te in m.triangle_edges() {
            for &(e, s) in te {
                seen[e].push(s);
            }
        }
        for (e, signs) in seen.iter().enumerate() {
            if m.is_boundary_edge(e) {
                assert_eq!(signs.len(), 1);
            } else {
                assert_eq!(signs.len(), 2);
                assert_eq!(signs[0], -signs[1]);
            }
        }
    }

    #[test]
    fn sign_follows_low_to_high_traversal() {
        let m = generate_unit_square(3);
        for (t, tri) in m.triangles().iter().enumerate() {
            for (k, &(a, b)) in LOCAL_EDGES.iter().enumerate() {
                let (e, s) = m.triangle_edges()[t][k];
                let [lo, hi] = m.edges()[e];
                assert!(lo < hi);
                assert_eq!(s > 0.0, tri[a] == lo && tri[b] == hi);
            }
        }
    }

    #[test]
    fn clockwise_input_is_reoriented_and_unused_vertices_dropped() {
        let v = vec![
            Vector2::new(9.0, 9.0),
            Vector2::new(0.0, 0.0),
            Vector2::new(0.0, 1.0),
            Vector2::new(1.0, 0.0),
        ];
        let m = Mesh::from_triangles(v, vec![[1, 2, 3]]).unwrap();
        assert_eq!(m.n_vertices(), 3);
        assert!(m.triangle_area(0) > 0.0);
        assert_eq!(m.vertices()[0], Vector2::new(0.0, 0.0));
    }

    #[test]
    fn non_manifold_edge_is_rejected() {
        let v = vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
            Vector2::new(0.0, -1.0),
            Vector2::new(1.0, 1.0),
        ];
        let err = Mesh::from_triangles(v, vec![[0, 1, 2], [0, 3, 1], [0, 1, 4]]).unwrap_err();
        assert!(matches!(err, MeshError::NonManifoldEdge(0, 1)));
    }

    #[test]
    fn red_refinement_matches_structured_mesh() {
        let coarse = generate_unit_square(4).refine_uniform();
        let fine = generate_unit_square(8);
        assert_eq!(coarse.n_vertices(), fine.n_vertices());
        assert_eq!(coarse.n_triangles(), fine.n_triangles());
        assert_eq!(coarse.n_edges(), fine.n_edges());
        assert!((coarse.area() - 1.0).abs() < 1e-14);
        let h = 1.0 / 8.0;
        for t in 0..coarse.n_triangles() {
            assert!((coarse.triangle_area(t) - 0.5 * h * h).abs() < 1e-15);
        }
    }
}
