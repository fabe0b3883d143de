//! Lowest-order Nédélec / P1 Lagrange assembly of the pulled-back Maxwell forms.
//!
//! On the reference mesh the forms read
//!
//! ```text
//! a(q; u, v) = ∫ J⁻¹ curl u · curl v
//! b(q; u, φ) = ∫ J (DF⁻ᵀ u) · (DF⁻ᵀ ∇φ)
//! m(q; u, v) = ∫ J (DF⁻ᵀ u) · (DF⁻ᵀ v)
//! ```
//!
//! with `DF = I + ∇q`. The mesh itself is never moved: all dependence on
//! `q` enters through the per-triangle [`PointKinematics`].

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::adjoint::ShapeFunctional;
use crate::kinematics::{
    det_derivative, inv_t_derivative, triangle_kinematics, DeformationField, PointKinematics,
};
use crate::mesh::{Mesh, LOCAL_EDGES};
use crate::sparse::{CsrMatrix, TripletBuilder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("inadmissible deformation: J_q = {det:e} on triangle {triangle}")]
    InadmissibleDeformation { triangle: usize, det: f64 },
    #[error("vector length {got} does not match {expected} degrees of freedom")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Symmetric 3-point rule, exact for quadratics: barycentric points and
/// weights relative to the triangle area.
pub const QUADRATURE: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

/// Degrees of freedom of the mixed pair: one Nédélec unknown per edge and one
/// Lagrange unknown per vertex. Boundary entities carry the PEC condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    n_edge: usize,
    n_vertex: usize,
    constrained_edge: Vec<bool>,
    constrained_vertex: Vec<bool>,
    free_edges: Vec<usize>,
    free_vertices: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let constrained_edge: Vec<bool> = (0..mesh.n_edges()).map(|e| mesh.is_boundary_edge(e)).collect();
        let constrained_vertex: Vec<bool> =
            (0..mesh.n_vertices()).map(|v| mesh.is_boundary_vertex(v)).collect();
        let free_edges = (0..mesh.n_edges()).filter(|&e| !constrained_edge[e]).collect();
        let free_vertices = (0..mesh.n_vertices()).filter(|&v| !constrained_vertex[v]).collect();
        Self {
            n_edge: mesh.n_edges(),
            n_vertex: mesh.n_vertices(),
            constrained_edge,
            constrained_vertex,
            free_edges,
            free_vertices,
        }
    }

    pub fn n_edge(&self) -> usize {
        self.n_edge
    }

    pub fn n_vertex(&self) -> usize {
        self.n_vertex
    }

    /// Total number of unknowns of the mixed system before constraints.
    pub fn n_total(&self) -> usize {
        self.n_edge + self.n_vertex
    }

    pub fn is_constrained_edge(&self, e: usize) -> bool {
        self.constrained_edge[e]
    }

    pub fn is_constrained_vertex(&self, v: usize) -> bool {
        self.constrained_vertex[v]
    }

    pub fn free_edges(&self) -> &[usize] {
        &self.free_edges
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free_vertices
    }

    pub fn restrict_edges(&self, full: &[f64]) -> Vec<f64> {
        self.free_edges.iter().map(|&e| full[e]).collect()
    }

    pub fn restrict_vertices(&self, full: &[f64]) -> Vec<f64> {
        self.free_vertices.iter().map(|&v| full[v]).collect()
    }

    /// Inserts free values into a full-length vector with zero boundary values.
    pub fn extend_edges(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_edge];
        for (&e, &x) in self.free_edges.iter().zip(free) {
            out[e] = x;
        }
        out
    }

    pub fn extend_vertices(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vertex];
        for (&v, &x) in self.free_vertices.iter().zip(free) {
            out[v] = x;
        }
        out
    }
}

/// Matrices of `a`, `b`, `m` with `a(u,v) = uᵀAv`, `b(u,φ) = uᵀBφ`,
/// `m(u,v) = uᵀMv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledForms {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub m: CsrMatrix,
}

/// Nédélec basis functions of a triangle evaluated at barycentric point `l`,
/// including the global orientation signs.
pub fn nedelec_values(grads: &[Vector2<f64>; 3], signs: &[f64; 3], l: &[f64; 3]) -> [Vector2<f64>; 3] {
    let mut w = [Vector2::zeros(); 3];
    for (k, &(i, j)) in LOCAL_EDGES.iter().enumerate() {
        w[k] = (grads[j] * l[i] - grads[i] * l[j]) * signs[k];
    }
    w
}

/// Constant 2D curls of the oriented Nédélec basis functions.
pub fn nedelec_curls(grads: &[Vector2<f64>; 3], signs: &[f64; 3]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (k, &(i, j)) in LOCAL_EDGES.iter().enumerate() {
        c[k] = 2.0 * signs[k] * cross(&grads[i], &grads[j]);
    }
    c
}

#[inline]
fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

#[inline]
fn contract(w: &Matrix2<f64>, s: &Matrix2<f64>) -> f64 {
    w.component_mul(s).sum()
}

fn kinematics_or_err(mesh: &Mesh, q: &DeformationField) -> Result<Vec<PointKinematics>, FemError> {
    if q.n_vertices() != mesh.n_vertices() {
        return Err(FemError::DimensionMismatch {
            got: q.n_vertices(),
            expected: mesh.n_vertices(),
        });
    }
    triangle_kinematics(mesh, q).map_err(|(triangle, e)| {
        let crate::kinematics::KinematicsError::SingularDeformation { det } = e;
        FemError::InadmissibleDeformation { triangle, det }
    })
}

struct Element {
    area: f64,
    grads: [Vector2<f64>; 3],
    verts: [usize; 3],
    edges: [usize; 3],
    signs: [f64; 3],
}

fn element(mesh: &Mesh, t: usize) -> Element {
    let te = mesh.triangle_edges()[t];
    Element {
        area: mesh.triangle_area(t),
        grads: mesh.barycentric_gradients(t),
        verts: mesh.triangles()[t],
        edges: te.map(|(e, _)| e),
        signs: te.map(|(_, s)| s),
    }
}

/// Assembles `a(q;·,·)`, `b(q;·,·)` and `m(q;·,·)` on the full (unconstrained)
/// spaces.
pub fn assemble_forms(mesh: &Mesh, dofs: &DofMap, q: &DeformationField) -> Result<AssembledForms, FemError> {
    let kin = kinematics_or_err(mesh, q)?;
    let nt = mesh.n_triangles();
    let mut a = TripletBuilder::with_capacity(dofs.n_edge(), dofs.n_edge(), 9 * nt);
    let mut m = TripletBuilder::with_capacity(dofs.n_edge(), dofs.n_edge(), 9 * nt);
    let mut b = TripletBuilder::with_capacity(dofs.n_edge(), dofs.n_vertex(), 9 * nt);

    for (t, k) in kin.iter().enumerate() {
        let el = element(mesh, t);
        let f = k.df_inv_t;
        let metric = f.transpose() * f * k.det;
        let curls = nedelec_curls(&el.grads, &el.signs);

        let mut m_loc = [[0.0; 3]; 3];
        let mut b_loc = [[0.0; 3]; 3];
        for (l, w) in QUADRATURE.iter() {
            let vals = nedelec_values(&el.grads, &el.signs, l);
            let wq = w * el.area;
            for i in 0..3 {
                let gw = metric * vals[i];
                for j in 0..3 {
                    m_loc[i][j] += wq * gw.dot(&vals[j]);
                    b_loc[i][j] += wq * gw.dot(&el.grads[j]);
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                a.push(el.edges[i], el.edges[j], el.area / k.det * curls[i] * curls[j]);
                m.push(el.edges[i], el.edges[j], m_loc[i][j]);
                b.push(el.edges[i], el.verts[j], b_loc[i][j]);
            }
        }
    }
    Ok(AssembledForms {
        a: a.build(),
        b: b.build(),
        m: m.build(),
    })
}

/// Eliminates constrained rows and columns; the result acts on free DOFs only.
pub fn apply_dirichlet(forms: &AssembledForms, dofs: &DofMap) -> AssembledForms {
    let fe = dofs.free_edges();
    let fv = dofs.free_vertices();
    AssembledForms {
        a: forms.a.submatrix(fe, fe),
        b: forms.b.submatrix(fe, fv),
        m: forms.m.submatrix(fe, fe),
    }
}

/// Edge-vertex incidence `G` with `G ψ` the Nédélec coefficients of `∇ψ` for a
/// P1 function `ψ`.
pub fn gradient_incidence(mesh: &Mesh) -> CsrMatrix {
    let mut g = TripletBuilder::with_capacity(mesh.n_edges(), mesh.n_vertices(), 2 * mesh.n_edges());
    for (e, &[lo, hi]) in mesh.edges().iter().enumerate() {
        g.push(e, lo, -1.0);
        g.push(e, hi, 1.0);
    }
    g.build()
}

/// Reference-domain value of the edge field `u` on triangle `t` at barycentric
/// point `l`. The field on the deformed domain is `DF⁻ᵀ` times this.
pub fn edge_field_at(mesh: &Mesh, u: &[f64], t: usize, l: &[f64; 3]) -> Vector2<f64> {
    let el = element(mesh, t);
    let vals = nedelec_values(&el.grads, &el.signs, l);
    (0..3).fold(Vector2::zeros(), |acc, k| acc + vals[k] * u[el.edges[k]])
}

/// Magnitude of the physical field `DF⁻ᵀ u` at every triangle centroid.
pub fn cell_field_magnitude(mesh: &Mesh, q: &DeformationField, u: &[f64]) -> Result<Vec<f64>, FemError> {
    let kin = kinematics_or_err(mesh, q)?;
    let c = [1.0 / 3.0; 3];
    Ok((0..mesh.n_triangles())
        .map(|t| (kin[t].df_inv_t * edge_field_at(mesh, u, t, &c)).norm())
        .collect())
}

/// State and adjoint coefficient vectors entering the shape derivative. All
/// vectors are full length (constrained entries zero).
#[derive(Debug, Clone, Copy)]
pub struct DerivativeInputs<'a> {
    pub u: &'a [f64],
    pub psi: &'a [f64],
    pub z: &'a [f64],
    pub chi: &'a [f64],
    pub lambda: f64,
}

/// Shape derivative of the eigenvalue constraint part of the Lagrangian,
///
/// ```text
/// p ↦ -a'_q(q;u,z)p - b'_q(q;z,ψ)p - b'_q(q;u,χ)p + λ m'_q(q;u,z)p,
/// ```
///
/// tested with every P1 vector hat function `p = φ_v e_c`.
pub fn assemble_shape_derivative(
    mesh: &Mesh,
    dofs: &DofMap,
    q: &DeformationField,
    inputs: DerivativeInputs<'_>,
) -> Result<ShapeFunctional, FemError> {
    for (len, expected) in [
        (inputs.u.len(), dofs.n_edge()),
        (inputs.z.len(), dofs.n_edge()),
        (inputs.psi.len(), dofs.n_vertex()),
        (inputs.chi.len(), dofs.n_vertex()),
    ] {
        if len != expected {
            return Err(FemError::DimensionMismatch { got: len, expected });
        }
    }
    let kin = kinematics_or_err(mesh, q)?;
    let mut coeffs = vec![0.0; 2 * mesh.n_vertices()];

    for (t, k) in kin.iter().enumerate() {
        let el = element(mesh, t);
        let f = k.df_inv_t;
        let curls = nedelec_curls(&el.grads, &el.signs);
        let u_loc = el.edges.map(|e| inputs.u[e]);
        let z_loc = el.edges.map(|e| inputs.z[e]);
        let curl_u: f64 = (0..3).map(|i| u_loc[i] * curls[i]).sum();
        let curl_z: f64 = (0..3).map(|i| z_loc[i] * curls[i]).sum();
        let grad_psi = (0..3).fold(Vector2::zeros(), |acc, a| acc + el.grads[a] * inputs.psi[el.verts[a]]);
        let grad_chi = (0..3).fold(Vector2::zeros(), |acc, a| acc + el.grads[a] * inputs.chi[el.verts[a]]);

        // second moments ∫ u zᵀ and first moments ∫ u, ∫ z
        let mut s_uz = Matrix2::zeros();
        let mut u_int = Vector2::zeros();
        let mut z_int = Vector2::zeros();
        for (l, w) in QUADRATURE.iter() {
            let vals = nedelec_values(&el.grads, &el.signs, l);
            let uq = (0..3).fold(Vector2::zeros(), |acc, i| acc + vals[i] * u_loc[i]);
            let zq = (0..3).fold(Vector2::zeros(), |acc, i| acc + vals[i] * z_loc[i]);
            let wq = w * el.area;
            s_uz += uq * zq.transpose() * wq;
            u_int += uq * wq;
            z_int += zq * wq;
        }
        let s_z_psi = z_int * grad_psi.transpose();
        let s_u_chi = u_int * grad_chi.transpose();

        let metric = f.transpose() * f;
        for a in 0..3 {
            for c in 0..2 {
                let mut grad_p = Matrix2::zeros();
                grad_p.set_row(c, &el.grads[a].transpose());
                let dj = det_derivative(k, &grad_p).expect("kinematics checked above");
                let df = inv_t_derivative(k, &grad_p).expect("kinematics checked above");
                let dmetric = df.transpose() * f + f.transpose() * df;
                // d/dq of ∫ J Fᵀ F : S
                let weighted = |s: &Matrix2<f64>| dj * contract(&metric, s) + k.det * contract(&dmetric, s);
                let da = -dj / (k.det * k.det) * curl_u * curl_z * el.area;
                let value = -da - weighted(&s_z_psi) - weighted(&s_u_chi) + inputs.lambda * weighted(&s_uz);
                coeffs[2 * el.verts[a] + c] += value;
            }
        }
    }
    Ok(ShapeFunctional { coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_unit_square;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn basis_has_unit_tangential_moments() {
        // ∫_e w · t ds = 1 along vlo → vhi, 0 on the other edges
        let m = generate_unit_square(2);
        let x = m.vertices();
        for t in 0..m.n_triangles() {
            let el = element(&m, t);
            for (k, &(i, j)) in LOCAL_EDGES.iter().enumerate() {
                let [lo, hi] = m.edges()[el.edges[k]];
                let tangent = x[hi] - x[lo];
                // basis is linear along the edge: midpoint rule is exact
                let mut l = [0.0; 3];
                l[i] = 0.5;
                l[j] = 0.5;
                let vals = nedelec_values(&el.grads, &el.signs, &l);
                for (kk, v) in vals.iter().enumerate() {
                    let moment = v.dot(&tangent);
                    let expected = if kk == k { 1.0 } else { 0.0 };
                    assert!((moment - expected).abs() < 1e-13, "t={t} k={k} kk={kk}: {moment}");
                }
            }
        }
    }

    #[test]
    fn two_triangle_curl_curl_by_hand() {
        // unit square n=1: vertices 0(0,0) 1(1,0) 2(0,1) 3(1,1); triangles
        // [0,1,3] and [0,3,2], each with |T| = 1/2 and curl of every
        // oriented basis function equal to ±1/|T| = ±2.
        let m = generate_unit_square(1);
        let dofs = DofMap::new(&m);
        let forms = assemble_forms(&m, &dofs, &DeformationField::zeros(4)).unwrap();
        let mut expected = nalgebra::DMatrix::<f64>::zeros(5, 5);
        for t in 0..2 {
            let te = m.triangle_edges()[t];
            for &(ei, si) in &te {
                for &(ej, sj) in &te {
                    expected[(ei, ej)] += 0.5 * (2.0 * si) * (2.0 * sj);
                }
            }
        }
        assert!((forms.a.to_dense() - expected).norm() < 1e-13);
        // every curl magnitude is 2 on a right triangle with legs of length 1
        for t in 0..2 {
            let el = element(&m, t);
            for c in nedelec_curls(&el.grads, &el.signs) {
                assert!((c.abs() - 2.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn forms_are_symmetric_and_gradients_are_in_the_kernel() {
        let m = generate_unit_square(5);
        let dofs = DofMap::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = DeformationField::from_vec(random_vec(&mut rng, 2 * m.n_vertices()).iter().map(|v| 0.02 * v).collect());
        let forms = assemble_forms(&m, &dofs, &q).unwrap();
        assert!(forms.a.asymmetry() <= 1e-14 * forms.a.frobenius_norm());
        assert!(forms.m.asymmetry() <= 1e-14 * forms.m.frobenius_norm());
        let g = gradient_incidence(&m);
        let psi = random_vec(&mut rng, m.n_vertices());
        let gpsi = g.mul_vec(&psi);
        let agpsi = forms.a.mul_vec(&gpsi);
        let bound = 1e-12 * forms.a.frobenius_norm() * crate::sparse::norm2(&gpsi);
        assert!(crate::sparse::norm2(&agpsi) <= bound);
        // b(u, φ) = m(u, ∇φ) because ∇P1 ⊂ Nédélec
        let u = random_vec(&mut rng, m.n_edges());
        let lhs = forms.b.bilinear(&u, &psi);
        let rhs = forms.m.bilinear(&u, &gpsi);
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn mass_matrix_is_positive_definite_on_free_edges() {
        let m = generate_unit_square(3);
        let dofs = DofMap::new(&m);
        let q = DeformationField::affine(&m, Matrix2::new(0.1, 0.05, -0.02, -0.1), Vector2::zeros());
        let red = apply_dirichlet(&assemble_forms(&m, &dofs, &q).unwrap(), &dofs);
        let eig = red.m.to_dense().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn dilation_scales_curl_form_only() {
        let m = generate_unit_square(3);
        let dofs = DofMap::new(&m);
        let base = assemble_forms(&m, &dofs, &DeformationField::zeros(m.n_vertices())).unwrap();
        for s in [-0.1, 0.1, 0.3] {
            let q = DeformationField::affine(&m, Matrix2::identity() * s, Vector2::new(-0.5 * s, -0.5 * s));
            let f = assemble_forms(&m, &dofs, &q).unwrap();
            let scale = 1.0 / ((1.0 + s) * (1.0 + s));
            assert!(f.a.max_abs_diff(&base.a.scaled(scale)) < 1e-12);
            assert!(f.m.max_abs_diff(&base.m) < 1e-13);
            assert!(f.b.max_abs_diff(&base.b) < 1e-13);
        }
    }

    #[test]
    fn translation_leaves_forms_unchanged() {
        let m = generate_unit_square(3);
        let dofs = DofMap::new(&m);
        let base = assemble_forms(&m, &dofs, &DeformationField::zeros(m.n_vertices())).unwrap();
        let shifted = DeformationField::affine(&m, Matrix2::zeros(), Vector2::new(0.3, -0.7));
        assert_eq!(assemble_forms(&m, &dofs, &shifted).unwrap(), base);
    }

    #[test]
    fn inadmissible_deformation_is_reported() {
        let m = generate_unit_square(2);
        let dofs = DofMap::new(&m);
        let q = DeformationField::affine(&m, Matrix2::identity() * -1.0, Vector2::zeros());
        assert!(matches!(
            assemble_forms(&m, &dofs, &q),
            Err(FemError::InadmissibleDeformation { .. })
        ));
    }

    #[test]
    fn dirichlet_reduction_counts() {
        let m = generate_unit_square(1);
        let d = DofMap::new(&m);
        assert_eq!((d.free_edges().len(), d.free_vertices().len()), (1, 0));
        let m = generate_unit_square(2);
        let d = DofMap::new(&m);
        assert_eq!((d.free_edges().len(), d.free_vertices().len()), (8, 1));
        let forms = apply_dirichlet(&assemble_forms(&m, &d, &DeformationField::zeros(9)).unwrap(), &d);
        assert_eq!((forms.a.nrows(), forms.b.nrows(), forms.b.ncols()), (8, 8, 1));
        assert_eq!(forms.a.asymmetry(), 0.0);
    }

    #[test]
    fn extension_has_zero_tangential_trace() {
        let m = generate_unit_square(4);
        let d = DofMap::new(&m);
        let free: Vec<f64> = (0..d.free_edges().len()).map(|i| 1.0 + i as f64).collect();
        let full = d.extend_edges(&free);
        for e in m.boundary_edges() {
            assert_eq!(full[e], 0.0);
        }
        assert_eq!(d.restrict_edges(&full), free);
    }

    #[test]
    fn zero_state_gives_zero_functional() {
        let m = generate_unit_square(3);
        let d = DofMap::new(&m);
        let ze = vec![0.0; m.n_edges()];
        let zv = vec![0.0; m.n_vertices()];
        let inputs = DerivativeInputs { u: &ze, psi: &zv, z: &ze, chi: &zv, lambda: 3.0 };
        let f = assemble_shape_derivative(&m, &d, &DeformationField::zeros(m.n_vertices()), inputs).unwrap();
        assert!(f.coeffs.iter().all(|&c| c == 0.0));
    }

    fn frozen_value(m: &Mesh, d: &DofMap, q: &DeformationField, inp: &DerivativeInputs<'_>) -> f64 {
        let f = assemble_forms(m, d, q).unwrap();
        -f.a.bilinear(inp.u, inp.z) - f.b.bilinear(inp.z, inp.psi) - f.b.bilinear(inp.u, inp.chi)
            + inp.lambda * f.m.bilinear(inp.u, inp.z)
    }

    fn random_inputs(rng: &mut ChaCha8Rng, m: &Mesh, d: &DofMap) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let u = d.extend_edges(&random_vec(rng, d.free_edges().len()));
        let z = d.extend_edges(&random_vec(rng, d.free_edges().len()));
        let psi = d.extend_vertices(&random_vec(rng, d.free_vertices().len()));
        let chi = d.extend_vertices(&random_vec(rng, d.free_vertices().len()));
        let _ = m;
        (u, psi, z, chi)
    }

    #[test]
    fn translation_directions_carry_no_derivative() {
        let m = generate_unit_square(4);
        let d = DofMap::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (u, psi, z, chi) = random_inputs(&mut rng, &m, &d);
        let q = DeformationField::from_vec(random_vec(&mut rng, 2 * m.n_vertices()).iter().map(|v| 0.02 * v).collect());
        let inputs = DerivativeInputs { u: &u, psi: &psi, z: &z, chi: &chi, lambda: 7.5 };
        let f = assemble_shape_derivative(&m, &d, &q, inputs).unwrap();
        let scale = f.coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
        for c in 0..2 {
            let total: f64 = (0..m.n_vertices()).map(|v| f.coeffs[2 * v + c]).sum();
            assert!(total.abs() < 1e-12 * scale.max(1.0), "component {c}: {total}");
        }
    }

    #[test]
    fn shape_derivative_matches_frozen_coefficient_differences() {
        let m = generate_unit_square(4);
        let d = DofMap::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (u, psi, z, chi) = random_inputs(&mut rng, &m, &d);
        let inputs = DerivativeInputs { u: &u, psi: &psi, z: &z, chi: &chi, lambda: 12.0 };
        for amp in [0.0, 0.05] {
            let q = DeformationField::from_vec(random_vec(&mut rng, 2 * m.n_vertices()).iter().map(|v| amp * v).collect());
            let f = assemble_shape_derivative(&m, &d, &q, inputs).unwrap();
            for _ in 0..5 {
                let p = random_vec(&mut rng, 2 * m.n_vertices());
                let h = 1e-5;
                let shifted = |sgn: f64| {
                    DeformationField::from_vec(q.as_slice().iter().zip(&p).map(|(a, b)| a + sgn * h * b).collect())
                };
                let fd = (frozen_value(&m, &d, &shifted(1.0), &inputs) - frozen_value(&m, &d, &shifted(-1.0), &inputs))
                    / (2.0 * h);
                let analytic = f.apply(&p);
                assert!(
                    (analytic - fd).abs() <= 1e-4 * fd.abs().max(1.0),
                    "amp={amp}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }
}
