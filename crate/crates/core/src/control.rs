//! The control space `Q = H¹(Ω̂; ℝ²)` discretized by P1 vector fields.
//!
//! Coefficient vectors are interleaved per vertex, matching
//! [`DeformationField`](crate::kinematics::DeformationField). All inner
//! products of the optimizer go through the H¹ Gram matrix held here.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Llt;
use faer::Side;
use thiserror::Error;

use crate::fem::QUADRATURE;
use crate::mesh::Mesh;
use crate::sparse::{dot, CsrMatrix, TripletBuilder};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("linear solve failure: {0}")]
    LinearSolveFailure(String),
}

pub struct ControlSpace {
    gram: CsrMatrix,
    factor: Llt<usize, f64>,
}

impl std::fmt::Debug for ControlSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlSpace").field("dim", &self.dim()).finish()
    }
}

/// P1 vector H¹ Gram matrix (L² mass + gradient stiffness, unit weights, no
/// boundary conditions).
pub fn h1_gram(mesh: &Mesh) -> CsrMatrix {
    let n = 2 * mesh.n_vertices();
    let mut g = TripletBuilder::with_capacity(n, n, 18 * mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let area = mesh.triangle_area(t);
        let grads = mesh.barycentric_gradients(t);
        let verts = mesh.triangles()[t];
        for a in 0..3 {
            for b in 0..3 {
                let mass: f64 = QUADRATURE.iter().map(|(l, w)| w * area * l[a] * l[b]).sum();
                let value = mass + area * grads[a].dot(&grads[b]);
                for c in 0..2 {
                    g.push(2 * verts[a] + c, 2 * verts[b] + c, value);
                }
            }
        }
    }
    g.build()
}

impl ControlSpace {
    pub fn new(mesh: &Mesh) -> Result<Self, ControlError> {
        Self::from_gram(h1_gram(mesh))
    }

    /// Builds the space from an arbitrary symmetric positive definite Gram matrix.
    pub fn from_gram(gram: CsrMatrix) -> Result<Self, ControlError> {
        let factor = gram
            .to_faer()
            .sp_cholesky(Side::Lower)
            .map_err(|e| ControlError::LinearSolveFailure(format!("{e:?}")))?;
        Ok(Self { gram, factor })
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &CsrMatrix {
        &self.gram
    }

    /// `(a, b)_Q = aᵀ G b`
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(a, &self.gram.mul_vec(b))
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// Solves `G g = f`: the Riesz representative of the functional with
    /// nodal values `f`.
    pub fn riesz(&self, functional: &[f64]) -> Result<Vec<f64>, ControlError> {
        assert_eq!(functional.len(), self.dim());
        let mut x = Col::<f64>::from_fn(self.dim(), |i| functional[i]);
        self.factor.solve_in_place(x.as_mat_mut());
        let out: Vec<f64> = (0..self.dim()).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ControlError::LinearSolveFailure("non-finite solution".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_unit_square;
    use crate::sparse::norm2;

    #[test]
    fn gram_reproduces_l2_and_h1_norms_of_affine_fields() {
        let m = generate_unit_square(4);
        let space = ControlSpace::new(&m).unwrap();
        // q = (x, 0): ‖q‖² = 1/3, ‖∇q‖² = 1
        let q: Vec<f64> = m.vertices().iter().flat_map(|x| [x.x, 0.0]).collect();
        assert!((space.inner(&q, &q) - (1.0 / 3.0 + 1.0)).abs() < 1e-12);
        // constants: only the L² part, area 1
        let c: Vec<f64> = m.vertices().iter().flat_map(|_| [0.0, 2.0]).collect();
        assert!((space.inner(&c, &c) - 4.0).abs() < 1e-12);
        assert_eq!(space.gram().asymmetry(), 0.0);
    }

    #[test]
    fn riesz_inverts_the_gram_matrix() {
        let m = generate_unit_square(5);
        let space = ControlSpace::new(&m).unwrap();
        let w: Vec<f64> = (0..space.dim()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let f = space.gram().mul_vec(&w);
        let back = space.riesz(&f).unwrap();
        let err: Vec<f64> = back.iter().zip(&w).map(|(a, b)| a - b).collect();
        assert!(norm2(&err) <= 1e-10 * norm2(&w));
        assert!(space.riesz(&vec![0.0; space.dim()]).unwrap().iter().all(|&v| v == 0.0));
    }
}
