//! Deformation calculus for the map `x = x̂ + q(x̂)`.
//!
//! The displacement `q` is continuous and piecewise linear, so its gradient
//! and every derived quantity (`DF`, `J`, `DF⁻ᵀ`) is constant per triangle.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::mesh::Mesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("singular deformation: det(DF) = {det:e}")]
    SingularDeformation { det: f64 },
}

/// Vertex displacements of a P1 vector field, stored interleaved
/// `[q0x, q0y, q1x, q1y, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    values: Vec<f64>,
}

impl DeformationField {
    pub fn zeros(n_vertices: usize) -> Self {
        Self {
            values: vec![0.0; 2 * n_vertices],
        }
    }

    pub fn from_fn(n_vertices: usize, mut f: impl FnMut(usize) -> Vector2<f64>) -> Self {
        let mut values = Vec::with_capacity(2 * n_vertices);
        for v in 0..n_vertices {
            let d = f(v);
            values.push(d.x);
            values.push(d.y);
        }
        Self { values }
    }

    /// Nodal interpolant of `x̂ ↦ A x̂ + b`.
    pub fn affine(mesh: &Mesh, a: Matrix2<f64>, b: Vector2<f64>) -> Self {
        let verts = mesh.vertices();
        Self::from_fn(mesh.n_vertices(), |v| a * verts[v] + b)
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        assert!(values.len().is_multiple_of(2), "interleaved field needs an even length");
        Self { values }
    }

    pub fn n_vertices(&self) -> usize {
        self.values.len() / 2
    }

    pub fn at(&self, v: usize) -> Vector2<f64> {
        Vector2::new(self.values[2 * v], self.values[2 * v + 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Determinant of the deformation gradient on every triangle.
    pub fn jacobians(&self, mesh: &Mesh) -> Vec<f64> {
        (0..mesh.n_triangles())
            .map(|t| {
                let g = Matrix2::identity() + gradient_at(mesh, self, t);
                g.determinant()
            })
            .collect()
    }

    /// `(min J_q, max J_q)` over the mesh.
    pub fn jacobian_range(&self, mesh: &Mesh) -> (f64, f64) {
        self.jacobians(mesh)
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| (lo.min(j), hi.max(j)))
    }

    /// `J_q > eps` on every triangle.
    pub fn is_admissible(&self, mesh: &Mesh, eps: f64) -> bool {
        self.jacobians(mesh).into_iter().all(|j| j > eps)
    }
}

/// Deformation gradient, its determinant and inverse transpose at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointKinematics {
    pub df: Matrix2<f64>,
    pub det: f64,
    pub df_inv_t: Matrix2<f64>,
}

impl PointKinematics {
    pub fn identity() -> Self {
        Self {
            df: Matrix2::identity(),
            det: 1.0,
            df_inv_t: Matrix2::identity(),
        }
    }

    /// `DF⁻¹` (the transpose of the stored inverse transpose).
    pub fn df_inv(&self) -> Matrix2<f64> {
        self.df_inv_t.transpose()
    }
}

/// `DF = I + ∇q`, `J = det DF`, `DF⁻ᵀ` by the closed-form 2×2 inverse.
pub fn kinematics_at(grad_q: &Matrix2<f64>) -> Result<PointKinematics, KinematicsError> {
    let df = Matrix2::identity() + grad_q;
    let det = df[(0, 0)] * df[(1, 1)] - df[(0, 1)] * df[(1, 0)];
    if !(det > 0.0) {
        return Err(KinematicsError::SingularDeformation { det });
    }
    // inv(DF) = adj(DF)/det, so inv(DF)ᵀ = cof(DF)/det
    let df_inv_t = Matrix2::new(df[(1, 1)], -df[(1, 0)], -df[(0, 1)], df[(0, 0)]) / det;
    Ok(PointKinematics { df, det, df_inv_t })
}

fn require_positive(kin: &PointKinematics) -> Result<(), KinematicsError> {
    if kin.det > 0.0 {
        Ok(())
    } else {
        Err(KinematicsError::SingularDeformation { det: kin.det })
    }
}

/// Directional derivative of `J_q` along `p`: `J · tr(DF⁻¹ ∇p)`.
pub fn det_derivative(kin: &PointKinematics, grad_p: &Matrix2<f64>) -> Result<f64, KinematicsError> {
    require_positive(kin)?;
    Ok(kin.det * (kin.df_inv() * grad_p).trace())
}

/// Directional derivative of `DF_q⁻ᵀ` along `p`: `-DF⁻ᵀ (∇p)ᵀ DF⁻ᵀ`.
pub fn inv_t_derivative(
    kin: &PointKinematics,
    grad_p: &Matrix2<f64>,
) -> Result<Matrix2<f64>, KinematicsError> {
    require_positive(kin)?;
    Ok(-kin.df_inv_t * grad_p.transpose() * kin.df_inv_t)
}

/// Gradient `(∇q)_{ij} = ∂q_i/∂x̂_j` of the P1 field on triangle `t`.
pub fn gradient_at(mesh: &Mesh, q: &DeformationField, t: usize) -> Matrix2<f64> {
    let grads = mesh.barycentric_gradients(t);
    mesh.triangles()[t]
        .iter()
        .zip(grads.iter())
        .fold(Matrix2::zeros(), |acc, (&v, g)| acc + q.at(v) * g.transpose())
}

/// Kinematics of every triangle, failing on the first non-positive `J_q`.
pub fn triangle_kinematics(
    mesh: &Mesh,
    q: &DeformationField,
) -> Result<Vec<PointKinematics>, (usize, KinematicsError)> {
    (0..mesh.n_triangles())
        .map(|t| kinematics_at(&gradient_at(mesh, q, t)).map_err(|e| (t, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_unit_square;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, scale: f64) -> Matrix2<f64> {
        Matrix2::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    fn inv_t(m: &Matrix2<f64>) -> Matrix2<f64> {
        m.try_inverse().unwrap().transpose()
    }

    #[test]
    fn identity_kinematics() {
        let k = kinematics_at(&Matrix2::zeros()).unwrap();
        assert_eq!(k, PointKinematics::identity());
    }

    #[test]
    fn uniform_dilation() {
        let s = 0.3;
        let k = kinematics_at(&(Matrix2::identity() * s)).unwrap();
        assert!((k.det - (1.0 + s) * (1.0 + s)).abs() < 1e-15);
        assert!((k.df_inv_t - Matrix2::identity() / (1.0 + s)).norm() < 1e-15);
        let dj = det_derivative(&k, &Matrix2::identity()).unwrap();
        assert!((dj - 2.0 * (1.0 + s)).abs() < 1e-14);
        let dinv = inv_t_derivative(&k, &Matrix2::identity()).unwrap();
        assert!((dinv + Matrix2::identity() / ((1.0 + s) * (1.0 + s))).norm() < 1e-14);
    }

    #[test]
    fn determinant_example() {
        let k = kinematics_at(&Matrix2::new(0.1, 0.2, 0.0, -0.1)).unwrap();
        // det([[1.1, 0.2], [0, 0.9]])
        assert!((k.det - 0.99).abs() < 1e-15);
        assert!((k.df * k.df_inv() - Matrix2::identity()).norm() < 1e-15);
    }

    #[test]
    fn singular_deformation_is_reported() {
        let err = kinematics_at(&Matrix2::new(-1.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert_eq!(err, KinematicsError::SingularDeformation { det: 0.0 });
        assert!(kinematics_at(&Matrix2::new(-2.0, 0.0, 0.0, 0.0)).is_err());
        let bad = PointKinematics {
            det: -1.0,
            ..PointKinematics::identity()
        };
        assert!(det_derivative(&bad, &Matrix2::identity()).is_err());
        assert!(inv_t_derivative(&bad, &Matrix2::identity()).is_err());
    }

    #[test]
    fn derivatives_at_identity() {
        let gp = Matrix2::new(0.3, -1.2, 0.7, 2.0);
        let k = PointKinematics::identity();
        assert!((det_derivative(&k, &gp).unwrap() - gp.trace()).abs() < 1e-15);
        assert_eq!(inv_t_derivative(&k, &gp).unwrap(), -gp.transpose());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let gq = random_mat(&mut rng, 0.3);
            let gp = random_mat(&mut rng, 1.0);
            let k = kinematics_at(&gq).unwrap();
            let df = k.df;
            let mut errs = Vec::new();
            for h in [1e-2, 1e-3] {
                let fd_det = ((df + gp * h).determinant() - (df - gp * h).determinant()) / (2.0 * h);
                let fd_inv = (inv_t(&(df + gp * h)) - inv_t(&(df - gp * h))) / (2.0 * h);
                let e_det = (fd_det - det_derivative(&k, &gp).unwrap()).abs();
                let e_inv = (fd_inv - inv_t_derivative(&k, &gp).unwrap()).norm();
                errs.push((e_det, e_inv));
            }
            // det is quadratic in 2D: central differences are exact
            assert!(errs[0].0 < 1e-12 && errs[1].0 < 1e-12);
            // O(h²): shrinking h tenfold shrinks the error ~100×
            assert!(errs[0].1 < 1e-3);
            assert!(errs[1].1 < errs[0].1 / 50.0 + 1e-11);
        }
    }

    #[test]
    fn gradient_of_affine_field_is_exact() {
        let m = generate_unit_square(4);
        let a = Matrix2::new(0.1, -0.2, 0.05, 0.3);
        let q = DeformationField::affine(&m, a, Vector2::new(1.0, -2.0));
        for t in 0..m.n_triangles() {
            assert!((gradient_at(&m, &q, t) - a).norm() < 1e-13);
        }
        let zero = DeformationField::zeros(m.n_vertices());
        assert_eq!(gradient_at(&m, &zero, 3), Matrix2::zeros());
    }

    #[test]
    fn gradient_columns_match_pointwise_differences() {
        let m = generate_unit_square(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = DeformationField::from_fn(m.n_vertices(), |_| {
            Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        for t in 0..m.n_triangles() {
            let tri = m.triangles()[t];
            let x = m.vertices();
            // evaluate the interpolant via barycentric coordinates
            let eval = |p: Vector2<f64>| {
                let (a, b, c) = (x[tri[0]], x[tri[1]], x[tri[2]]);
                let mat = Matrix2::from_columns(&[b - a, c - a]);
                let l = mat.try_inverse().unwrap() * (p - a);
                q.at(tri[0]) * (1.0 - l.x - l.y) + q.at(tri[1]) * l.x + q.at(tri[2]) * l.y
            };
            let c = m.centroid(t);
            let h = 1e-6;
            let g = gradient_at(&m, &q, t);
            for j in 0..2 {
                let mut e = Vector2::zeros();
                e[j] = h;
                let fd = (eval(c + e) - eval(c - e)) / (2.0 * h);
                assert!((fd - g.column(j)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn jacobian_range_of_dilation() {
        let m = generate_unit_square(2);
        let q = DeformationField::affine(&m, Matrix2::identity() * -0.1, Vector2::zeros());
        let (lo, hi) = q.jacobian_range(&m);
        assert!((lo - 0.81).abs() < 1e-14 && (hi - 0.81).abs() < 1e-14);
        assert!(q.is_admissible(&m, 1e-4));
        assert!(!q.is_admissible(&m, 0.9));
    }
}
