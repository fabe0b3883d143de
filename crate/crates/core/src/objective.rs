//! Cost functional
//!
//! ```text
//! J(q, λ) = ½|λ − λ*|² + α/2 (‖q‖² + ‖∇q‖²) − β ∫ ln(J_q − ε)
//! ```
//!
//! on the reference domain, with P1 deformations (so `J_q` is constant per
//! triangle).

use thiserror::Error;

use crate::adjoint::ShapeFunctional;
use crate::fem::QUADRATURE;
use crate::kinematics::{det_derivative, triangle_kinematics, DeformationField};
use crate::mesh::Mesh;
use nalgebra::{Matrix2, Vector2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("barrier infeasible: det DF = {det} <= ε = {epsilon} on triangle {triangle}")]
    InfeasibleBarrier { triangle: usize, det: f64, epsilon: f64 },
    #[error("invalid objective parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParams {
    pub lambda_target: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !self.lambda_target.is_finite() {
            return Err(ObjectiveError::InvalidParams("lambda_target must be finite".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ObjectiveError::InvalidParams("alpha must be non-negative".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(ObjectiveError::InvalidParams("beta must be non-negative".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ObjectiveError::InvalidParams("epsilon must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// The three summands of `J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub fit: f64,
    pub regularization: f64,
    pub barrier: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.fit + self.regularization + self.barrier
    }
}

pub fn fit_term(lambda: f64, params: &ObjectiveParams) -> f64 {
    0.5 * (lambda - params.lambda_target).powi(2)
}

/// `‖q‖² + ‖∇q‖²` over the reference mesh.
pub fn h1_norm_squared(mesh: &Mesh, q: &DeformationField) -> f64 {
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let grads = mesh.barycentric_gradients(t);
        let mut grad_q = Matrix2::zeros();
        for a in 0..3 {
            grad_q += q.at(tri[a]) * grads[a].transpose();
        }
        total += area * grad_q.norm_squared();
        for (l, w) in QUADRATURE.iter() {
            let val: Vector2<f64> = (0..3).map(|a| q.at(tri[a]) * l[a]).sum();
            total += w * area * val.norm_squared();
        }
    }
    total
}

/// `−β Σ_T |T| ln(J_T − ε)`, or `+∞` if some `J_T ≤ ε`.
pub fn barrier_term(mesh: &Mesh, q: &DeformationField, params: &ObjectiveParams) -> f64 {
    let mut total = 0.0;
    for (t, det) in q.jacobians(mesh).into_iter().enumerate() {
        if !(det > params.epsilon) {
            return f64::INFINITY;
        }
        total -= params.beta * mesh.triangle_area(t) * (det - params.epsilon).ln();
    }
    total
}

pub fn evaluate_terms(mesh: &Mesh, q: &DeformationField, lambda: f64, params: &ObjectiveParams) -> ObjectiveTerms {
    ObjectiveTerms {
        fit: fit_term(lambda, params),
        regularization: 0.5 * params.alpha * h1_norm_squared(mesh, q),
        barrier: barrier_term(mesh, q, params),
    }
}

/// `J(q, λ)`; `+∞` signals an infeasible deformation.
pub fn evaluate(mesh: &Mesh, q: &DeformationField, lambda: f64, params: &ObjectiveParams) -> f64 {
    let terms = evaluate_terms(mesh, q, lambda, params);
    if terms.barrier.is_infinite() {
        return f64::INFINITY;
    }
    terms.total()
}

/// `J'_q(q, λ)` tested with every P1 vector hat function.
pub fn derivative_q(mesh: &Mesh, q: &DeformationField, params: &ObjectiveParams) -> Result<ShapeFunctional, ObjectiveError> {
    let kin = triangle_kinematics(mesh, q).map_err(|(triangle, _)| ObjectiveError::InfeasibleBarrier {
        triangle,
        det: q.jacobians(mesh)[triangle],
        epsilon: params.epsilon,
    })?;
    let mut f = ShapeFunctional::zeros(mesh.n_vertices());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let k = &kin[t];
        if !(k.det > params.epsilon) {
            return Err(ObjectiveError::InfeasibleBarrier {
                triangle: t,
                det: k.det,
                epsilon: params.epsilon,
            });
        }
        let area = mesh.triangle_area(t);
        let grads = mesh.barycentric_gradients(t);
        let barrier_weight = params.beta * area / (k.det - params.epsilon);
        for a in 0..3 {
            for c in 0..2 {
                // α (q, p) + α (∇q, ∇p) with p = λ_a e_c
                let mut reg = 0.0;
                for b in 0..3 {
                    let qb = q.at(tri[b])[c];
                    let mass: f64 = QUADRATURE.iter().map(|(l, w)| w * area * l[a] * l[b]).sum();
                    reg += qb * (mass + area * grads[a].dot(&grads[b]));
                }
                let mut grad_p = Matrix2::zeros();
                grad_p.set_row(c, &grads[a].transpose());
                let dj = det_derivative(k, &grad_p).expect("kinematics checked above");
                f.coeffs[2 * tri[a] + c] += params.alpha * reg - barrier_weight * dj;
            }
        }
    }
    Ok(f)
}

pub fn derivative_lambda(lambda: f64, params: &ObjectiveParams) -> f64 {
    lambda - params.lambda_target
}
