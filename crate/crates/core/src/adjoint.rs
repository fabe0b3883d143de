//! State and adjoint solves, the reduced shape derivative and its Riesz
//! representative in the control space.
//!
//! Because `k` and `m` are symmetric the adjoint eigenproblem is the state
//! eigenproblem. Stationarity of the Lagrangian in `λ` fixes the scaling
//! `m(q;u,z) = -(λ - λ*)`, so the adjoint is `(z, χ) = -(λ - λ*) (u, ψ)`.

use log::debug;
use thiserror::Error;

use crate::control::{ControlError, ControlSpace};
use crate::eigen::{select_and_normalize, solve_gevp, EigenError, EigenSelection, MixedEigenPair, SelectedPair};
use crate::fem::{apply_dirichlet, assemble_forms, assemble_shape_derivative, AssembledForms, DerivativeInputs, DofMap, FemError};
use crate::kinematics::DeformationField;
use crate::mesh::Mesh;
use crate::sparse::{axpy, dot};

#[derive(Debug, Error)]
pub enum AdjointError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("direct adjoint solve deviates from the scaled state by {deviation:e}")]
    VerificationMismatch { deviation: f64 },
}

/// Linear functional on P1 vector fields, stored by its values on the nodal
/// basis (interleaved per vertex like [`DeformationField`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFunctional {
    pub coeffs: Vec<f64>,
}

impl ShapeFunctional {
    pub fn zeros(n_vertices: usize) -> Self {
        Self {
            coeffs: vec![0.0; 2 * n_vertices],
        }
    }

    pub fn apply(&self, p: &[f64]) -> f64 {
        dot(&self.coeffs, p)
    }

    pub fn add_scaled(&mut self, s: f64, other: &ShapeFunctional) {
        axpy(s, &other.coeffs, &mut self.coeffs);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPair {
    pub z: Vec<f64>,
    pub chi: Vec<f64>,
    /// `-(λ - λ*)`, equal to `m(q;u,z)` for a normalized state.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGradient {
    pub field: DeformationField,
    pub norm_q: f64,
}

/// Normalized state at a given deformation together with the assembled forms.
#[derive(Debug, Clone)]
pub struct State {
    pub selected: SelectedPair,
    pub forms: AssembledForms,
    pub reduced: AssembledForms,
}

impl State {
    pub fn pair(&self) -> &MixedEigenPair {
        &self.selected.pair
    }

    pub fn lambda(&self) -> f64 {
        self.selected.pair.lambda
    }
}

/// Assembles at `q`, solves the eigenproblem and normalizes the selected pair.
pub fn solve_state(
    mesh: &Mesh,
    dofs: &DofMap,
    q: &DeformationField,
    sel: &EigenSelection,
    warm_start: Option<&[f64]>,
) -> Result<State, AdjointError> {
    let forms = assemble_forms(mesh, dofs, q)?;
    let reduced = apply_dirichlet(&forms, dofs);
    let pairs = solve_gevp(&reduced, dofs, sel, warm_start)?;
    let selected = select_and_normalize(&pairs, sel, &forms.m)?;
    Ok(State {
        selected,
        forms,
        reduced,
    })
}

/// Adjoint by scaling the normalized state.
pub fn solve_adjoint(state: &MixedEigenPair, lambda_target: f64) -> AdjointPair {
    let scale = -(state.lambda - lambda_target);
    AdjointPair {
        z: state.u.iter().map(|x| scale * x).collect(),
        chi: state.psi.iter().map(|x| scale * x).collect(),
        scale,
    }
}

/// Solves the adjoint eigenproblem independently and compares with
/// [`solve_adjoint`]. Returns the scaled adjoint when both agree to `1e-6`
/// (relative, in the `m`-norm for `z` and max-norm for `χ`).
pub fn solve_adjoint_verified(state: &State, dofs: &DofMap, lambda_target: f64, sel: &EigenSelection) -> Result<AdjointPair, AdjointError> {
    let adjoint = solve_adjoint(state.pair(), lambda_target);
    let mut direct_sel = sel.clone().with_tol(sel.tol.min(1e-10));
    direct_sel.seed = sel.seed.wrapping_add(1);
    let pairs = solve_gevp(&state.reduced, dofs, &direct_sel, None)?;
    let w = &pairs
        .get(sel.index)
        .ok_or_else(|| EigenError::InvalidSelection(format!("index {} out of range", sel.index)))?;
    // the direct eigenvector w spans the adjoint space; fix its scaling by
    // m(u, z) = scale
    let muw = state.forms.m.bilinear(&state.pair().u, &w.u);
    let c = adjoint.scale / muw;
    let z_direct: Vec<f64> = w.u.iter().map(|x| c * x).collect();
    let chi_direct: Vec<f64> = w.psi.iter().map(|x| c * x).collect();

    let dz: Vec<f64> = z_direct.iter().zip(&adjoint.z).map(|(a, b)| a - b).collect();
    let scale = adjoint.scale.abs().max(f64::MIN_POSITIVE);
    let dev_z = state.forms.m.bilinear(&dz, &dz).max(0.0).sqrt() / scale;
    let chi_ref = adjoint.chi.iter().fold(scale, |a, v| a.max(v.abs()));
    let dev_chi = chi_direct
        .iter()
        .zip(&adjoint.chi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / chi_ref;
    let deviation = if adjoint.scale == 0.0 { 0.0 } else { dev_z.max(dev_chi) };
    debug!("adjoint verification deviation {deviation:e}");
    if !(deviation <= 1e-6) {
        return Err(AdjointError::VerificationMismatch { deviation });
    }
    Ok(adjoint)
}

/// `j'(q)`: the explicit objective derivative `objective_q` plus the shape
/// derivative of the constraint terms.
pub fn reduced_derivative(
    mesh: &Mesh,
    dofs: &DofMap,
    q: &DeformationField,
    state: &MixedEigenPair,
    adjoint: &AdjointPair,
    objective_q: &ShapeFunctional,
) -> Result<ShapeFunctional, AdjointError> {
    let mut f = assemble_shape_derivative(
        mesh,
        dofs,
        q,
        DerivativeInputs {
            u: &state.u,
            psi: &state.psi,
            z: &adjoint.z,
            chi: &adjoint.chi,
            lambda: state.lambda,
        },
    )?;
    f.add_scaled(1.0, objective_q);
    Ok(f)
}

/// Riesz representative of `f` in the H¹ control space.
pub fn riesz_gradient(space: &ControlSpace, f: &ShapeFunctional) -> Result<QGradient, AdjointError> {
    let g = space.riesz(&f.coeffs)?;
    let norm_q = f.apply(&g).max(0.0).sqrt();
    Ok(QGradient {
        field: DeformationField::from_vec(g),
        norm_q,
    })
}
