//! Orchestration of optimization runs, gradient checks and spectrum solves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adjoint::{
    reduced_derivative, riesz_gradient, solve_adjoint, solve_state, AdjointError, ShapeFunctional, State,
};
use crate::bfgs::{optimize, records_to_csv, BfgsError, Evaluation, InnerProduct, OptimizeResult, OptimizeStatus, Problem};
use crate::config::{ConfigError, MeshSource, RunConfig, TargetSpec};
use crate::control::{ControlError, ControlSpace};
use crate::eigen::{divergence_certificate, solve_gevp, EigenSelection, MixedEigenPair};
use crate::fem::{apply_dirichlet, assemble_forms, cell_field_magnitude, DofMap};
use crate::kinematics::DeformationField;
use crate::mesh::{generate_unit_square, parse_msh, write_vtk, FieldData, Mesh, MeshError};
use crate::objective::{self, ObjectiveError, ObjectiveParams};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("optimizer: {0}")]
    Optimize(#[from] BfgsError<ProblemError>),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<AdjointError> for RunError {
    fn from(e: AdjointError) -> Self {
        RunError::Problem(e.into())
    }
}

impl RunError {
    /// 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub fn load_mesh(source: &MeshSource) -> Result<Mesh, RunError> {
    match source {
        MeshSource::UnitSquare(n) => Ok(generate_unit_square(*n)),
        MeshSource::MshPath(path) => {
            if !path.is_file() {
                return Err(ConfigError::MeshNotFound(path.clone()).into());
            }
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(parse_msh(&text)?)
        }
    }
}

/// Everything fixed for the duration of a run: mesh, spaces, the tracked
/// eigenvalue and the objective.
#[derive(Debug)]
pub struct Setup {
    pub mesh: Mesh,
    pub dofs: DofMap,
    pub space: ControlSpace,
    pub sel: EigenSelection,
    pub params: ObjectiveParams,
    /// Selected eigenvalue of the undeformed reference mesh.
    pub lambda0: f64,
}

impl Setup {
    /// Loads the mesh, solves at `q = 0` and resolves `λ*` and the shift.
    ///
    /// With an automatic shift the selection index refers to the spectrum
    /// from the bottom; after moving the shift to `0.9 λ*` the index is
    /// re-identified as the eigenvalue closest to the initial one.
    pub fn new(cfg: &RunConfig) -> Result<Self, RunError> {
        let mesh = load_mesh(&cfg.mesh)?;
        let dofs = DofMap::new(&mesh);
        let space = ControlSpace::new(&mesh)?;
        let mut sel = cfg.eigen.clone();
        if cfg.shift_auto {
            sel.shift = 0.0;
        }
        let q0 = DeformationField::zeros(mesh.n_vertices());
        let initial = solve_state(&mesh, &dofs, &q0, &sel, None)?;
        let lambda0 = initial.lambda();
        let lambda_target = match cfg.target {
            TargetSpec::Absolute(t) => t,
            TargetSpec::RelativeToInitial(f) => f * lambda0,
        };
        if cfg.shift_auto {
            sel.shift = EigenSelection::default_shift(lambda_target);
            let pairs = solve_gevp(&initial.reduced, &dofs, &sel, Some(&initial.pair().u)).map_err(AdjointError::from)?;
            sel.index = pairs
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1.lambda - lambda0).abs().total_cmp(&(b.1.lambda - lambda0).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
        }
        let params = ObjectiveParams {
            lambda_target,
            alpha: cfg.alpha,
            beta: cfg.beta,
            epsilon: cfg.epsilon,
        };
        params.validate().map_err(ProblemError::from)?;
        info!(
            "mesh: {} vertices, {} edges, {} triangles; lambda0 = {lambda0:.8e}, target = {lambda_target:.8e}, shift = {:.4e}, index = {}",
            mesh.n_vertices(),
            mesh.n_edges(),
            mesh.n_triangles(),
            sel.shift,
            sel.index
        );
        Ok(Self {
            mesh,
            dofs,
            space,
            sel,
            params,
            lambda0,
        })
    }

    pub fn zero_control(&self) -> Vec<f64> {
        vec![0.0; 2 * self.mesh.n_vertices()]
    }

    /// `j(q)` with a fresh eigenvalue solve; `None` if infeasible.
    pub fn value(&self, q: &[f64], warm: Option<&[f64]>) -> Result<Option<(f64, State)>, ProblemError> {
        let field = DeformationField::from_vec(q.to_vec());
        if !field.is_admissible(&self.mesh, self.params.epsilon) {
            return Ok(None);
        }
        let state = solve_state(&self.mesh, &self.dofs, &field, &self.sel, warm)?;
        let j = objective::evaluate(&self.mesh, &field, state.lambda(), &self.params);
        Ok(Some((j, state)))
    }

    /// `j'(q)` for a state solved at `q`.
    pub fn derivative(&self, q: &[f64], state: &State) -> Result<ShapeFunctional, ProblemError> {
        let field = DeformationField::from_vec(q.to_vec());
        let adjoint = solve_adjoint(state.pair(), self.params.lambda_target);
        let obj = objective::derivative_q(&self.mesh, &field, &self.params)?;
        Ok(reduced_derivative(&self.mesh, &self.dofs, &field, state.pair(), &adjoint, &obj)?)
    }

    pub fn vtk_snapshot(&self, q: &[f64], state: &State) -> Result<String, RunError> {
        let field = DeformationField::from_vec(q.to_vec());
        let magnitude = cell_field_magnitude(&self.mesh, &field, &state.pair().u).map_err(AdjointError::from)?;
        let fields = [
            FieldData::cell("field_magnitude", magnitude),
            FieldData::cell("jacobian", field.jacobians(&self.mesh)),
        ];
        Ok(write_vtk(&self.mesh, &field, &fields)?)
    }
}

/// The reduced problem `q ↦ j(q)` handed to the optimizer.
pub struct ShapeProblem<'a> {
    setup: &'a Setup,
    cache: Option<(Vec<f64>, State)>,
    warm: Option<Vec<f64>>,
    emit_every: usize,
    snapshots: Vec<(usize, String)>,
    snapshot_error: Option<RunError>,
    lambdas: Vec<f64>,
}

impl<'a> ShapeProblem<'a> {
    pub fn new(setup: &'a Setup, emit_every: usize) -> Self {
        Self {
            setup,
            cache: None,
            warm: None,
            emit_every,
            snapshots: Vec::new(),
            snapshot_error: None,
            lambdas: Vec::new(),
        }
    }

    fn state_at(&mut self, q: &[f64]) -> Result<&State, ProblemError> {
        let hit = matches!(&self.cache, Some((cq, _)) if cq.as_slice() == q);
        if !hit {
            let field = DeformationField::from_vec(q.to_vec());
            let s = &self.setup;
            let state = solve_state(&s.mesh, &s.dofs, &field, &s.sel, self.warm.as_deref())?;
            self.cache = Some((q.to_vec(), state));
        }
        Ok(&self.cache.as_ref().expect("filled above").1)
    }

    /// Selected eigenvalue of every accepted iterate.
    pub fn accepted_lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

impl InnerProduct for ShapeProblem<'_> {
    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.setup.space.inner(a, b)
    }
}

impl Problem for ShapeProblem<'_> {
    type Error = ProblemError;

    fn evaluate(&mut self, q: &[f64]) -> Result<Option<Evaluation>, ProblemError> {
        let Some((j, state)) = self.setup.value(q, self.warm.as_deref())? else {
            return Ok(None);
        };
        let (jq_min, jq_max) = DeformationField::from_vec(q.to_vec()).jacobian_range(&self.setup.mesh);
        let eval = Evaluation {
            j_value: j,
            lambda: state.lambda(),
            jq_min,
            jq_max,
        };
        self.cache = Some((q.to_vec(), state));
        Ok(Some(eval))
    }

    fn gradient(&mut self, q: &[f64]) -> Result<Vec<f64>, ProblemError> {
        let setup = self.setup;
        let state = self.state_at(q)?.clone();
        let f = setup.derivative(q, &state)?;
        self.warm = Some(state.pair().u.clone());
        Ok(riesz_gradient(&setup.space, &f)?.field.into_vec())
    }

    fn accepted(&mut self, k: usize, q: &[f64]) {
        let setup = self.setup;
        let Ok(state) = self.state_at(q).cloned() else {
            return;
        };
        self.lambdas.push(state.lambda());
        if self.emit_every > 0 && k.is_multiple_of(self.emit_every) {
            match setup.vtk_snapshot(q, &state) {
                Ok(text) => self.snapshots.push((k, text)),
                Err(e) => self.snapshot_error = Some(e),
            }
        }
    }
}

/// Final report of an optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub n_vertices: usize,
    pub n_edges: usize,
    pub n_triangles: usize,
    pub n_dofs: usize,
    pub n_free_dofs: usize,
    pub lambda0: f64,
    pub lambda_target: f64,
    pub lambda_final: f64,
    pub j_final: f64,
    pub r_rel: f64,
    pub jq_min: f64,
    pub jq_max: f64,
    pub iterations: usize,
    pub status: OptimizeStatus,
    /// `‖Bᵀu‖/‖Mu‖` of the final eigenvector.
    pub divergence: f64,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status = {}", self.status);
        let _ = writeln!(s, "vertices = {}", self.n_vertices);
        let _ = writeln!(s, "edges = {}", self.n_edges);
        let _ = writeln!(s, "triangles = {}", self.n_triangles);
        let _ = writeln!(s, "dofs = {}", self.n_dofs);
        let _ = writeln!(s, "free_dofs = {}", self.n_free_dofs);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "lambda0 = {:.10e}", self.lambda0);
        let _ = writeln!(s, "lambda_target = {:.10e}", self.lambda_target);
        let _ = writeln!(s, "lambda_final = {:.10e}", self.lambda_final);
        let _ = writeln!(s, "j_final = {:.6e}", self.j_final);
        let _ = writeln!(s, "r_rel = {:.6e}", self.r_rel);
        let _ = writeln!(s, "jq_min = {:.8}", self.jq_min);
        let _ = writeln!(s, "jq_max = {:.8}", self.jq_max);
        let _ = writeln!(s, "divergence = {:.3e}", self.divergence);
        s
    }
}

/// Outcome of [`run_in_memory`]: summary, optimizer trace and artifacts.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub result: OptimizeResult,
    pub final_state: State,
    pub accepted_lambdas: Vec<f64>,
    pub snapshots: Vec<(usize, String)>,
    pub final_vtk: String,
}

/// Runs the optimization without touching the file system.
pub fn run_in_memory(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let setup = Setup::new(cfg)?;
    let mut problem = ShapeProblem::new(&setup, cfg.emit_vtk_every);
    let result = optimize(&mut problem, &setup.zero_control(), &cfg.optimizer)?;
    if let Some(e) = problem.snapshot_error.take() {
        return Err(e);
    }
    let final_state = problem.state_at(&result.q)?.clone();
    let last = result.records.last().expect("optimizer emits at least one record");
    let field = DeformationField::from_vec(result.q.clone());
    let (jq_min, jq_max) = field.jacobian_range(&setup.mesh);
    let summary = RunSummary {
        n_vertices: setup.mesh.n_vertices(),
        n_edges: setup.mesh.n_edges(),
        n_triangles: setup.mesh.n_triangles(),
        n_dofs: setup.dofs.n_total(),
        n_free_dofs: setup.dofs.free_edges().len() + setup.dofs.free_vertices().len(),
        lambda0: setup.lambda0,
        lambda_target: setup.params.lambda_target,
        lambda_final: final_state.lambda(),
        j_final: last.j_value,
        r_rel: result.r_rel,
        jq_min,
        jq_max,
        iterations: result.iterations(),
        status: result.status,
        divergence: divergence_certificate(&final_state.reduced, &setup.dofs, &final_state.pair().u),
    };
    let final_vtk = setup.vtk_snapshot(&result.q, &final_state)?;
    Ok(RunOutcome {
        summary,
        accepted_lambdas: problem.lambdas.clone(),
        snapshots: std::mem::take(&mut problem.snapshots),
        result,
        final_state,
        final_vtk,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs the optimization and writes `iterations.csv`, `summary.txt` and VTK
/// snapshots into the output directory. Nothing is written if the run fails.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let outcome = run_in_memory(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    write_file(&dir.join("iterations.csv"), &records_to_csv(&outcome.result.records))?;
    write_file(&dir.join("summary.txt"), &outcome.summary.to_text())?;
    for (k, text) in &outcome.snapshots {
        write_file(&dir.join(format!("deformed_{k:04}.vtk")), text)?;
    }
    write_file(&dir.join("deformed_final.vtk"), &outcome.final_vtk)?;
    Ok(outcome)
}

/// One finite-difference comparison of `j'(q)p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub direction: usize,
    pub h: f64,
    pub analytic: f64,
    pub finite_difference: f64,
    /// `|analytic − fd| / max(1, |analytic|)`
    pub rel_error: f64,
}

/// Uniform random nodal directions in `[-1, 1]`.
pub fn random_directions(n_vertices: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..2 * n_vertices).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Smooth random displacement (a few low Fourier modes) scaled to
/// `max |q_i| = amplitude`.
pub fn smooth_random_field(mesh: &Mesh, amplitude: f64, seed: u64) -> DeformationField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<[f64; 6]> = (0..4)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let x = mesh.vertices();
    let raw = DeformationField::from_fn(mesh.n_vertices(), |v| {
        modes.iter().fold(Vector2::zeros(), |acc, m| {
            let phase = m[2] * x[v].x + m[3] * x[v].y;
            acc + Vector2::new(m[0] * (phase + m[4]).sin(), m[1] * (phase + m[5]).cos())
        })
    });
    let scale = amplitude / raw.max_abs();
    DeformationField::from_vec(raw.into_vec().into_iter().map(|v| v * scale).collect())
}

/// Compares `j'(q)p` with central differences `(j(q+hp) − j(q−hp))/2h` for
/// every direction and step.
pub fn gradient_checks(setup: &Setup, q: &[f64], directions: &[Vec<f64>], steps: &[f64]) -> Result<Vec<GradientCheck>, RunError> {
    let Some((_, state)) = setup.value(q, None)? else {
        return Err(ProblemError::from(ObjectiveError::InfeasibleBarrier {
            triangle: 0,
            det: DeformationField::from_vec(q.to_vec()).jacobian_range(&setup.mesh).0,
            epsilon: setup.params.epsilon,
        })
        .into());
    };
    let f = setup.derivative(q, &state)?;
    let mut out = Vec::new();
    for (d, p) in directions.iter().enumerate() {
        let analytic = f.apply(p);
        for &h in steps {
            let shifted = |s: f64| -> Result<f64, RunError> {
                let qs: Vec<f64> = q.iter().zip(p).map(|(a, b)| a + s * b).collect();
                Ok(setup.value(&qs, None)?.map(|(j, _)| j).unwrap_or(f64::INFINITY))
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            let rel_error = (analytic - fd).abs() / analytic.abs().max(1.0);
            out.push(GradientCheck {
                direction: d,
                h,
                analytic,
                finite_difference: fd,
                rel_error,
            });
        }
    }
    Ok(out)
}

/// Tolerance of the gradient check.
pub const GRADIENT_CHECK_TOL: f64 = 1e-4;

/// Gradient check at `q = 0`, or at a smooth random `q` with
/// `max |q_i| = q_amplitude` when the amplitude is positive. The eigenvalue
/// tolerance is tightened to `1e-10` so that solver error stays below the
/// finite-difference error.
pub fn check_gradient(cfg: &RunConfig, n_directions: usize, h: f64, q_amplitude: f64) -> Result<Vec<GradientCheck>, RunError> {
    let mut cfg = cfg.clone();
    cfg.eigen.tol = cfg.eigen.tol.min(1e-10);
    let setup = Setup::new(&cfg)?;
    let q = if q_amplitude > 0.0 {
        smooth_random_field(&setup.mesh, q_amplitude, cfg.seed).into_vec()
    } else {
        setup.zero_control()
    };
    let dirs = random_directions(setup.mesh.n_vertices(), n_directions, cfg.seed.wrapping_add(1));
    gradient_checks(&setup, &q, &dirs, &[h])
}

/// Spectrum on the undeformed mesh with the divergence certificate of every pair.
pub fn eigs(cfg: &RunConfig, nev: usize) -> Result<Vec<(MixedEigenPair, f64)>, RunError> {
    let mesh = load_mesh(&cfg.mesh)?;
    let dofs = DofMap::new(&mesh);
    let mut sel = cfg.eigen.clone();
    sel.nev = nev;
    sel.index = 0;
    if cfg.shift_auto {
        sel.shift = 0.0;
    }
    let forms = assemble_forms(&mesh, &dofs, &DeformationField::zeros(mesh.n_vertices())).map_err(AdjointError::from)?;
    let reduced = apply_dirichlet(&forms, &dofs);
    let pairs = solve_gevp(&reduced, &dofs, &sel, None).map_err(AdjointError::from)?;
    Ok(pairs
        .into_iter()
        .map(|p| {
            let cert = divergence_certificate(&reduced, &dofs, &p.u);
            (p, cert)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_field_has_requested_amplitude_and_is_feasible() {
        let m = generate_unit_square(8);
        let q = smooth_random_field(&m, 0.05, 3);
        assert!((q.max_abs() - 0.05).abs() < 1e-15);
        assert!(q.is_admissible(&m, 0.5));
    }

    #[test]
    fn missing_mesh_is_a_config_error() {
        let err = load_mesh(&MeshSource::MshPath("/nonexistent/x.msh".into())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn automatic_shift_keeps_tracking_the_same_eigenvalue() {
        let cfg = RunConfig::unit_square(8, TargetSpec::RelativeToInitial(1.05), 2, "unused".into());
        let setup = Setup::new(&cfg).unwrap();
        let (_, state) = setup.value(&setup.zero_control(), None).unwrap().unwrap();
        assert!((state.lambda() - setup.lambda0).abs() < 1e-6 * setup.lambda0);
        assert!((setup.lambda0 - 2.0 * std::f64::consts::PI.powi(2)).abs() < 0.05 * setup.lambda0);
    }
}
