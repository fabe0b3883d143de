//! Shift-invert Krylov–Schur solver for the mixed Maxwell pencil.
//!
//! The pencil on free DOFs is
//!
//! ```text
//! K = [A  B]    M̃ = [M 0]
//!     [Bᵀ 0]         [0 0]
//! ```
//!
//! With `K_σ = K − σM̃` the operator `S u = [K_σ⁻¹ (M u, 0)]_u` is self-adjoint
//! in the `M` inner product, maps into the discrete divergence-free space
//! `{Bᵀu = 0}` and has eigenvalues `θ = 1/(λ − σ)`. Infinite eigenvalues of the
//! singular pencil correspond to `θ = 0` and never enter the Krylov space once
//! the start vector has been passed through `S`.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use log::{debug, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::{AssembledForms, DofMap};
use crate::sparse::{axpy, dot, norm2, CsrMatrix, TripletBuilder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("factorization of K - σM̃ failed at σ = {shift}: {reason}")]
    FactorizationFailed { shift: f64, reason: String },
    #[error("Krylov-Schur iteration did not converge after {restarts} restarts")]
    NoConvergence { restarts: usize },
    #[error("only {found} finite eigenvalues available, {requested} requested")]
    InsufficientSpectrum { found: usize, requested: usize },
    #[error("eigenvalue {index} is separated by {gap:e} < required gap {required:e}")]
    GapViolation { index: usize, gap: f64, required: f64 },
    #[error("invalid eigenvalue selection: {0}")]
    InvalidSelection(String),
}

/// Which eigenvalue to track and how to compute it.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSelection {
    /// Position in the ascending list of computed finite eigenvalues.
    pub index: usize,
    /// Required separation from all other computed eigenvalues.
    pub gap_min: f64,
    /// Spectral shift σ.
    pub shift: f64,
    /// Number of eigenvalues to compute.
    pub nev: usize,
    /// Relative residual tolerance.
    pub tol: f64,
    /// Turn a gap violation into an error instead of a warning.
    pub strict_gap: bool,
    /// Seed of the random start vector.
    pub seed: u64,
}

impl EigenSelection {
    pub fn new(index: usize) -> Self {
        Self {
            index,
            gap_min: 0.0,
            shift: 0.0,
            nev: (index + 3).max(6),
            tol: 1e-5,
            strict_gap: false,
            seed: 0x5eed,
        }
    }

    /// `σ = 0.9 λ*`, kept strictly positive.
    pub fn default_shift(target: f64) -> f64 {
        (0.9 * target).max(f64::MIN_POSITIVE)
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<(), EigenError> {
        if self.nev <= self.index || self.nev < 2 {
            return Err(EigenError::InvalidSelection(format!(
                "nev = {} must exceed index = {} and be at least 2",
                self.nev, self.index
            )));
        }
        if !(self.tol > 0.0) {
            return Err(EigenError::InvalidSelection("tol must be positive".into()));
        }
        if !(self.gap_min >= 0.0) {
            return Err(EigenError::InvalidSelection("gap_min must be non-negative".into()));
        }
        if !self.shift.is_finite() {
            return Err(EigenError::InvalidSelection("shift must be finite".into()));
        }
        Ok(())
    }
}

/// Eigenvalue with full-length edge (`u`) and vertex (`psi`) coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedEigenPair {
    pub lambda: f64,
    pub u: Vec<f64>,
    pub psi: Vec<f64>,
    /// `‖Kx − λM̃x‖ / (|λ| ‖M̃x‖)`
    pub residual: f64,
}

/// Result of [`select_and_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedPair {
    pub pair: MixedEigenPair,
    /// Distance to the nearest other computed eigenvalue.
    pub gap: f64,
    /// Set when `gap < gap_min` in non-strict mode.
    pub gap_warning: bool,
}

/// Factorized `K − σM̃` on free DOFs.
pub struct ShiftInvert<'a> {
    forms: &'a AssembledForms,
    shift: f64,
    lu: Lu<usize, f64>,
}

impl<'a> ShiftInvert<'a> {
    /// `forms` must already be reduced to free DOFs.
    pub fn new(forms: &'a AssembledForms, shift: f64) -> Result<Self, EigenError> {
        let ne = forms.a.nrows();
        let nv = forms.b.ncols();
        let n = ne + nv;
        let mut k = TripletBuilder::with_capacity(n, n, forms.a.nnz() + forms.m.nnz() + 2 * forms.b.nnz());
        for (i, j, v) in forms.a.iter() {
            k.push(i, j, v);
        }
        for (i, j, v) in forms.m.iter() {
            k.push(i, j, -shift * v);
        }
        for (i, j, v) in forms.b.iter() {
            k.push(i, ne + j, v);
            k.push(ne + j, i, v);
        }
        let lu = k.build().to_faer().sp_lu().map_err(|e| EigenError::FactorizationFailed {
            shift,
            reason: format!("{e:?}"),
        })?;
        Ok(Self { forms, shift, lu })
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    fn n_edge(&self) -> usize {
        self.forms.a.nrows()
    }

    fn n_vertex(&self) -> usize {
        self.forms.b.ncols()
    }

    /// Solves `K_σ (u', ψ') = (f, 0)`.
    pub fn solve(&self, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EigenError> {
        let ne = self.n_edge();
        let n = ne + self.n_vertex();
        let mut x = Col::<f64>::from_fn(n, |i| if i < ne { f[i] } else { 0.0 });
        self.lu.solve_in_place(x.as_mat_mut());
        let u: Vec<f64> = (0..ne).map(|i| x[i]).collect();
        let psi: Vec<f64> = (ne..n).map(|i| x[i]).collect();
        if u.iter().chain(&psi).any(|v| !v.is_finite()) {
            return Err(EigenError::FactorizationFailed {
                shift: self.shift,
                reason: "singular or ill-conditioned factor produced non-finite values".into(),
            });
        }
        Ok((u, psi))
    }

    /// `S u`
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>, EigenError> {
        Ok(self.solve(&self.forms.m.mul_vec(u))?.0)
    }
}

/// Relative residual of the mixed pencil for reduced vectors.
fn pencil_residual(forms: &AssembledForms, lambda: f64, u: &[f64], psi: &[f64]) -> f64 {
    let mu = forms.m.mul_vec(u);
    let mut ru = forms.a.mul_vec(u);
    axpy(1.0, &forms.b.mul_vec(psi), &mut ru);
    axpy(-lambda, &mu, &mut ru);
    let rp = forms.b.mul_vec_transpose(u);
    (dot(&ru, &ru) + dot(&rp, &rp)).sqrt() / (lambda.abs() * norm2(&mu))
}

/// `‖Bᵀu‖ / ‖Mu‖` on free DOFs (discrete divergence of `u`).
pub fn divergence_certificate(reduced: &AssembledForms, dofs: &DofMap, u: &[f64]) -> f64 {
    let uf = dofs.restrict_edges(u);
    norm2(&reduced.b.mul_vec_transpose(&uf)) / norm2(&reduced.m.mul_vec(&uf))
}

struct Basis {
    vecs: Vec<Vec<f64>>,
    mvecs: Vec<Vec<f64>>,
}

impl Basis {
    fn new() -> Self {
        Self {
            vecs: Vec::new(),
            mvecs: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.vecs.len()
    }

    /// Two passes of classical Gram–Schmidt in the `M` inner product; returns
    /// the accumulated coefficients.
    fn orthogonalize(&self, w: &mut [f64]) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.len()];
        for _ in 0..2 {
            let c: Vec<f64> = self.mvecs.iter().map(|mv| dot(mv, w)).collect();
            for (i, ci) in c.iter().enumerate() {
                axpy(-ci, &self.vecs[i], w);
                coeffs[i] += ci;
            }
        }
        coeffs
    }

    fn push(&mut self, v: Vec<f64>, m: &CsrMatrix) {
        self.mvecs.push(m.mul_vec(&v));
        self.vecs.push(v);
    }

    fn combine(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vecs[0].len()];
        for (v, &c) in self.vecs.iter().zip(y) {
            axpy(c, v, &mut out);
        }
        out
    }
}

fn m_norm(m: &CsrMatrix, v: &[f64]) -> f64 {
    m.bilinear(v, v).max(0.0).sqrt()
}

const MAX_RESTARTS: usize = 500;

/// Computes the `sel.nev` finite eigenpairs of the reduced pencil closest to
/// `sel.shift`, sorted ascending by eigenvalue.
///
/// `warm_start` (full-length edge vector) seeds the Krylov space, typically
/// with the eigenvector of the previous optimization iterate.
pub fn solve_gevp(
    reduced: &AssembledForms,
    dofs: &DofMap,
    sel: &EigenSelection,
    warm_start: Option<&[f64]>,
) -> Result<Vec<MixedEigenPair>, EigenError> {
    sel.validate()?;
    let ne = reduced.a.nrows();
    let nv = reduced.b.ncols();
    let m = &reduced.m;
    let finite_dim = ne.saturating_sub(nv);
    if sel.nev > finite_dim {
        return Err(EigenError::InsufficientSpectrum {
            found: finite_dim,
            requested: sel.nev,
        });
    }
    let op = ShiftInvert::new(reduced, sel.shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sel.seed);
    let mut random_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };

    let ncv = (2 * sel.nev + 1).max(sel.nev + 16).min(finite_dim);
    let spurious = 10.0 * sel.tol;
    let mut inner_tol = sel.tol;

    let start = match warm_start {
        Some(w) if w.len() == dofs.n_edge() && w.iter().any(|x| *x != 0.0) => dofs.restrict_edges(w),
        _ => random_vec(ne),
    };
    let mut v0 = op.apply(&start)?;
    let n0 = m_norm(m, &v0);
    if !(n0 > 0.0) {
        v0 = op.apply(&random_vec(ne))?;
    }
    let n0 = m_norm(m, &v0);
    v0.iter_mut().for_each(|x| *x /= n0);

    let mut basis = Basis::new();
    basis.push(v0, m);
    let mut h = DMatrix::<f64>::zeros(ncv, ncv);
    let mut restarts = 0;

    loop {
        // expand the Krylov-Schur decomposition to ncv columns
        let mut j = basis.len() - 1;
        let (beta_last, mut next, exhausted) = loop {
            let mut w = op.apply(&basis.vecs[j])?;
            let coeffs = basis.orthogonalize(&mut w);
            for (i, &c) in coeffs.iter().enumerate() {
                h[(i, j)] = c;
                h[(j, i)] = c;
            }
            let scale = (0..=j).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
            let beta = m_norm(m, &w);
            let breakdown = beta <= 1e-12 * scale;
            if j + 1 == ncv {
                if breakdown {
                    break (0.0, None, false);
                }
                break (beta, Some(w.iter().map(|x| x / beta).collect::<Vec<f64>>()), false);
            }
            if breakdown {
                // invariant subspace found: continue with a fresh direction
                let mut r = op.apply(&random_vec(ne))?;
                basis.orthogonalize(&mut r);
                let nr = m_norm(m, &r);
                let ref_norm = m_norm(m, &op.apply(&basis.vecs[0])?).max(f64::MIN_POSITIVE);
                if nr <= 1e-10 * ref_norm {
                    break (0.0, None, true);
                }
                r.iter_mut().for_each(|x| *x /= nr);
                basis.push(r, m);
            } else {
                basis.push(w.iter().map(|x| x / beta).collect(), m);
            }
            j += 1;
        };

        let mdim = basis.len();
        let hm = h.view((0, 0), (mdim, mdim)).clone_owned();
        let hm = (&hm + hm.transpose()) * 0.5;
        let eig = hm.symmetric_eigen();
        let theta_max = eig.eigenvalues.iter().fold(0.0f64, |a, t| a.max(t.abs()));
        let mut order: Vec<usize> = (0..mdim)
            .filter(|&i| eig.eigenvalues[i].abs() >= spurious * theta_max)
            .collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .abs()
                .partial_cmp(&eig.eigenvalues[a].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        let resid = |i: usize| beta_last * eig.eigenvectors[(mdim - 1, i)].abs();
        let n_conv = order
            .iter()
            .take(sel.nev)
            .filter(|&&i| resid(i) <= inner_tol * eig.eigenvalues[i].abs())
            .count();
        debug!(
            "krylov-schur restart {restarts}: dim {mdim}, {n_conv}/{} converged",
            sel.nev
        );

        if order.len() >= sel.nev && n_conv == sel.nev {
            let mut pairs = Vec::with_capacity(sel.nev);
            let mut worst = 0.0f64;
            for &i in order.iter().take(sel.nev) {
                let theta = eig.eigenvalues[i];
                let y: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                let ritz = basis.combine(&y);
                // one inverse-iteration step recovers ψ and sharpens u
                let (mut u, mut psi) = op.solve(&m.mul_vec(&ritz))?;
                u.iter_mut().for_each(|x| *x /= theta);
                psi.iter_mut().for_each(|x| *x /= theta);
                let nu = m_norm(m, &u);
                u.iter_mut().for_each(|x| *x /= nu);
                psi.iter_mut().for_each(|x| *x /= nu);
                let lambda = reduced.a.bilinear(&u, &u) + 2.0 * dot(&u, &reduced.b.mul_vec(&psi));
                let residual = pencil_residual(reduced, lambda, &u, &psi);
                worst = worst.max(residual);
                pairs.push(MixedEigenPair {
                    lambda,
                    u: dofs.extend_edges(&u),
                    psi: dofs.extend_vertices(&psi),
                    residual,
                });
            }
            if worst <= sel.tol {
                pairs.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
                return Ok(pairs);
            }
            if inner_tol < 1e3 * f64::EPSILON {
                return Err(EigenError::NoConvergence { restarts });
            }
            inner_tol *= 1e-2;
            debug!("pencil residual {worst:e} above tolerance; tightening to {inner_tol:e}");
        } else if exhausted && order.len() < sel.nev {
            return Err(EigenError::InsufficientSpectrum {
                found: order.len(),
                requested: sel.nev,
            });
        }

        restarts += 1;
        if restarts > MAX_RESTARTS {
            return Err(EigenError::NoConvergence { restarts });
        }

        // thick restart: keep the best Ritz vectors, append the residual direction
        let keep = (sel.nev + (mdim.saturating_sub(sel.nev)) / 2).min(order.len()).min(mdim - 1).max(1);
        let mut kept = Basis::new();
        for &i in order.iter().take(keep) {
            let y: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            kept.push(basis.combine(&y), m);
        }
        h.fill(0.0);
        for (k, &i) in order.iter().take(keep).enumerate() {
            h[(k, k)] = eig.eigenvalues[i];
        }
        basis = kept;
        match next.take() {
            Some(v) => basis.push(v, m),
            None => {
                let mut r = op.apply(&random_vec(ne))?;
                basis.orthogonalize(&mut r);
                let nr = m_norm(m, &r);
                r.iter_mut().for_each(|x| *x /= nr);
                basis.push(r, m);
            }
        }
    }
}

/// Picks `sel.index`, scales it to `uᵀMu = 1` and fixes the sign so that the
/// largest-magnitude entry of `u` is positive.
pub fn select_and_normalize(
    pairs: &[MixedEigenPair],
    sel: &EigenSelection,
    m: &CsrMatrix,
) -> Result<SelectedPair, EigenError> {
    let chosen = pairs.get(sel.index).ok_or_else(|| {
        EigenError::InvalidSelection(format!("index {} but only {} pairs", sel.index, pairs.len()))
    })?;
    let norm = m_norm(m, &chosen.u);
    if !(norm > 0.0) {
        return Err(EigenError::InvalidSelection("zero eigenvector".into()));
    }
    let pivot = chosen
        .u
        .iter()
        .enumerate()
        .fold((0usize, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
        .0;
    let scale = chosen.u[pivot].signum() / norm;
    let pair = MixedEigenPair {
        lambda: chosen.lambda,
        u: chosen.u.iter().map(|x| x * scale).collect(),
        psi: chosen.psi.iter().map(|x| x * scale).collect(),
        residual: chosen.residual,
    };
    let gap = pairs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != sel.index)
        .map(|(_, p)| (p.lambda - chosen.lambda).abs())
        .fold(f64::INFINITY, f64::min);
    let gap_warning = sel.gap_min > 0.0 && gap < sel.gap_min;
    if gap_warning {
        if sel.strict_gap {
            return Err(EigenError::GapViolation {
                index: sel.index,
                gap,
                required: sel.gap_min,
            });
        }
        warn!(
            "selected eigenvalue {} is only {gap:e} away from its neighbours (required {:e})",
            chosen.lambda, sel.gap_min
        );
    }
    Ok(SelectedPair {
        pair,
        gap,
        gap_warning,
    })
}
