//! Damped inverse limited-memory BFGS with Armijo backtracking.
//!
//! Every inner product goes through [`InnerProduct`], which in production is
//! the H¹ Gram matrix of the control space.

use std::collections::VecDeque;
use std::fmt;

use log::{info, warn};
use thiserror::Error;

use crate::control::ControlSpace;
use crate::sparse::axpy;

pub trait InnerProduct {
    fn inner(&self, a: &[f64], b: &[f64]) -> f64;

    fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }
}

impl InnerProduct for ControlSpace {
    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        ControlSpace::inner(self, a, b)
    }
}

#[derive(Debug, Error)]
pub enum BfgsError<E: std::error::Error + 'static> {
    #[error("degenerate curvature (y, B y) = {value:e}")]
    DegenerateCurvature { value: f64 },
    #[error("no step accepted after {trials} trials")]
    LineSearchFailed { trials: usize },
    #[error("initial control is infeasible")]
    InfeasibleStart,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: {source}")]
    Problem {
        iteration: usize,
        #[source]
        source: E,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct HistoryPair {
    d_tilde: Vec<f64>,
    y: Vec<f64>,
    by: Vec<f64>,
    s1: f64,
    s2: f64,
}

/// Stored update pairs of the inverse Hessian approximation `B_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsHistory {
    pairs: VecDeque<HistoryPair>,
    capacity: usize,
    b0_scale: f64,
}

impl BfgsHistory {
    pub fn new(capacity: usize, b0_scale: f64) -> Self {
        assert!(capacity > 0 && b0_scale > 0.0);
        Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
            b0_scale,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn b0_scale(&self) -> f64 {
        self.b0_scale
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// `B_n g` using the first `n` stored pairs.
    fn apply_prefix(&self, n: usize, g: &[f64], ip: &impl InnerProduct) -> Vec<f64> {
        let mut out: Vec<f64> = g.iter().map(|x| self.b0_scale * x).collect();
        for pair in self.pairs.iter().take(n) {
            let r: Vec<f64> = pair.d_tilde.iter().zip(&pair.by).map(|(d, b)| d - b).collect();
            let dp = ip.inner(&pair.d_tilde, g);
            let rp = ip.inner(&r, g);
            axpy(dp / pair.s1, &r, &mut out);
            axpy(rp / pair.s1 - pair.s2 * dp / (pair.s1 * pair.s1), &pair.d_tilde, &mut out);
        }
        out
    }

    /// Appends `(d̃, y)`, caching `B_k y` and the two scalars; evicts the
    /// oldest pair when full and rebuilds the caches of the remaining ones.
    pub fn push(&mut self, d_tilde: Vec<f64>, y: Vec<f64>, ip: &impl InnerProduct) {
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
            for i in 0..self.pairs.len() {
                let by = self.apply_prefix(i, &self.pairs[i].y, ip);
                let pair = &mut self.pairs[i];
                let r: Vec<f64> = pair.d_tilde.iter().zip(&by).map(|(d, b)| d - b).collect();
                pair.s2 = ip.inner(&r, &pair.y);
                pair.by = by;
            }
        }
        let by = apply_inverse_hessian(self, &y, ip);
        let s1 = ip.inner(&d_tilde, &y);
        assert!(s1 > 0.0, "curvature (d̃, y) = {s1} must be positive");
        let r: Vec<f64> = d_tilde.iter().zip(&by).map(|(d, b)| d - b).collect();
        let s2 = ip.inner(&r, &y);
        self.pairs.push_back(HistoryPair { d_tilde, y, by, s1, s2 });
    }
}

/// `B_k g`.
pub fn apply_inverse_hessian(hist: &BfgsHistory, g: &[f64], ip: &impl InnerProduct) -> Vec<f64> {
    hist.apply_prefix(hist.len(), g, ip)
}

/// Powell-type damping. Returns `d̃' = θ d̃ + (1 − θ) B_k y` and `θ`.
pub fn damp<E: std::error::Error>(
    y: &[f64],
    d_tilde: &[f64],
    hist: &BfgsHistory,
    xi: f64,
    ip: &impl InnerProduct,
) -> Result<(Vec<f64>, f64), BfgsError<E>> {
    let by = apply_inverse_hessian(hist, y, ip);
    let yby = ip.inner(y, &by);
    if !(yby > 0.0) {
        return Err(BfgsError::DegenerateCurvature { value: yby });
    }
    let yd = ip.inner(y, d_tilde);
    if yd >= xi * yby {
        return Ok((d_tilde.to_vec(), 1.0));
    }
    let theta = (1.0 - xi) * yby / (yby - yd);
    let out = d_tilde.iter().zip(&by).map(|(d, b)| theta * d + (1.0 - theta) * b).collect();
    Ok((out, theta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub tol: f64,
    pub k_max: usize,
    pub gamma: f64,
    pub rho_ls: f64,
    pub ls_max: usize,
    pub xi: f64,
    pub m_mem: usize,
    /// `B₀ = b0_scale · I`.
    pub b0_scale: f64,
}

impl OptimizerConfig {
    /// Defaults with `B₀ = 1/α` (unit scale if `α = 0`).
    pub fn for_alpha(alpha: f64) -> Self {
        Self {
            tol: 1e-7,
            k_max: 100,
            gamma: 0.1,
            rho_ls: 0.1,
            ls_max: 10,
            xi: 0.2,
            m_mem: 20,
            b0_scale: if alpha > 0.0 { 1.0 / alpha } else { 1.0 },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol >= 0.0) {
            return Err("tol must be non-negative".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err("gamma must lie in (0, 0.5)".into());
        }
        if !(self.rho_ls > 0.0 && self.rho_ls < 1.0) {
            return Err("rho must lie in (0, 1)".into());
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err("xi must lie in (0, 1)".into());
        }
        if self.m_mem == 0 {
            return Err("m_mem must be positive".into());
        }
        if !(self.b0_scale > 0.0 && self.b0_scale.is_finite()) {
            return Err("b0_scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub lambda: f64,
    pub j_value: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub theta: f64,
    pub jq_min: f64,
    pub jq_max: f64,
    /// Angle between the search direction and `−∇_Q j` in radians.
    pub angle: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "k,lambda,j_value,grad_norm,step,theta,jq_min,jq_max";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.k, self.lambda, self.j_value, self.grad_norm, self.step, self.theta, self.jq_min, self.jq_max
        )
    }
}

pub fn records_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from(IterationRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeStatus {
    Converged,
    IterationCap,
    Stalled,
}

impl fmt::Display for OptimizeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OptimizeStatus::Converged => "converged",
            OptimizeStatus::IterationCap => "iteration cap reached",
            OptimizeStatus::Stalled => "line search failed",
        };
        f.write_str(s)
    }
}

/// Value of the reduced objective at a feasible control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub j_value: f64,
    pub lambda: f64,
    pub jq_min: f64,
    pub jq_max: f64,
}

/// Reduced problem seen by the optimizer.
pub trait Problem: InnerProduct {
    type Error: std::error::Error + 'static;

    /// `Ok(None)` marks an infeasible control.
    fn evaluate(&mut self, q: &[f64]) -> Result<Option<Evaluation>, Self::Error>;

    /// `∇_Q j(q)` at a control previously passed to [`Problem::evaluate`].
    fn gradient(&mut self, q: &[f64]) -> Result<Vec<f64>, Self::Error>;

    /// Called with every accepted iterate, starting with `q₀` as `k = 0`,
    /// right after it was evaluated.
    fn accepted(&mut self, _k: usize, _q: &[f64]) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmijoStep<V> {
    pub t: f64,
    pub q: Vec<f64>,
    pub j: f64,
    pub value: V,
    pub trials: usize,
}

/// Backtracking over `t = ρ^i`, `i = 0..=ls_max`, accepting the first
/// `j(q + t d) ≤ j(q) + γ t g_dot_d`. `eval` returns `None` for infeasible
/// trial points.
pub fn armijo<V, E: std::error::Error>(
    mut eval: impl FnMut(&[f64]) -> Option<(f64, V)>,
    q: &[f64],
    d: &[f64],
    j_q: f64,
    g_dot_d: f64,
    cfg: &OptimizerConfig,
) -> Result<ArmijoStep<V>, BfgsError<E>> {
    let mut t = 1.0;
    for i in 0..=cfg.ls_max {
        let trial: Vec<f64> = q.iter().zip(d).map(|(a, b)| a + t * b).collect();
        if let Some((j, value)) = eval(&trial) {
            if j.is_finite() && j <= j_q + cfg.gamma * t * g_dot_d {
                return Ok(ArmijoStep {
                    t,
                    q: trial,
                    j,
                    value,
                    trials: i + 1,
                });
            }
        }
        t *= cfg.rho_ls;
    }
    Err(BfgsError::LineSearchFailed { trials: cfg.ls_max + 1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub q: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub status: OptimizeStatus,
    /// `‖∇_Q j(q_final)‖ / ‖∇_Q j(q₀)‖`
    pub r_rel: f64,
}

impl OptimizeResult {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// Runs the damped inverse BFGS loop from `q0`.
///
/// One [`IterationRecord`] is emitted per iterate; the record of the final
/// iterate has `step = theta = 0`.
pub fn optimize<P: Problem>(
    problem: &mut P,
    q0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult, BfgsError<P::Error>> {
    cfg.validate().map_err(BfgsError::InvalidConfig)?;
    let wrap = |iteration: usize| move |source| BfgsError::Problem { iteration, source };

    let mut q = q0.to_vec();
    let mut eval = problem.evaluate(&q).map_err(wrap(0))?.ok_or(BfgsError::InfeasibleStart)?;
    problem.accepted(0, &q);
    let mut g = problem.gradient(&q).map_err(wrap(0))?;
    let mut g_norm = problem.norm(&g);
    let g0_norm = g_norm;
    let mut hist = BfgsHistory::new(cfg.m_mem, cfg.b0_scale);
    let mut records = Vec::new();

    let record = |k: usize, e: &Evaluation, g_norm: f64, step: f64, theta: f64, angle: f64| IterationRecord {
        k,
        lambda: e.lambda,
        j_value: e.j_value,
        grad_norm: g_norm,
        step,
        theta,
        jq_min: e.jq_min,
        jq_max: e.jq_max,
        angle,
    };

    let mut k = 0;
    let status = loop {
        if g_norm <= cfg.tol {
            records.push(record(k, &eval, g_norm, 0.0, 0.0, 0.0));
            break OptimizeStatus::Converged;
        }
        if k >= cfg.k_max {
            records.push(record(k, &eval, g_norm, 0.0, 0.0, 0.0));
            break OptimizeStatus::IterationCap;
        }

        let mut d: Vec<f64> = apply_inverse_hessian(&hist, &g, problem).iter().map(|x| -x).collect();
        let mut gd = problem.inner(&g, &d);
        if !(gd < 0.0) {
            warn!("iteration {k}: not a descent direction ((g, d) = {gd:e}), resetting history");
            hist.clear();
            d = g.iter().map(|x| -cfg.b0_scale * x).collect();
            gd = problem.inner(&g, &d);
        }
        let angle = (-gd / (g_norm * problem.norm(&d))).clamp(-1.0, 1.0).acos();

        let step = armijo::<Evaluation, P::Error>(
            |trial| match problem.evaluate(trial) {
                Ok(Some(e)) => Some((e.j_value, e)),
                Ok(None) => None,
                Err(e) => {
                    warn!("iteration {k}: trial point rejected: {e}");
                    None
                }
            },
            &q,
            &d,
            eval.j_value,
            gd,
            cfg,
        );
        let step = match step {
            Ok(s) => s,
            Err(BfgsError::LineSearchFailed { trials }) => {
                warn!("iteration {k}: line search failed after {trials} trials");
                records.push(record(k, &eval, g_norm, 0.0, 0.0, angle));
                break OptimizeStatus::Stalled;
            }
            Err(e) => return Err(e),
        };

        problem.accepted(k + 1, &step.q);
        let g_new = problem.gradient(&step.q).map_err(wrap(k + 1))?;
        let d_tilde: Vec<f64> = step.q.iter().zip(&q).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let theta = if y.iter().all(|v| *v == 0.0) {
            1.0
        } else {
            let (d_damped, theta) = damp(&y, &d_tilde, &hist, cfg.xi, problem)?;
            hist.push(d_damped, y, problem);
            theta
        };

        records.push(record(k, &eval, g_norm, step.t, theta, angle));
        info!(
            "it {k}: lambda {:.6e} j {:.6e} |g| {:.3e} t {:.1e} theta {:.3}",
            eval.lambda, eval.j_value, g_norm, step.t, theta
        );

        q = step.q;
        eval = step.value;
        g = g_new;
        g_norm = problem.norm(&g);
        k += 1;
    };

    Ok(OptimizeResult {
        q,
        r_rel: if g0_norm > 0.0 { g_norm / g0_norm } else { 0.0 },
        records,
        status,
    })
}
