//! Dense convex QP solver.
//!
//! ```text
//!   minimize    1/2 y'Hy + f'y + c
//!   subject to  A y = b,   lo <= y <= hi
//! ```
//!
//! The solver first tries an active-set solve from the empty working set,
//! which settles most small, strongly convex problems in a handful of
//! linear solves. Otherwise it runs an operator-splitting iteration on
//! `l <= [A; I] y <= u` with a single cached factorization of the reduced
//! KKT matrix, periodically polishing on the active set the iterate
//! suggests. A result is reported optimal only when the polished KKT
//! residuals are below tolerance.

mod active;
mod splitting;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("Hessian is not positive semidefinite (min eigenvalue below {0:.3e})")]
    NotConvex(f64),
    #[error("problem is infeasible (certificate residual {certificate:.3e})")]
    Infeasible { certificate: f64 },
    #[error("no optimal point within {} iterations (stationarity {:.3e}, equality {:.3e})",
        .0.iterations, .0.residuals.stationarity, .0.residuals.primal_eq)]
    MaxIterations(Box<QpSolution>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    /// Constant added to the reported objective.
    pub constant: f64,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    /// Variable names for diagnostics; may be empty.
    pub names: Vec<String>,
}

impl QpProblem {
    /// Zero cost, no equalities, unbounded variables.
    pub fn new(n: usize) -> Self {
        Self {
            h: DMatrix::zeros(n, n),
            f: DVector::zeros(n),
            constant: 0.0,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lo: DVector::from_element(n, f64::NEG_INFINITY),
            hi: DVector::from_element(n, f64::INFINITY),
            names: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.h * y)) + self.f.dot(y) + self.constant
    }

    pub fn name(&self, j: usize) -> String {
        self.names.get(j).cloned().unwrap_or_else(|| format!("y{j}"))
    }

    /// Multiplies the whole objective by `c`.
    pub fn scaled_cost(&self, c: f64) -> Self {
        Self { h: &self.h * c, f: &self.f * c, constant: self.constant * c, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let bad = |m: String| Err(QpError::InvalidProblem(m));
        if self.h.shape() != (n, n) {
            return bad(format!("H is {:?}, expected {n}x{n}", self.h.shape()));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad(format!("A is {:?} with {} right-hand sides", self.a_eq.shape(), self.b_eq.len()));
        }
        if self.lo.len() != n || self.hi.len() != n {
            return bad("bound vectors have the wrong length".into());
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        if !finite(&self.h) || !finite(&self.a_eq) || !self.f.iter().all(|x| x.is_finite()) || !self.b_eq.iter().all(|x| x.is_finite()) {
            return bad("non-finite coefficient".into());
        }
        for j in 0..n {
            if self.lo[j].is_nan() || self.hi[j].is_nan() || self.lo[j] > self.hi[j] || self.lo[j] == f64::INFINITY || self.hi[j] == f64::NEG_INFINITY {
                return bad(format!("bounds of {} are not ordered: [{}, {}]", self.name(j), self.lo[j], self.hi[j]));
            }
        }
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-9 * scale {
            return bad("H is not symmetric".into());
        }
        // PSD to tolerance: H + tau I must admit a Cholesky factor.
        let tau = 1e-8 * scale;
        let shifted = &self.h + DMatrix::identity(n, n) * tau;
        if n > 0 && shifted.cholesky().is_none() {
            return Err(QpError::NotConvex(-tau));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    /// Tolerance on every KKT residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `||H y + f + A' nu + mu||_inf`.
    pub stationarity: f64,
    /// `||A y - b||_inf`.
    pub primal_eq: f64,
    /// Largest bound violation.
    pub bound_violation: f64,
    /// Largest `|mu_j| * slack_j` over the side `mu_j` acts on.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal_eq).max(self.bound_violation).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub y: DVector<f64>,
    pub objective: f64,
    /// Multipliers of `A y = b`.
    pub eq_multipliers: DVector<f64>,
    /// Bound multipliers: positive on an active upper bound, negative on an
    /// active lower bound.
    pub bound_multipliers: DVector<f64>,
    pub residuals: KktResiduals,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Recomputes KKT residuals from a primal-dual point.
pub fn kkt_residuals(p: &QpProblem, y: &DVector<f64>, nu: &DVector<f64>, mu: &DVector<f64>) -> KktResiduals {
    let grad = &p.h * y + &p.f + p.a_eq.transpose() * nu + mu;
    let stationarity = grad.amax();
    let primal_eq = if p.num_eq() == 0 { 0.0 } else { (&p.a_eq * y - &p.b_eq).amax() };
    let mut bound_violation: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for j in 0..p.num_vars() {
        bound_violation = bound_violation.max(p.lo[j] - y[j]).max(y[j] - p.hi[j]);
        let c = if mu[j] > 0.0 {
            mu[j] * (p.hi[j] - y[j])
        } else if mu[j] < 0.0 {
            -mu[j] * (y[j] - p.lo[j])
        } else {
            0.0
        };
        complementarity = complementarity.max(c.abs());
    }
    KktResiduals { stationarity, primal_eq, bound_violation, complementarity }
}

pub(crate) fn finish(
    p: &QpProblem,
    mut y: DVector<f64>,
    nu: DVector<f64>,
    mu: DVector<f64>,
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    for j in 0..y.len() {
        y[j] = y[j].clamp(p.lo[j], p.hi[j]);
    }
    let residuals = kkt_residuals(p, &y, &nu, &mu);
    QpSolution { objective: p.objective(&y), y, eq_multipliers: nu, bound_multipliers: mu, residuals, status, iterations }
}

/// Solves `p` to `settings.tol`.
pub fn solve_qp(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    p.validate()?;
    if let Some(sol) = active::solve_from(p, &active::initial_working_set(p), settings.tol, 4 * p.num_vars() + 20) {
        return Ok(sol);
    }
    splitting::solve(p, settings)
}
