//! Dense semidefinite programming.
//!
//! Problems have the form
//!
//! ```text
//! maximize ⟨C, X⟩  s.t.  ⟨A_i, X⟩ = b_i,  ⟨G_j, X⟩ ≤ h_j,  X ⪰ 0.
//! ```
//!
//! The solver is a primal-dual interior point method on the homogeneous
//! self-dual embedding with Nesterov-Todd scaling and Mehrotra
//! predictor-corrector steps. Inequalities get nonnegative slacks. The
//! embedding yields either an optimal pair or a Farkas certificate of
//! infeasibility.

mod ipm;
mod presolve;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-8;
/// Looser tolerance accepted when the iteration stalls.
const STALL_TOL: f64 = 1e-6;
const CERT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("no infeasibility certificate (solver status {0:?})")]
    CertificateUnavailable(SdpStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SdpStatus {
    Optimal,
    PrimalInfeasible,
    /// The maximization is unbounded.
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    dim: usize,
    objective: DMatrix<f64>,
    equalities: Vec<(DMatrix<f64>, f64)>,
    inequalities: Vec<(DMatrix<f64>, f64)>,
}

fn check_sym(m: &DMatrix<f64>, dim: usize, what: &str) -> Result<DMatrix<f64>, SdpError> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(SdpError::InvalidProblem(format!(
            "{what} is {}x{}, expected {dim}x{dim}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(SdpError::InvalidProblem(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(SdpError::InvalidProblem(format!("{what} is not symmetric")));
    }
    Ok((m + m.transpose()) * 0.5)
}

impl SdpProblem {
    pub fn new(dim: usize, objective: DMatrix<f64>) -> Result<Self, SdpError> {
        if dim == 0 {
            return Err(SdpError::InvalidProblem("dimension must be positive".into()));
        }
        let objective = check_sym(&objective, dim, "objective")?;
        Ok(Self {
            dim,
            objective,
            equalities: Vec::new(),
            inequalities: Vec::new(),
        })
    }

    /// Adds `⟨a, X⟩ = b`.
    pub fn add_equality(&mut self, a: DMatrix<f64>, b: f64) -> Result<(), SdpError> {
        let a = check_sym(&a, self.dim, "equality matrix")?;
        if !b.is_finite() {
            return Err(SdpError::InvalidProblem("equality right-hand side is not finite".into()));
        }
        self.equalities.push((a, b));
        Ok(())
    }

    /// Adds `⟨g, X⟩ ≤ h`.
    pub fn add_inequality(&mut self, g: DMatrix<f64>, h: f64) -> Result<(), SdpError> {
        let g = check_sym(&g, self.dim, "inequality matrix")?;
        if !h.is_finite() {
            return Err(SdpError::InvalidProblem("inequality right-hand side is not finite".into()));
        }
        self.inequalities.push((g, h));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn objective(&self) -> &DMatrix<f64> {
        &self.objective
    }

    pub fn equalities(&self) -> &[(DMatrix<f64>, f64)] {
        &self.equalities
    }

    pub fn inequalities(&self) -> &[(DMatrix<f64>, f64)] {
        &self.inequalities
    }

    /// Debug dump: `{"dim", "C", "equalities": [{"A", "b"}], "inequalities": [{"G", "h"}]}`
    /// with row-major nested arrays.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        serde_json::json!({
            "dim": self.dim,
            "C": rows(&self.objective),
            "equalities": self.equalities.iter().map(|(a, b)| serde_json::json!({"A": rows(a), "b": b})).collect::<Vec<_>>(),
            "inequalities": self.inequalities.iter().map(|(g, h)| serde_json::json!({"G": rows(g), "h": h})).collect::<Vec<_>>(),
        })
    }

    /// Largest constraint violation of `x` (equality residuals and positive
    /// parts of inequality residuals), plus the negative part of its
    /// smallest eigenvalue.
    pub fn violation(&self, x: &DMatrix<f64>) -> f64 {
        let mut v = 0.0f64;
        for (a, b) in &self.equalities {
            v = v.max((a.dot(x) - b).abs());
        }
        for (g, h) in &self.inequalities {
            v = v.max(g.dot(x) - h);
        }
        v.max(-min_eigenvalue(x))
    }
}

/// Farkas multipliers: `u` (equalities, free) and `v ≥ 0` (inequalities)
/// with `Σ u_i A_i + Σ v_j G_j ⪰ 0` and `bᵀu + hᵀv = −1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl InfeasibilityCertificate {
    pub fn combined_matrix(&self, problem: &SdpProblem) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(problem.dim, problem.dim);
        for (ui, (a, _)) in self.u.iter().zip(&problem.equalities) {
            s += a * *ui;
        }
        for (vj, (g, _)) in self.v.iter().zip(&problem.inequalities) {
            s += g * *vj;
        }
        s
    }

    pub fn combined_rhs(&self, problem: &SdpProblem) -> f64 {
        let eq: f64 = self.u.iter().zip(&problem.equalities).map(|(u, (_, b))| u * b).sum();
        let ineq: f64 = self.v.iter().zip(&problem.inequalities).map(|(v, (_, h))| v * h).sum();
        eq + ineq
    }

    /// Checks the certificate arithmetic to 1e-8 (scaled by the size of the
    /// combined matrix).
    pub fn verify(&self, problem: &SdpProblem) -> bool {
        if self.u.len() != problem.equalities.len() || self.v.len() != problem.inequalities.len() {
            return false;
        }
        let s = self.combined_matrix(problem);
        let scale = 1.0 + s.amax();
        self.v.iter().all(|&v| v >= -CERT_TOL)
            && min_eigenvalue(&s) >= -CERT_TOL * scale
            && (self.combined_rhs(problem) + 1.0).abs() <= CERT_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Primal matrix (meaningful when `Optimal`).
    pub x: DMatrix<f64>,
    /// Dual objective `bᵀy + hᵀv`, an upper bound on the optimum.
    pub objective_value: f64,
    /// `⟨C, X⟩` at the returned primal matrix.
    pub primal_value: f64,
    pub duality_gap: f64,
    /// Equality multipliers.
    pub y: DVector<f64>,
    /// Inequality multipliers (nonnegative).
    pub v: DVector<f64>,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
}

impl SdpSolution {
    /// A rigorous upper bound on `⟨C, X⟩` over feasible `X` with
    /// `tr X ≤ trace_bound`, from the dual multipliers: weak duality plus a
    /// correction for any negative eigenvalue of the dual slack.
    pub fn certified_upper_bound(&self, problem: &SdpProblem, trace_bound: f64) -> f64 {
        let v = self.v.map(|x| x.max(0.0));
        let mut s = -problem.objective.clone();
        let mut val = 0.0;
        for (yi, (a, b)) in self.y.iter().zip(&problem.equalities) {
            s += a * *yi;
            val += yi * b;
        }
        for (vj, (g, h)) in v.iter().zip(&problem.inequalities) {
            s += g * *vj;
            val += vj * h;
        }
        val + (-min_eigenvalue(&s)).max(0.0) * trace_bound
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

/// Solves the problem; never panics on bad numerics, which surface as
/// `NumericalFailure` or `MaxIterations`.
pub fn solve_sdp(problem: &SdpProblem, max_iters: usize, tol: f64) -> SdpSolution {
    let d = problem.dim;
    let pre = presolve::presolve(problem);
    let failure = |status, certificate| SdpSolution {
        status,
        x: DMatrix::zeros(d, d),
        objective_value: f64::NAN,
        primal_value: f64::NAN,
        duality_gap: f64::NAN,
        y: DVector::zeros(problem.equalities.len()),
        v: DVector::zeros(problem.inequalities.len()),
        iterations: 0,
        certificate,
    };
    if let Some(cert) = pre.certificate {
        return failure(SdpStatus::PrimalInfeasible, Some(cert));
    }
    let out = ipm::solve(problem, &pre, max_iters, tol, STALL_TOL);
    match out.status {
        SdpStatus::PrimalInfeasible => {
            let cert = out.certificate.filter(|c| c.verify(problem));
            let mut sol = failure(SdpStatus::PrimalInfeasible, cert);
            sol.iterations = out.iterations;
            sol
        }
        SdpStatus::DualInfeasible | SdpStatus::NumericalFailure => {
            let mut sol = failure(out.status, None);
            sol.iterations = out.iterations;
            sol
        }
        SdpStatus::Optimal | SdpStatus::MaxIterations => {
            let primal_value = problem.objective.dot(&out.x);
            let dual: f64 = out
                .y
                .iter()
                .zip(&problem.equalities)
                .map(|(y, (_, b))| y * b)
                .chain(out.v.iter().zip(&problem.inequalities).map(|(v, (_, h))| v * h))
                .sum();
            SdpSolution {
                status: out.status,
                objective_value: dual,
                primal_value,
                duality_gap: (dual - primal_value).abs(),
                x: out.x,
                y: out.y,
                v: out.v,
                iterations: out.iterations,
                certificate: None,
            }
        }
    }
}

/// Runs the solver and returns its Farkas certificate when the problem is
/// infeasible.
pub fn infeasibility_certificate(problem: &SdpProblem) -> Result<InfeasibilityCertificate, SdpError> {
    let sol = solve_sdp(problem, DEFAULT_MAX_ITERS, DEFAULT_TOL);
    match (sol.status, sol.certificate) {
        (SdpStatus::PrimalInfeasible, Some(c)) => Ok(c),
        (status, _) => Err(SdpError::CertificateUnavailable(status)),
    }
}

#[cfg(test)]
mod tests;
