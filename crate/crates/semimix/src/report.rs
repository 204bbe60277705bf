//! Fit reports shared by every estimator.

use crate::mixture::MixtureParams;
use crate::selection::SelectionCoeffs;

/// Events worth surfacing from a fit: regularization, separation guards,
/// degenerate shapes. Stored on [`FitReport::notes`].
#[derive(Debug, Clone, PartialEq)]
pub enum FitNote {
    /// A component's covariance failed its Cholesky factorization during an
    /// M-step and was regularized by adding `lambda` to the diagonal.
    CovarianceFloored { component: usize, lambda: f64 },
    /// A logistic subproblem was solved with a ridge penalty.
    RidgeApplied { ridge: f64 },
    /// The dataset has no unlabelled rows; the selection part of the model
    /// is degenerate (all responses are 1).
    NoUnlabelledRows,
    /// The dataset has no labelled rows; the selection part of the model is
    /// degenerate (all responses are 0).
    NoLabelledRows,
    /// The optimizer stopped on its iteration budget without meeting the
    /// convergence tolerances.
    IterationBudgetExhausted,
}

impl std::fmt::Display for FitNote {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitNote::CovarianceFloored { component, lambda } => {
                write!(f, "covariance of component {component} floored (+{lambda:.3e} I)")
            }
            FitNote::RidgeApplied { ridge } => {
                write!(f, "selection coefficients fitted with ridge {ridge:.3e}")
            }
            FitNote::NoUnlabelledRows => write!(f, "no unlabelled rows; selection model degenerate"),
            FitNote::NoLabelledRows => write!(f, "no labelled rows; selection model degenerate"),
            FitNote::IterationBudgetExhausted => write!(f, "iteration budget exhausted"),
        }
    }
}

/// Outcome of an estimation run: the fitted parameters, the per-iteration
/// objective trace, and convergence metadata.
///
/// Invariants: `trace` is non-empty and `objective` equals its last entry.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Estimated mixture parameters.
    pub params: MixtureParams,
    /// Estimated selection coefficients (full-likelihood fits only).
    pub coeffs: Option<SelectionCoeffs>,
    /// Final objective value (log-likelihood scale).
    pub objective: f64,
    /// Objective value at the initialization and after each iteration.
    pub trace: Vec<f64>,
    /// Whether the stopping tolerance was met within the iteration budget.
    pub converged: bool,
    /// Number of iterations performed.
    pub iterations: usize,
    /// Regularization/degeneracy flags raised during the fit.
    pub notes: Vec<FitNote>,
}

impl FitReport {
    /// Checks the internal trace/objective invariants; used by tests.
    pub fn check_invariants(&self) {
        assert!(!self.trace.is_empty(), "trace must be non-empty");
        let last = *self.trace.last().unwrap();
        assert_eq!(
            self.objective.to_bits(),
            last.to_bits(),
            "objective must equal the trace's last entry"
        );
    }
}
