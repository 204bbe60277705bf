//! The entropy-based logistic missing-label mechanism: basis expansion,
//! the implicit logistic design, Newton fitting, and the selection term of
//! the full likelihood.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mixture::transformed_entropy;

/// One basis function applied to an observation's entropy.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisTerm {
    /// A monomial `e^power` of the raw Shannon entropy.
    Entropy { power: u32 },
    /// A monomial of the transformed entropy `e' = logit(e / log g)`;
    /// `g` is baked in so the term is evaluable at any `e`.
    TransformedEntropy { power: u32, g: usize },
}

impl BasisTerm {
    fn evaluate(&self, e: f64) -> f64 {
        match self {
            BasisTerm::Entropy { power } => e.powi(*power as i32),
            BasisTerm::TransformedEntropy { power, g } => transformed_entropy(e, *g)
                .expect("g >= 2 enforced at construction")
                .powi(*power as i32),
        }
    }
}

/// An ordered list of `T >= 1` basis functions `b_1..b_T` for the log odds
/// of an observation being labelled:
/// `eta = beta_0 + sum_t beta_t b_t(e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSpec {
    terms: Vec<BasisTerm>,
}

impl SelectionSpec {
    /// The identity basis on raw entropy (`T = 1`, `b_1(e) = e`) — the
    /// default, matching the simulation study's linear-in-entropy model.
    pub fn identity() -> Self {
        Self { terms: vec![BasisTerm::Entropy { power: 1 }] }
    }

    /// Polynomial basis on raw entropy: `e, e^2, ..., e^degree`.
    pub fn polynomial(degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("polynomial degree must be >= 1".into()));
        }
        Ok(Self {
            terms: (1..=degree).map(|power| BasisTerm::Entropy { power }).collect(),
        })
    }

    /// Polynomial basis on the transformed entropy:
    /// `e', e'^2, ..., e'^degree`. Requires `g >= 2` for the transform.
    pub fn transformed_polynomial(degree: u32, g: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("polynomial degree must be >= 1".into()));
        }
        if g < 2 {
            return Err(Error::InvalidArgument(
                "transformed-entropy basis requires g >= 2".into(),
            ));
        }
        Ok(Self {
            terms: (1..=degree)
                .map(|power| BasisTerm::TransformedEntropy { power, g })
                .collect(),
        })
    }

    /// Number of basis functions `T`.
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }
}

/// Coefficients `(beta_0, beta_1, ..., beta_T)` of the selection model;
/// `beta_0` is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionCoeffs {
    beta: DVector<f64>,
}

impl SelectionCoeffs {
    /// Wraps a coefficient vector (length `T + 1`, all entries finite).
    pub fn new(beta: DVector<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument(
                "coefficient vector must contain at least the intercept".into(),
            ));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("selection coefficients".into()));
        }
        Ok(Self { beta })
    }

    /// Convenience constructor from a slice.
    pub fn from_slice(beta: &[f64]) -> Result<Self> {
        Self::new(DVector::from_row_slice(beta))
    }

    pub fn intercept(&self) -> f64 {
        self.beta[0]
    }

    /// The slope coefficients `beta_1..beta_T`.
    pub fn slopes(&self) -> &[f64] {
        &self.beta.as_slice()[1..]
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// Evaluates the basis functions at one entropy value:
/// `(b_1(e), ..., b_T(e))`.
pub fn basis_expand(e: f64, spec: &SelectionSpec) -> DVector<f64> {
    DVector::from_iterator(spec.n_terms(), spec.terms.iter().map(|t| t.evaluate(e)))
}

/// The log odds of being labelled: `eta = beta_0 + sum_t beta_t b_t(e)`.
pub fn linear_predictor(e: f64, spec: &SelectionSpec, coeffs: &SelectionCoeffs) -> Result<f64> {
    if coeffs.len() != spec.n_terms() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "coefficient length {} does not match T + 1 = {}",
            coeffs.len(),
            spec.n_terms() + 1
        )));
    }
    let mut eta = coeffs.intercept();
    for (t, term) in spec.terms.iter().enumerate() {
        eta += coeffs.values()[t + 1] * term.evaluate(e);
    }
    Ok(eta)
}

/// The implicit logistic regression data: response `y~` (labelled rows
/// first, all ones; then unlabelled rows, all zeros) and design `X~` with a
/// leading column of ones and basis expansions in the remaining columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticDesign {
    response: DVector<f64>,
    design: DMatrix<f64>,
    n_labelled: usize,
}

impl LogisticDesign {
    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn n_labelled(&self) -> usize {
        self.n_labelled
    }

    /// Builds a design directly from a response vector and matrix; used by
    /// tests and oracles. Validates the invariants: binary response sorted
    /// ones-first, leading all-ones column.
    pub fn from_parts(response: DVector<f64>, design: DMatrix<f64>) -> Result<Self> {
        if response.len() != design.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "response length {} but design has {} rows",
                response.len(),
                design.nrows()
            )));
        }
        if design.ncols() == 0 {
            return Err(Error::DimensionMismatch("design needs an intercept column".into()));
        }
        let mut n_labelled = 0;
        let mut seen_zero = false;
        for (i, y) in response.iter().enumerate() {
            if *y != 0.0 && *y != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "response entry {i} is {y}; must be 0 or 1"
                )));
            }
            if *y == 1.0 {
                if seen_zero {
                    return Err(Error::InvalidArgument(
                        "response must list all ones before all zeros".into(),
                    ));
                }
                n_labelled += 1;
            } else {
                seen_zero = true;
            }
        }
        if design.column(0).iter().any(|v| *v != 1.0) {
            return Err(Error::InvalidArgument(
                "design column 0 must be identically 1".into(),
            ));
        }
        Ok(Self { response, design, n_labelled })
    }
}

/// Lays out the implicit response and design matrix: labelled rows first
/// with response 1, unlabelled rows second with response 0; column `j > 0`
/// holds basis function `b_j` of each row's entropy.
pub fn build_design(
    entropies_labelled: &[f64],
    entropies_unlabelled: &[f64],
    spec: &SelectionSpec,
) -> LogisticDesign {
    let n1 = entropies_labelled.len();
    let n2 = entropies_unlabelled.len();
    let t = spec.n_terms();
    let mut response = DVector::zeros(n1 + n2);
    let mut design = DMatrix::zeros(n1 + n2, t + 1);
    for (i, e) in entropies_labelled.iter().chain(entropies_unlabelled).enumerate() {
        if i < n1 {
            response[i] = 1.0;
        }
        design[(i, 0)] = 1.0;
        for (j, term) in spec.terms.iter().enumerate() {
            design[(i, j + 1)] = term.evaluate(*e);
        }
    }
    LogisticDesign { response, design, n_labelled: n1 }
}

/// `log expit(eta)` computed stably (as `-softplus(-eta)`).
pub(crate) fn log_expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        -(-eta).exp().ln_1p()
    } else {
        eta - eta.exp().ln_1p()
    }
}

/// The standard logistic function.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let t = eta.exp();
        t / (1.0 + t)
    }
}

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;
/// Returned fits must satisfy the score equations to this sup-norm.
const SCORE_TOL: f64 = 1e-8;
/// Coefficient magnitude treated as divergence under `ridge = 0`.
const SEPARATION_NORM: f64 = 1e3;

/// Maximizes the (optionally ridge-penalized) logistic log-likelihood
/// `sum_i [y_i log expit(x_i beta) + (1 - y_i) log(1 - expit(x_i beta))]
///  - ridge/2 * ||beta_1..beta_T||^2`
/// (the intercept is never penalized) by Newton's method with step halving.
///
/// Perfect separation with `ridge = 0` has no finite maximizer; it is
/// detected (divergent coefficients, or fitted probabilities equal to the
/// response) and reported as [`Error::Separation`], which instructs
/// refitting with `ridge > 0`.
pub fn logistic_fit(design: &LogisticDesign, ridge: f64) -> Result<SelectionCoeffs> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    if design.n() == 0 {
        return Err(Error::EmptyInput("logistic design has no rows".into()));
    }
    let x = design.design();
    let y = design.response();
    let k = x.ncols();
    let mut beta = DVector::<f64>::zeros(k);

    let penalized_ll = |beta: &DVector<f64>| -> f64 {
        let eta = x * beta;
        let mut ll = 0.0;
        for i in 0..y.len() {
            ll += if y[i] == 1.0 { log_expit(eta[i]) } else { log_expit(-eta[i]) };
        }
        let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum();
        ll - 0.5 * ridge * pen
    };

    let mut ll = penalized_ll(&beta);
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let eta = x * &beta;
        let p: DVector<f64> = eta.map(expit);
        // Penalized score: X^T (y - p) - ridge * (0, beta_1, ...).
        let mut grad = x.transpose() * (y - &p);
        for j in 1..k {
            grad[j] -= ridge * beta[j];
        }
        if grad.amax() < NEWTON_GRAD_TOL {
            converged = true;
            break;
        }
        // Hessian of the negative objective: X^T W X + ridge * diag(0,1..1).
        let mut hess = DMatrix::<f64>::zeros(k, k);
        for i in 0..y.len() {
            let w = p[i] * (1.0 - p[i]);
            if w == 0.0 {
                continue;
            }
            let row = x.row(i);
            for a in 0..k {
                for b in a..k {
                    hess[(b, a)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in (a + 1)..k {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        for j in 1..k {
            hess[(j, j)] += ridge;
        }
        let delta = match nalgebra::Cholesky::new(hess.clone()) {
            Some(chol) => chol.solve(&grad),
            None => {
                // A singular Hessian with no penalty means the likelihood
                // is flat in some direction (degenerate design).
                return Err(Error::SingularHessian);
            }
        };
        // Step halving: accept the first step that does not decrease the
        // penalized objective.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &beta + t * &delta;
            let cand_ll = penalized_ll(&cand);
            if cand_ll.is_finite() && cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Objective is numerically flat; fall through to the score
            // check below.
            break;
        }
        if ridge == 0.0 && beta.amax() > SEPARATION_NORM {
            return Err(Error::Separation);
        }
    }

    // Post-conditions: score equations satisfied; no separation artifacts.
    let eta = x * &beta;
    let p: DVector<f64> = eta.map(expit);
    if ridge == 0.0 {
        let max_resid = (0..y.len())
            .map(|i| (p[i] - y[i]).abs())
            .fold(0.0f64, f64::max);
        if max_resid < 1e-8 {
            // The fitted probabilities replicate the response: the MLE is
            // at infinity (perfect separation).
            return Err(Error::Separation);
        }
    }
    let mut grad = x.transpose() * (y - &p);
    for j in 1..k {
        grad[j] -= ridge * beta[j];
    }
    if grad.amax() >= SCORE_TOL {
        if !converged && beta.amax() > SEPARATION_NORM && ridge == 0.0 {
            return Err(Error::Separation);
        }
        return Err(Error::LogisticNoConvergence(format!(
            "score sup-norm {:.3e} after {NEWTON_MAX_ITER} iterations",
            grad.amax()
        )));
    }
    SelectionCoeffs::new(beta)
}

/// The selection-model term of the full log-likelihood:
/// `sum_labelled log expit(eta) + sum_unlabelled log(1 - expit(eta))`,
/// evaluated with `log1p`-style stable forms.
pub fn log_selection_likelihood(
    coeffs: &SelectionCoeffs,
    spec: &SelectionSpec,
    entropies_labelled: &[f64],
    entropies_unlabelled: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for e in entropies_labelled {
        total += log_expit(linear_predictor(*e, spec, coeffs)?);
    }
    for e in entropies_unlabelled {
        total += log_expit(-linear_predictor(*e, spec, coeffs)?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_basis_expansion() {
        let spec = SelectionSpec::identity();
        let b = basis_expand(0.5, &spec);
        assert_eq!(b.as_slice(), &[0.5]);
    }

    #[test]
    fn polynomial_basis_expansion() {
        let spec = SelectionSpec::polynomial(2).unwrap();
        let b = basis_expand(0.5, &spec);
        assert_eq!(b.as_slice(), &[0.5, 0.25]);
    }

    #[test]
    fn transformed_identity_basis_matches_transform_oracle() {
        // Oracle: composition with the frozen transformed-entropy value.
        let spec = SelectionSpec::transformed_polynomial(1, 2).unwrap();
        let b = basis_expand(0.3250829733914482, &spec);
        assert_relative_eq!(b[0], -0.12417694646265860, epsilon = 1e-13);
    }

    #[test]
    fn linear_predictor_zero_coeffs() {
        let spec = SelectionSpec::identity();
        let coeffs = SelectionCoeffs::from_slice(&[0.0, 0.0]).unwrap();
        assert_eq!(linear_predictor(0.37, &spec, &coeffs).unwrap(), 0.0);
        assert_eq!(expit(0.0), 0.5);
    }

    #[test]
    fn linear_predictor_simulation_coefficients() {
        // beta_0 = 1, beta_1 = -5 at maximal binary entropy.
        let spec = SelectionSpec::identity();
        let coeffs = SelectionCoeffs::from_slice(&[1.0, -5.0]).unwrap();
        let eta = linear_predictor(std::f64::consts::LN_2, &spec, &coeffs).unwrap();
        assert_relative_eq!(eta, 1.0 - 5.0 * std::f64::consts::LN_2, epsilon = 1e-15);
        // And at zero entropy: probability expit(1).
        let eta0 = linear_predictor(0.0, &spec, &coeffs).unwrap();
        assert_eq!(eta0, 1.0);
        assert_relative_eq!(expit(eta0), 0.7310585786300049, epsilon = 1e-15);
    }

    #[test]
    fn linear_predictor_rejects_length_mismatch() {
        let spec = SelectionSpec::polynomial(2).unwrap();
        let coeffs = SelectionCoeffs::from_slice(&[0.0, 1.0]).unwrap();
        assert!(linear_predictor(0.1, &spec, &coeffs).is_err());
    }

    #[test]
    fn build_design_layout() {
        let spec = SelectionSpec::identity();
        let d = build_design(&[0.1], &[0.6], &spec);
        assert_eq!(d.response().as_slice(), &[1.0, 0.0]);
        assert_eq!(d.design().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.1]);
        assert_eq!(d.design().row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.6]);
        assert_eq!(d.n_labelled(), 1);
    }

    #[test]
    fn build_design_no_unlabelled_rows() {
        let spec = SelectionSpec::identity();
        let d = build_design(&[0.1, 0.2], &[], &spec);
        assert!(d.response().iter().all(|y| *y == 1.0));
    }

    #[test]
    fn build_design_polynomial_row() {
        let spec = SelectionSpec::polynomial(2).unwrap();
        let d = build_design(&[0.2], &[], &spec);
        let row: Vec<f64> = d.design().row(0).iter().copied().collect();
        assert_relative_eq!(row[0], 1.0);
        assert_relative_eq!(row[1], 0.2);
        assert_relative_eq!(row[2], 0.2 * 0.2, epsilon = 1e-16);
    }

    #[test]
    fn logistic_fit_all_ones_is_separation() {
        let design = LogisticDesign::from_parts(
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            DMatrix::from_element(3, 1, 1.0),
        )
        .unwrap();
        let err = logistic_fit(&design, 0.0).unwrap_err();
        assert!(matches!(err, Error::Separation), "got {err:?}");
    }

    #[test]
    fn logistic_fit_balanced_intercept_is_zero() {
        let design = LogisticDesign::from_parts(
            DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]),
            DMatrix::from_element(4, 1, 1.0),
        )
        .unwrap();
        let coeffs = logistic_fit(&design, 0.0).unwrap();
        assert_relative_eq!(coeffs.intercept(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn logistic_fit_satisfies_score_equations() {
        let spec = SelectionSpec::identity();
        let design = build_design(
            &[0.05, 0.10, 0.22, 0.31, 0.44],
            &[0.25, 0.38, 0.52, 0.61, 0.66],
            &spec,
        );
        let coeffs = logistic_fit(&design, 0.0).unwrap();
        let eta = design.design() * coeffs.values();
        let resid: DVector<f64> = design.response() - eta.map(expit);
        let score = design.design().transpose() * resid;
        assert!(score.amax() < 1e-8, "score sup-norm {}", score.amax());
    }

    #[test]
    fn selection_likelihood_zero_coeffs() {
        let spec = SelectionSpec::identity();
        let coeffs = SelectionCoeffs::from_slice(&[0.0, 0.0]).unwrap();
        let v = log_selection_likelihood(&coeffs, &spec, &[0.3], &[0.4]).unwrap();
        assert_relative_eq!(v, 2.0 * 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn selection_likelihood_empty_sums() {
        let spec = SelectionSpec::identity();
        let coeffs = SelectionCoeffs::from_slice(&[2.0, -1.0]).unwrap();
        assert_eq!(log_selection_likelihood(&coeffs, &spec, &[], &[]).unwrap(), 0.0);
    }

    #[test]
    fn selection_likelihood_matches_naive_expit_oracle() {
        let spec = SelectionSpec::identity();
        let coeffs = SelectionCoeffs::from_slice(&[1.0, -5.0]).unwrap();
        let v = log_selection_likelihood(&coeffs, &spec, &[0.1], &[0.65]).unwrap();
        // Naive arithmetic: plain expit then log.
        let p1 = 1.0 / (1.0 + (-(1.0 - 5.0 * 0.1f64)).exp());
        let p2 = 1.0 / (1.0 + (-(1.0 - 5.0 * 0.65f64)).exp());
        let oracle = p1.ln() + (1.0 - p2).ln();
        assert_relative_eq!(v, oracle, epsilon = 1e-12);
    }

    #[test]
    fn log_expit_is_stable_in_the_tails() {
        assert!(log_expit(800.0) > -1e-300);
        assert_relative_eq!(log_expit(-800.0), -800.0, epsilon = 1e-12);
    }
}
