//! Gaussian mixture representation, densities, posterior responsibilities,
//! entropy measures, and the ignorance-likelihood objective.

use nalgebra::{DMatrix, DVector};

use crate::dataset::SemiDataset;
use crate::error::{Error, Result};

/// Mean and covariance of one Gaussian mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// The complete parameter set of a `g`-component Gaussian mixture:
/// mixing weights and per-component (mean, covariance) pairs.
///
/// Construction validates every invariant — weights strictly positive and
/// summing to one within `1e-12`, covariances symmetric within `1e-12` and
/// positive-definite, all dimensions consistent — so a value of this type is
/// always usable.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

impl MixtureParams {
    /// Builds and validates a mixture parameter set.
    pub fn new(
        weights: Vec<f64>,
        components: Vec<(DVector<f64>, DMatrix<f64>)>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("at least one component required".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights but {} components",
                weights.len(),
                components.len()
            )));
        }
        for (h, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w <= 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "weight {h} is {w}; weights must be finite and > 0"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {sum}, not 1 (tolerance {WEIGHT_SUM_TOL:.0e})"
            )));
        }
        let p = components[0].0.len();
        if p == 0 {
            return Err(Error::DimensionMismatch("mean dimension must be >= 1".into()));
        }
        let mut built = Vec::with_capacity(components.len());
        for (h, (mean, cov)) in components.into_iter().enumerate() {
            if mean.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "component {h} mean has dimension {}, expected {p}",
                    mean.len()
                )));
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("component {h} mean")));
            }
            if cov.nrows() != p || cov.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "component {h} covariance is {}x{}, expected {p}x{p}",
                    cov.nrows(),
                    cov.ncols()
                )));
            }
            if cov.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("component {h} covariance")));
            }
            let scale = cov.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
            for i in 0..p {
                for j in (i + 1)..p {
                    if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                        return Err(Error::InvalidCovariance {
                            component: h,
                            reason: format!(
                                "not symmetric: |a[{i},{j}] - a[{j},{i}]| = {:.3e}",
                                (cov[(i, j)] - cov[(j, i)]).abs()
                            ),
                        });
                    }
                }
            }
            if nalgebra::Cholesky::new(cov.clone()).is_none() {
                return Err(Error::InvalidCovariance {
                    component: h,
                    reason: "not positive definite (Cholesky factorization failed)".into(),
                });
            }
            built.push(GaussianComponent { mean, cov });
        }
        Ok(Self { weights, components: built })
    }

    /// Number of components `g`.
    pub fn g(&self) -> usize {
        self.weights.len()
    }

    /// Feature dimension `p`.
    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Mixing weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Component `h`.
    pub fn component(&self, h: usize) -> &GaussianComponent {
        &self.components[h]
    }

    /// All components.
    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Returns a copy with components (and weights) permuted:
    /// component `h` of the result is component `perm[h]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.g() {
            return Err(Error::DimensionMismatch(format!(
                "permutation length {} != g = {}",
                perm.len(),
                self.g()
            )));
        }
        let mut seen = vec![false; self.g()];
        for &q in perm {
            if q >= self.g() || seen[q] {
                return Err(Error::InvalidArgument(
                    "component permutation is not a bijection".into(),
                ));
            }
            seen[q] = true;
        }
        let weights = perm.iter().map(|&q| self.weights[q]).collect();
        let components = perm
            .iter()
            .map(|&q| {
                let c = &self.components[q];
                (c.mean.clone(), c.cov.clone())
            })
            .collect();
        Self::new(weights, components)
    }

    /// Precomputes per-component Cholesky factors and log-weights for
    /// repeated density evaluation.
    pub(crate) fn evaluator(&self) -> MixtureEval {
        MixtureEval::new(self)
    }
}

/// Precomputed state for repeated mixture density evaluation.
pub(crate) struct MixtureEval {
    log_weights: Vec<f64>,
    comps: Vec<ComponentEval>,
    scratch: std::cell::RefCell<DVector<f64>>,
}

struct ComponentEval {
    mean: DVector<f64>,
    chol_lower: DMatrix<f64>,
    /// `-(p/2) log(2 pi) - sum_j log L_jj`
    log_norm: f64,
}

impl ComponentEval {
    fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Option<Self> {
        let p = mean.len();
        let chol = nalgebra::Cholesky::new(cov.clone())?;
        let chol_lower = chol.unpack();
        let log_det_half: f64 = (0..p).map(|j| chol_lower[(j, j)].ln()).sum();
        let log_norm = -0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln() - log_det_half;
        Some(Self { mean, chol_lower, log_norm })
    }

    /// Log-density via the triangular factor: solve `L y = x - mean` and
    /// return `log_norm - ||y||^2 / 2`.
    fn log_density(&self, x: &DVector<f64>, scratch: &mut DVector<f64>) -> f64 {
        scratch.copy_from(x);
        *scratch -= &self.mean;
        self.chol_lower.solve_lower_triangular_mut(scratch);
        self.log_norm - 0.5 * scratch.norm_squared()
    }
}

impl MixtureEval {
    fn new(params: &MixtureParams) -> Self {
        let log_weights = params.weights.iter().map(|w| w.ln()).collect();
        let comps = params
            .components
            .iter()
            .map(|c| {
                ComponentEval::new(c.mean.clone(), &c.cov)
                    .expect("covariance validated SPD at construction")
            })
            .collect();
        let p = params.dim();
        Self {
            log_weights,
            comps,
            scratch: std::cell::RefCell::new(DVector::zeros(p)),
        }
    }

    pub(crate) fn g(&self) -> usize {
        self.comps.len()
    }

    pub(crate) fn dim(&self) -> usize {
        self.comps[0].mean.len()
    }

    /// Fills `out[h] = log pi_h + log f_h(x)`.
    pub(crate) fn log_weighted_densities(&self, x: &DVector<f64>, out: &mut [f64]) {
        let mut scratch = self.scratch.borrow_mut();
        for (h, comp) in self.comps.iter().enumerate() {
            out[h] = self.log_weights[h] + comp.log_density(x, &mut scratch);
        }
    }

    /// Log mixture density `log sum_h pi_h f_h(x)` via log-sum-exp.
    pub(crate) fn log_mixture_density(&self, x: &DVector<f64>) -> f64 {
        let mut buf = vec![0.0; self.g()];
        self.log_weighted_densities(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Posterior responsibilities from the log weighted densities,
    /// normalized with max-subtraction. Returns the raw vector.
    pub(crate) fn responsibilities_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut buf = vec![0.0; self.g()];
        self.log_weighted_densities(x, &mut buf);
        normalized_exp(&buf)
    }
}

/// `log sum_i exp(v_i)` with max-subtraction; `-inf` for an empty slice.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Normalizes `exp(v)` to a probability vector with max-subtraction.
pub(crate) fn normalized_exp(v: &[f64]) -> DVector<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = DVector::from_iterator(v.len(), v.iter().map(|x| (x - m).exp()));
    let sum = out.sum();
    out /= sum;
    out
}

/// A posterior class-membership probability vector (one observation's row
/// of responsibilities).
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    tau: DVector<f64>,
}

impl Responsibilities {
    /// Wraps a probability vector, validating entries in `[0, 1]` and a sum
    /// within `1e-10` of one.
    pub fn new(tau: DVector<f64>) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::EmptyInput("responsibilities vector".into()));
        }
        if tau.iter().any(|t| !t.is_finite() || *t < 0.0 || *t > 1.0) {
            return Err(Error::InvalidArgument(
                "responsibilities must lie in [0, 1]".into(),
            ));
        }
        if (tau.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "responsibilities sum to {}, not 1",
                tau.sum()
            )));
        }
        Ok(Self { tau })
    }

    pub(crate) fn from_normalized(tau: DVector<f64>) -> Self {
        Self { tau }
    }

    pub fn g(&self) -> usize {
        self.tau.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.tau
    }
}

/// Log-density of a multivariate Gaussian, `log f(x; mean, cov)`, computed
/// through a Cholesky factorization.
pub fn log_component_density(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let p = mean.len();
    if x.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "x has dimension {}, mean has {p}",
            x.len()
        )));
    }
    if cov.nrows() != p || cov.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, expected {p}x{p}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let comp = ComponentEval::new(mean.clone(), cov).ok_or(Error::CholeskyFailure)?;
    let mut scratch = DVector::zeros(p);
    Ok(comp.log_density(x, &mut scratch))
}

/// Posterior responsibilities `tau_h = pi_h f_h(x) / sum_r pi_r f_r(x)`,
/// computed in log-space with max-subtraction.
pub fn responsibilities(x: &DVector<f64>, params: &MixtureParams) -> Result<Responsibilities> {
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "x has dimension {}, params have {}",
            x.len(),
            params.dim()
        )));
    }
    let eval = params.evaluator();
    Ok(Responsibilities::from_normalized(eval.responsibilities_vec(x)))
}

/// Shannon entropy `e = -sum_h tau_h log tau_h` with the convention
/// `0 log 0 = 0`; lies in `[0, log g]`.
pub fn shannon_entropy(tau: &Responsibilities) -> f64 {
    shannon_entropy_raw(tau.values().as_slice())
}

pub(crate) fn shannon_entropy_raw(tau: &[f64]) -> f64 {
    let mut e = 0.0;
    for &t in tau {
        if t > 0.0 {
            e -= t * t.ln();
        }
    }
    // Clamp away the tiny negative values floating-point rounding can
    // produce for near-degenerate rows.
    e.max(0.0)
}

/// Rényi entropy of order `gamma`: `(1 - gamma)^{-1} log sum_h tau_h^gamma`.
///
/// `gamma = 1` is rejected; use [`shannon_entropy`] (its limit) instead.
/// For `gamma = 0` the sum counts the support, giving the Hartley entropy.
pub fn renyi_entropy(tau: &Responsibilities, gamma: f64) -> Result<f64> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma must be finite and >= 0, got {gamma}"
        )));
    }
    if gamma == 1.0 {
        return Err(Error::InvalidArgument(
            "gamma = 1 is the Shannon limit; call shannon_entropy".into(),
        ));
    }
    let sum: f64 = tau
        .values()
        .iter()
        .filter(|t| **t > 0.0)
        .map(|t| t.powf(gamma))
        .sum();
    Ok(sum.ln() / (1.0 - gamma))
}

/// Clamp width for the entropy transform: entropies are pulled into
/// `[eps, log g - eps]` before the logit so the transform stays finite.
pub const ENTROPY_CLAMP: f64 = 1e-10;

/// Transformed entropy `e' = logit(e / log g)` with the boundary clamp.
///
/// Requires `g >= 2` (`log g = 0` makes the transform undefined for `g = 1`).
pub fn transformed_entropy(e: f64, g: usize) -> Result<f64> {
    if g < 2 {
        return Err(Error::InvalidArgument(format!(
            "transformed entropy requires g >= 2, got {g}"
        )));
    }
    if !e.is_finite() {
        return Err(Error::NonFinite("entropy".into()));
    }
    let log_g = (g as f64).ln();
    // logit(e / log g) = log(e) - log(log g - e); clamping value and
    // complement separately keeps the boundary images exact negatives of
    // each other (computing 1 - e/log g near the top loses ~7 digits).
    let clamped = e.clamp(ENTROPY_CLAMP, log_g - ENTROPY_CLAMP);
    let complement = (log_g - e).clamp(ENTROPY_CLAMP, log_g - ENTROPY_CLAMP);
    Ok(clamped.ln() - complement.ln())
}

/// The ignorance log-likelihood: labelled rows contribute
/// `log[pi_h f_h(x)]` at their observed label, unlabelled rows contribute
/// `log sum_h pi_h f_h(x)` (log-sum-exp).
pub fn log_ignorance_likelihood(params: &MixtureParams, data: &SemiDataset) -> Result<f64> {
    let (labelled, unlabelled) = log_likelihood_blocks(params, data)?;
    Ok(labelled + unlabelled)
}

/// The two blocks of the ignorance log-likelihood: the labelled-data block
/// and the unlabelled-data block. Their sum is
/// [`log_ignorance_likelihood`]; the fractional objective reweights them.
pub fn log_likelihood_blocks(params: &MixtureParams, data: &SemiDataset) -> Result<(f64, f64)> {
    if data.n() == 0 {
        return Ok((0.0, 0.0));
    }
    if data.dim() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data dimension {} but params dimension {}",
            data.dim(),
            params.dim()
        )));
    }
    data.validate_labels(params.g())?;
    let eval = params.evaluator();
    let mut buf = vec![0.0; params.g()];
    let mut labelled = 0.0;
    let mut unlabelled = 0.0;
    let mut x = DVector::zeros(data.dim());
    for i in 0..data.n() {
        x.copy_from(&data.features().row(i).transpose());
        eval.log_weighted_densities(&x, &mut buf);
        match data.labels()[i] {
            Some(h) => labelled += buf[h],
            None => unlabelled += log_sum_exp(&buf),
        }
    }
    Ok((labelled, unlabelled))
}

/// Per-row Shannon entropies of the posterior responsibilities under
/// `params`, partitioned into (labelled, unlabelled) in row order.
pub fn entropy_partition(
    params: &MixtureParams,
    data: &SemiDataset,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.n() > 0 && data.dim() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data dimension {} but params dimension {}",
            data.dim(),
            params.dim()
        )));
    }
    let eval = params.evaluator();
    let mut labelled = Vec::with_capacity(data.n_labelled());
    let mut unlabelled = Vec::with_capacity(data.n_unlabelled());
    let mut x = DVector::zeros(data.dim());
    for i in 0..data.n() {
        x.copy_from(&data.features().row(i).transpose());
        let tau = eval.responsibilities_vec(&x);
        let e = shannon_entropy_raw(tau.as_slice());
        if data.labels()[i].is_some() {
            labelled.push(e);
        } else {
            unlabelled.push(e);
        }
    }
    Ok((labelled, unlabelled))
}
