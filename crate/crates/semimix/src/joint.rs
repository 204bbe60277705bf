//! Full-likelihood and profile-likelihood estimation of the mixture and
//! selection parameters jointly: unconstrained packing, objective assembly,
//! and quasi-Newton maximization.

use nalgebra::{DMatrix, DVector};

use crate::bfgs;
use crate::dataset::SemiDataset;
use crate::em::{em_fit_ignorance, EmOptions, Init};
use crate::error::{Error, Result};
use crate::mixture::{log_sum_exp, normalized_exp, shannon_entropy_raw, MixtureParams};
use crate::report::{FitNote, FitReport};
use crate::selection::{
    build_design, log_selection_likelihood, logistic_fit, SelectionCoeffs, SelectionSpec,
};

/// Shape of a packed parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackLayout {
    /// Component count.
    pub g: usize,
    /// Feature dimension.
    pub p: usize,
    /// `Some(T)` when `T + 1` selection coefficients are appended.
    pub selection_terms: Option<usize>,
}

impl PackLayout {
    /// Total number of free coordinates:
    /// `(g - 1) + g p + g p(p+1)/2 [+ T + 1]`.
    pub fn dim(&self) -> usize {
        let mix = (self.g - 1) + self.g * self.p + self.g * self.p * (self.p + 1) / 2;
        mix + self.selection_terms.map_or(0, |t| t + 1)
    }
}

/// Unconstrained coordinates for a mixture parameter set (and optionally
/// selection coefficients): multinomial-logit weights relative to the last
/// component, raw means, log-Cholesky covariance factors, then the
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedParams {
    theta: DVector<f64>,
    layout: PackLayout,
}

impl PackedParams {
    pub fn new(theta: DVector<f64>, layout: PackLayout) -> Result<Self> {
        if theta.len() != layout.dim() {
            return Err(Error::DimensionMismatch(format!(
                "packed vector has length {}, layout requires {}",
                theta.len(),
                layout.dim()
            )));
        }
        Ok(Self { theta, layout })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn layout(&self) -> PackLayout {
        self.layout
    }
}

/// Packs parameters (and optional selection coefficients) into
/// unconstrained coordinates: weights become logits relative to the last
/// component, covariances become lower Cholesky factors with
/// log-transformed diagonals.
pub fn pack(params: &MixtureParams, coeffs: Option<&SelectionCoeffs>) -> PackedParams {
    let g = params.g();
    let p = params.dim();
    let layout = PackLayout {
        g,
        p,
        selection_terms: coeffs.map(|c| c.len() - 1),
    };
    let mut theta = Vec::with_capacity(layout.dim());
    let base = params.weights()[g - 1];
    for h in 0..g - 1 {
        theta.push((params.weights()[h] / base).ln());
    }
    for h in 0..g {
        theta.extend(params.component(h).mean().iter());
    }
    for h in 0..g {
        let chol = nalgebra::Cholesky::new(params.component(h).cov().clone())
            .expect("covariance validated SPD at construction")
            .unpack();
        for j in 0..p {
            theta.push(chol[(j, j)].ln());
            for i in (j + 1)..p {
                theta.push(chol[(i, j)]);
            }
        }
    }
    if let Some(c) = coeffs {
        theta.extend(c.values().iter());
    }
    PackedParams {
        theta: DVector::from_vec(theta),
        layout,
    }
}

/// Inverts [`pack`]: rebuilds validated mixture parameters (weights via a
/// stable softmax, covariances via `L L^T`) and, when the layout carries
/// them, the selection coefficients.
pub fn unpack(packed: &PackedParams) -> Result<(MixtureParams, Option<SelectionCoeffs>)> {
    let PackLayout { g, p, selection_terms } = packed.layout;
    let theta = &packed.theta;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("packed parameter vector".into()));
    }
    let mut idx = 0;
    // Weights: softmax over (z_0, ..., z_{g-2}, 0).
    let mut logits = Vec::with_capacity(g);
    for _ in 0..g - 1 {
        logits.push(theta[idx]);
        idx += 1;
    }
    logits.push(0.0);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::NonFinite("weight softmax".into()));
    }
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let mut means = Vec::with_capacity(g);
    for _ in 0..g {
        let mean = DVector::from_iterator(p, theta.iter().skip(idx).take(p).cloned());
        idx += p;
        means.push(mean);
    }
    let mut comps = Vec::with_capacity(g);
    for mean in means {
        let mut l = DMatrix::<f64>::zeros(p, p);
        for j in 0..p {
            l[(j, j)] = theta[idx].exp();
            idx += 1;
            for i in (j + 1)..p {
                l[(i, j)] = theta[idx];
                idx += 1;
            }
        }
        let cov = &l * l.transpose();
        comps.push((mean, cov));
    }
    let params = MixtureParams::new(weights, comps)?;
    let coeffs = match selection_terms {
        Some(t) => {
            let beta = DVector::from_iterator(t + 1, theta.iter().skip(idx).take(t + 1).cloned());
            Some(SelectionCoeffs::new(beta)?)
        }
        None => None,
    };
    Ok((params, coeffs))
}

/// One-pass assembly of the full-likelihood ingredients at `params`:
/// the ignorance log-likelihood and the per-row entropies partitioned by
/// label presence.
fn likelihood_terms(
    params: &MixtureParams,
    data: &SemiDataset,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if data.n() == 0 {
        return Ok((0.0, Vec::new(), Vec::new()));
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
    let g = params.g();
    let mut buf = vec![0.0; g];
    let mut labelled_ll = 0.0;
    let mut unlabelled_ll = 0.0;
    let mut e_labelled = Vec::with_capacity(data.n_labelled());
    let mut e_unlabelled = Vec::with_capacity(data.n_unlabelled());
    let mut x = DVector::zeros(data.dim());
    for i in 0..data.n() {
        x.copy_from(&data.features().row(i).transpose());
        eval.log_weighted_densities(&x, &mut buf);
        let tau = normalized_exp(&buf);
        let e = shannon_entropy_raw(tau.as_slice());
        match data.labels()[i] {
            Some(h) => {
                labelled_ll += buf[h];
                e_labelled.push(e);
            }
            None => {
                unlabelled_ll += log_sum_exp(&buf);
                e_unlabelled.push(e);
            }
        }
    }
    Ok((labelled_ll + unlabelled_ll, e_labelled, e_unlabelled))
}

/// The full log-likelihood: the selection term at the entropies implied by
/// `params` plus the ignorance log-likelihood.
pub fn log_full_likelihood(
    params: &MixtureParams,
    coeffs: &SelectionCoeffs,
    spec: &SelectionSpec,
    data: &SemiDataset,
) -> Result<f64> {
    let (ignorance, e1, e2) = likelihood_terms(params, data)?;
    let selection = log_selection_likelihood(coeffs, spec, &e1, &e2)?;
    Ok(selection + ignorance)
}

/// Ridge used for the inner logistic fit of the profile likelihood; keeps
/// the fit well-posed when entropies degenerate (e.g. a constant column).
pub const PROFILE_RIDGE: f64 = 1e-8;

/// Result of a profile-likelihood evaluation: the profiled objective, the
/// inner-maximized coefficients, and any degeneracy flags.
#[derive(Debug, Clone)]
pub struct ProfileEval {
    pub objective: f64,
    pub coeffs: SelectionCoeffs,
    pub notes: Vec<FitNote>,
}

/// The profile log-likelihood: entropies are computed under `params`, the
/// implicit logistic regression is fitted (with the [`PROFILE_RIDGE`]
/// policy), and the full likelihood is evaluated at the fitted
/// coefficients.
pub fn log_profile_likelihood(
    params: &MixtureParams,
    spec: &SelectionSpec,
    data: &SemiDataset,
) -> Result<ProfileEval> {
    let (ignorance, e1, e2) = likelihood_terms(params, data)?;
    let mut notes = vec![FitNote::RidgeApplied { ridge: PROFILE_RIDGE }];
    if e2.is_empty() {
        notes.push(FitNote::NoUnlabelledRows);
    }
    if e1.is_empty() {
        notes.push(FitNote::NoLabelledRows);
    }
    let design = build_design(&e1, &e2, spec);
    let coeffs = logistic_fit(&design, PROFILE_RIDGE)?;
    let selection = log_selection_likelihood(&coeffs, spec, &e1, &e2)?;
    Ok(ProfileEval { objective: selection + ignorance, coeffs, notes })
}

/// The gradient of [`log_full_likelihood`] in packed coordinates, by
/// high-accuracy central differences with per-coordinate scaled steps.
/// This is exactly the gradient the full-likelihood optimizer uses.
pub fn full_likelihood_gradient(
    packed: &PackedParams,
    spec: &SelectionSpec,
    data: &SemiDataset,
) -> Result<DVector<f64>> {
    if packed.layout.selection_terms.is_none() {
        return Err(Error::InvalidArgument(
            "packed vector must carry selection coefficients".into(),
        ));
    }
    let objective = |theta: &DVector<f64>| -> Result<f64> {
        let candidate = PackedParams { theta: theta.clone(), layout: packed.layout };
        let (params, coeffs) = unpack(&candidate)?;
        log_full_likelihood(&params, &coeffs.expect("layout carries coefficients"), spec, data)
    };
    let dim = packed.theta.len();
    let mut grad = DVector::zeros(dim);
    let mut theta = packed.theta.clone();
    for j in 0..dim {
        let h = FD_STEP_SCALE * packed.theta[j].abs().max(1.0);
        let orig = theta[j];
        theta[j] = orig + h;
        let fp = objective(&theta)?;
        theta[j] = orig - h;
        let fm = objective(&theta)?;
        theta[j] = orig;
        grad[j] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative step for the central-difference gradient (close to the
/// cube root of machine epsilon).
const FD_STEP_SCALE: f64 = 6e-6;

/// Stopping controls for the joint quasi-Newton fit.
#[derive(Debug, Clone, Copy)]
pub struct JointOptions {
    /// Tolerance on both the gradient sup-norm and the relative objective
    /// change.
    pub tol: f64,
    /// Maximum quasi-Newton iterations.
    pub max_iter: usize,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500 }
    }
}

/// Initialization for [`fit_full`].
#[derive(Debug, Clone)]
pub enum JointInit {
    /// Run the ignorance EM (with the default policy seeded here) and one
    /// inner logistic fit, then start from that pair.
    Seeded(u64),
    /// Start from these parameters; when `coeffs` is `None` an inner
    /// logistic fit at `params` supplies them.
    Warm {
        params: MixtureParams,
        coeffs: Option<SelectionCoeffs>,
    },
}

/// Maximizes the full log-likelihood jointly over the mixture parameters
/// and the selection coefficients by BFGS in packed coordinates.
///
/// Initialized at the ignorance-EM solution with coefficients from one
/// inner logistic fit (unless supplied). Non-finite trial objectives are
/// rejected by the line search; the best visited iterate is returned, with
/// `converged` reporting whether the gradient/objective tolerances were
/// met.
pub fn fit_full(
    data: &SemiDataset,
    g: usize,
    spec: &SelectionSpec,
    init: &JointInit,
    opts: &JointOptions,
) -> Result<FitReport> {
    if g == 0 {
        return Err(Error::InvalidArgument("g must be >= 1".into()));
    }
    if data.n() < g {
        return Err(Error::InvalidArgument(format!(
            "n = {} rows cannot support g = {g} components",
            data.n()
        )));
    }
    data.validate_labels(g)?;

    let mut notes: Vec<FitNote> = Vec::new();
    if data.n_unlabelled() == 0 {
        notes.push(FitNote::NoUnlabelledRows);
    }
    if data.n_labelled() == 0 {
        notes.push(FitNote::NoLabelledRows);
    }

    let (init_params, init_coeffs) = match init {
        JointInit::Seeded(seed) => {
            let em = em_fit_ignorance(data, g, &Init::Seeded(*seed), &EmOptions::default())?;
            for note in em.notes {
                if matches!(note, FitNote::CovarianceFloored { .. }) {
                    notes.push(note);
                }
            }
            (em.params, None)
        }
        JointInit::Warm { params, coeffs } => {
            if params.g() != g {
                return Err(Error::DimensionMismatch(format!(
                    "init has g = {}, requested g = {g}",
                    params.g()
                )));
            }
            (params.clone(), coeffs.clone())
        }
    };
    let init_coeffs = match init_coeffs {
        Some(c) => {
            if c.len() != spec.n_terms() + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "init coefficients have length {}, spec requires {}",
                    c.len(),
                    spec.n_terms() + 1
                )));
            }
            c
        }
        None => {
            notes.push(FitNote::RidgeApplied { ridge: PROFILE_RIDGE });
            match log_profile_likelihood(&init_params, spec, data) {
                Ok(profile) => profile.coeffs,
                // A degenerate inner fit must not sink the joint fit; start
                // the coefficients at zero instead.
                Err(_) => SelectionCoeffs::new(DVector::zeros(spec.n_terms() + 1))?,
            }
        }
    };

    let packed0 = pack(&init_params, Some(&init_coeffs));
    let layout = packed0.layout();
    let negative_objective = |theta: &DVector<f64>| -> f64 {
        let candidate = match PackedParams::new(theta.clone(), layout) {
            Ok(c) => c,
            Err(_) => return f64::INFINITY,
        };
        match unpack(&candidate) {
            Ok((params, Some(coeffs))) => {
                match log_full_likelihood(&params, &coeffs, spec, data) {
                    Ok(v) if v.is_finite() => -v,
                    _ => f64::INFINITY,
                }
            }
            _ => f64::INFINITY,
        }
    };
    let gradient = |theta: &DVector<f64>| -> DVector<f64> {
        let candidate = PackedParams { theta: theta.clone(), layout };
        match full_likelihood_gradient(&candidate, spec, data) {
            Ok(grad) => -grad,
            Err(_) => DVector::from_element(theta.len(), f64::NAN),
        }
    };

    let outcome = bfgs::minimize(
        negative_objective,
        gradient,
        packed0.theta().clone(),
        &bfgs::BfgsOptions {
            tol_grad: opts.tol,
            tol_obj: opts.tol,
            max_iter: opts.max_iter,
        },
    );

    let best = PackedParams::new(outcome.x, layout)?;
    let (params, coeffs) = unpack(&best)?;
    if !outcome.converged {
        notes.push(FitNote::IterationBudgetExhausted);
    }
    let trace: Vec<f64> = outcome.trace.iter().map(|f| -f).collect();
    let objective = -outcome.f;
    Ok(FitReport {
        params,
        coeffs,
        objective,
        trace,
        converged: outcome.converged,
        iterations: outcome.iterations,
        notes,
    })
}
