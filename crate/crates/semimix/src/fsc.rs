//! Fractionally supervised classification: the weighted pseudo-likelihood
//! objective over the labelled/unlabelled blocks and its weighted-EM
//! maximizer.

use crate::dataset::SemiDataset;
use crate::em::{weighted_em, EmObjective, EmOptions, Init};
use crate::error::{Error, Result};
use crate::mixture::{log_likelihood_blocks, MixtureParams};
use crate::report::FitReport;

/// The supervision weight `alpha` in `[0, 1]`: the labelled block enters
/// the objective with weight `alpha`, the unlabelled block with
/// `1 - alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FscWeight {
    alpha: f64,
}

impl FscWeight {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn value(&self) -> f64 {
        self.alpha
    }
}

/// The fractionally supervised objective
/// `alpha * A(params) + (1 - alpha) * B(params)`, where `A` and `B` are
/// the labelled and unlabelled block log-likelihoods.
///
/// At `alpha = 1/2` this is exactly half the ignorance log-likelihood
/// (halving is exact in floating point), so the two maximizers coincide.
pub fn log_fsc_objective(
    params: &MixtureParams,
    alpha: FscWeight,
    data: &SemiDataset,
) -> Result<f64> {
    log_fsc_objective_unchecked(params, alpha.alpha, data)
}

/// [`log_fsc_objective`] with a raw pre-validated weight; shared with the
/// weighted-EM trace evaluation.
pub(crate) fn log_fsc_objective_unchecked(
    params: &MixtureParams,
    alpha: f64,
    data: &SemiDataset,
) -> Result<f64> {
    let (labelled, unlabelled) = log_likelihood_blocks(params, data)?;
    // An empty block contributes exactly zero even at weight zero
    // (log_likelihood_blocks returns 0.0 for empty blocks, never -inf).
    Ok(alpha * labelled + (1.0 - alpha) * unlabelled)
}

/// Maximizes [`log_fsc_objective`] by weighted EM: labelled rows carry
/// weight `alpha` and unlabelled rows `1 - alpha` in every M-step
/// sufficient statistic, while the E-step is the usual one-hot /
/// posterior-responsibility split. The recorded trace is non-decreasing.
///
/// The boundary weights discard a block entirely, so they are accepted
/// only when the retained block can identify all parameters on its own:
/// `alpha = 1` requires at least `g` labelled rows and `alpha = 0` at
/// least `g` unlabelled rows.
pub fn fit_fsc(
    data: &SemiDataset,
    g: usize,
    alpha: FscWeight,
    init: &Init,
    opts: &EmOptions,
) -> Result<FitReport> {
    let a = alpha.alpha;
    if a == 1.0 && data.n_labelled() < g {
        return Err(Error::UnderDetermined(format!(
            "alpha = 1 retains only the {} labelled rows, fewer than g = {g}",
            data.n_labelled()
        )));
    }
    if a == 0.0 && data.n_unlabelled() < g {
        return Err(Error::UnderDetermined(format!(
            "alpha = 0 retains only the {} unlabelled rows, fewer than g = {g}",
            data.n_unlabelled()
        )));
    }
    weighted_em(data, g, init, opts, a, 1.0 - a, EmObjective::Fsc { alpha: a })
}
