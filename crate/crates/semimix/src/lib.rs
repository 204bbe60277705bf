//! Model-based classification from partially labelled data under
//! non-ignorable label missingness.
//!
//! The crate fits Gaussian mixture models to datasets where some rows carry
//! class labels and the rest do not, under three estimation strategies:
//!
//! * **Ignorance likelihood** ([`em_fit_ignorance`]): the classical
//!   semi-supervised likelihood that conditions on which rows happen to be
//!   labelled, maximized by EM.
//! * **Full likelihood** ([`fit_full`]): jointly models the labels *and*
//!   the labelling mechanism, a logistic model in the entropy of the
//!   posterior class membership — capturing settings where hard-to-classify
//!   rows are systematically less likely to be labelled.
//! * **Fractional supervision** ([`fit_fsc`]): reweights the labelled and
//!   unlabelled likelihood blocks by `alpha` and `1 - alpha`, maximized by
//!   weighted EM.
//!
//! Supporting modules provide missingness diagnostics (rank and
//! distribution tests of the entropy split, kernel estimates of the
//! labelling probability), a simulation benchmark comparing the estimators
//! under controlled missingness mechanisms, and CSV/JSON interchange.

mod bench;
mod bfgs;
mod dataset;
mod diagnostics;
mod em;
mod error;
mod fsc;
mod joint;
mod mixture;
mod report;
mod selection;

pub use bench::{
    adjusted_rand_index, align_components, apply_entropy_missingness, apply_mcar,
    default_alpha_grid, generate_mixture_sample, log_loss, predict_class,
    run_benchmark, run_benchmark_with, BenchConfig, BenchResult, EstimateOutcome,
    EstimateRecord, EstimatorId, EstimatorSummary, Mechanism, ReplicationRecord,
};
pub use dataset::SemiDataset;
pub use diagnostics::{
    entropy_split, kde, ks_one_sided, mann_whitney_u, nadaraya_watson,
    summarize_entropy, Bandwidth, EntropySplit, KdeEstimate, NwEstimate, TestMethod,
    TestResult, BANDWIDTH_FLOOR, NW_WEIGHT_FLOOR,
};
pub use em::{
    default_init, derive_seed, em_fit_ignorance, stream_rng, EmOptions, Init,
    COV_FLOOR_SCALE,
};
pub use error::{Error, Result};
pub use fsc::{fit_fsc, log_fsc_objective, FscWeight};
pub use joint::{
    fit_full, full_likelihood_gradient, log_full_likelihood, log_profile_likelihood,
    pack, unpack, JointInit, JointOptions, PackLayout, PackedParams, ProfileEval,
    PROFILE_RIDGE,
};
pub use mixture::{
    entropy_partition, log_component_density, log_ignorance_likelihood,
    log_likelihood_blocks, renyi_entropy, responsibilities, shannon_entropy,
    transformed_entropy, GaussianComponent, MixtureParams, Responsibilities,
    ENTROPY_CLAMP,
};
pub use report::{FitNote, FitReport};
pub use selection::{
    basis_expand, build_design, expit, linear_predictor, log_selection_likelihood,
    logistic_fit, BasisTerm, LogisticDesign, SelectionCoeffs, SelectionSpec,
};
