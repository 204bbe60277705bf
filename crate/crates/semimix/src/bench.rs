//! The simulation benchmark: mixture data generation, label-missingness
//! mechanisms, evaluation metrics, and the replication harness comparing
//! the estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SemiDataset;
use crate::em::{derive_seed, em_fit_ignorance, stream_rng, EmOptions, Init};
use crate::error::{Error, Result};
use crate::fsc::{fit_fsc, FscWeight};
use crate::joint::{fit_full, JointInit, JointOptions};
use crate::mixture::{shannon_entropy_raw, MixtureParams};
use crate::selection::{expit, SelectionSpec};

/// How training labels go missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// Every label retained independently with the same probability.
    Mcar { keep_prob: f64 },
    /// Label retained with probability `expit(beta0 + beta1 * e_i)` where
    /// `e_i` is the posterior entropy of row `i` under the *true*
    /// parameters (the generative mechanism knows them).
    EntropyLogistic { beta0: f64, beta1: f64 },
}

/// Settings for one benchmark study.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub true_params: MixtureParams,
    pub mechanism: Mechanism,
    pub n_train: usize,
    pub n_test: usize,
    pub replications: usize,
    pub alpha_grid: Vec<FscWeight>,
    pub seed: u64,
}

/// The default supervision-weight grid `{0.05, 0.10, ..., 0.95}`.
pub fn default_alpha_grid() -> Vec<FscWeight> {
    (1..=19)
        .map(|k| FscWeight::new(k as f64 * 0.05).expect("grid values lie in (0, 1)"))
        .collect()
}

impl BenchConfig {
    /// Validates the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        if self.n_train < self.true_params.g() {
            return Err(Error::InvalidConfig(format!(
                "n_train = {} is below the component count g = {}",
                self.n_train,
                self.true_params.g()
            )));
        }
        if self.n_test == 0 {
            return Err(Error::InvalidConfig("n_test must be >= 1".into()));
        }
        match &self.mechanism {
            Mechanism::Mcar { keep_prob } => {
                if !keep_prob.is_finite() || !(0.0..=1.0).contains(keep_prob) {
                    return Err(Error::InvalidConfig(format!(
                        "MCAR keep probability must lie in [0, 1], got {keep_prob}"
                    )));
                }
            }
            Mechanism::EntropyLogistic { beta0, beta1 } => {
                if !beta0.is_finite() || !beta1.is_finite() {
                    return Err(Error::InvalidConfig(
                        "selection coefficients must be finite".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. observations from the mixture: class from the
/// multinomial weights, feature from that class's Gaussian via the
/// Cholesky factor of its covariance. Returns the features by row and the
/// class of every row.
pub fn generate_mixture_sample<R: Rng>(
    params: &MixtureParams,
    n: usize,
    rng: &mut R,
) -> (DMatrix<f64>, Vec<usize>) {
    let g = params.g();
    let p = params.dim();
    let chols: Vec<DMatrix<f64>> = (0..g)
        .map(|h| {
            nalgebra::Cholesky::new(params.component(h).cov().clone())
                .expect("covariance validated SPD at construction")
                .unpack()
        })
        .collect();
    let mut features = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        let u: f64 = rng.random();
        let mut h = g - 1;
        let mut acc = 0.0;
        for (k, w) in params.weights().iter().enumerate() {
            acc += w;
            if u < acc {
                h = k;
                break;
            }
        }
        for j in 0..p {
            z[j] = rand_distr::StandardNormal.sample(rng);
        }
        let x = params.component(h).mean() + &chols[h] * &z;
        for j in 0..p {
            features[(i, j)] = x[j];
        }
        labels.push(h);
    }
    (features, labels)
}

/// Hides each label independently with retention probability
/// `expit(beta0 + beta1 * e_i)`, `e_i` the posterior entropy of row `i`
/// under `true_params`.
pub fn apply_entropy_missingness<R: Rng>(
    features: DMatrix<f64>,
    labels: &[usize],
    true_params: &MixtureParams,
    beta0: f64,
    beta1: f64,
    rng: &mut R,
) -> Result<SemiDataset> {
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if features.nrows() > 0 && features.ncols() != true_params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dimension {} but params dimension {}",
            features.ncols(),
            true_params.dim()
        )));
    }
    let eval = true_params.evaluator();
    let mut x = DVector::zeros(features.ncols());
    let mut kept = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        x.copy_from(&features.row(i).transpose());
        let tau = eval.responsibilities_vec(&x);
        let e = shannon_entropy_raw(tau.as_slice());
        let keep_prob = expit(beta0 + beta1 * e);
        let u: f64 = rng.random();
        kept.push(if u < keep_prob { Some(label) } else { None });
    }
    SemiDataset::new(features, kept)
}

/// Hides each label independently with the same retention probability.
pub fn apply_mcar<R: Rng>(
    features: DMatrix<f64>,
    labels: &[usize],
    keep_prob: f64,
    rng: &mut R,
) -> Result<SemiDataset> {
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if !keep_prob.is_finite() || !(0.0..=1.0).contains(&keep_prob) {
        return Err(Error::InvalidArgument(format!(
            "keep probability must lie in [0, 1], got {keep_prob}"
        )));
    }
    let kept = labels
        .iter()
        .map(|&label| {
            let u: f64 = rng.random();
            if u < keep_prob {
                Some(label)
            } else {
                None
            }
        })
        .collect();
    SemiDataset::new(features, kept)
}

/// The maximum-posterior class of `x` under `params`, ties broken toward
/// the smallest index.
pub fn predict_class(params: &MixtureParams, x: &DVector<f64>) -> Result<usize> {
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has dimension {}, params have {}",
            x.len(),
            params.dim()
        )));
    }
    let tau = params.evaluator().responsibilities_vec(x);
    Ok(argmax(tau.as_slice()))
}

/// First index of the largest entry.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `C(n, 2)` in wide integer arithmetic.
fn pairs(n: u64) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

/// The adjusted Rand index between two labelings of the same rows, by
/// exact integer pair counting over the contingency table. Invariant to
/// renaming classes in either argument; the degenerate all-pairs-agree
/// case (both partitions trivial) is defined as 1.
pub fn adjusted_rand_index(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::InvalidArgument(
            "the adjusted Rand index requires at least two observations".into(),
        ));
    }
    let k_t = truth.iter().max().unwrap() + 1;
    let k_p = predicted.iter().max().unwrap() + 1;
    let mut table = vec![0u64; k_t * k_p];
    let mut row = vec![0u64; k_t];
    let mut col = vec![0u64; k_p];
    for (&t, &p) in truth.iter().zip(predicted) {
        table[t * k_p + p] += 1;
        row[t] += 1;
        col[p] += 1;
    }
    // All sums are exact integers; floats enter only in the final ratio,
    // so accumulation order cannot perturb the result.
    let s_ij: u128 = table.iter().map(|&c| pairs(c)).sum();
    let s_a: u128 = row.iter().map(|&c| pairs(c)).sum();
    let s_b: u128 = col.iter().map(|&c| pairs(c)).sum();
    let c2n = pairs(truth.len() as u64);
    // ARI = (s_ij - s_a s_b / c2n) / ((s_a + s_b)/2 - s_a s_b / c2n),
    // cleared of denominators.
    let numerator = 2 * (s_ij as i128 * c2n as i128 - s_a as i128 * s_b as i128);
    let denominator = c2n as i128 * (s_a + s_b) as i128 - 2 * s_a as i128 * s_b as i128;
    if denominator == 0 {
        // Both partitions are trivial (all together or all apart) and so
        // is their agreement.
        return Ok(1.0);
    }
    Ok(numerator as f64 / denominator as f64)
}

/// The component permutation aligning `fitted` to `truth`: entry `h` is
/// the fitted component matched to true component `h`, chosen to minimize
/// the total Euclidean distance between matched means (exhaustive
/// assignment; component counts here are small).
pub fn align_components(fitted: &MixtureParams, truth: &MixtureParams) -> Result<Vec<usize>> {
    if fitted.g() != truth.g() || fitted.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cannot align g = {} (dim {}) against g = {} (dim {})",
            fitted.g(),
            fitted.dim(),
            truth.g(),
            truth.dim()
        )));
    }
    let g = truth.g();
    if g > 9 {
        return Err(Error::InvalidArgument(
            "component alignment is exhaustive and supports g <= 9".into(),
        ));
    }
    let mut perm: Vec<usize> = (0..g).collect();
    let mut best_perm = perm.clone();
    let mut best_cost = f64::INFINITY;
    // Lexicographic enumeration keeps the minimizer deterministic under
    // cost ties.
    loop {
        let cost: f64 = (0..g)
            .map(|h| (fitted.component(perm[h]).mean() - truth.component(h).mean()).norm())
            .sum();
        if cost < best_cost {
            best_cost = cost;
            best_perm = perm.clone();
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best_perm)
}

/// Advances `perm` to its lexicographic successor; `false` once wrapped.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Floor applied to responsibilities before their logarithm in the log
/// loss.
const LOG_LOSS_FLOOR: f64 = 1e-300;

/// The log loss of `params` on a labelled test set:
/// `-sum_b log tau_hat[b, alignment[z_b]]` with the responsibilities
/// floored at 1e-300. `alignment[h]` names the fitted component that plays
/// the role of true class `h`.
pub fn log_loss(
    params: &MixtureParams,
    test_features: &DMatrix<f64>,
    test_labels: &[usize],
    alignment: &[usize],
) -> Result<f64> {
    let g = params.g();
    if test_features.nrows() != test_labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            test_features.nrows(),
            test_labels.len()
        )));
    }
    if test_features.nrows() > 0 && test_features.ncols() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dimension {} but params dimension {}",
            test_features.ncols(),
            params.dim()
        )));
    }
    if alignment.len() != g {
        return Err(Error::DimensionMismatch(format!(
            "alignment length {} but g = {g}",
            alignment.len()
        )));
    }
    let mut seen = vec![false; g];
    for &a in alignment {
        if a >= g || seen[a] {
            return Err(Error::InvalidArgument(
                "alignment is not a bijection on the components".into(),
            ));
        }
        seen[a] = true;
    }
    let eval = params.evaluator();
    let mut x = DVector::zeros(test_features.ncols());
    let mut loss = 0.0;
    for (i, &z) in test_labels.iter().enumerate() {
        if z >= g {
            return Err(Error::LabelOutOfRange { row: i, label: z, g });
        }
        x.copy_from(&test_features.row(i).transpose());
        let tau = eval.responsibilities_vec(&x);
        loss -= tau[alignment[z]].max(LOG_LOSS_FLOOR).ln();
    }
    Ok(loss)
}

/// Which estimator a benchmark record belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorId {
    /// The true generative parameters, evaluated without fitting.
    Truth,
    /// EM on the ignorance likelihood.
    Ignorance,
    /// Joint full-likelihood fit with the entropy selection model.
    Full,
    /// Fractionally supervised fit at this weight.
    Fsc { alpha: f64 },
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorId::Truth => write!(f, "truth"),
            EstimatorId::Ignorance => write!(f, "ignorance"),
            EstimatorId::Full => write!(f, "full"),
            EstimatorId::Fsc { alpha } => write!(f, "fsc[{alpha}]"),
        }
    }
}

/// One estimator's outcome on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EstimateOutcome {
    Fitted {
        ari: f64,
        log_loss: f64,
        /// Fitted selection coefficients, for estimators that have them.
        #[serde(skip_serializing_if = "Option::is_none")]
        coefficients: Option<Vec<f64>>,
    },
    Failed { message: String },
}

/// One estimator evaluated on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub estimator: EstimatorId,
    #[serde(flatten)]
    pub outcome: EstimateOutcome,
}

/// Everything recorded about one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    /// The derived RNG seed that reproduces this replication on its own.
    pub seed: u64,
    /// Labelled training rows after the missingness mechanism.
    pub labelled_count: usize,
    pub estimates: Vec<EstimateRecord>,
}

/// Aggregate performance of one estimator over the successful
/// replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorId,
    pub successes: usize,
    pub failures: usize,
    pub mean_ari: f64,
    pub se_ari: f64,
    pub mean_log_loss: f64,
    pub se_log_loss: f64,
}

/// The benchmark output: per-replication records plus per-estimator
/// aggregates (failed fits excluded from means, counted separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub replications: Vec<ReplicationRecord>,
    pub summaries: Vec<EstimatorSummary>,
}

/// Runs the benchmark in parallel. See [`run_benchmark_with`].
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchResult> {
    run_benchmark_with(config, true)
}

/// Runs the replication study: for each replication, generate a training
/// and a test sample, apply the missingness mechanism, fit every
/// estimator, and score ARI and log loss on the test set (components
/// aligned to truth for the log loss). Results are bit-identical for a
/// given `config.seed` whether run serially or in parallel: each
/// replication consumes its own counter-derived RNG stream, and records
/// are aggregated in replication order.
pub fn run_benchmark_with(config: &BenchConfig, parallel: bool) -> Result<BenchResult> {
    config.validate()?;
    let indices: Vec<usize> = (0..config.replications).collect();
    let replications: Vec<ReplicationRecord> = if parallel {
        indices.par_iter().map(|&r| run_replication(config, r)).collect()
    } else {
        indices.iter().map(|&r| run_replication(config, r)).collect()
    };
    let summaries = summarize(config, &replications);
    Ok(BenchResult { replications, summaries })
}

/// The estimators a config exercises, in fixed order.
fn estimator_ids(config: &BenchConfig) -> Vec<EstimatorId> {
    let mut ids = vec![EstimatorId::Truth, EstimatorId::Ignorance, EstimatorId::Full];
    ids.extend(
        config
            .alpha_grid
            .iter()
            .map(|a| EstimatorId::Fsc { alpha: a.value() }),
    );
    ids
}

fn run_replication(config: &BenchConfig, r: usize) -> ReplicationRecord {
    let seed = derive_seed(config.seed, r as u64);
    let mut rng = stream_rng(config.seed, r as u64);
    let truth = &config.true_params;
    let g = truth.g();

    let (train_x, train_z) = generate_mixture_sample(truth, config.n_train, &mut rng);
    let (test_x, test_z) = generate_mixture_sample(truth, config.n_test, &mut rng);
    let train = match &config.mechanism {
        Mechanism::Mcar { keep_prob } => {
            apply_mcar(train_x, &train_z, *keep_prob, &mut rng)
        }
        Mechanism::EntropyLogistic { beta0, beta1 } => {
            apply_entropy_missingness(train_x, &train_z, truth, *beta0, *beta1, &mut rng)
        }
    }
    .expect("generated sample is valid by construction");
    let labelled_count = train.n_labelled();

    let score = |params: &MixtureParams,
                 coefficients: Option<Vec<f64>>|
     -> Result<EstimateOutcome> {
        let eval = params.evaluator();
        let mut x = DVector::zeros(test_x.ncols());
        let mut predicted = Vec::with_capacity(test_z.len());
        for i in 0..test_x.nrows() {
            x.copy_from(&test_x.row(i).transpose());
            predicted.push(argmax(eval.responsibilities_vec(&x).as_slice()));
        }
        let ari = adjusted_rand_index(&test_z, &predicted)?;
        let alignment = align_components(params, truth)?;
        let loss = log_loss(params, &test_x, &test_z, &alignment)?;
        Ok(EstimateOutcome::Fitted { ari, log_loss: loss, coefficients })
    };
    let outcome_of = |fit: Result<EstimateOutcome>| -> EstimateOutcome {
        fit.unwrap_or_else(|err| EstimateOutcome::Failed { message: err.to_string() })
    };

    let mut estimates = Vec::new();
    estimates.push(EstimateRecord {
        estimator: EstimatorId::Truth,
        outcome: outcome_of(score(truth, None)),
    });
    estimates.push(EstimateRecord {
        estimator: EstimatorId::Ignorance,
        outcome: outcome_of(
            em_fit_ignorance(&train, g, &Init::Seeded(seed), &EmOptions::default())
                .and_then(|report| score(&report.params, None)),
        ),
    });
    estimates.push(EstimateRecord {
        estimator: EstimatorId::Full,
        outcome: outcome_of(
            fit_full(
                &train,
                g,
                &SelectionSpec::identity(),
                &JointInit::Seeded(seed),
                &JointOptions::default(),
            )
            .and_then(|report| {
                let coefficients =
                    report.coeffs.as_ref().map(|c| c.values().as_slice().to_vec());
                score(&report.params, coefficients)
            }),
        ),
    });
    for alpha in &config.alpha_grid {
        estimates.push(EstimateRecord {
            estimator: EstimatorId::Fsc { alpha: alpha.value() },
            outcome: outcome_of(
                fit_fsc(&train, g, *alpha, &Init::Seeded(seed), &EmOptions::default())
                    .and_then(|report| score(&report.params, None)),
            ),
        });
    }

    ReplicationRecord { replication: r, seed, labelled_count, estimates }
}

fn summarize(config: &BenchConfig, records: &[ReplicationRecord]) -> Vec<EstimatorSummary> {
    estimator_ids(config)
        .into_iter()
        .map(|id| {
            let mut aris = Vec::new();
            let mut losses = Vec::new();
            let mut failures = 0;
            for record in records {
                for est in &record.estimates {
                    if est.estimator != id {
                        continue;
                    }
                    match &est.outcome {
                        EstimateOutcome::Fitted { ari, log_loss, .. } => {
                            aris.push(*ari);
                            losses.push(*log_loss);
                        }
                        EstimateOutcome::Failed { .. } => failures += 1,
                    }
                }
            }
            let (mean_ari, se_ari) = mean_and_se(&aris);
            let (mean_log_loss, se_log_loss) = mean_and_se(&losses);
            EstimatorSummary {
                estimator: id,
                successes: aris.len(),
                failures,
                mean_ari,
                se_ari,
                mean_log_loss,
                se_log_loss,
            }
        })
        .collect()
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`);
/// zero standard error when fewer than two values.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::tests::bench_truth;
    use approx::assert_relative_eq;

    #[test]
    fn sample_of_zero_rows_is_empty() {
        let params = bench_truth();
        let mut rng = stream_rng(1, 0);
        let (x, z) = generate_mixture_sample(&params, 0, &mut rng);
        assert_eq!(x.nrows(), 0);
        assert!(z.is_empty());
    }

    #[test]
    fn single_component_sample_moments_converge() {
        let params = MixtureParams::new(
            vec![1.0],
            vec![(DVector::zeros(2), DMatrix::identity(2, 2))],
        )
        .unwrap();
        let mut rng = stream_rng(7, 0);
        let n = 100_000;
        let (x, _) = generate_mixture_sample(&params, n, &mut rng);
        for j in 0..2 {
            let mean = x.column(j).sum() / n as f64;
            assert!(mean.abs() < 0.05, "mean {mean}");
        }
        for a in 0..2 {
            for b in 0..2 {
                let ma = x.column(a).sum() / n as f64;
                let mb = x.column(b).sum() / n as f64;
                let cov = (0..n)
                    .map(|i| (x[(i, a)] - ma) * (x[(i, b)] - mb))
                    .sum::<f64>()
                    / n as f64;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((cov - want).abs() < 0.05, "cov[{a},{b}] = {cov}");
            }
        }
    }

    #[test]
    fn class_proportions_match_weights() {
        let params = bench_truth();
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let (_, z) = generate_mixture_sample(&params, n, &mut rng);
        let frac1 = z.iter().filter(|&&h| h == 0).count() as f64 / n as f64;
        assert!((frac1 - 0.5).abs() < 0.01, "class-1 fraction {frac1}");
    }

    #[test]
    fn mcar_boundary_probabilities() {
        let params = bench_truth();
        let mut rng = stream_rng(3, 0);
        let (x, z) = generate_mixture_sample(&params, 50, &mut rng);
        let all = apply_mcar(x.clone(), &z, 1.0, &mut rng).unwrap();
        assert_eq!(all.n_labelled(), 50);
        let none = apply_mcar(x, &z, 0.0, &mut rng).unwrap();
        assert_eq!(none.n_labelled(), 0);
    }

    #[test]
    fn mcar_fraction_concentrates() {
        let params = bench_truth();
        let mut rng = stream_rng(5, 0);
        let n = 100_000;
        let (x, z) = generate_mixture_sample(&params, n, &mut rng);
        let data = apply_mcar(x, &z, 0.7, &mut rng).unwrap();
        let frac = data.n_labelled() as f64 / n as f64;
        assert!((frac - 0.7).abs() < 0.01, "labelled fraction {frac}");
    }

    #[test]
    fn entropy_missingness_zero_slope_is_mcar_half() {
        let params = bench_truth();
        let mut rng = stream_rng(9, 0);
        let n = 100_000;
        let (x, z) = generate_mixture_sample(&params, n, &mut rng);
        let data = apply_entropy_missingness(x, &z, &params, 0.0, 0.0, &mut rng).unwrap();
        let frac = data.n_labelled() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "labelled fraction {frac}");
    }

    #[test]
    fn entropy_missingness_retention_matches_mean_probability() {
        // Empirical retention within 3 binomial standard errors of the
        // mean of expit(beta0 + beta1 e_i) over the sample.
        let params = bench_truth();
        let mut rng = stream_rng(13, 0);
        let n = 20_000;
        let (x, z) = generate_mixture_sample(&params, n, &mut rng);
        let eval = params.evaluator();
        let mut probs = Vec::with_capacity(n);
        let mut xi = DVector::zeros(2);
        for i in 0..n {
            xi.copy_from(&x.row(i).transpose());
            let e = shannon_entropy_raw(eval.responsibilities_vec(&xi).as_slice());
            probs.push(expit(1.0 - 5.0 * e));
        }
        let mean_p = probs.iter().sum::<f64>() / n as f64;
        let data = apply_entropy_missingness(x, &z, &params, 1.0, -5.0, &mut rng).unwrap();
        let frac = data.n_labelled() as f64 / n as f64;
        let se = (mean_p * (1.0 - mean_p) / n as f64).sqrt();
        assert!(
            (frac - mean_p).abs() < 3.0 * se,
            "retention {frac} vs mean probability {mean_p} (se {se})"
        );
    }

    #[test]
    fn predict_class_tie_breaks_to_first() {
        let params = MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                (DVector::zeros(1), DMatrix::identity(1, 1)),
                (DVector::zeros(1), DMatrix::identity(1, 1)),
            ],
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.3]);
        assert_eq!(predict_class(&params, &x).unwrap(), 0);
    }

    #[test]
    fn predict_class_single_component() {
        let params = MixtureParams::new(
            vec![1.0],
            vec![(DVector::zeros(1), DMatrix::identity(1, 1))],
        )
        .unwrap();
        assert_eq!(predict_class(&params, &DVector::from_vec(vec![5.0])).unwrap(), 0);
    }

    #[test]
    fn predict_class_separated_tail() {
        let params = MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                (DVector::from_vec(vec![-4.0]), DMatrix::identity(1, 1)),
                (DVector::from_vec(vec![4.0]), DMatrix::identity(1, 1)),
            ],
        )
        .unwrap();
        assert_eq!(predict_class(&params, &DVector::from_vec(vec![4.2])).unwrap(), 1);
    }

    #[test]
    fn ari_perfect_agreement_is_one() {
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap(),
            1.0
        );
        // Any renaming of the predicted classes preserves perfection.
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(),
            1.0
        );
    }

    #[test]
    fn ari_crossed_pairs_frozen_value() {
        // Contingency table all ones: s_ij = 0, s_a = s_b = 2, C(4,2) = 6;
        // ARI = (0 - 4/6) / (2 - 4/6) = -1/2 exactly.
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(),
            -0.5
        );
    }

    #[test]
    fn ari_degenerate_partitions() {
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[2, 1, 0]).unwrap(), 1.0);
        // One trivial, one not: zero agreement beyond chance.
        assert_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn ari_rejects_degenerate_input() {
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    /// Brute force over all observation pairs, straight from the
    /// definition via pair agreement counts.
    fn ari_brute_force(truth: &[usize], predicted: &[usize]) -> f64 {
        let n = truth.len();
        let mut a = 0i64; // same-same
        let mut b = 0i64; // diff-diff
        let mut c = 0i64; // same-diff
        let mut d = 0i64; // diff-same
        for i in 0..n {
            for j in (i + 1)..n {
                let same_t = truth[i] == truth[j];
                let same_p = predicted[i] == predicted[j];
                match (same_t, same_p) {
                    (true, true) => a += 1,
                    (false, false) => b += 1,
                    (true, false) => c += 1,
                    (false, true) => d += 1,
                }
            }
        }
        let total = a + b + c + d;
        let expected = ((a + c) as f64) * ((a + d) as f64) / total as f64;
        let max_index = 0.5 * ((a + c) + (a + d)) as f64;
        if max_index == expected {
            return 1.0;
        }
        (a as f64 - expected) / (max_index - expected)
    }

    #[test]
    fn ari_matches_brute_force_enumeration() {
        let mut rng = stream_rng(21, 0);
        for _ in 0..200 {
            let n = rng.random_range(2..=12);
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let predicted: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let fast = adjusted_rand_index(&truth, &predicted).unwrap();
            let slow = ari_brute_force(&truth, &predicted);
            assert_relative_eq!(fast, slow, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn ari_relabeling_invariance() {
        let mut rng = stream_rng(23, 0);
        for _ in 0..50 {
            let n = rng.random_range(4..=20);
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let predicted: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let base = adjusted_rand_index(&truth, &predicted).unwrap();
            // Relabel classes with the map h -> 3 - h on either side.
            let relabeled: Vec<usize> = predicted.iter().map(|&h| 3 - h).collect();
            assert_eq!(adjusted_rand_index(&truth, &relabeled).unwrap(), base);
            let relabeled_t: Vec<usize> = truth.iter().map(|&h| 3 - h).collect();
            assert_eq!(adjusted_rand_index(&relabeled_t, &predicted).unwrap(), base);
        }
    }

    #[test]
    fn alignment_recovers_a_known_swap() {
        let truth = bench_truth();
        let swapped = truth.permuted(&[1, 0]).unwrap();
        assert_eq!(align_components(&swapped, &truth).unwrap(), vec![1, 0]);
        assert_eq!(align_components(&truth, &truth).unwrap(), vec![0, 1]);
    }

    #[test]
    fn log_loss_perfect_prediction_is_zero() {
        // Far-separated components make the responsibilities numerically
        // one-hot at the true class.
        let params = MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                (DVector::from_vec(vec![-30.0]), DMatrix::identity(1, 1)),
                (DVector::from_vec(vec![30.0]), DMatrix::identity(1, 1)),
            ],
        )
        .unwrap();
        let x = DMatrix::from_row_slice(4, 1, &[-30.0, -29.0, 30.0, 31.0]);
        let z = vec![0, 0, 1, 1];
        let loss = log_loss(&params, &x, &z, &[0, 1]).unwrap();
        assert!(loss.abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn log_loss_uniform_predictor_is_n_log_g() {
        let params = MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                (DVector::zeros(1), DMatrix::identity(1, 1)),
                (DVector::zeros(1), DMatrix::identity(1, 1)),
            ],
        )
        .unwrap();
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, -1.0, 2.0, 0.5]);
        let z = vec![0, 1, 0, 1, 0];
        let loss = log_loss(&params, &x, &z, &[0, 1]).unwrap();
        assert_relative_eq!(loss, 5.0 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_loss_matches_naive_summation() {
        let params = bench_truth();
        let x = DMatrix::from_row_slice(
            5,
            2,
            &[0.3, 0.1, -0.5, 2.9, 1.2, 1.4, 0.0, 3.1, -0.8, 0.2],
        );
        let z = vec![0, 1, 1, 1, 0];
        let alignment = [1usize, 0];
        let eval = params.evaluator();
        let mut want = 0.0;
        let mut xi = DVector::zeros(2);
        for i in 0..5 {
            xi.copy_from(&x.row(i).transpose());
            let tau = eval.responsibilities_vec(&xi);
            want -= tau[alignment[z[i]]].ln();
        }
        let got = log_loss(&params, &x, &z, &alignment).unwrap();
        assert_relative_eq!(got, want, epsilon = 1e-10);
    }

    #[test]
    fn log_loss_rejects_non_bijective_alignment() {
        let params = bench_truth();
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        assert!(log_loss(&params, &x, &[0, 1], &[0, 0]).is_err());
        assert!(log_loss(&params, &x, &[0, 1], &[0]).is_err());
    }

    fn tiny_config(replications: usize, parallel_seed: u64) -> BenchConfig {
        BenchConfig {
            true_params: bench_truth(),
            mechanism: Mechanism::EntropyLogistic { beta0: 1.0, beta1: -5.0 },
            n_train: 60,
            n_test: 80,
            replications,
            alpha_grid: vec![FscWeight::new(0.5).unwrap()],
            seed: parallel_seed,
        }
    }

    #[test]
    fn benchmark_is_deterministic_across_parallelism() {
        let config = tiny_config(4, 101);
        let parallel = run_benchmark_with(&config, true).unwrap();
        let serial = run_benchmark_with(&config, false).unwrap();
        assert_eq!(parallel, serial);
        let again = run_benchmark_with(&config, true).unwrap();
        assert_eq!(parallel, again);
    }

    #[test]
    fn benchmark_mcar_keep_all_makes_fsc_half_match_ignorance() {
        let config = BenchConfig {
            true_params: bench_truth(),
            mechanism: Mechanism::Mcar { keep_prob: 1.0 },
            n_train: 80,
            n_test: 100,
            replications: 1,
            alpha_grid: vec![FscWeight::new(0.5).unwrap()],
            seed: 55,
        };
        let result = run_benchmark(&config).unwrap();
        let record = &result.replications[0];
        assert_eq!(record.labelled_count, 80);
        let metric = |id: &EstimatorId| -> (f64, f64) {
            match &record
                .estimates
                .iter()
                .find(|e| e.estimator == *id)
                .unwrap()
                .outcome
            {
                EstimateOutcome::Fitted { ari, log_loss, .. } => (*ari, *log_loss),
                EstimateOutcome::Failed { message } => panic!("fit failed: {message}"),
            }
        };
        let (ari_ign, loss_ign) = metric(&EstimatorId::Ignorance);
        let (ari_fsc, loss_fsc) = metric(&EstimatorId::Fsc { alpha: 0.5 });
        assert_relative_eq!(ari_ign, ari_fsc, epsilon = 1e-6, max_relative = 1e-6);
        assert_relative_eq!(loss_ign, loss_fsc, epsilon = 1e-4, max_relative = 1e-6);
    }

    #[test]
    fn benchmark_records_every_estimator_and_seed() {
        let config = tiny_config(2, 77);
        let result = run_benchmark(&config).unwrap();
        assert_eq!(result.replications.len(), 2);
        for (r, record) in result.replications.iter().enumerate() {
            assert_eq!(record.replication, r);
            assert_eq!(record.seed, derive_seed(77, r as u64));
            assert_eq!(record.estimates.len(), 4); // truth, ignorance, full, fsc
        }
        assert_eq!(result.summaries.len(), 4);
        for summary in &result.summaries {
            assert_eq!(summary.successes + summary.failures, 2);
            if summary.successes > 0 {
                assert!(summary.mean_ari >= -1.0 && summary.mean_ari <= 1.0);
                assert!(summary.mean_log_loss >= 0.0);
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let mut config = tiny_config(1, 1);
        config.replications = 0;
        assert!(config.validate().is_err());
        let mut config = tiny_config(1, 1);
        config.n_train = 1;
        assert!(config.validate().is_err());
        let mut config = tiny_config(1, 1);
        config.mechanism = Mechanism::Mcar { keep_prob: 1.5 };
        assert!(config.validate().is_err());
    }
}
