//! EM maximization of the ignorance likelihood, and the shared
//! initialization policy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::SemiDataset;
use crate::error::{Error, Result};
use crate::mixture::{log_ignorance_likelihood, MixtureParams};
use crate::report::{FitNote, FitReport};

/// Stopping controls for the EM fitters.
#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Absolute tolerance on the change in the objective between sweeps.
    pub tol: f64,
    /// Maximum number of EM sweeps.
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000 }
    }
}

/// Initialization for EM-style fitters: explicit parameters, or a seed for
/// the default policy.
#[derive(Debug, Clone)]
pub enum Init {
    /// Start from these parameters.
    Params(MixtureParams),
    /// Derive a start from the data via [`default_init`] with this seed.
    Seeded(u64),
}

/// Scale factor for the covariance regularization floor: on a Cholesky
/// failure during an M-step, `lambda = COV_FLOOR_SCALE * mean feature
/// variance` is added to the diagonal.
pub const COV_FLOOR_SCALE: f64 = 1e-8;

/// The default initialization policy.
///
/// If every one of the `g` classes has at least `p + 1` labelled rows, use
/// per-class moments of the labelled data (weights from labelled counts,
/// class means, biased class covariances). Otherwise fall back to
/// k-means++-style seeding on all features: 10 seeded restarts, each scored
/// by the ignorance log-likelihood, keeping the best.
pub fn default_init(data: &SemiDataset, g: usize, seed: u64) -> Result<MixtureParams> {
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
    let p = data.dim();
    let mut class_counts = vec![0usize; g];
    for label in data.labels().iter().flatten() {
        class_counts[*label] += 1;
    }
    if class_counts.iter().all(|&c| c >= p + 1) {
        return moment_init(data, g);
    }
    kmeanspp_init(data, g, seed)
}

/// Per-class moment initialization from the labelled rows only.
fn moment_init(data: &SemiDataset, g: usize) -> Result<MixtureParams> {
    let p = data.dim();
    let floor = COV_FLOOR_SCALE * data.mean_feature_variance();
    let mut counts = vec![0.0f64; g];
    let mut means = vec![DVector::<f64>::zeros(p); g];
    for i in 0..data.n() {
        if let Some(h) = data.labels()[i] {
            counts[h] += 1.0;
            means[h] += data.row_point(i);
        }
    }
    for h in 0..g {
        means[h] /= counts[h];
    }
    let mut covs = vec![DMatrix::<f64>::zeros(p, p); g];
    for i in 0..data.n() {
        if let Some(h) = data.labels()[i] {
            let d = data.row_point(i) - &means[h];
            covs[h] += &d * d.transpose();
        }
    }
    let total: f64 = counts.iter().sum();
    let mut weights = Vec::with_capacity(g);
    let mut comps = Vec::with_capacity(g);
    for h in 0..g {
        covs[h] /= counts[h];
        ensure_spd(&mut covs[h], floor);
        weights.push(counts[h] / total);
        comps.push((means[h].clone(), covs[h].clone()));
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    MixtureParams::new(weights, comps)
}

/// k-means++-style seeding: centers drawn with squared-distance weighting,
/// uniform weights, pooled covariance; best of `restarts` by the ignorance
/// log-likelihood.
fn kmeanspp_init(data: &SemiDataset, g: usize, seed: u64) -> Result<MixtureParams> {
    const RESTARTS: usize = 10;
    let p = data.dim();
    let n = data.n();
    let points = data.points();
    let floor = COV_FLOOR_SCALE * data.mean_feature_variance();

    // Pooled (biased) covariance of all features, floored to SPD.
    let grand_mean = points.iter().fold(DVector::zeros(p), |acc, x| acc + x) / n as f64;
    let mut pooled = DMatrix::<f64>::zeros(p, p);
    for x in &points {
        let d = x - &grand_mean;
        pooled += &d * d.transpose();
    }
    pooled /= n as f64;
    ensure_spd(&mut pooled, floor.max(1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, MixtureParams)> = None;
    for _ in 0..RESTARTS {
        let mut centers: Vec<DVector<f64>> = Vec::with_capacity(g);
        centers.push(points[rng.random_range(0..n)].clone());
        while centers.len() < g {
            let d2: Vec<f64> = points
                .iter()
                .map(|x| {
                    centers
                        .iter()
                        .map(|c| (x - c).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = d2.iter().sum();
            let idx = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, w) in d2.iter().enumerate() {
                    u -= w;
                    if u <= 0.0 {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            centers.push(points[idx].clone());
        }
        let weights = vec![1.0 / g as f64; g];
        let comps: Vec<_> = centers
            .into_iter()
            .map(|c| (c, pooled.clone()))
            .collect();
        let candidate = MixtureParams::new(weights, comps)?;
        let score = log_ignorance_likelihood(&candidate, data)?;
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, candidate));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Adds `floor` (then growing multiples) to the diagonal until the matrix
/// factorizes. Returns the total amount added.
fn ensure_spd(cov: &mut DMatrix<f64>, floor: f64) -> f64 {
    if nalgebra::Cholesky::new(cov.clone()).is_some() {
        return 0.0;
    }
    let mut added = 0.0;
    let mut lambda = if floor > 0.0 { floor } else { 1e-12 };
    for _ in 0..60 {
        for j in 0..cov.nrows() {
            cov[(j, j)] += lambda;
        }
        added += lambda;
        if nalgebra::Cholesky::new(cov.clone()).is_some() {
            return added;
        }
        lambda *= 10.0;
    }
    added
}

/// Maximizes the ignorance log-likelihood by EM.
///
/// Labelled rows keep one-hot responsibilities fixed at their observed
/// label; unlabelled rows get posterior responsibilities at the current
/// parameters. The recorded objective trace is non-decreasing; iteration
/// stops when successive log-likelihoods differ by less than `opts.tol` or
/// the sweep budget is exhausted. Covariance collapse is regularized by a
/// diagonal floor and flagged in the report notes.
pub fn em_fit_ignorance(
    data: &SemiDataset,
    g: usize,
    init: &Init,
    opts: &EmOptions,
) -> Result<FitReport> {
    weighted_em(data, g, init, opts, 1.0, 1.0, EmObjective::Ignorance)
}

/// Which objective a weighted EM run reports in its trace.
#[derive(Clone, Copy)]
pub(crate) enum EmObjective {
    Ignorance,
    Fsc { alpha: f64 },
}

/// Shared weighted-EM engine: labelled rows carry weight `w_labelled`,
/// unlabelled rows `w_unlabelled`, in every sufficient statistic. With unit
/// weights this is exactly EM for the ignorance likelihood.
pub(crate) fn weighted_em(
    data: &SemiDataset,
    g: usize,
    init: &Init,
    opts: &EmOptions,
    w_labelled: f64,
    w_unlabelled: f64,
    objective: EmObjective,
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

    let mut params = match init {
        Init::Params(p) => {
            if p.g() != g {
                return Err(Error::DimensionMismatch(format!(
                    "init has g = {}, requested g = {g}",
                    p.g()
                )));
            }
            if p.dim() != data.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "init dimension {} but data dimension {}",
                    p.dim(),
                    data.dim()
                )));
            }
            p.clone()
        }
        Init::Seeded(seed) => default_init(data, g, *seed)?,
    };

    let n = data.n();
    let p = data.dim();
    let points = data.points();
    let floor = COV_FLOOR_SCALE * data.mean_feature_variance();
    let eval_objective = |params: &MixtureParams| -> Result<f64> {
        match objective {
            EmObjective::Ignorance => log_ignorance_likelihood(params, data),
            EmObjective::Fsc { alpha } => crate::fsc::log_fsc_objective_unchecked(params, alpha, data),
        }
    };

    let mut notes: Vec<FitNote> = Vec::new();
    let mut objective_value = eval_objective(&params)?;
    let mut trace = vec![objective_value];
    let mut converged = false;
    let mut iterations = 0;
    let mut tau = DMatrix::<f64>::zeros(n, g);

    for _ in 0..opts.max_iter {
        iterations += 1;
        // E-step.
        let eval = params.evaluator();
        let mut buf = vec![0.0; g];
        for i in 0..n {
            match data.labels()[i] {
                Some(h) => {
                    for r in 0..g {
                        tau[(i, r)] = 0.0;
                    }
                    tau[(i, h)] = 1.0;
                }
                None => {
                    eval.log_weighted_densities(&points[i], &mut buf);
                    let row = crate::mixture::normalized_exp(&buf);
                    for r in 0..g {
                        tau[(i, r)] = row[r];
                    }
                }
            }
        }
        // M-step with per-row weights.
        let row_weight = |i: usize| -> f64 {
            if data.labels()[i].is_some() {
                w_labelled
            } else {
                w_unlabelled
            }
        };
        let mut counts = vec![0.0f64; g];
        let mut means = vec![DVector::<f64>::zeros(p); g];
        for i in 0..n {
            let c = row_weight(i);
            if c == 0.0 {
                continue;
            }
            for h in 0..g {
                let w = c * tau[(i, h)];
                counts[h] += w;
                means[h].axpy(w, &points[i], 1.0);
            }
        }
        let total: f64 = counts.iter().sum();
        for h in 0..g {
            if counts[h] <= f64::MIN_POSITIVE * n as f64 {
                return Err(Error::ComponentStarved { component: h, count: counts[h] });
            }
            means[h] /= counts[h];
        }
        let mut comps = Vec::with_capacity(g);
        let mut weights = Vec::with_capacity(g);
        for h in 0..g {
            let mut cov = DMatrix::<f64>::zeros(p, p);
            for i in 0..n {
                let c = row_weight(i);
                if c == 0.0 {
                    continue;
                }
                let w = c * tau[(i, h)];
                if w == 0.0 {
                    continue;
                }
                let d = &points[i] - &means[h];
                cov.syger(w, &d, &d, 1.0);
            }
            cov /= counts[h];
            // Symmetrize the rank-one accumulation (syger fills the lower
            // triangle) and regularize on factorization failure.
            for i in 0..p {
                for j in (i + 1)..p {
                    cov[(i, j)] = cov[(j, i)];
                }
            }
            let added = ensure_spd(&mut cov, floor.max(1e-300));
            if added > 0.0 {
                let already = notes
                    .iter()
                    .any(|n| matches!(n, FitNote::CovarianceFloored { component, .. } if *component == h));
                if !already {
                    notes.push(FitNote::CovarianceFloored { component: h, lambda: added });
                }
            }
            weights.push(counts[h] / total);
            comps.push((means[h].clone(), cov));
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
        params = MixtureParams::new(weights, comps)?;

        let new_objective = eval_objective(&params)?;
        trace.push(new_objective);
        let delta = (new_objective - objective_value).abs();
        objective_value = new_objective;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        notes.push(FitNote::IterationBudgetExhausted);
    }

    Ok(FitReport {
        params,
        coeffs: None,
        objective: objective_value,
        trace,
        converged,
        iterations,
        notes,
    })
}

/// Derives a per-replication RNG seed from a base seed and a counter using
/// the SplitMix64 finalizer; used to give each benchmark replication (and
/// each seeded initialization) an independent deterministic stream.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seeded RNG for a derived stream.
pub fn stream_rng(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_cluster_data(n_per: usize, seed: u64, labelled: bool) -> SemiDataset {
        // Synthetic well-separated clusters at -3 and +3.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for h in 0..2 {
            let center = if h == 0 { -3.0 } else { 3.0 };
            for _ in 0..n_per {
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                rows.push(center + 0.8 * z);
                labels.push(if labelled { Some(h) } else { None });
            }
        }
        SemiDataset::new(DMatrix::from_vec(rows.len(), 1, rows), labels).unwrap()
    }

    use rand_distr::Distribution;

    #[test]
    fn fully_labelled_matches_supervised_closed_form() {
        let data = two_cluster_data(40, 7, true);
        let report = em_fit_ignorance(
            &data,
            2,
            &Init::Seeded(1),
            &EmOptions::default(),
        )
        .unwrap();
        report.check_invariants();
        assert!(report.converged);

        // Closed-form supervised MLE oracle: per-class weights, means,
        // biased covariances.
        let mut counts = [0.0f64; 2];
        let mut sums = [0.0f64; 2];
        for i in 0..data.n() {
            let h = data.labels()[i].unwrap();
            counts[h] += 1.0;
            sums[h] += data.features()[(i, 0)];
        }
        let means = [sums[0] / counts[0], sums[1] / counts[1]];
        let mut sq = [0.0f64; 2];
        for i in 0..data.n() {
            let h = data.labels()[i].unwrap();
            let d = data.features()[(i, 0)] - means[h];
            sq[h] += d * d;
        }
        for h in 0..2 {
            assert_relative_eq!(
                report.params.weights()[h],
                counts[h] / data.n() as f64,
                epsilon = 1e-8
            );
            assert_relative_eq!(report.params.component(h).mean()[0], means[h], epsilon = 1e-8);
            assert_relative_eq!(
                report.params.component(h).cov()[(0, 0)],
                sq[h] / counts[h],
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn single_component_gives_sample_moments() {
        let data = two_cluster_data(25, 3, false);
        let report =
            em_fit_ignorance(&data, 1, &Init::Seeded(5), &EmOptions::default()).unwrap();
        assert!(report.converged);
        let n = data.n() as f64;
        let mean = data.features().column(0).sum() / n;
        let var = data
            .features()
            .column(0)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        assert_relative_eq!(report.params.component(0).mean()[0], mean, epsilon = 1e-10);
        assert_relative_eq!(report.params.component(0).cov()[(0, 0)], var, epsilon = 1e-10);
        assert_eq!(report.params.weights()[0], 1.0);
    }

    #[test]
    fn trace_is_monotone_on_partially_labelled_data() {
        let mut data = two_cluster_data(30, 11, true);
        // Strip half the labels.
        let labels: Vec<_> = data
            .labels()
            .iter()
            .enumerate()
            .map(|(i, l)| if i % 2 == 0 { *l } else { None })
            .collect();
        data = SemiDataset::new(data.features().clone(), labels).unwrap();
        let report =
            em_fit_ignorance(&data, 2, &Init::Seeded(2), &EmOptions::default()).unwrap();
        report.check_invariants();
        for w in report.trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9,
                "trace must be non-decreasing: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn unlabelled_data_falls_back_to_kmeans_seeding() {
        let data = two_cluster_data(50, 13, false);
        let report =
            em_fit_ignorance(&data, 2, &Init::Seeded(4), &EmOptions::default()).unwrap();
        assert!(report.converged);
        // The two fitted means should straddle the true centers +-3 (in
        // either order).
        let mut means: Vec<f64> = (0..2)
            .map(|h| report.params.component(h).mean()[0])
            .collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] + 3.0).abs() < 0.5, "low mean {means:?}");
        assert!((means[1] - 3.0).abs() < 0.5, "high mean {means:?}");
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let data = two_cluster_data(20, 17, false);
        let a = default_init(&data, 2, 99).unwrap();
        let b = default_init(&data, 2, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_insufficient_rows() {
        let data = SemiDataset::new(DMatrix::from_row_slice(1, 1, &[0.0]), vec![None]).unwrap();
        assert!(em_fit_ignorance(&data, 2, &Init::Seeded(0), &EmOptions::default()).is_err());
    }

    #[test]
    fn derive_seed_distinguishes_indices() {
        let s = 42;
        assert_ne!(derive_seed(s, 0), derive_seed(s, 1));
        assert_ne!(derive_seed(s, 0), derive_seed(s + 1, 0));
        // Stable across calls.
        assert_eq!(derive_seed(s, 7), derive_seed(s, 7));
    }
}
