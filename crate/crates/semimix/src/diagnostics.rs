//! Diagnostics for informative label missingness: transformed-entropy
//! summaries, one-sided rank/distribution tests comparing labelled and
//! unlabelled rows, and kernel estimates of the entropy densities and the
//! labelling-probability curve.

use serde::{Deserialize, Serialize};

use crate::dataset::SemiDataset;
use crate::error::{Error, Result};
use crate::mixture::{entropy_partition, transformed_entropy, MixtureParams};

/// Transformed entropies of a dataset's rows under a fitted model, split
/// by whether the row is labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySplit {
    labelled_values: Vec<f64>,
    unlabelled_values: Vec<f64>,
}

impl EntropySplit {
    /// Wraps the two groups of transformed entropies, validating
    /// finiteness. Empty sides are representable; the tests reject them.
    pub fn new(labelled_values: Vec<f64>, unlabelled_values: Vec<f64>) -> Result<Self> {
        if labelled_values
            .iter()
            .chain(unlabelled_values.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("transformed entropy".into()));
        }
        Ok(Self { labelled_values, unlabelled_values })
    }

    /// Transformed entropies of the labelled rows (`V_L`).
    pub fn labelled_values(&self) -> &[f64] {
        &self.labelled_values
    }

    /// Transformed entropies of the unlabelled rows (`V_U`).
    pub fn unlabelled_values(&self) -> &[f64] {
        &self.unlabelled_values
    }

    fn require_both_sides(&self) -> Result<(usize, usize)> {
        if self.labelled_values.is_empty() || self.unlabelled_values.is_empty() {
            return Err(Error::EmptyInput(
                "both labelled and unlabelled entropies are required".into(),
            ));
        }
        Ok((self.labelled_values.len(), self.unlabelled_values.len()))
    }
}

/// Per-row posterior entropies under `params`, passed through the logit
/// transform and partitioned by the labelling indicator.
pub fn entropy_split(data: &SemiDataset, params: &MixtureParams) -> Result<EntropySplit> {
    if params.g() < 2 {
        return Err(Error::InvalidArgument(
            "the entropy transform requires g >= 2".into(),
        ));
    }
    let (raw_labelled, raw_unlabelled) = entropy_partition(params, data)?;
    let transform = |e: f64| transformed_entropy(e, params.g());
    let labelled = raw_labelled.into_iter().map(transform).collect::<Result<Vec<_>>>()?;
    let unlabelled =
        raw_unlabelled.into_iter().map(transform).collect::<Result<Vec<_>>>()?;
    EntropySplit::new(labelled, unlabelled)
}

/// Arithmetic means of the two sides: `(mean labelled, mean unlabelled)`.
pub fn summarize_entropy(split: &EntropySplit) -> Result<(f64, f64)> {
    split.require_both_sides()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&split.labelled_values), mean(&split.unlabelled_values)))
}

/// Which test produced a [`TestResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    KsOneSided,
    MannWhitneyU,
}

/// A test statistic with its one-sided p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
}

/// One-sided Kolmogorov–Smirnov test of whether the labelled entropies
/// are stochastically smaller: `D+ = sup_v [F_L(v) - F_U(v)]` over the
/// pooled sample points (right-continuous empirical CDFs), with the
/// asymptotic one-sided p-value `exp(-2 m D+^2)`,
/// `m = n_L n_U / (n_L + n_U)`.
pub fn ks_one_sided(split: &EntropySplit) -> Result<TestResult> {
    let (n_l, n_u) = split.require_both_sides()?;
    let mut labelled = split.labelled_values.clone();
    let mut unlabelled = split.unlabelled_values.clone();
    labelled.sort_by(f64::total_cmp);
    unlabelled.sort_by(f64::total_cmp);
    // sup of (c_L/n_L - c_U/n_U) over pooled points, kept in integer
    // cross-multiplied form until the final division so ties and float
    // rounding cannot perturb the supremum.
    let count_le = |sorted: &[f64], v: f64| -> i128 {
        sorted.partition_point(|&x| x <= v) as i128
    };
    let mut best: i128 = i128::MIN;
    for &v in labelled.iter().chain(unlabelled.iter()) {
        let diff = count_le(&labelled, v) * n_u as i128 - count_le(&unlabelled, v) * n_l as i128;
        best = best.max(diff);
    }
    let statistic = (best.max(0) as f64) / (n_l as f64 * n_u as f64);
    let m = (n_l as f64 * n_u as f64) / (n_l + n_u) as f64;
    let p_value = (-2.0 * m * statistic * statistic).exp().clamp(0.0, 1.0);
    Ok(TestResult { statistic, p_value, method: TestMethod::KsOneSided })
}

/// One-sided Mann–Whitney U test of whether unlabelled entropies tend to
/// exceed labelled ones: `U` counts pairs with `V_U > V_L` (ties counted
/// half, via mid-ranks), and the p-value comes from the normal
/// approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_u(split: &EntropySplit) -> Result<TestResult> {
    let (n_l, n_u) = split.require_both_sides()?;
    // Pool with group tags and assign mid-ranks.
    let mut pooled: Vec<(f64, bool)> = split
        .labelled_values
        .iter()
        .map(|&v| (v, false))
        .chain(split.unlabelled_values.iter().map(|&v| (v, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len();
    let mut rank_sum_u = 0.0f64;
    let mut tie_correction = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        // Mid-rank of the tied block occupying 1-based ranks i+1 ..= j.
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        for k in i..j {
            if pooled[k].1 {
                rank_sum_u += mid_rank;
            }
        }
        tie_correction += t * t * t - t;
        i = j;
    }
    let statistic = rank_sum_u - (n_u * (n_u + 1)) as f64 / 2.0;

    let nl = n_l as f64;
    let nu = n_u as f64;
    let nn = n as f64;
    let mean = nl * nu / 2.0;
    let variance = if n >= 2 {
        nl * nu / 12.0 * ((nn + 1.0) - tie_correction / (nn * (nn - 1.0)))
    } else {
        0.0
    };
    // Continuity-corrected z score for the upper-tail alternative;
    // exactly central U has z = 0 by convention, and a degenerate
    // variance (all values tied) only occurs there.
    let z = if statistic == mean || variance <= 0.0 {
        0.0
    } else {
        (statistic - mean - 0.5) / variance.sqrt()
    };
    let p_value = (1.0 - normal_cdf(z)).clamp(0.0, 1.0);
    Ok(TestResult { statistic, p_value, method: TestMethod::MannWhitneyU })
}

/// Standard normal CDF.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Kernel bandwidth: fixed, or Silverman's rule from the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", content = "value")]
pub enum Bandwidth {
    /// Silverman's rule `0.9 min(sd, IQR/1.34) n^{-1/5}`, floored at
    /// [`BANDWIDTH_FLOOR`] for zero-spread samples.
    Auto,
    Fixed(f64),
}

/// Floor applied to the automatic bandwidth when the sample has
/// (numerically) no spread.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Resolves a bandwidth choice against a sample. Returns the bandwidth
/// and whether the zero-spread floor was applied.
fn resolve_bandwidth(values: &[f64], bandwidth: Bandwidth) -> Result<(f64, bool)> {
    match bandwidth {
        Bandwidth::Fixed(h) => {
            if !h.is_finite() || h <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "bandwidth must be positive and finite, got {h}"
                )));
            }
            Ok((h, false))
        }
        Bandwidth::Auto => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let sd = if values.len() >= 2 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n - 1.0))
                    .sqrt()
            } else {
                0.0
            };
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            let spread = sd.min(iqr / 1.34);
            let h = 0.9 * spread * n.powf(-0.2);
            if h < BANDWIDTH_FLOOR {
                Ok((BANDWIDTH_FLOOR, true))
            } else {
                Ok((h, false))
            }
        }
    }
}

/// Linear-interpolation quantile of an ascending-sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// A kernel density estimate evaluated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeEstimate {
    /// Density at each grid point, in grid order.
    pub density: Vec<f64>,
    /// The bandwidth actually used.
    pub bandwidth: f64,
    /// Whether the automatic bandwidth hit the zero-spread floor.
    pub bandwidth_floored: bool,
}

/// Gaussian kernel density estimate of `values` at each grid point:
/// `n^{-1} h^{-1} sum_i phi((g - v_i)/h)`.
pub fn kde(values: &[f64], bandwidth: Bandwidth, grid: &[f64]) -> Result<KdeEstimate> {
    if values.is_empty() {
        return Err(Error::EmptyInput("kernel density sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel density sample".into()));
    }
    let (h, bandwidth_floored) = resolve_bandwidth(values, bandwidth)?;
    let n = values.len() as f64;
    let density = grid
        .iter()
        .map(|&g| values.iter().map(|&v| normal_pdf((g - v) / h)).sum::<f64>() / (n * h))
        .collect();
    Ok(KdeEstimate { density, bandwidth: h, bandwidth_floored })
}

/// Total kernel weight below which a Nadaraya–Watson grid value is
/// reported as undefined rather than fabricated from rounding noise.
pub const NW_WEIGHT_FLOOR: f64 = 1e-300;

/// A Nadaraya–Watson regression estimate evaluated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NwEstimate {
    /// Estimate at each grid point; `None` where the total kernel weight
    /// vanishes.
    pub values: Vec<Option<f64>>,
    pub bandwidth: f64,
    pub bandwidth_floored: bool,
}

/// Nadaraya–Watson kernel estimate of the labelling probability as a
/// function of transformed entropy:
/// `m(v) = sum_i K((v - e_i)/h) r_i / sum_i K((v - e_i)/h)` with a
/// Gaussian kernel. Defined values lie in `[0, 1]`.
pub fn nadaraya_watson(
    entropies: &[f64],
    indicators: &[bool],
    bandwidth: Bandwidth,
    grid: &[f64],
) -> Result<NwEstimate> {
    if entropies.is_empty() {
        return Err(Error::EmptyInput("regression sample".into()));
    }
    if entropies.len() != indicators.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} entropies but {} indicators",
            entropies.len(),
            indicators.len()
        )));
    }
    if entropies.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression sample".into()));
    }
    let (h, bandwidth_floored) = resolve_bandwidth(entropies, bandwidth)?;
    let values = grid
        .iter()
        .map(|&g| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (&e, &r) in entropies.iter().zip(indicators) {
                let w = normal_pdf((g - e) / h);
                den += w;
                if r {
                    num += w;
                }
            }
            if den < NW_WEIGHT_FLOOR {
                None
            } else {
                Some((num / den).clamp(0.0, 1.0))
            }
        })
        .collect();
    Ok(NwEstimate { values, bandwidth: h, bandwidth_floored })
}
