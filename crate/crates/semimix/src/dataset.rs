//! Partially labelled datasets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A dataset of `n` observations in `p` dimensions with optional class
/// labels.
///
/// Labels are 0-based component indices. A missing label (`None`) marks the
/// observation as unlabelled; the missingness indicator `r_i` is therefore
/// determined by label presence and never stored separately. In the CSV file
/// format labels appear 1-based with an empty cell for missing (see
/// [`crate::io`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDataset {
    features: DMatrix<f64>,
    labels: Vec<Option<usize>>,
}

impl SemiDataset {
    /// Builds a dataset, validating shape agreement and feature finiteness.
    ///
    /// An empty dataset (`n = 0`) is permitted: likelihoods over it are
    /// empty sums. `p >= 1` is required whenever `n >= 1`.
    pub fn new(features: DMatrix<f64>, labels: Vec<Option<usize>>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.nrows() > 0 && features.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "feature dimension p must be >= 1".into(),
            ));
        }
        if let Some((i, j)) = find_non_finite(&features) {
            return Err(Error::NonFinite(format!(
                "feature ({i}, {j}) is not finite"
            )));
        }
        Ok(Self { features, labels })
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// The `n x p` feature matrix.
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// Per-row optional labels (0-based component indices).
    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Missingness indicators: `true` exactly when the label is present.
    pub fn indicators(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }

    /// Number of labelled observations (`n_1`).
    pub fn n_labelled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Number of unlabelled observations (`n_2`).
    pub fn n_unlabelled(&self) -> usize {
        self.n() - self.n_labelled()
    }

    /// Copies row `i` into a column vector.
    pub fn row_point(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// Copies all rows into column vectors (convenient for repeated
    /// row-wise evaluation; the matrix itself is column-major).
    pub fn points(&self) -> Vec<DVector<f64>> {
        (0..self.n()).map(|i| self.row_point(i)).collect()
    }

    /// Checks that every present label indexes a valid component.
    pub fn validate_labels(&self, g: usize) -> Result<()> {
        for (row, label) in self.labels.iter().enumerate() {
            if let Some(h) = *label {
                if h >= g {
                    return Err(Error::LabelOutOfRange { row, label: h, g });
                }
            }
        }
        Ok(())
    }

    /// Mean of the per-feature (biased) sample variances. Used to scale the
    /// covariance regularization floor.
    pub fn mean_feature_variance(&self) -> f64 {
        let n = self.n();
        if n == 0 || self.dim() == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..self.dim() {
            let col = self.features.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            total += var;
        }
        total / self.dim() as f64
    }
}

fn find_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicators_match_label_presence() {
        let data = SemiDataset::new(
            DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]),
            vec![Some(0), None, Some(1)],
        )
        .unwrap();
        assert_eq!(data.indicators(), vec![true, false, true]);
        assert_eq!(data.n_labelled(), 2);
        assert_eq!(data.n_unlabelled(), 1);
    }

    #[test]
    fn rejects_label_length_mismatch() {
        let err = SemiDataset::new(DMatrix::zeros(2, 1), vec![None]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_non_finite_features() {
        let err =
            SemiDataset::new(DMatrix::from_row_slice(1, 2, &[0.0, f64::NAN]), vec![None])
                .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn rejects_out_of_range_label() {
        let data = SemiDataset::new(DMatrix::zeros(2, 1), vec![Some(2), None]).unwrap();
        let err = data.validate_labels(2).unwrap_err();
        assert!(matches!(
            err,
            Error::LabelOutOfRange { row: 0, label: 2, g: 2 }
        ));
    }

    #[test]
    fn empty_dataset_is_allowed() {
        let data = SemiDataset::new(DMatrix::zeros(0, 0), vec![]).unwrap();
        assert_eq!(data.n(), 0);
    }
}
