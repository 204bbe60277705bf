//! Dataset, configuration, and result interchange: CSV datasets with
//! lossless float round-trips, JSON run configurations, and the writers
//! behind the command-line reports and plot-data files.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bench::{BenchConfig, BenchResult, EstimatorId, Mechanism};
use crate::dataset::SemiDataset;
use crate::diagnostics::TestResult;
use crate::error::{Error, Result};
use crate::fsc::FscWeight;
use crate::mixture::MixtureParams;
use crate::report::FitReport;

/// Formats a float with 17 significant digits, enough to reproduce any
/// double exactly on re-parse.
fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a dataset as CSV: header `x1..xp,label`, features in scientific
/// notation with 17 significant digits, labels 1-based with missing ones
/// as empty cells.
pub fn write_dataset_csv<W: Write>(data: &SemiDataset, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let p = data.dim();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    out.write_record(&header).map_err(csv_io_error)?;
    for i in 0..data.n() {
        let mut record: Vec<String> = (0..p)
            .map(|j| format_float(data.features()[(i, j)]))
            .collect();
        record.push(match data.labels()[i] {
            Some(h) => (h + 1).to_string(),
            None => String::new(),
        });
        out.write_record(&record).map_err(csv_io_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Converts a csv-crate error on the write path to an I/O error.
fn csv_io_error(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("CSV write failed: {other:?}"))),
    }
}

/// Reads a dataset written by [`write_dataset_csv`] (or by hand in the
/// same shape): a header of feature columns `x1..xp` with an optional
/// trailing `label` column, then one row per observation. Labels are
/// 1-based positive integers or empty for missing. Errors carry 1-based
/// file coordinates (the header is row 1).
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<SemiDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_parse_error(e, 1))?.clone();
    if header.is_empty() {
        return Err(Error::CsvParse {
            row: 1,
            col: 1,
            message: "empty header".into(),
        });
    }
    let has_label = header.iter().last() == Some("label");
    let p = if has_label { header.len() - 1 } else { header.len() };
    if p == 0 {
        return Err(Error::CsvParse {
            row: 1,
            col: 1,
            message: "no feature columns before the label column".into(),
        });
    }
    for (j, name) in header.iter().take(p).enumerate() {
        let expected = format!("x{}", j + 1);
        if name != expected {
            return Err(Error::CsvParse {
                row: 1,
                col: j + 1,
                message: format!("expected feature column {expected:?}, found {name:?}"),
            });
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row_no = idx + 2; // 1-based, after the header
        let record = record.map_err(|e| csv_parse_error(e, row_no))?;
        if record.len() != header.len() {
            return Err(Error::CsvParse {
                row: row_no,
                col: record.len().min(header.len()) + 1,
                message: format!(
                    "expected {} fields, found {}",
                    header.len(),
                    record.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(p);
        for j in 0..p {
            let cell = &record[j];
            let value: f64 = cell.parse().map_err(|_| Error::CsvParse {
                row: row_no,
                col: j + 1,
                message: format!("not a decimal number: {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvParse {
                    row: row_no,
                    col: j + 1,
                    message: format!("non-finite feature value: {cell:?}"),
                });
            }
            row.push(value);
        }
        let label = if has_label {
            let cell = &record[p];
            if cell.is_empty() {
                None
            } else {
                let raw: i64 = cell.parse().map_err(|_| Error::CsvParse {
                    row: row_no,
                    col: p + 1,
                    message: format!("label must be a positive integer, found {cell:?}"),
                })?;
                if raw < 1 {
                    return Err(Error::CsvParse {
                        row: row_no,
                        col: p + 1,
                        message: format!("label must be >= 1, found {raw}"),
                    });
                }
                Some(raw as usize - 1)
            }
        } else {
            None
        };
        rows.push(row);
        labels.push(label);
    }
    let n = rows.len();
    let mut features = DMatrix::zeros(n, p);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[(i, j)] = v;
        }
    }
    SemiDataset::new(features, labels)
}

/// Converts a csv-crate error on the read path to a located parse error.
fn csv_parse_error(err: csv::Error, fallback_row: usize) -> Error {
    let row = err
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_row);
    match err.kind() {
        csv::ErrorKind::Io(_) => match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("kind re-checked"),
        },
        other => Error::CsvParse {
            row,
            col: 1,
            message: format!("{other}"),
        },
    }
}

/// Mixture parameters in interchange form: weights, means by component,
/// covariances by component in row-major rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDto {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl ParamsDto {
    pub fn from_params(params: &MixtureParams) -> Self {
        let g = params.g();
        let p = params.dim();
        Self {
            weights: params.weights().to_vec(),
            means: (0..g)
                .map(|h| params.component(h).mean().iter().cloned().collect())
                .collect(),
            covariances: (0..g)
                .map(|h| {
                    let cov = params.component(h).cov();
                    (0..p)
                        .map(|i| (0..p).map(|j| cov[(i, j)]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn into_params(&self) -> Result<MixtureParams> {
        let g = self.weights.len();
        if self.means.len() != g || self.covariances.len() != g {
            return Err(Error::InvalidConfig(format!(
                "{} weights but {} means and {} covariances",
                g,
                self.means.len(),
                self.covariances.len()
            )));
        }
        if g == 0 {
            return Err(Error::InvalidConfig("no mixture components".into()));
        }
        let p = self.means[0].len();
        let mut comps = Vec::with_capacity(g);
        for h in 0..g {
            let mean = DVector::from_vec(self.means[h].clone());
            let rows = &self.covariances[h];
            if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                return Err(Error::InvalidConfig(format!(
                    "component {h} covariance is not {p}x{p}"
                )));
            }
            let mut cov = DMatrix::zeros(p, p);
            for i in 0..p {
                for j in 0..p {
                    cov[(i, j)] = rows[i][j];
                }
            }
            comps.push((mean, cov));
        }
        MixtureParams::new(self.weights.clone(), comps)
    }
}

/// A simulation / benchmark run configuration as stored on disk. The
/// generation fields are always required; the replication fields are
/// needed only by the benchmark command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub true_params: ParamsDto,
    pub mechanism: Mechanism,
    pub n_train: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
}

impl RunConfigFile {
    /// Interprets the file as a full benchmark configuration; the
    /// replication fields must be present (the alpha grid falls back to
    /// the default when absent).
    pub fn to_bench_config(&self) -> Result<BenchConfig> {
        let n_test = self.n_test.ok_or_else(|| {
            Error::InvalidConfig("benchmark requires n_test".into())
        })?;
        let replications = self.replications.ok_or_else(|| {
            Error::InvalidConfig("benchmark requires replications".into())
        })?;
        let alpha_grid = match &self.alpha_grid {
            Some(grid) => grid
                .iter()
                .map(|&a| {
                    FscWeight::new(a).map_err(|_| {
                        Error::InvalidConfig(format!(
                            "alpha grid entry {a} lies outside [0, 1]"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => crate::bench::default_alpha_grid(),
        };
        let config = BenchConfig {
            true_params: self.true_params.into_params()?,
            mechanism: self.mechanism.clone(),
            n_train: self.n_train,
            n_test,
            replications,
            alpha_grid,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses a JSON run configuration.
pub fn read_config_json<R: Read>(reader: R) -> Result<RunConfigFile> {
    serde_json::from_reader(reader).map_err(|e| Error::Json(e.to_string()))
}

/// Serializes a run configuration as pretty JSON.
pub fn write_config_json<W: Write>(config: &RunConfigFile, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, config).map_err(|e| Error::Json(e.to_string()))
}

/// A fit report in interchange form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReportDto {
    /// Which estimator produced the report (`ignorance`, `full`, `fsc`).
    pub method: String,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub params: ParamsDto,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_coefficients: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

impl FitReportDto {
    pub fn from_report(method: &str, report: &FitReport) -> Self {
        Self {
            method: method.into(),
            converged: report.converged,
            iterations: report.iterations,
            objective: report.objective,
            trace: report.trace.clone(),
            params: ParamsDto::from_params(&report.params),
            selection_coefficients: report
                .coeffs
                .as_ref()
                .map(|c| c.values().as_slice().to_vec()),
            notes: report.notes.iter().map(|n| n.to_string()).collect(),
        }
    }
}

/// Writes a fit report as pretty JSON.
pub fn write_report_json<W: Write>(report: &FitReportDto, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, report).map_err(|e| Error::Json(e.to_string()))
}

/// The diagnostics summary emitted by the diagnose command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsDto {
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    /// Mean transformed entropy of the labelled rows.
    pub mean_labelled: f64,
    /// Mean transformed entropy of the unlabelled rows.
    pub mean_unlabelled: f64,
    pub ks: TestResult,
    pub mann_whitney: TestResult,
    /// Bandwidth used for the density and regression curves.
    pub bandwidth: f64,
    pub bandwidth_floored: bool,
}

/// Writes the diagnostics summary as pretty JSON.
pub fn write_diagnostics_json<W: Write>(dto: &DiagnosticsDto, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, dto).map_err(|e| Error::Json(e.to_string()))
}

/// Writes aligned columns as CSV plot data: a header row, then one row
/// per grid index with floats at 17 significant digits and undefined
/// values as empty cells.
pub fn write_columns_csv<W: Write>(
    writer: W,
    headers: &[&str],
    columns: &[Vec<Option<f64>>],
) -> Result<()> {
    if headers.len() != columns.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} headers but {} columns",
            headers.len(),
            columns.len()
        )));
    }
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch(
            "plot columns have unequal lengths".into(),
        ));
    }
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(headers).map_err(csv_io_error)?;
    for i in 0..n {
        let record: Vec<String> = columns
            .iter()
            .map(|c| c[i].map(format_float).unwrap_or_default())
            .collect();
        out.write_record(&record).map_err(csv_io_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the benchmark as pretty JSON.
pub fn write_bench_json<W: Write>(result: &BenchResult, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, result).map_err(|e| Error::Json(e.to_string()))
}

/// Writes the benchmark's per-estimator aggregates as plot-ready CSV:
/// `estimator,alpha,mean_ari,se_ari,mean_log_loss,se_log_loss,successes,
/// failures`, the `alpha` cell empty for non-FSC estimators.
pub fn write_bench_summary_csv<W: Write>(result: &BenchResult, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "estimator",
        "alpha",
        "mean_ari",
        "se_ari",
        "mean_log_loss",
        "se_log_loss",
        "successes",
        "failures",
    ])
    .map_err(csv_io_error)?;
    for summary in &result.summaries {
        let (name, alpha) = match &summary.estimator {
            EstimatorId::Truth => ("truth".to_string(), String::new()),
            EstimatorId::Ignorance => ("ignorance".to_string(), String::new()),
            EstimatorId::Full => ("full".to_string(), String::new()),
            EstimatorId::Fsc { alpha } => ("fsc".to_string(), format_float(*alpha)),
        };
        out.write_record([
            name,
            alpha,
            format_float(summary.mean_ari),
            format_float(summary.se_ari),
            format_float(summary.mean_log_loss),
            format_float(summary.se_log_loss),
            summary.successes.to_string(),
            summary.failures.to_string(),
        ])
        .map_err(csv_io_error)?;
    }
    out.flush()?;
    Ok(())
}

/// The truth sidecar written next to a simulated dataset: everything
/// needed to evaluate estimators against the generative truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSidecar {
    pub seed: u64,
    pub mechanism: Mechanism,
    pub true_params: ParamsDto,
    /// True class of every row, 1-based, in row order.
    pub true_labels: Vec<usize>,
}

/// Writes the truth sidecar as pretty JSON.
pub fn write_truth_json<W: Write>(sidecar: &TruthSidecar, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, sidecar).map_err(|e| Error::Json(e.to_string()))
}

/// Parses a truth sidecar.
pub fn read_truth_json<R: Read>(reader: R) -> Result<TruthSidecar> {
    serde_json::from_reader(reader).map_err(|e| Error::Json(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::tests::bench_truth;

    fn sample_dataset() -> SemiDataset {
        SemiDataset::new(
            DMatrix::from_row_slice(
                4,
                2,
                &[
                    0.1, -2.5e-7, 1.0 / 3.0, 6.02e23, -0.0, 7.25, 1e-300, -3.125,
                ],
            ),
            vec![Some(0), None, Some(1), None],
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let data = sample_dataset();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.n(), data.n());
        assert_eq!(back.dim(), data.dim());
        assert_eq!(back.labels(), data.labels());
        for i in 0..data.n() {
            for j in 0..data.dim() {
                // 17 significant digits reproduce the double exactly.
                assert_eq!(back.features()[(i, j)], data.features()[(i, j)]);
            }
        }
    }

    #[test]
    fn dataset_header_and_label_encoding() {
        let data = SemiDataset::new(
            DMatrix::from_row_slice(2, 1, &[1.5, 2.5]),
            vec![Some(1), None],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x1,label"));
        // Internal class 1 serializes as the 1-based label 2.
        assert_eq!(lines.next(), Some("1.5000000000000000e0,2"));
        assert_eq!(lines.next(), Some("2.5000000000000000e0,"));
    }

    #[test]
    fn read_accepts_plain_decimals_and_missing_label_column() {
        let csv = "x1,x2\n1.5,2.0\n-0.25,3.5\n";
        let data = read_dataset_csv(csv.as_bytes()).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.dim(), 2);
        assert!(data.labels().iter().all(|l| l.is_none()));
        assert_eq!(data.features()[(1, 0)], -0.25);
    }

    #[test]
    fn read_errors_carry_locations() {
        // Bad float in row 3 (header is row 1), column 2.
        let csv = "x1,x2,label\n1.0,2.0,1\n3.0,oops,\n";
        match read_dataset_csv(csv.as_bytes()).unwrap_err() {
            Error::CsvParse { row, col, .. } => {
                assert_eq!((row, col), (3, 2));
            }
            other => panic!("unexpected error {other:?}"),
        }
        // Label 0 is out of the 1-based range.
        let csv = "x1,label\n1.0,0\n";
        match read_dataset_csv(csv.as_bytes()).unwrap_err() {
            Error::CsvParse { row, col, .. } => assert_eq!((row, col), (2, 2)),
            other => panic!("unexpected error {other:?}"),
        }
        // Misnamed feature column.
        let csv = "a,b\n1.0,2.0\n";
        match read_dataset_csv(csv.as_bytes()).unwrap_err() {
            Error::CsvParse { row, col, .. } => assert_eq!((row, col), (1, 1)),
            other => panic!("unexpected error {other:?}"),
        }
        // Ragged row.
        let csv = "x1,x2,label\n1.0,2.0,1\n3.0\n";
        assert!(matches!(
            read_dataset_csv(csv.as_bytes()),
            Err(Error::CsvParse { .. })
        ));
    }

    #[test]
    fn read_rejects_non_finite_features() {
        let csv = "x1,label\ninf,1\n";
        assert!(matches!(
            read_dataset_csv(csv.as_bytes()),
            Err(Error::CsvParse { row: 2, col: 1, .. })
        ));
        let csv = "x1,label\nNaN,\n";
        assert!(matches!(
            read_dataset_csv(csv.as_bytes()),
            Err(Error::CsvParse { row: 2, col: 1, .. })
        ));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let data = SemiDataset::new(DMatrix::zeros(0, 2), vec![]).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "x1,x2,label\n");
        let back = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back.n(), 0);
        assert_eq!(back.dim(), 2);
    }

    #[test]
    fn params_dto_round_trips() {
        let params = bench_truth();
        let dto = ParamsDto::from_params(&params);
        let back = dto.into_params().unwrap();
        assert_eq!(back, params);
    }

    fn sample_config() -> RunConfigFile {
        RunConfigFile {
            true_params: ParamsDto::from_params(&bench_truth()),
            mechanism: Mechanism::EntropyLogistic { beta0: 1.0, beta1: -5.0 },
            n_train: 500,
            seed: 42,
            n_test: Some(2000),
            replications: Some(100),
            alpha_grid: Some(vec![0.1, 0.5, 0.9]),
        }
    }

    #[test]
    fn config_round_trips_losslessly() {
        let config = sample_config();
        let mut buf = Vec::new();
        write_config_json(&config, &mut buf).unwrap();
        let back = read_config_json(buf.as_slice()).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let mut buf = Vec::new();
        write_config_json(&sample_config(), &mut buf).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_slice(buf.as_slice()).unwrap();
        value
            .as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        let text = serde_json::to_string(&value).unwrap();
        assert!(matches!(
            read_config_json(text.as_bytes()),
            Err(Error::Json(_))
        ));
    }

    #[test]
    fn bench_config_conversion_validates() {
        let config = sample_config();
        let bench = config.to_bench_config().unwrap();
        assert_eq!(bench.n_test, 2000);
        assert_eq!(bench.alpha_grid.len(), 3);

        let mut missing = sample_config();
        missing.replications = None;
        assert!(missing.to_bench_config().is_err());

        let mut bad_alpha = sample_config();
        bad_alpha.alpha_grid = Some(vec![1.5]);
        assert!(bad_alpha.to_bench_config().is_err());

        let mut defaulted = sample_config();
        defaulted.alpha_grid = None;
        assert_eq!(defaulted.to_bench_config().unwrap().alpha_grid.len(), 19);
    }

    #[test]
    fn columns_csv_renders_undefined_cells_empty() {
        let mut buf = Vec::new();
        write_columns_csv(
            &mut buf,
            &["grid", "value"],
            &[
                vec![Some(0.5), Some(1.0)],
                vec![Some(0.25), None],
            ],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "grid,value");
        assert_eq!(lines[1], "5.0000000000000000e-1,2.5000000000000000e-1");
        assert_eq!(lines[2], "1.0000000000000000e0,");
    }

    #[test]
    fn columns_csv_rejects_ragged_input() {
        let mut buf = Vec::new();
        assert!(write_columns_csv(
            &mut buf,
            &["a", "b"],
            &[vec![Some(1.0)], vec![Some(1.0), Some(2.0)]],
        )
        .is_err());
        assert!(write_columns_csv(&mut buf, &["a"], &[vec![], vec![]]).is_err());
    }

    #[test]
    fn truth_sidecar_round_trips() {
        let sidecar = TruthSidecar {
            seed: 7,
            mechanism: Mechanism::Mcar { keep_prob: 0.5 },
            true_params: ParamsDto::from_params(&bench_truth()),
            true_labels: vec![1, 2, 2, 1],
        };
        let mut buf = Vec::new();
        write_truth_json(&sidecar, &mut buf).unwrap();
        assert_eq!(read_truth_json(buf.as_slice()).unwrap(), sidecar);
    }
}
