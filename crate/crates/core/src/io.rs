//! File formats: comma-separated values with a header row and
//! `{:.16e}` floats (17 significant digits, round-trip exact), JSON for
//! moments and reports. Every file is written to a temporary sibling first
//! and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::eval::Prediction;
use crate::meanfield::{GaussianMoments, MomentTrajectory};
use crate::model::Dataset;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Lower-case hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes a header and string rows with the crate's CSV dialect.
pub fn write_table<S: AsRef<[u8]>>(path: &Path, header: &[S], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Header and numeric rows of a CSV file.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::format(path, format!("row {}, column {}: cannot parse {field:?}", i + 1, c + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn rows_to_columns(path: &Path, rows: &[Vec<f64>], width: usize) -> Result<DMatrix<f64>> {
    if rows.is_empty() || width == 0 {
        return Err(Error::format(path, "no data rows"));
    }
    Ok(DMatrix::from_fn(width, rows.len(), |i, n| rows[n][i]))
}

fn theta_header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("theta_{i}")).collect()
}

fn phi_header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("phi_{i}")).collect()
}

/// One particle per row, header `theta_0, ..., theta_{D-1}`.
pub fn write_ensemble_csv(path: &Path, ensemble: &Ensemble) -> Result<()> {
    write_columns(path, theta_header(ensemble.dim()), ensemble.particles())
}

pub fn read_ensemble_csv(path: &Path) -> Result<Ensemble> {
    let (header, rows) = read_table(path)?;
    Ensemble::from_columns(rows_to_columns(path, &rows, header.len())?)
}

fn write_columns(path: &Path, header: Vec<String>, columns: &DMatrix<f64>) -> Result<()> {
    write_table(
        path,
        &header,
        columns.column_iter().map(|c| c.iter().map(|&v| fmt_f64(v)).collect()),
    )
}

/// One sample per row: `D` feature columns followed by `label`.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut header = phi_header(data.dim());
    header.push("label".into());
    write_table(
        path,
        &header,
        data.features().column_iter().zip(data.labels().iter()).map(|(c, &l)| {
            let mut row: Vec<String> = c.iter().map(|&v| fmt_f64(v)).collect();
            row.push(format!("{l}"));
            row
        }),
    )
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let (header, rows) = read_table(path)?;
    if header.last().map(String::as_str) != Some("label") || header.len() < 2 {
        return Err(Error::format(path, "last column must be `label` after at least one feature"));
    }
    let d = header.len() - 1;
    let features = rows_to_columns(path, &rows, d)?;
    let labels = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[d]));
    Dataset::new(features, labels)
}

/// Feature rows for prediction. A trailing `label` column is ignored.
pub fn read_features_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (header, rows) = read_table(path)?;
    let d = if header.last().map(String::as_str) == Some("label") {
        header.len() - 1
    } else {
        header.len()
    };
    rows_to_columns(path, &rows, d)
}

pub fn write_features_csv(path: &Path, features: &DMatrix<f64>) -> Result<()> {
    write_columns(path, phi_header(features.nrows()), features)
}

/// A single parameter vector as one row with `theta_i` headers.
pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_columns(path, theta_header(v.len()), &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let (_, rows) = read_table(path)?;
    match rows.as_slice() {
        [row] => Ok(DVector::from_vec(row.clone())),
        _ => Err(Error::format(path, format!("expected one row, found {}", rows.len()))),
    }
}

pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_table(
        path,
        &["probability".to_string(), "confidence".to_string()],
        predictions
            .iter()
            .map(|p| vec![fmt_f64(p.probability), fmt_f64(p.confidence)]),
    )
}

/// `s, m_i, p_i_j (i ≤ j), res_m, res_P` per stored time.
pub fn write_trajectory_csv(path: &Path, trajectory: &MomentTrajectory, residuals: &[(f64, f64)]) -> Result<()> {
    if residuals.len() != trajectory.states.len() {
        return Err(Error::Dimension(format!(
            "{} residuals for {} states",
            residuals.len(),
            trajectory.states.len()
        )));
    }
    let d = trajectory.last().dim();
    let mut header = vec!["s".to_string()];
    header.extend((0..d).map(|i| format!("m_{i}")));
    for i in 0..d {
        for j in i..d {
            header.push(format!("p_{i}_{j}"));
        }
    }
    header.push("res_m".into());
    header.push("res_P".into());
    let rows = trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .zip(residuals)
        .map(|((&s, state), &(rm, rp))| {
            let mut row = vec![fmt_f64(s)];
            row.extend(state.mean.iter().map(|&v| fmt_f64(v)));
            for i in 0..d {
                for j in i..d {
                    row.push(fmt_f64(state.covariance[(i, j)]));
                }
            }
            row.push(fmt_f64(rm));
            row.push(fmt_f64(rp));
            row
        });
    write_table(path, &header, rows)
}

#[derive(Serialize, Deserialize)]
struct MomentsFile {
    mean: Vec<f64>,
    /// Row-major.
    covariance: Vec<Vec<f64>>,
}

pub fn write_moments_json(path: &Path, moments: &GaussianMoments) -> Result<()> {
    let file = MomentsFile {
        mean: moments.mean.as_slice().to_vec(),
        covariance: moments
            .covariance
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
    };
    write_json(path, &file)
}

pub fn read_moments_json(path: &Path) -> Result<GaussianMoments> {
    let file: MomentsFile = read_json(path)?;
    let d = file.mean.len();
    if file.covariance.len() != d || file.covariance.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension(format!(
            "{}: mean has dimension {d}, covariance is not {d}x{d}",
            path.display()
        )));
    }
    GaussianMoments::new(
        DVector::from_vec(file.mean),
        DMatrix::from_fn(d, d, |i, j| file.covariance[i][j]),
    )
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn ensemble_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let e = Ensemble::from_columns(dmatrix![0.1, 1.0 / 3.0, -2.5e-300; 7.0, f64::MAX, 1e-17]).unwrap();
        write_ensemble_csv(&path, &e).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("theta_0,theta_1\n"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_ensemble_csv(&path).unwrap(), e);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = Dataset::new(dmatrix![0.5, -1.0, 2.0; 3.0, 0.0, 1.0], DVector::from_vec(vec![1.0, 0.0, 1.0])).unwrap();
        write_dataset_csv(&path, &data).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("phi_0,phi_1,label\n"));
        assert_eq!(read_dataset_csv(&path).unwrap(), data);
        assert_eq!(read_features_csv(&path).unwrap(), *data.features());
    }

    #[test]
    fn dataset_needs_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "a,b\n1,0\n").unwrap();
        assert!(matches!(read_dataset_csv(&path), Err(Error::Format { .. })));
        fs::write(&path, "a,label\n1,x\n").unwrap();
        let err = read_dataset_csv(&path).unwrap_err();
        assert!(err.to_string().contains("row 1, column 2"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error_with_path() {
        let err = read_ensemble_csv(Path::new("/nonexistent/ens.csv")).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Io);
        assert!(err.to_string().contains("/nonexistent/ens.csv"));
    }

    #[test]
    fn moments_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = GaussianMoments::new(DVector::from_vec(vec![0.1, -0.2]), dmatrix![2.0, 0.3; 0.3, 1.0 / 7.0]).unwrap();
        write_moments_json(&path, &m).unwrap();
        assert_eq!(read_moments_json(&path).unwrap(), m);
    }

    #[test]
    fn trajectory_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let m = GaussianMoments::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let t = MomentTrajectory {
            times: vec![0.0, 0.5],
            states: vec![m.clone(), m],
        };
        write_trajectory_csv(&path, &t, &[(0.0, 0.0), (1e-3, 2e-3)]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "s,m_0,m_1,p_0_0,p_0_1,p_1_1,res_m,res_P");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn unwritable_path_reports_path() {
        let err = write_atomic(Path::new("/nonexistent/dir/out.csv"), b"x").unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Io);
        assert!(err.to_string().contains("/nonexistent/dir/out.csv"));
    }
}
