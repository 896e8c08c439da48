use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::probit::norm_cdf;
use crate::gp::{build_kernel, sample_gp_prior, CovarianceKind, Dataset, Hyperparams};

const BALANCE_ATTEMPTS: usize = 1000;

/// Inputs uniform on the unit hypercube, `f ~ GP(0, K)`, `y = +1` with
/// probability `Φ(f)`. Latents and labels are redrawn (inputs kept) until the
/// classes are exactly balanced.
pub fn generate_synthetic(n: usize, d: usize, hyper: &Hyperparams, kind: CovarianceKind, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("need even n ≥ 2 and d ≥ 1, got n = {n}, d = {d}")));
    }
    hyper.check_kind(kind, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
    let km = build_kernel(&inputs, hyper, kind)?;
    for _ in 0..BALANCE_ATTEMPTS {
        let f = sample_gp_prior(&km, &mut rng);
        let labels = draw_labels(&f, &mut rng);
        if labels.iter().filter(|&&y| y > 0.0).count() == n / 2 {
            return Dataset::new(inputs, labels);
        }
    }
    Err(Error::Generation(format!(
        "no balanced labelling within {BALANCE_ATTEMPTS} attempts"
    )))
}

/// `y_i = +1` with probability `Φ(f_i)`.
pub fn draw_labels<R: Rng + ?Sized>(f: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    f.map(|v| if rng.random::<f64>() < norm_cdf(v) { 1.0 } else { -1.0 })
}

/// Dataset as CSV with header `x1..xd,y`. Rust's float formatting is the
/// shortest string that parses back to the same value.
pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    for j in 0..data.d() {
        out.push_str(&format!("x{},", j + 1));
    }
    out.push_str("y\n");
    for i in 0..data.n() {
        for j in 0..data.d() {
            out.push_str(&format!("{},", data.inputs()[(i, j)]));
        }
        out.push_str(&format!("{}\n", data.labels()[i]));
    }
    out
}

/// Column statistics and label coding learnt at ingestion, reusable on test
/// files so they are transformed identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub format_version: u32,
    pub columns: Vec<String>,
    pub label_column: String,
    /// Raw label strings mapped to −1 and +1, in that order.
    pub label_values: [String; 2],
    /// `None` when no standardization was applied.
    pub means: Option<Vec<f64>>,
    pub sds: Option<Vec<f64>>,
}

/// `column=value1|value2`: keep only rows whose column is one of the values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for RowFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (column, values) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("row filter '{s}' is not of the form column=v1|v2")))?;
        let values: Vec<String> = values.split('|').map(|v| v.trim().to_string()).collect();
        if column.trim().is_empty() || values.iter().any(|v| v.is_empty()) {
            return Err(Error::InvalidArgument(format!("row filter '{s}' has an empty column or value")));
        }
        Ok(Self {
            column: column.trim().to_string(),
            values,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub meta: IngestMeta,
    pub warnings: Vec<String>,
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(text: &str, filter: Option<&RowFilter>) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Ingest {
            row: 1,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let filter_col = match filter {
        Some(f) => Some(headers.iter().position(|h| *h == f.column).ok_or_else(|| Error::Ingest {
            row: 1,
            column: f.column.clone(),
            message: "filter column not found in header".into(),
        })?),
        None => None,
    };
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Ingest {
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cells: Vec<String> = rec.iter().map(str::to_string).collect();
        if let (Some(c), Some(f)) = (filter_col, filter) {
            if !f.values.contains(&cells[c]) {
                continue;
            }
        }
        rows.push((line, cells));
    }
    Ok(RawTable { headers, rows })
}

fn label_coding(values: &BTreeSet<String>) -> Option<[String; 2]> {
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let pick = |target: f64| values.iter().zip(&nums).find(|(_, &x)| x == target).map(|(s, _)| s.clone());
        if nums.iter().all(|&x| x == 1.0 || x == -1.0) || nums.iter().all(|&x| x == 0.0 || x == 1.0) {
            let neg = pick(-1.0).or_else(|| pick(0.0)).unwrap_or_else(|| "-1".into());
            let pos = pick(1.0).unwrap_or_else(|| "1".into());
            return Some([neg, pos]);
        }
    }
    if values.len() == 2 {
        let mut it = values.iter();
        return Some([it.next()?.clone(), it.next()?.clone()]);
    }
    None
}

fn parse_features(table: &RawTable, label_idx: usize, columns: &[usize]) -> Result<Vec<Vec<f64>>> {
    table
        .rows
        .iter()
        .map(|(line, cells)| {
            columns
                .iter()
                .map(|&c| {
                    let cell = &cells[c];
                    cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Ingest {
                        row: *line,
                        column: table.headers[c].clone(),
                        message: format!("'{cell}' is not a finite number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .inspect(|_| debug_assert!(label_idx < table.headers.len()))
        .collect()
}

/// Reads a numeric CSV with a header. Every column except `label_column`
/// becomes a covariate. Labels must take at most two distinct values
/// (±1, 0/1, or any two strings, coded in sorted order).
pub fn ingest_csv(path: &Path, label_column: &str, standardize: bool, filter: Option<&RowFilter>) -> Result<Ingested> {
    let text = std::fs::read_to_string(path)?;
    ingest_csv_str(&text, label_column, standardize, filter)
}

pub fn ingest_csv_str(text: &str, label_column: &str, standardize: bool, filter: Option<&RowFilter>) -> Result<Ingested> {
    let table = read_table(text, filter)?;
    let label_idx = table.headers.iter().position(|h| h == label_column).ok_or_else(|| Error::Ingest {
        row: 1,
        column: label_column.to_string(),
        message: "label column not found in header".into(),
    })?;
    if table.rows.is_empty() {
        return Err(Error::Ingest {
            row: 2,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    let mut seen = BTreeSet::new();
    for (line, cells) in &table.rows {
        seen.insert(cells[label_idx].clone());
        if seen.len() > 2 {
            return Err(Error::Ingest {
                row: *line,
                column: label_column.to_string(),
                message: format!("labels take more than two values: {seen:?}"),
            });
        }
    }
    let label_values = label_coding(&seen).ok_or_else(|| Error::Ingest {
        row: 2,
        column: label_column.to_string(),
        message: format!("cannot map labels {seen:?} to two classes"),
    })?;
    let meta = IngestMeta {
        format_version: 1,
        columns: table.headers.iter().filter(|h| *h != label_column).cloned().collect(),
        label_column: label_column.to_string(),
        label_values,
        means: None,
        sds: None,
    };
    let (dataset, meta, warnings) = build(&table, meta, standardize, None)?;
    Ok(Ingested { dataset, meta, warnings })
}

/// Reads a test file and applies the training file's label coding and
/// standardization.
pub fn ingest_csv_with_meta(path: &Path, meta: &IngestMeta, filter: Option<&RowFilter>) -> Result<Ingested> {
    let text = std::fs::read_to_string(path)?;
    ingest_csv_str_with_meta(&text, meta, filter)
}

pub fn ingest_csv_str_with_meta(text: &str, meta: &IngestMeta, filter: Option<&RowFilter>) -> Result<Ingested> {
    let table = read_table(text, filter)?;
    let (dataset, meta, warnings) = build(&table, meta.clone(), meta.means.is_some(), Some(meta))?;
    Ok(Ingested { dataset, meta, warnings })
}

fn build(
    table: &RawTable,
    mut meta: IngestMeta,
    standardize: bool,
    reuse: Option<&IngestMeta>,
) -> Result<(Dataset, IngestMeta, Vec<String>)> {
    let find = |name: &str| {
        table.headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
            row: 1,
            column: name.to_string(),
            message: "column not found in header".into(),
        })
    };
    let label_idx = find(&meta.label_column)?;
    let columns = meta.columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let mut rows = parse_features(table, label_idx, &columns)?;
    let labels = table
        .rows
        .iter()
        .map(|(line, cells)| {
            let v = &cells[label_idx];
            if *v == meta.label_values[0] {
                Ok(-1.0)
            } else if *v == meta.label_values[1] {
                Ok(1.0)
            } else {
                Err(Error::Ingest {
                    row: *line,
                    column: meta.label_column.clone(),
                    message: format!("label '{v}' is neither '{}' nor '{}'", meta.label_values[0], meta.label_values[1]),
                })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut warnings = Vec::new();
    if standardize {
        let (means, sds) = match reuse {
            Some(m) => (m.means.clone().unwrap_or_default(), m.sds.clone().unwrap_or_default()),
            None => column_stats(&rows),
        };
        for (j, name) in meta.columns.iter().enumerate() {
            if sds[j] == 0.0 {
                warnings.push(format!("column '{name}' is constant; standardized to zeros"));
            }
        }
        for r in &mut rows {
            for (j, v) in r.iter_mut().enumerate() {
                *v = if sds[j] > 0.0 { (*v - means[j]) / sds[j] } else { 0.0 };
            }
        }
        meta.means = Some(means);
        meta.sds = Some(sds);
    }
    Ok((Dataset::from_rows(&rows, &labels)?, meta, warnings))
}

/// Means and sample standard deviations; zero sd marks a constant column.
fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let means: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sds = (0..d)
        .map(|j| {
            if rows.len() < 2 || rows.iter().all(|r| r[j] == rows[0][j]) {
                return 0.0;
            }
            (rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    (means, sds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let h = Hyperparams::isotropic(2.08, 0.35).unwrap();
        let a = generate_synthetic(50, 2, &h, CovarianceKind::Isotropic, 1).unwrap();
        let b = generate_synthetic(50, 2, &h, CovarianceKind::Isotropic, 1).unwrap();
        assert_eq!(a.count_positive(), 25);
        assert_eq!(a, b);
        assert!(a.inputs().iter().all(|v| (0.0..1.0).contains(v)));
        assert!(generate_synthetic(5, 2, &h, CovarianceKind::Isotropic, 1).is_err());
    }

    #[test]
    fn standardizes_two_rows() {
        let r = ingest_csv_str("a,b,y\n1,10,1\n3,30,-1\n", "y", true, None).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = r.dataset.inputs().column(j).iter().copied().collect();
            let m = col.iter().sum::<f64>() / 2.0;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1.0).sqrt();
            assert!(m.abs() < 1e-15 && (sd - 1.0).abs() < 1e-15);
        }
        assert_eq!(r.dataset.labels().as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn round_trip_is_lossless() {
        let h = Hyperparams::isotropic(1.3, 0.4).unwrap();
        let d = generate_synthetic(20, 3, &h, CovarianceKind::Isotropic, 7).unwrap();
        let back = ingest_csv_str(&dataset_to_csv(&d), "y", false, None).unwrap();
        assert_eq!(back.dataset, d);
    }

    #[test]
    fn constant_column_warns_and_zeroes() {
        let r = ingest_csv_str("a,c,y\n1,5,1\n2,5,-1\n4,5,1\n", "y", true, None).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert!(r.dataset.inputs().column(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn errors_carry_location() {
        match ingest_csv_str("a,y\n1,1\nx,-1\n", "y", false, None) {
            Err(Error::Ingest { row, column, .. }) => assert_eq!((row, column.as_str()), (3, "a")),
            other => panic!("{other:?}"),
        }
        match ingest_csv_str("a,y\n1,1\n2,-1\n3,2\n", "y", false, None) {
            Err(Error::Ingest { row, column, .. }) => assert_eq!((row, column.as_str()), (4, "y")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ingest_csv_str("a,b\n1,1\n", "y", false, None), Err(Error::Ingest { .. })));
    }

    #[test]
    fn string_labels_and_filter() {
        let text = "sex,len,ring\nM,0.4,1\nF,0.5,2\nI,0.2,3\nF,0.6,4\n";
        let f: RowFilter = "sex=M|F".parse().unwrap();
        let r = ingest_csv_str(text, "sex", false, Some(&f)).unwrap();
        assert_eq!(r.dataset.n(), 3);
        assert_eq!(r.meta.label_values, ["F".to_string(), "M".to_string()]);
        assert_eq!(r.dataset.labels().as_slice(), &[1.0, -1.0, -1.0]);
        assert!(ingest_csv_str(text, "sex", false, None).is_err());
    }

    #[test]
    fn zero_one_labels_and_meta_reuse() {
        let train = ingest_csv_str("a,y\n0,0\n2,1\n4,1\n", "y", true, None).unwrap();
        assert_eq!(train.dataset.labels().as_slice(), &[-1.0, 1.0, 1.0]);
        let test = ingest_csv_str_with_meta("a,y\n2,1\n4,0\n", &train.meta, None).unwrap();
        assert_eq!(test.dataset.inputs()[(0, 0)], 0.0);
        assert_eq!(test.dataset.inputs()[(1, 0)], 1.0);
        assert_eq!(test.dataset.labels().as_slice(), &[1.0, -1.0]);
    }
}
