use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inputs (one row per observation) and their ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    labels: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs n >= 1 and d >= 1, got {}x{}",
                inputs.nrows(),
                inputs.ncols()
            )));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument(format!("label {} at row {i} is not -1 or +1", labels[i])));
        }
        if let Some(v) = inputs.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite covariate {v}")));
        }
        Ok(Self { inputs, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: &[f64]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("ragged input rows".into()));
        }
        let inputs = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(inputs, DVector::from_column_slice(labels))
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn d(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    /// Same inputs with a different label vector.
    pub fn with_labels(&self, labels: DVector<f64>) -> Result<Self> {
        Self::new(self.inputs.clone(), labels)
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let inputs = self.inputs.select_rows(rows);
        let labels = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.labels[i]));
        Self::new(inputs, labels)
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y > 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_labels_and_shapes() {
        assert!(Dataset::from_rows(&[vec![0.0]], &[0.5]).is_err());
        assert!(Dataset::from_rows(&[vec![0.0], vec![1.0]], &[1.0]).is_err());
        assert!(Dataset::from_rows(&[], &[]).is_err());
        assert!(Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0]], &[1.0, -1.0]).is_err());
        let ds = Dataset::from_rows(&[vec![0.0, 1.0], vec![1.0, 2.0]], &[1.0, -1.0]).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 2));
        assert_eq!(ds.count_positive(), 1);
    }
}
