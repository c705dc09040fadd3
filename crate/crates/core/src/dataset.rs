use ndarray::{Array2, ArrayView1, Axis};

use crate::{Error, Result};

/// Labelled feature matrix; one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Array2::zeros((0, dim)),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows at `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat<'a>(dim: usize, parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            rows.extend(p.features.iter().copied());
            labels.extend_from_slice(&p.labels);
            n += p.len();
        }
        let features = Array2::from_shape_vec((n, dim), rows).expect("row-major concat");
        Ok(Self { features, labels })
    }

    pub fn class_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}
