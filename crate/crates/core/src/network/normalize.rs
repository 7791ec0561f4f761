use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Floor on the per-bin standard deviation used for scaling.
pub const MIN_FEATURE_STD: f64 = 1e-3;

/// Per-bin affine input standardisation `(x − mean) · scale`, fitted on
/// training features and stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    /// Mean and inverse standard deviation of every column over all rows of
    /// all matrices.
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut rows = 0usize;
        for m in features {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
                sq = vec![0.0; m.cols()];
            }
            if m.cols() != sum.len() {
                return Err(Error::Shape(format!("feature width {} after {}", m.cols(), sum.len())));
            }
            for row in m.iter_rows() {
                for ((s, q), &x) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                    *s += x;
                    *q += x * x;
                }
            }
            rows += m.rows();
        }
        if rows == 0 {
            return Err(Error::Config("no feature frames to fit a normaliser on".into()));
        }
        let n = rows as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| 1.0 / (q / n - m * m).max(0.0).sqrt().max(MIN_FEATURE_STD))
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.dim() {
            return Err(Error::Shape(format!("normaliser for {} bins applied to {}", self.dim(), features.cols())));
        }
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((x, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *x = (*x - m) * s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_columns_are_standardised() {
        let a = Matrix::from_fn(50, 3, |r, c| (r as f64) * (c as f64 + 1.0) - 7.0);
        let b = Matrix::from_fn(30, 3, |r, c| if c == 2 { 4.0 } else { -(r as f64) });
        let norm = FeatureNormalizer::fit([&a, &b]).unwrap();
        let (na, nb) = (norm.apply(&a).unwrap(), norm.apply(&b).unwrap());
        for c in 0..2 {
            let vals: Vec<f64> = na.iter_rows().chain(nb.iter_rows()).map(|r| r[c]).collect();
            let mean = vals.iter().sum::<f64>() / 80.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 80.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        assert!(FeatureNormalizer::identity(3).apply(&a).unwrap() == a);
        assert!(FeatureNormalizer::identity(3).is_identity() && !norm.is_identity());
        assert!(matches!(norm.apply(&Matrix::zeros(2, 4)), Err(Error::Shape(_))));
        assert!(matches!(FeatureNormalizer::fit([]), Err(Error::Config(_))));
    }
}
