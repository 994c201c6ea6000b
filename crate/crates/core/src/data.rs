//! Real-valued feature matrices and the synthetic Gaussian-blob generator
//! that stands in for an image dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{BrcdError, Result};
use crate::rng::derive_seed;

/// Row-major `N × dim` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(BrcdError::invalid("embedding dimension must be at least 1"));
        }
        if values.len() % dim != 0 {
            return Err(BrcdError::invalid(format!(
                "{} values do not form rows of width {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BrcdError::invalid("non-finite feature value"));
        }
        Ok(EmbeddingMatrix { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(BrcdError::invalid("ragged feature rows"));
        }
        Self::new(dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Isotropic Gaussian blobs around per-class means.
///
/// Class means are drawn from `N(0, 1)^dim` using `seed`; samples for a given
/// `stream` use a seed derived from `(seed, stream)`, so train / query / database
/// splits drawn from different streams share the same class geometry.
#[derive(Clone, Debug)]
pub struct BlobSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct LabeledData {
    pub features: EmbeddingMatrix,
    pub labels: Vec<u32>,
}

impl BlobSpec {
    pub fn means(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_classes)
            .map(|_| (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    /// `per_class` points for every class, ordered class by class.
    pub fn sample(&self, per_class: usize, stream: u64) -> Result<LabeledData> {
        if self.n_classes == 0 || self.dim == 0 || per_class == 0 {
            return Err(BrcdError::invalid("n_classes, dim and per_class must be positive"));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(BrcdError::invalid("spread must be finite and non-negative"));
        }
        let means = self.means();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 1 + stream));
        let mut values = Vec::with_capacity(self.n_classes * per_class * self.dim);
        let mut labels = Vec::with_capacity(self.n_classes * per_class);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                for &m in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    values.push(m + self.spread * z);
                }
                labels.push(c as u32);
            }
        }
        Ok(LabeledData {
            features: EmbeddingMatrix::new(self.dim, values)?,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_labels() {
        let spec = BlobSpec { n_classes: 10, dim: 8, spread: 1.0, seed: 3 };
        let d = spec.sample(500, 0).unwrap();
        assert_eq!(d.features.len(), 5000);
        assert_eq!(d.labels.len(), 5000);
        assert_eq!(*d.labels.iter().max().unwrap(), 9);
        assert_eq!(d.labels.iter().filter(|&&l| l == 4).count(), 500);
    }

    #[test]
    fn zero_spread_collapses_classes() {
        let spec = BlobSpec { n_classes: 3, dim: 5, spread: 0.0, seed: 9 };
        let d = spec.sample(4, 0).unwrap();
        for c in 0..3 {
            let first = d.features.row(c * 4);
            for k in 1..4 {
                assert_eq!(d.features.row(c * 4 + k), first);
            }
        }
    }

    #[test]
    fn streams_share_means_but_not_samples() {
        let spec = BlobSpec { n_classes: 2, dim: 4, spread: 1.0, seed: 1 };
        let a = spec.sample(3, 0).unwrap();
        let b = spec.sample(3, 1).unwrap();
        let a2 = spec.sample(3, 0).unwrap();
        assert_eq!(a.features, a2.features);
        assert_ne!(a.features, b.features);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(EmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(EmbeddingMatrix::new(3, vec![1.0; 4]).is_err());
    }
}
