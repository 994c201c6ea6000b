use rand::Rng;
use rand_distr::StandardNormal;

use crate::codes::{sign_quantize, BitCode, CodeMatrix};
use crate::data::EmbeddingMatrix;
use crate::error::{BrcdError, Result};
use crate::rng::stream_rng;

/// Frozen code generator. Projection teachers compute
/// `sign(W (x - center))`; a file-loaded teacher returns stored codes and
/// codes unseen features by their nearest stored feature.
#[derive(Clone, Debug, PartialEq)]
pub enum TeacherModel {
    File {
        codes: CodeMatrix,
        features: EmbeddingMatrix,
    },
    Hyperplane {
        projection: Vec<f64>,
        center: Vec<f64>,
        bits: usize,
    },
    Centroid {
        projection: Vec<f64>,
        center: Vec<f64>,
        bits: usize,
    },
}

fn column_mean(features: &EmbeddingMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; features.dim()];
    for row in features.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let n = features.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

impl TeacherModel {
    /// Codes aligned row for row with `features`.
    pub fn from_codes(codes: CodeMatrix, features: EmbeddingMatrix) -> Result<Self> {
        if codes.len() != features.len() {
            return Err(BrcdError::dim(features.len(), codes.len()));
        }
        Ok(TeacherModel::File { codes, features })
    }

    /// Gaussian random hyperplanes through the feature mean.
    pub fn hyperplane(features: &EmbeddingMatrix, bits: usize, seed: u64) -> Result<Self> {
        if bits == 0 || features.is_empty() {
            return Err(BrcdError::invalid("hyperplane teacher needs bits >= 1 and features"));
        }
        let mut rng = stream_rng(seed, 0x7EAC);
        let projection = (0..bits * features.dim()).map(|_| rng.sample(StandardNormal)).collect();
        Ok(TeacherModel::Hyperplane { projection, center: column_mean(features), bits })
    }

    /// Each class centroid is given a random `±1` codeword; projection row
    /// `r` is `Σ_c B[c][r] μ_c / |μ_c|²` over mean-centered centroids, so a
    /// class centroid lands on a code close to its codeword.
    pub fn centroid(features: &EmbeddingMatrix, labels: &[u32], bits: usize, seed: u64) -> Result<Self> {
        if bits == 0 || features.is_empty() {
            return Err(BrcdError::invalid("centroid teacher needs bits >= 1 and features"));
        }
        if labels.len() != features.len() {
            return Err(BrcdError::dim(features.len(), labels.len()));
        }
        let dim = features.dim();
        let center = column_mean(features);
        let n_classes = *labels.iter().max().unwrap() as usize + 1;
        let mut sums = vec![vec![0.0; dim]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (row, &y) in features.rows().zip(labels) {
            counts[y as usize] += 1;
            for ((s, x), c) in sums[y as usize].iter_mut().zip(row).zip(&center) {
                *s += x - c;
            }
        }
        let mut rng = stream_rng(seed, 0x7EAD);
        let mut projection = vec![0.0; bits * dim];
        for (sum, &count) in sums.iter().zip(&counts) {
            if count == 0 {
                continue;
            }
            let mu: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let norm2: f64 = mu.iter().map(|x| x * x).sum();
            if norm2 == 0.0 {
                continue;
            }
            for r in 0..bits {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                for (w, m) in projection[r * dim..(r + 1) * dim].iter_mut().zip(&mu) {
                    *w += sign * m / norm2;
                }
            }
        }
        Ok(TeacherModel::Centroid { projection, center, bits })
    }

    pub fn bits(&self) -> usize {
        match self {
            TeacherModel::File { codes, .. } => codes.bits(),
            TeacherModel::Hyperplane { bits, .. } | TeacherModel::Centroid { bits, .. } => *bits,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TeacherModel::File { features, .. } => features.dim(),
            TeacherModel::Hyperplane { center, .. } | TeacherModel::Centroid { center, .. } => center.len(),
        }
    }

    /// Parameter count of a projection teacher; `None` for stored codes.
    pub fn param_count(&self) -> Option<usize> {
        match self {
            TeacherModel::File { .. } => None,
            TeacherModel::Hyperplane { projection, center, .. }
            | TeacherModel::Centroid { projection, center, .. } => Some(projection.len() + center.len()),
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<BitCode> {
        if x.len() != self.input_dim() {
            return Err(BrcdError::dim(self.input_dim(), x.len()));
        }
        match self {
            TeacherModel::File { codes, features } => {
                let mut best = (f64::INFINITY, 0usize);
                for (i, row) in features.rows().enumerate() {
                    let d: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                Ok(codes.row(best.1))
            }
            TeacherModel::Hyperplane { projection, center, bits }
            | TeacherModel::Centroid { projection, center, bits } => {
                let dim = center.len();
                let centered: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let z: Vec<f64> = (0..*bits)
                    .map(|r| projection[r * dim..(r + 1) * dim].iter().zip(&centered).map(|(w, v)| w * v).sum())
                    .collect();
                sign_quantize(&z)
            }
        }
    }

    /// Codes for every row, ids `0..N`. Stored codes are returned as is.
    pub fn encode_all(&self, features: &EmbeddingMatrix) -> Result<CodeMatrix> {
        if let TeacherModel::File { codes, features: own } = self {
            if own == features {
                return Ok(codes.relabel((0..codes.len() as u64).collect())?);
            }
        }
        let codes = features.rows().map(|x| self.encode(x)).collect::<Result<Vec<_>>>()?;
        CodeMatrix::from_codes(&codes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BlobSpec;

    #[test]
    fn deterministic_and_frozen() {
        let data = BlobSpec { n_classes: 3, dim: 8, spread: 0.3, seed: 1 }.sample(20, 0).unwrap();
        let t = TeacherModel::centroid(&data.features, &data.labels, 16, 4).unwrap();
        let before = t.clone();
        let a = t.encode_all(&data.features).unwrap();
        let b = t.encode_all(&data.features).unwrap();
        assert_eq!(a, b);
        assert_eq!(t, before);
        assert_eq!(t.param_count(), Some(16 * 8 + 8));
        let h = TeacherModel::hyperplane(&data.features, 16, 4).unwrap();
        assert_eq!(h.encode(data.features.row(0)).unwrap(), h.encode(data.features.row(0)).unwrap());
    }

    #[test]
    fn centroid_codes_cluster_by_class() {
        let data = BlobSpec { n_classes: 4, dim: 16, spread: 0.0, seed: 2 }.sample(5, 0).unwrap();
        let t = TeacherModel::centroid(&data.features, &data.labels, 32, 0).unwrap();
        let codes = t.encode_all(&data.features).unwrap();
        for i in 0..codes.len() {
            for j in 0..codes.len() {
                let same = data.labels[i] == data.labels[j];
                assert_eq!(same, codes.row(i) == codes.row(j), "rows {i} {j}");
            }
        }
    }

    #[test]
    fn file_teacher_uses_nearest_row() {
        let feats = EmbeddingMatrix::from_rows(&[vec![0.0, 0.0], vec![10.0, 0.0]]).unwrap();
        let codes = CodeMatrix::from_codes(&[
            BitCode::from_signs(&[1, 1, 1]).unwrap(),
            BitCode::from_signs(&[-1, -1, 1]).unwrap(),
        ])
        .unwrap();
        let t = TeacherModel::from_codes(codes.clone(), feats.clone()).unwrap();
        assert_eq!(t.encode(&[9.0, 1.0]).unwrap(), codes.row(1));
        assert_eq!(t.encode_all(&feats).unwrap(), codes);
        assert_eq!(t.param_count(), None);
        assert!(t.encode(&[1.0]).is_err());
    }
}
