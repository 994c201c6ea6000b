//! Per-cluster bit expectations and redundancy-bit masks.
//!
//! Within a relevance set (a cluster of teacher codes), a dimension whose
//! `±1` values are close to balanced carries no semantic signal. Its
//! expectation `e_r = |Σ_j h_jr| / |C|` is near zero and the mask drops it
//! from the similarity used for structural terms.

use crate::cluster::ClusterModel;
use crate::codes::{cosine_unchecked, BitCode, CodeMatrix};
use crate::error::{BrcdError, Result};

/// Default grid for the mask threshold.
pub const DELTA_GRID: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];

fn column_sums<'a>(codes: impl Iterator<Item = BitCode> + 'a, bits: usize) -> (Vec<i64>, usize) {
    let mut sums = vec![0i64; bits];
    let mut n = 0;
    for c in codes {
        n += 1;
        for (r, s) in sums.iter_mut().enumerate() {
            *s += c.get(r) as i64;
        }
    }
    (sums, n)
}

/// `|mean|` of each dimension over the cluster's codes.
pub fn bit_expectation(cluster_codes: &CodeMatrix) -> Result<Vec<f64>> {
    member_expectation(cluster_codes, &(0..cluster_codes.len()).collect::<Vec<_>>())
}

/// [`bit_expectation`] over a subset of rows.
pub fn member_expectation(codes: &CodeMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(BrcdError::invalid("bit expectation of an empty cluster"));
    }
    let (sums, n) = column_sums(rows.iter().map(|&r| codes.row(r)), codes.bits());
    Ok(sums.iter().map(|&s| s.unsigned_abs() as f64 / n as f64).collect())
}

/// Fraction of `+1` and `-1` per dimension.
pub fn bit_frequency_histogram(cluster_codes: &CodeMatrix) -> Result<Vec<(f64, f64)>> {
    if cluster_codes.is_empty() {
        return Err(BrcdError::invalid("histogram of an empty cluster"));
    }
    let (sums, n) = column_sums(cluster_codes.rows(), cluster_codes.bits());
    Ok(sums
        .iter()
        .map(|&s| {
            let plus = (n as i64 + s) / 2;
            let p = plus as f64 / n as f64;
            (p, (n as i64 - plus) as f64 / n as f64)
        })
        .collect())
}

/// `k` binary masks of length `b`, one per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct BitMaskSet {
    masks: Vec<Vec<bool>>,
    expectations: Vec<Vec<f64>>,
    delta: f64,
}

/// Threshold expectations: a bit survives when `e >= delta`.
pub fn make_masks(expectations: Vec<Vec<f64>>, delta: f64) -> Result<BitMaskSet> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(BrcdError::invalid(format!("delta = {delta} outside [0, 1]")));
    }
    if expectations.is_empty() {
        return Err(BrcdError::invalid("no clusters to mask"));
    }
    let b = expectations[0].len();
    if expectations.iter().any(|e| e.len() != b) {
        return Err(BrcdError::invalid("expectation vectors differ in length"));
    }
    if expectations.iter().flatten().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(BrcdError::invalid("expectations must lie in [0, 1]"));
    }
    let masks = expectations
        .iter()
        .map(|e| e.iter().map(|&v| v >= delta).collect())
        .collect();
    Ok(BitMaskSet { masks, expectations, delta })
}

impl BitMaskSet {
    /// Masks for every cluster of `model`, with expectations taken over the
    /// training codes the model was fitted on. A cluster with no members
    /// keeps every bit.
    pub fn from_clusters(codes: &CodeMatrix, model: &ClusterModel, delta: f64) -> Result<Self> {
        if codes.ids() != model.ids() {
            return Err(BrcdError::invalid("codes are not the ones the cluster model was fitted on"));
        }
        Self::from_assignments(codes, model.labels(), model.k(), delta)
    }

    /// Masks from a row-aligned assignment vector with labels in `0..k`.
    pub fn from_assignments(codes: &CodeMatrix, labels: &[usize], k: usize, delta: f64) -> Result<Self> {
        if labels.len() != codes.len() {
            return Err(BrcdError::dim(codes.len(), labels.len()));
        }
        let mut members = vec![Vec::new(); k];
        for (row, &l) in labels.iter().enumerate() {
            members
                .get_mut(l)
                .ok_or_else(|| BrcdError::invalid(format!("label {l} outside 0..{k}")))?
                .push(row);
        }
        let expectations = members
            .iter()
            .map(|rows| {
                if rows.is_empty() {
                    Ok(vec![1.0; codes.bits()])
                } else {
                    member_expectation(codes, rows)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        make_masks(expectations, delta)
    }

    /// Every bit kept for each of `k` clusters.
    pub fn all_ones(k: usize, bits: usize) -> Self {
        BitMaskSet {
            masks: vec![vec![true; bits]; k],
            expectations: vec![vec![1.0; bits]; k],
            delta: 0.0,
        }
    }

    /// Explicit masks (expectations recorded as 0/1).
    pub fn from_masks(masks: Vec<Vec<bool>>) -> Result<Self> {
        let exps = masks
            .iter()
            .map(|m| m.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect())
            .collect();
        make_masks(exps, 1.0)
    }

    pub fn k(&self) -> usize {
        self.masks.len()
    }

    pub fn bits(&self) -> usize {
        self.masks[0].len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mask(&self, cluster: usize) -> &[bool] {
        &self.masks[cluster]
    }

    pub fn expectations(&self) -> &[Vec<f64>] {
        &self.expectations
    }

    /// Masks as codes, bit set where the mask keeps the dimension. Ids are
    /// cluster indices.
    pub fn to_code_matrix(&self) -> Result<CodeMatrix> {
        let codes = self
            .masks
            .iter()
            .map(|m| BitCode::from_bools(m))
            .collect::<Result<Vec<_>>>()?;
        CodeMatrix::from_codes(&codes)
    }
}

/// Elementwise `mask ⊙ v`.
pub fn apply_mask(v: &[f64], mask: &[bool]) -> Vec<f64> {
    v.iter().zip(mask).map(|(&x, &m)| if m { x } else { 0.0 }).collect()
}

/// Cosine of the two vectors after each is masked with its own mask.
/// Returns 0 when either masked vector is all zero.
pub fn masked_cosine(a: &[f64], mask_a: &[bool], b: &[f64], mask_b: &[bool]) -> Result<f64> {
    let n = a.len();
    for len in [mask_a.len(), b.len(), mask_b.len()] {
        if len != n {
            return Err(BrcdError::dim(n, len));
        }
    }
    Ok(cosine_unchecked(&apply_mask(a, mask_a), &apply_mask(b, mask_b)))
}
