//! K-means over teacher codes, pseudo labels, and the batch filters built on
//! them (offset positives and false negatives).
//!
//! Codes are embedded as real `±1` vectors and clustered with Euclidean
//! Lloyd iterations from a seeded k-means++ start. On `±1` vectors squared
//! Euclidean distance is `4 * hamming`, so the geometry is the Hamming one.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

use crate::codes::{BitCode, CodeMatrix};
use crate::error::{BrcdError, Result};
use crate::rng::stream_rng;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<Vec<f64>>,
    ids: Vec<u64>,
    labels: Vec<usize>,
    index: HashMap<u64, usize>,
    inertia: f64,
    history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties, and its distance.
fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(cen, p);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(centroids: &[Vec<f64>], points: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .par_iter()
        .map(|p| nearest(centroids, p))
        .unzip()
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0xC1);
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding leaving us on a zero-weight point
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            pick
        } else {
            // every point coincides with a centroid; take any unused point
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
        centroids.push(points[pick].clone());
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ start. Stops once no centroid moves by
/// more than `tol` (Euclidean) or after `max_iter` update steps.
pub fn kmeans_fit(
    codes: &CodeMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if codes.is_empty() {
        return Err(BrcdError::invalid("cannot cluster an empty code matrix"));
    }
    if k == 0 || k > codes.len() {
        return Err(BrcdError::invalid(format!("k = {k} must lie in 1..={}", codes.len())));
    }
    if max_iter == 0 {
        return Err(BrcdError::invalid("max_iter must be at least 1"));
    }
    if !(tol >= 0.0) {
        return Err(BrcdError::invalid("tol must be non-negative"));
    }
    let points = codes.to_f64_rows();
    let b = codes.bits();
    let mut centroids = kmeans_pp(&points, k, seed);
    let mut history = Vec::new();

    for _ in 0..max_iter {
        let (labels, dists) = assign_all(&centroids, &points);
        history.push(dists.iter().sum());

        let mut sums = vec![vec![0.0; b]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &n)| {
                if n == 0 {
                    Vec::new()
                } else {
                    s.into_iter().map(|v| v / n as f64).collect()
                }
            })
            .collect();

        // Re-seed empty clusters from the points farthest from their centroids.
        let mut used = vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| !used[i])
                .max_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(j.cmp(&i)))
                .expect("k <= N leaves a free point");
            used[far] = true;
            next[c] = points[far].clone();
        }

        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift <= tol {
            break;
        }
    }

    let (labels, dists) = assign_all(&centroids, &points);
    let inertia: f64 = dists.iter().sum();
    history.push(inertia);
    ClusterModel::build(centroids, codes.ids().to_vec(), labels, inertia, history)
}

impl ClusterModel {
    fn build(
        centroids: Vec<Vec<f64>>,
        ids: Vec<u64>,
        labels: Vec<usize>,
        inertia: f64,
        history: Vec<f64>,
    ) -> Result<Self> {
        let k = centroids.len();
        if k == 0 {
            return Err(BrcdError::invalid("a cluster model needs k >= 1"));
        }
        let b = centroids[0].len();
        if centroids.iter().any(|c| c.len() != b) {
            return Err(BrcdError::invalid("centroids differ in length"));
        }
        if centroids.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(BrcdError::invalid("centroid entries must lie in [-1, 1]"));
        }
        if ids.len() != labels.len() {
            return Err(BrcdError::dim(ids.len(), labels.len()));
        }
        if labels.iter().any(|&l| l >= k) {
            return Err(BrcdError::invalid("assignment outside 0..k"));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(BrcdError::invalid(format!("duplicate id {id}")));
            }
        }
        Ok(ClusterModel { centroids, ids, labels, index, inertia, history })
    }

    /// Assemble a model from explicit centroids and assignments.
    pub fn from_parts(
        centroids: Vec<Vec<f64>>,
        ids: Vec<u64>,
        labels: Vec<usize>,
        inertia: f64,
    ) -> Result<Self> {
        Self::build(centroids, ids, labels, inertia, vec![inertia])
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn bits(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    /// Inertia after each assignment step, ending with the final one.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Training assignments, aligned with [`ids`](Self::ids).
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).map(|&row| self.labels[row])
    }

    /// Rows (positions in the training matrix) assigned to cluster `c`.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }

    /// Nearest centroid to `code`; ties go to the lowest index.
    pub fn assign(&self, code: &BitCode) -> Result<usize> {
        if code.len() != self.bits() {
            return Err(BrcdError::dim(self.bits(), code.len()));
        }
        Ok(nearest(&self.centroids, &code.to_f64()).0)
    }
}

/// One fit per `k`, reporting `(k, inertia)`.
pub fn inertia_curve(codes: &CodeMatrix, k_values: &[usize], seed: u64) -> Result<Vec<(usize, f64)>> {
    k_values
        .iter()
        .map(|&k| {
            let m = kmeans_fit(codes, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
            Ok((k, m.inertia()))
        })
        .collect()
}

/// Elbow pick: the interior `k` with the largest second difference of the
/// inertia curve. Curves with fewer than three points return their last `k`.
pub fn elbow_k(curve: &[(usize, f64)]) -> Option<usize> {
    if curve.len() < 3 {
        return curve.last().map(|&(k, _)| k);
    }
    let mut best: Option<(usize, f64)> = None;
    for w in curve.windows(3) {
        let dd = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if best.is_none_or(|(_, b)| dd > b) {
            best = Some((w[1].0, dd));
        }
    }
    best.map(|(k, _)| k)
}

/// Twice the class count when it is known, otherwise the elbow of the
/// inertia curve over `2..=max_k`.
pub fn default_k(codes: &CodeMatrix, expected_classes: Option<usize>, seed: u64, max_k: usize) -> Result<usize> {
    if let Some(c) = expected_classes {
        return Ok((2 * c).clamp(1, codes.len()));
    }
    let hi = max_k.min(codes.len());
    let ks: Vec<usize> = (1..=hi).collect();
    let curve = inertia_curve(codes, &ks, seed)?;
    Ok(elbow_k(&curve).unwrap_or(1))
}

/// An augmentation is an offset positive when it lands in a different
/// cluster than its anchor.
pub fn detect_offset_positive(y_anchor: usize, y_aug: usize) -> bool {
    y_anchor != y_aug
}

/// False-negative exclusions for anchor `i` in a batch laid out as
/// `[anchors 0..M, augmentations M..2M]`: member `j` is excluded when it is
/// neither `i` nor `i'` and shares the anchor's cluster.
pub fn false_negative_mask(i: usize, labels: &[usize]) -> Result<Vec<bool>> {
    if labels.len() % 2 != 0 {
        return Err(BrcdError::invalid("batch labels must cover 2M members"));
    }
    let m = labels.len() / 2;
    if i >= m {
        return Err(BrcdError::invalid(format!("anchor {i} out of range for M = {m}")));
    }
    let yi = labels[i];
    Ok(labels
        .iter()
        .enumerate()
        .map(|(j, &y)| j != i && j != m + i && y == yi)
        .collect())
}
