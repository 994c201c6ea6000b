//! Retrieval and alignment metrics: mAP@K, ISD, NRA@K and the offset
//! positive rate.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::codes::{hamming_words, CodeMatrix};
use crate::error::{BrcdError, Result};
use crate::search::HammingIndex;

/// One retrieved candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Hit {
    pub distance: u32,
    pub id: u64,
}

/// Ranked candidates for a single query, nearest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedResult {
    pub query_id: u64,
    hits: Vec<Hit>,
}

impl RankedResult {
    /// Distances must be non-decreasing and candidate ids unique.
    pub fn new(query_id: u64, hits: Vec<Hit>) -> Result<Self> {
        if hits.windows(2).any(|w| w[1].distance < w[0].distance) {
            return Err(BrcdError::invalid("ranked distances must be non-decreasing"));
        }
        let mut seen = HashSet::with_capacity(hits.len());
        if !hits.iter().all(|h| seen.insert(h.id)) {
            return Err(BrcdError::invalid("duplicate candidate id in ranked result"));
        }
        Ok(RankedResult { query_id, hits })
    }

    pub(crate) fn new_unchecked(query_id: u64, hits: Vec<Hit>) -> Self {
        RankedResult { query_id, hits }
    }

    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }
}

/// Ground-truth (or pseudo) class label per id.
#[derive(Clone, Debug, Default)]
pub struct RelevanceJudge {
    labels: HashMap<u64, u32>,
}

impl RelevanceJudge {
    pub fn new(labels: HashMap<u64, u32>) -> Self {
        RelevanceJudge { labels }
    }

    pub fn from_pairs(ids: &[u64], labels: &[u32]) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(BrcdError::dim(ids.len(), labels.len()));
        }
        Ok(RelevanceJudge {
            labels: ids.iter().copied().zip(labels.iter().copied()).collect(),
        })
    }

    /// Add labels for more ids; an id already present keeps its old label.
    pub fn extend(&mut self, ids: &[u64], labels: &[u32]) {
        for (&i, &l) in ids.iter().zip(labels) {
            self.labels.entry(i).or_insert(l);
        }
    }

    pub fn label(&self, id: u64) -> Result<u32> {
        self.labels
            .get(&id)
            .copied()
            .ok_or_else(|| BrcdError::invalid(format!("no label for id {id}")))
    }
}

/// Mean over queries of AP@K, where AP@K averages Precision@j over the
/// relevant positions `j ≤ K` and is normalized by the number of relevant
/// hits found in the top K.
pub fn map_at_k(results: &[RankedResult], judge: &RelevanceJudge, k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(BrcdError::invalid("mAP over an empty result set"));
    }
    if k == 0 {
        return Err(BrcdError::invalid("K must be at least 1"));
    }
    let mut total = 0.0;
    for res in results {
        let q = judge.label(res.query_id)?;
        let mut relevant = 0usize;
        let mut ap = 0.0;
        for (j, hit) in res.hits.iter().take(k).enumerate() {
            if judge.label(hit.id)? == q {
                relevant += 1;
                ap += relevant as f64 / (j + 1) as f64;
            }
        }
        if relevant > 0 {
            total += ap / relevant as f64;
        }
    }
    Ok(total / results.len() as f64)
}

/// Mean per-sample Hamming distance between aligned student and teacher codes.
pub fn isd(student: &CodeMatrix, teacher: &CodeMatrix) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(BrcdError::dim(teacher.len(), student.len()));
    }
    if student.bits() != teacher.bits() {
        return Err(BrcdError::dim(teacher.bits(), student.bits()));
    }
    if student.ids() != teacher.ids() {
        return Err(BrcdError::invalid("student and teacher ids are not aligned"));
    }
    let total: u64 = (0..student.len())
        .map(|i| hamming_words(student.row_words(i), teacher.row_words(i)) as u64)
        .sum();
    Ok(total as f64 / student.len() as f64)
}

/// Fraction of each student query's K nearest teacher codes that share its
/// label, averaged over queries (normalized by `N * K`).
pub fn nra_at_k(
    student_queries: &CodeMatrix,
    teacher_db: &CodeMatrix,
    judge: &RelevanceJudge,
    k: usize,
) -> Result<f64> {
    if k == 0 || k > teacher_db.len() {
        return Err(BrcdError::invalid(format!(
            "K = {k} must lie in 1..={}",
            teacher_db.len()
        )));
    }
    let index = HammingIndex::build(teacher_db.clone())?;
    let counts = (0..student_queries.len())
        .into_par_iter()
        .map(|q| -> Result<usize> {
            let qid = student_queries.ids()[q];
            let label = judge.label(qid)?;
            let res = index.topk(&student_queries.row(q), k)?;
            let mut n = 0;
            for h in res.hits() {
                if judge.label(h.id)? == label {
                    n += 1;
                }
            }
            Ok(n)
        })
        .collect::<Result<Vec<_>>>()?;
    let matched: usize = counts.iter().sum();
    Ok(matched as f64 / (student_queries.len() * k) as f64)
}

/// Offset positive rate: share of pairs whose labels disagree.
pub fn opr<L: PartialEq>(anchor_labels: &[L], aug_labels: &[L]) -> Result<f64> {
    if anchor_labels.len() != aug_labels.len() {
        return Err(BrcdError::dim(anchor_labels.len(), aug_labels.len()));
    }
    if anchor_labels.is_empty() {
        return Err(BrcdError::invalid("OPR needs at least one pair"));
    }
    let off = anchor_labels
        .iter()
        .zip(aug_labels)
        .filter(|(a, b)| a != b)
        .count();
    Ok(off as f64 / anchor_labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{hamming, BitCode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn result(q: u64, ids: &[u64]) -> RankedResult {
        let hits = ids.iter().map(|&id| Hit { distance: 0, id }).collect();
        RankedResult::new(q, hits).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, b: usize) -> CodeMatrix {
        let codes: Vec<BitCode> = (0..n)
            .map(|_| BitCode::from_bools(&(0..b).map(|_| rng.random()).collect::<Vec<_>>()).unwrap())
            .collect();
        CodeMatrix::from_codes(&codes).unwrap()
    }

    #[test]
    fn ap_hand_example() {
        // query 0 is class 1; hits 1,2,3 -> classes 1,0,1
        let judge = RelevanceJudge::from_pairs(&[0, 1, 2, 3], &[1, 1, 0, 1]).unwrap();
        let m = map_at_k(&[result(0, &[1, 2, 3])], &judge, 3).unwrap();
        assert!((m - 5.0 / 6.0).abs() < 1e-15);
        // K truncates
        let m = map_at_k(&[result(0, &[1, 2, 3])], &judge, 2).unwrap();
        assert!((m - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ap_extremes() {
        let judge = RelevanceJudge::from_pairs(&[0, 1, 2, 3, 4], &[0, 0, 0, 1, 1]).unwrap();
        assert_eq!(map_at_k(&[result(0, &[1, 2]), result(3, &[4])], &judge, 2).unwrap(), 1.0);
        assert_eq!(map_at_k(&[result(0, &[3, 4])], &judge, 2).unwrap(), 0.0);
        assert!(map_at_k(&[], &judge, 2).is_err());
        assert!(map_at_k(&[result(0, &[1])], &judge, 0).is_err());
    }

    #[test]
    fn ranked_result_invariants() {
        let bad = vec![Hit { distance: 3, id: 1 }, Hit { distance: 2, id: 2 }];
        assert!(RankedResult::new(0, bad).is_err());
        let dup = vec![Hit { distance: 1, id: 1 }, Hit { distance: 2, id: 1 }];
        assert!(RankedResult::new(0, dup).is_err());
    }

    #[test]
    fn isd_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_matrix(&mut rng, 30, 32);
        assert_eq!(isd(&t, &t).unwrap(), 0.0);
        let comp: Vec<BitCode> = t.rows().map(|c| c.complement()).collect();
        let c = CodeMatrix::from_codes(&comp).unwrap();
        assert_eq!(isd(&c, &t).unwrap(), 32.0);

        let s = random_matrix(&mut rng, 30, 32);
        let brute: f64 = (0..30)
            .map(|i| hamming(&s.row(i), &t.row(i)).unwrap() as f64)
            .sum::<f64>()
            / 30.0;
        assert_eq!(isd(&s, &t).unwrap(), brute);
        assert_eq!(isd(&s, &t).unwrap(), isd(&t, &s).unwrap());

        let shifted = s.relabel((100..130).collect()).unwrap();
        assert!(isd(&shifted, &t).is_err());
    }

    #[test]
    fn nra_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_matrix(&mut rng, 10, 16);
        let all_same = RelevanceJudge::from_pairs(t.ids(), &[7; 10]).unwrap();
        assert_eq!(nra_at_k(&t, &t, &all_same, 4).unwrap(), 1.0);

        // queries carry label 1, database labels 0
        let q = t.relabel((100..110).collect()).unwrap();
        let mut judge = RelevanceJudge::from_pairs(t.ids(), &[0; 10]).unwrap();
        judge.extend(q.ids(), &[1; 10]);
        assert_eq!(nra_at_k(&q, &t, &judge, 3).unwrap(), 0.0);
        assert!(nra_at_k(&q, &t, &judge, 11).is_err());
    }

    #[test]
    fn nra_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let db = random_matrix(&mut rng, 20, 12);
        let q = random_matrix(&mut rng, 20, 12).relabel((20..40).collect()).unwrap();
        let labels: Vec<u32> = (0..40).map(|_| rng.random_range(0..3)).collect();
        let ids: Vec<u64> = (0..40).collect();
        let judge = RelevanceJudge::from_pairs(&ids, &labels).unwrap();
        let k = 5;
        let mut matched = 0;
        for qi in 0..20 {
            let mut all: Vec<(u32, u64)> = (0..20)
                .map(|j| (hamming(&q.row(qi), &db.row(j)).unwrap(), j as u64))
                .collect();
            all.sort();
            matched += all[..k]
                .iter()
                .filter(|(_, id)| labels[*id as usize] == labels[20 + qi])
                .count();
        }
        let expect = matched as f64 / (20 * k) as f64;
        assert_eq!(nra_at_k(&q, &db, &judge, k).unwrap(), expect);
    }

    #[test]
    fn nra_full_database_is_class_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let db = random_matrix(&mut rng, 12, 8);
        let labels: Vec<u32> = (0..12).map(|i| (i % 3 == 0) as u32).collect();
        let judge = RelevanceJudge::from_pairs(db.ids(), &labels).unwrap();
        let freq = |c: u32| labels.iter().filter(|&&l| l == c).count() as f64 / 12.0;
        let expect: f64 = labels.iter().map(|&l| freq(l)).sum::<f64>() / 12.0;
        let got = nra_at_k(&db, &db, &judge, 12).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn opr_cases() {
        let a = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        assert_eq!(opr(&a, &a).unwrap(), 0.0);
        let b = [11, 12, 13, 14, 15, 16, 17, 18, 19, 20];
        assert_eq!(opr(&a, &b).unwrap(), 1.0);
        let h = [1, 2, 3, 4, 5, 0, 0, 0, 0, 0];
        assert_eq!(opr(&a, &h).unwrap(), 0.5);
        assert!(opr(&a, &h[..3]).is_err());
        assert!(opr::<u32>(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn map_is_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<u32> = (0..30).map(|_| rng.random_range(0..3)).collect();
            let ids: Vec<u64> = (0..30).collect();
            let judge = RelevanceJudge::from_pairs(&ids, &labels).unwrap();
            let mut results: Vec<RankedResult> = (0..6u64)
                .map(|q| {
                    let mut c: Vec<u64> = (6..30).collect();
                    for i in (1..c.len()).rev() {
                        c.swap(i, rng.random_range(0..=i));
                    }
                    result(q, &c[..10])
                })
                .collect();
            let before = map_at_k(&results, &judge, 10).unwrap();
            results.reverse();
            results.swap(0, 2);
            let after = map_at_k(&results, &judge, 10).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn opr_relabel_invariant(pairs in proptest::collection::vec((0u32..5, 0u32..5), 1..50), shift in 1u32..100) {
            let (a, b): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            let f = |x: &u32| (x * 7 + shift) % 1000;
            let fa: Vec<u32> = a.iter().map(f).collect();
            let fb: Vec<u32> = b.iter().map(f).collect();
            prop_assert_eq!(opr(&a, &b).unwrap(), opr(&fa, &fb).unwrap());
        }
    }
}
