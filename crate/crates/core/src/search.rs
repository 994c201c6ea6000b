//! Exact Hamming top-K retrieval, the symmetric / asymmetric evaluation
//! paradigms, and a latency harness.
//!
//! The index is a linear popcount scan. Results are ordered by
//! `(distance, id)`, so every ranking is fully deterministic.

use std::collections::BinaryHeap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::codes::{hamming_words, BitCode, CodeMatrix};
use crate::error::{BrcdError, Result};
use crate::metrics::{map_at_k, Hit, RankedResult, RelevanceJudge};
use crate::rng::stream_rng;

#[derive(Clone, Debug)]
pub struct HammingIndex {
    db: CodeMatrix,
}

impl HammingIndex {
    pub fn build(db: CodeMatrix) -> Result<Self> {
        if db.is_empty() {
            return Err(BrcdError::invalid("cannot index an empty code matrix"));
        }
        Ok(HammingIndex { db })
    }

    pub fn len(&self) -> usize {
        self.db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.db.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.db.bits()
    }

    pub fn codes(&self) -> &CodeMatrix {
        &self.db
    }

    pub fn topk(&self, query: &BitCode, k: usize) -> Result<RankedResult> {
        self.topk_excluding(query, k, None, 0)
    }

    /// Top-K with the database entry whose id equals `exclude` skipped.
    /// `query_id` is only recorded on the result.
    pub fn topk_excluding(
        &self,
        query: &BitCode,
        k: usize,
        exclude: Option<u64>,
        query_id: u64,
    ) -> Result<RankedResult> {
        if query.len() != self.db.bits() {
            return Err(BrcdError::dim(self.db.bits(), query.len()));
        }
        let available = self.db.len()
            - exclude.map_or(0, |id| self.db.row_of(id).is_some() as usize);
        if k == 0 || k > available {
            return Err(BrcdError::invalid(format!(
                "K = {k} must lie in 1..={available}"
            )));
        }
        let q = query.words();
        let ids = self.db.ids();
        let mut heap: BinaryHeap<(u32, u64)> = BinaryHeap::with_capacity(k + 1);
        for row in 0..self.db.len() {
            let id = ids[row];
            if exclude == Some(id) {
                continue;
            }
            let d = hamming_words(q, self.db.row_words(row));
            if heap.len() < k {
                heap.push((d, id));
            } else if (d, id) < *heap.peek().unwrap() {
                heap.pop();
                heap.push((d, id));
            }
        }
        let hits = heap
            .into_sorted_vec()
            .into_iter()
            .map(|(distance, id)| Hit { distance, id })
            .collect();
        Ok(RankedResult::new_unchecked(query_id, hits))
    }

    /// One ranked list per query row. With `exclude_self`, a query whose id
    /// is present in the database never retrieves itself.
    pub fn search_batch(
        &self,
        queries: &CodeMatrix,
        k: usize,
        exclude_self: bool,
    ) -> Result<Vec<RankedResult>> {
        (0..queries.len())
            .into_par_iter()
            .map(|q| {
                let qid = queries.ids()[q];
                let exclude = exclude_self.then_some(qid);
                self.topk_excluding(&queries.row(q), k, exclude, qid)
            })
            .collect()
    }
}

/// Which model produced the database codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeSource {
    Student,
    Teacher,
}

/// Symmetric paradigm: student codes on both sides. Asymmetric: student
/// queries against a teacher-coded database. Queries always come from the
/// student.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Paradigm {
    Sshp,
    Ashp,
}

impl Paradigm {
    pub fn db_source(self) -> CodeSource {
        match self {
            Paradigm::Sshp => CodeSource::Student,
            Paradigm::Ashp => CodeSource::Teacher,
        }
    }

    pub fn query_source(self) -> CodeSource {
        CodeSource::Student
    }

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Sshp => "SSHP",
            Paradigm::Ashp => "ASHP",
        }
    }
}

/// mAP@K of student queries against the paradigm-selected database.
pub fn evaluate(
    paradigm: Paradigm,
    student_db: &CodeMatrix,
    teacher_db: &CodeMatrix,
    student_queries: &CodeMatrix,
    judge: &RelevanceJudge,
    k: usize,
) -> Result<f64> {
    if student_db.ids() != teacher_db.ids() {
        return Err(BrcdError::invalid("student and teacher databases are not id-aligned"));
    }
    let db = match paradigm.db_source() {
        CodeSource::Student => student_db,
        CodeSource::Teacher => teacher_db,
    };
    let index = HammingIndex::build(db.clone())?;
    let results = index.search_batch(student_queries, k, true)?;
    map_at_k(&results, judge, k)
}

/// Uniformly random codes with ids `0..n`.
pub fn synthetic_codes(n: usize, bits: usize, seed: u64) -> Result<CodeMatrix> {
    if n == 0 || bits == 0 {
        return Err(BrcdError::invalid("synthetic codes need n >= 1 and bits >= 1"));
    }
    let mut rng = stream_rng(seed, 0xC0DE);
    let codes: Vec<BitCode> = (0..n)
        .map(|_| {
            let bools: Vec<bool> = (0..bits).map(|_| rng.random()).collect();
            BitCode::from_bools(&bools).unwrap()
        })
        .collect();
    CodeMatrix::from_codes(&codes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub batch_size: usize,
    pub n: usize,
    pub k: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
}

/// Time `search_batch` for every query batch. The first of `repetitions`
/// runs is a warm-up and is not recorded.
pub fn bench(
    index: &HammingIndex,
    query_batches: &[CodeMatrix],
    k: usize,
    repetitions: usize,
) -> Result<Vec<LatencyRow>> {
    if repetitions < 3 {
        return Err(BrcdError::invalid("bench needs at least 3 repetitions"));
    }
    let mut rows = Vec::with_capacity(query_batches.len());
    for batch in query_batches {
        let mut samples = Vec::with_capacity(repetitions - 1);
        for rep in 0..repetitions {
            let start = Instant::now();
            let res = index.search_batch(batch, k, false)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(res);
            if rep > 0 {
                samples.push(ms);
            }
        }
        samples.sort_by(f64::total_cmp);
        let mean_ms = samples.iter().sum::<f64>() / samples.len() as f64;
        let mid = samples.len() / 2;
        let median_ms = if samples.len() % 2 == 0 {
            (samples[mid - 1] + samples[mid]) / 2.0
        } else {
            samples[mid]
        };
        rows.push(LatencyRow {
            batch_size: batch.len(),
            n: index.len(),
            k,
            mean_ms,
            median_ms,
        });
    }
    Ok(rows)
}
