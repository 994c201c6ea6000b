//! The synthetic retrieval task used by the examples, the pipeline command
//! and the acceptance suite: Gaussian blobs split into train, query and
//! database sets, a centroid-projection teacher fitted on the train split,
//! and mAP@K under both search paradigms.

use crate::codes::CodeMatrix;
use crate::data::{BlobSpec, LabeledData};
use crate::distill::{StudentModel, TeacherModel};
use crate::error::Result;
use crate::metrics::{isd, RelevanceJudge};
use crate::search::{evaluate, Paradigm};

/// Query ids start here so they never collide with database ids.
pub const QUERY_ID_OFFSET: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct BlobTask {
    pub n_classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub train_per_class: usize,
    pub query_per_class: usize,
    pub db_per_class: usize,
    pub bits: usize,
    pub seed: u64,
}

impl Default for BlobTask {
    fn default() -> Self {
        BlobTask {
            n_classes: 10,
            dim: 64,
            spread: 1.5,
            train_per_class: 500,
            query_per_class: 100,
            db_per_class: 400,
            bits: 32,
            seed: 0,
        }
    }
}

pub struct TaskData {
    pub train: LabeledData,
    pub query: LabeledData,
    pub db: LabeledData,
    pub teacher: TeacherModel,
}

impl BlobTask {
    pub fn blobs(&self) -> BlobSpec {
        BlobSpec { n_classes: self.n_classes, dim: self.dim, spread: self.spread, seed: self.seed }
    }

    pub fn build(&self) -> Result<TaskData> {
        let spec = self.blobs();
        let train = spec.sample(self.train_per_class, 0)?;
        let query = spec.sample(self.query_per_class, 1)?;
        let db = spec.sample(self.db_per_class, 2)?;
        let teacher = TeacherModel::centroid(&train.features, &train.labels, self.bits, self.seed)?;
        Ok(TaskData { train, query, db, teacher })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub k: usize,
    pub student_sshp: f64,
    pub student_ashp: f64,
    pub teacher_sshp: f64,
    /// Mean student-teacher Hamming distance over the database.
    pub db_isd: f64,
}

impl TaskData {
    pub fn judge(&self) -> Result<RelevanceJudge> {
        let db_ids: Vec<u64> = (0..self.db.labels.len() as u64).collect();
        let mut judge = RelevanceJudge::from_pairs(&db_ids, &self.db.labels)?;
        judge.extend(&self.query_ids(), &self.query.labels);
        Ok(judge)
    }

    pub fn query_ids(&self) -> Vec<u64> {
        (0..self.query.labels.len() as u64).map(|i| QUERY_ID_OFFSET + i).collect()
    }

    pub fn teacher_db(&self) -> Result<CodeMatrix> {
        self.teacher.encode_all(&self.db.features)
    }

    pub fn teacher_queries(&self) -> Result<CodeMatrix> {
        self.teacher.encode_all(&self.query.features)?.relabel(self.query_ids())
    }

    pub fn student_db(&self, student: &StudentModel) -> Result<CodeMatrix> {
        student.encode_all(&self.db.features)
    }

    pub fn student_queries(&self, student: &StudentModel) -> Result<CodeMatrix> {
        student.encode_all(&self.query.features)?.relabel(self.query_ids())
    }

    pub fn report(&self, student: &StudentModel, k: usize) -> Result<RetrievalReport> {
        let judge = self.judge()?;
        let (sdb, tdb) = (self.student_db(student)?, self.teacher_db()?);
        let (sq, tq) = (self.student_queries(student)?, self.teacher_queries()?);
        Ok(RetrievalReport {
            k,
            student_sshp: evaluate(Paradigm::Sshp, &sdb, &tdb, &sq, &judge, k)?,
            student_ashp: evaluate(Paradigm::Ashp, &sdb, &tdb, &sq, &judge, k)?,
            teacher_sshp: evaluate(Paradigm::Sshp, &tdb, &tdb, &tq, &judge, k)?,
            db_isd: isd(&sdb, &tdb)?,
        })
    }
}
