//! Symmetric and asymmetric retrieval with teacher codes against a random
//! untrained student, plus ISD and NRA@K.
//!
//! cargo run --release --example retrieval_eval -- [K]

use brcd::distill::{StudentArch, StudentModel};
use brcd::experiment::BlobTask;
use brcd::metrics::{isd, nra_at_k};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k: usize = std::env::args().nth(1).map_or(Ok(100), |s| s.parse())?;
    let task = BlobTask::default();
    let data = task.build()?;
    let student = StudentModel::new(StudentArch::Mlp { hidden: 16 }, task.dim, task.bits, 1.0, 0)?;
    let r = data.report(&student, k)?;
    println!("teacher SSHP mAP@{k} {:.4}", r.teacher_sshp);
    println!("random student SSHP {:.4}  ASHP {:.4}  db ISD {:.2}", r.student_sshp, r.student_ashp, r.db_isd);

    let (tq, tdb) = (data.teacher_queries()?, data.teacher_db()?);
    let judge = data.judge()?;
    println!("teacher-as-student NRA@{k} {:.4}  ISD {:.1}", nra_at_k(&tq, &tdb, &judge, k)?, isd(&tdb, &tdb)?);
    Ok(())
}
