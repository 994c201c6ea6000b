//! Distill a centroid-projection teacher into a small student on Gaussian
//! blobs and compare retrieval under both paradigms.
//!
//! cargo run --release --example distill_blobs -- [spread] [sigma] [epochs] [linear|mlp]

use brcd::distill::{prepare_run, train, AugmentationSpec, StudentArch, StudentModel, TrainConfig};
use brcd::experiment::BlobTask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let task = BlobTask { spread: arg(0, "1.5").parse()?, ..BlobTask::default() };
    let aug = AugmentationSpec { gaussian_sigma: arg(1, "0.5").parse()?, dropout_p: 0.0, seed: 1 };
    let epochs = arg(2, "30").parse()?;
    let arch = match arg(3, "mlp").as_str() {
        "linear" => StudentArch::Linear,
        _ => StudentArch::Mlp { hidden: 16 },
    };

    let data = task.build()?;
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let run = prepare_run(&data.train.features, &data.teacher, &cfg)?;
    let student = StudentModel::new(arch, task.dim, task.bits, 1.0, 7)?;

    let before = data.report(&student, 100)?;
    let start = std::time::Instant::now();
    let trained = train(&data.train.features, &run, &data.teacher, student, &cfg, &aug)?;
    let secs = start.elapsed().as_secs_f64();

    println!("epoch,loss,isd,opr");
    for e in &trained.log {
        println!("{},{:.4},{:.3},{:.3}", e.epoch, e.loss, e.isd, e.opr);
    }
    let after = data.report(&trained.student, 100)?;
    println!("trained in {secs:.1}s");
    println!("teacher  SSHP mAP@100 {:.4}", after.teacher_sshp);
    println!("random   SSHP {:.4}  ASHP {:.4}  ISD {:.2}", before.student_sshp, before.student_ashp, before.db_isd);
    println!("student  SSHP {:.4}  ASHP {:.4}  ISD {:.2}", after.student_sshp, after.student_ashp, after.db_isd);
    Ok(())
}
