//! Offset positive rate of noisy augmentations as the number of clusters
//! grows: finer clusters split more anchor/augmentation pairs.
//!
//! cargo run --release --example opr_vs_clusters -- [sigma] [seeds]

use brcd::distill::{prepare_run, AugmentationSpec, StudentArch, StudentModel, TrainConfig, make_batch};
use brcd::experiment::BlobTask;
use brcd::metrics::opr;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let sigma: f64 = args.first().map_or(Ok(1.0), |s| s.parse())?;
    let seeds: u64 = args.get(1).map_or(Ok(3), |s| s.parse())?;
    println!("k,mean_opr");
    for k in [5, 10, 20, 40] {
        let mut total = 0.0;
        for seed in 0..seeds {
            let task = BlobTask { seed, train_per_class: 200, ..BlobTask::default() };
            let data = task.build()?;
            let cfg = TrainConfig { k, seed, ..TrainConfig::default() };
            let run = prepare_run(&data.train.features, &data.teacher, &cfg)?;
            let student = StudentModel::new(StudentArch::Linear, task.dim, task.bits, 1.0, seed)?;
            let aug = AugmentationSpec { gaussian_sigma: sigma, dropout_p: 0.0, seed };
            let idx: Vec<usize> = (0..data.train.features.len()).collect();
            let b = make_batch(&data.train.features, &data.teacher, &student, &aug, &idx, &run.cluster, 0)?;
            total += opr(b.anchor_labels(), b.aug_labels())?;
        }
        println!("{k},{:.4}", total / seeds as f64);
    }
    Ok(())
}
