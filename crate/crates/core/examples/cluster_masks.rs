//! Cluster teacher codes with k-means and derive the per-cluster bit masks.
//! Prints how many bits each cluster keeps at a few thresholds.
//!
//! cargo run --release --example cluster_masks -- [k]

use brcd::bitmask::{BitMaskSet, DELTA_GRID};
use brcd::cluster::{kmeans_fit, DEFAULT_MAX_ITER, DEFAULT_TOL};
use brcd::experiment::BlobTask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k: usize = std::env::args().nth(1).map_or(Ok(10), |s| s.parse())?;
    let data = BlobTask::default().build()?;
    let codes = data.teacher.encode_all(&data.train.features)?;
    let model = kmeans_fit(&codes, k, 0, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    println!("k = {k}, inertia {:.1} after {} steps", model.inertia(), model.history().len());

    print!("cluster,size");
    for d in DELTA_GRID {
        print!(",kept@{d}");
    }
    println!();
    let sets = DELTA_GRID
        .iter()
        .map(|&d| BitMaskSet::from_clusters(&codes, &model, d))
        .collect::<Result<Vec<_>, _>>()?;
    for c in 0..k {
        print!("{c},{}", model.members(c).len());
        for s in &sets {
            print!(",{}", s.mask(c).iter().filter(|&&m| m).count());
        }
        println!();
    }
    Ok(())
}
