//! Exhaustive Hamming search latency over database size and batch size.
//!
//! cargo run --release --example bench_search -- [bits]

use brcd::search::{bench, synthetic_codes, HammingIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bits: usize = std::env::args().nth(1).map_or(Ok(64), |s| s.parse())?;
    let batches = vec![synthetic_codes(1, bits, 1)?, synthetic_codes(100, bits, 2)?];
    println!("batch_size,N,K,mean_ms,median_ms");
    for n in [10_000, 100_000, 1_000_000] {
        let index = HammingIndex::build(synthetic_codes(n, bits, 0)?)?;
        for row in bench(&index, &batches, 100, 5)? {
            println!("{},{},{},{:.3},{:.3}", row.batch_size, row.n, row.k, row.mean_ms, row.median_ms);
        }
    }
    Ok(())
}
