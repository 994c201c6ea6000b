//! Packed ±1 codes: Hamming distance, the inner-product identity, and
//! sign quantization of a real-valued code.
//!
//! cargo run --example hamming_codes

use brcd::codes::{dot_pm1, hamming, sign_quantize, BitCode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = BitCode::from_signs(&[1, -1, 1, 1, -1, -1, 1, -1])?;
    let b = BitCode::from_signs(&[1, 1, 1, -1, -1, 1, 1, -1])?;
    let (h, d) = (hamming(&a, &b)?, dot_pm1(&a, &b)?);
    println!("a = {:?}", a.to_signs());
    println!("b = {:?}", b.to_signs());
    println!("hamming {h}  dot {d}  (b - dot)/2 = {}", (a.len() as i64 - d) / 2);

    let relaxed = [0.7, -0.2, 0.0, -0.9, 0.3];
    let q = sign_quantize(&relaxed)?;
    println!("sign{relaxed:?} = {:?}", q.to_signs());
    println!("complement distance {}", hamming(&q, &q.complement())?);
    Ok(())
}
