//! Evaluate the loss family on one random batch and compare the closed-form
//! gradient of the basic loss with the generic engine.
//!
//! cargo run --example loss_gradients

use brcd::bitmask::make_masks;
use brcd::codes::BitCode;
use brcd::kd_loss::{grad_basic, loss_and_grad, rho_coefficients, BatchView, LossConfig, LossKind};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (m, b) = (4, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut code = || BitCode::from_bools(&(0..b).map(|_| rng.random()).collect::<Vec<_>>());
    let teacher = (0..m).map(|_| code()).collect::<Result<Vec<_>, _>>()?;
    let aug = (0..m).map(|_| code()).collect::<Result<Vec<_>, _>>()?;
    let student: Vec<Vec<f64>> = (0..m).map(|_| (0..b).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let batch = BatchView::new(student, teacher, aug, vec![0, 1, 0, 2], vec![0, 2, 0, 2])?;
    let masks = make_masks(vec![vec![0.9; b], vec![0.3; b], vec![0.6; b]], 0.4)?;
    let cfg = LossConfig::default();

    for kind in [LossKind::Basic, LossKind::Robust, LossKind::Brcd, LossKind::BrcdUnfiltered] {
        let (loss, _) = loss_and_grad(kind, &batch, &cfg, Some(&masks))?;
        println!("{kind:?}: {loss:.6}");
    }
    let (_, engine) = loss_and_grad(LossKind::Basic, &batch, &cfg, None)?;
    let closed = grad_basic(&batch, &cfg)?;
    let diff = engine.iter().flatten().zip(closed.iter().flatten()).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
    println!("closed form vs engine: max |diff| = {diff:.2e}");
    let rho = rho_coefficients(&batch, &cfg, 0)?;
    println!("anchor 0: anchor weight {:.4}, aug weight {:.4}, {} negatives", rho.anchor_weight, rho.aug_weight, rho.negatives.len());
    Ok(())
}
