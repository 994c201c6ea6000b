//! The similarity-preserving baseline is blind to global column sign flips:
//! a student equal to the teacher and one with flipped columns both score 0.
//!
//! cargo run --example sp_directions

use brcd::kd_loss::{sp_loss, sp_pair_expand};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let teacher = vec![vec![1.0, -1.0, 1.0, 1.0], vec![-1.0, -1.0, 1.0, -1.0], vec![1.0, 1.0, -1.0, -1.0]];
    let flipped: Vec<Vec<f64>> = teacher
        .iter()
        .map(|r| r.iter().enumerate().map(|(c, v)| if c % 2 == 0 { -v } else { *v }).collect())
        .collect();
    let mut off = teacher.clone();
    off[0][0] = -1.0;
    println!("identical    {:.4}", sp_loss(&teacher, &teacher)?);
    println!("cols flipped {:.4}", sp_loss(&flipped, &teacher)?);
    println!("one bit off  {:.4}", sp_loss(&off, &teacher)?);

    let (hi_s, hj_s, hi_t, hj_t) = ([1i8, -1, 1], [1i8, 1, -1], [-1i8, -1, 1], [-1i8, 1, 1]);
    let direct: i64 = {
        let d = |a: &[i8], b: &[i8]| a.iter().zip(b).map(|(x, y)| (*x * *y) as i64).sum::<i64>();
        let v = d(&hi_s, &hj_s) - d(&hi_t, &hj_t);
        v * v
    };
    println!("pair term: expanded {} direct {direct}", sp_pair_expand(&hi_s, &hj_s, &hi_t, &hj_t)?);
    Ok(())
}
