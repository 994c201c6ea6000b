use rand::Rng;

use crate::codes::{sign_quantize, BitCode, CodeMatrix};
use crate::data::EmbeddingMatrix;
use crate::error::{BrcdError, Result};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudentArch {
    Linear,
    /// One `tanh` hidden layer of the given width.
    Mlp { hidden: usize },
}

impl StudentArch {
    pub fn param_count(self, dim: usize, bits: usize) -> usize {
        match self {
            StudentArch::Linear => bits * dim + bits,
            StudentArch::Mlp { hidden } => hidden * dim + hidden + bits * hidden + bits,
        }
    }
}

/// Small relaxed hashing network. Parameters are stored flat:
/// linear `W (b × dim), bias (b)`;
/// MLP `W1 (H × dim), b1 (H), W2 (b × H), b2 (b)`, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    arch: StudentArch,
    dim: usize,
    bits: usize,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for back-propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub hidden: Option<Vec<f64>>,
    /// `tanh` of the output pre-activation: the relaxed code.
    pub code: Vec<f64>,
}

fn affine(w: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(r, b)| b + w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

impl StudentModel {
    /// Weights uniform in `±scale / sqrt(fan_in)`, biases zero.
    pub fn new(arch: StudentArch, dim: usize, bits: usize, scale: f64, seed: u64) -> Result<Self> {
        check_shape(arch, dim, bits)?;
        let mut rng = stream_rng(seed, 0x57D);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let a = scale / (fan_in as f64).sqrt();
            (0..n).map(|_| if a == 0.0 { 0.0 } else { rng.random_range(-a..=a) }).collect()
        };
        let params = match arch {
            StudentArch::Linear => {
                let mut p = draw(bits * dim, dim);
                p.extend(vec![0.0; bits]);
                p
            }
            StudentArch::Mlp { hidden } => {
                let mut p = draw(hidden * dim, dim);
                p.extend(vec![0.0; hidden]);
                p.extend(draw(bits * hidden, hidden));
                p.extend(vec![0.0; bits]);
                p
            }
        };
        Ok(StudentModel { arch, dim, bits, params })
    }

    pub fn from_params(arch: StudentArch, dim: usize, bits: usize, params: Vec<f64>) -> Result<Self> {
        check_shape(arch, dim, bits)?;
        let expected = arch.param_count(dim, bits);
        if params.len() != expected {
            return Err(BrcdError::dim(expected, params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(BrcdError::invalid("non-finite student parameter"));
        }
        Ok(StudentModel { arch, dim, bits, params })
    }

    pub fn arch(&self) -> StudentArch {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Output pre-activation.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        match self.arch {
            StudentArch::Linear => {
                let (w, b) = self.params.split_at(self.bits * self.dim);
                affine(w, b, x)
            }
            StudentArch::Mlp { hidden } => {
                let h = self.hidden(x, hidden);
                let off = hidden * self.dim + hidden;
                let (w2, b2) = self.params[off..].split_at(self.bits * hidden);
                affine(w2, b2, &h)
            }
        }
    }

    fn hidden(&self, x: &[f64], hidden: usize) -> Vec<f64> {
        let (w1, rest) = self.params.split_at(hidden * self.dim);
        affine(w1, &rest[..hidden], x).into_iter().map(f64::tanh).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.dim {
            return Err(BrcdError::dim(self.dim, x.len()));
        }
        let hidden = match self.arch {
            StudentArch::Linear => None,
            StudentArch::Mlp { hidden } => Some(self.hidden(x, hidden)),
        };
        let code = self.logits(x).into_iter().map(f64::tanh).collect();
        Ok(Forward { hidden, code })
    }

    /// Relaxed code in `(-1, 1)^b`.
    pub fn relaxed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.code)
    }

    /// Inference code: the sign of the relaxed code.
    pub fn encode(&self, x: &[f64]) -> Result<BitCode> {
        sign_quantize(&self.relaxed(x)?)
    }

    pub fn encode_all(&self, features: &EmbeddingMatrix) -> Result<CodeMatrix> {
        let codes = features.rows().map(|x| self.encode(x)).collect::<Result<Vec<_>>>()?;
        CodeMatrix::from_codes(&codes)
    }

    /// Adds `∂L/∂θ` to `grad` given `∂L/∂code` for input `x`.
    pub fn accumulate_grad(&self, x: &[f64], fwd: &Forward, d_code: &[f64], grad: &mut [f64]) {
        let dz: Vec<f64> = d_code.iter().zip(&fwd.code).map(|(g, u)| g * (1.0 - u * u)).collect();
        match self.arch {
            StudentArch::Linear => {
                let (gw, gb) = grad.split_at_mut(self.bits * self.dim);
                outer_add(gw, &dz, x);
                gb.iter_mut().zip(&dz).for_each(|(a, d)| *a += d);
            }
            StudentArch::Mlp { hidden } => {
                let h = fwd.hidden.as_ref().expect("MLP forward without hidden activations");
                let off = hidden * self.dim + hidden;
                let w2 = &self.params[off..off + self.bits * hidden];
                let (g1, g2) = grad.split_at_mut(off);
                let (gw2, gb2) = g2.split_at_mut(self.bits * hidden);
                outer_add(gw2, &dz, h);
                gb2.iter_mut().zip(&dz).for_each(|(a, d)| *a += d);
                let dh: Vec<f64> = (0..hidden)
                    .map(|j| {
                        let back: f64 = (0..self.bits).map(|r| w2[r * hidden + j] * dz[r]).sum();
                        back * (1.0 - h[j] * h[j])
                    })
                    .collect();
                let (gw1, gb1) = g1.split_at_mut(hidden * self.dim);
                outer_add(gw1, &dh, x);
                gb1.iter_mut().zip(&dh).for_each(|(a, d)| *a += d);
            }
        }
    }
}

fn outer_add(g: &mut [f64], rows: &[f64], cols: &[f64]) {
    let n = cols.len();
    for (r, &d) in rows.iter().enumerate() {
        for (a, x) in g[r * n..(r + 1) * n].iter_mut().zip(cols) {
            *a += d * x;
        }
    }
}

fn check_shape(arch: StudentArch, dim: usize, bits: usize) -> Result<()> {
    if dim == 0 || bits == 0 || arch == (StudentArch::Mlp { hidden: 0 }) {
        return Err(BrcdError::invalid("student dimensions must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inference_sign_matches_logit_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for arch in [StudentArch::Linear, StudentArch::Mlp { hidden: 5 }] {
            let s = StudentModel::new(arch, 6, 9, 2.0, 3).unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
                assert_eq!(s.encode(&x).unwrap(), sign_quantize(&s.logits(&x)).unwrap());
            }
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(StudentArch::Linear.param_count(64, 32), 2080);
        assert_eq!(StudentArch::Mlp { hidden: 16 }.param_count(64, 32), 1584);
        let s = StudentModel::new(StudentArch::Mlp { hidden: 16 }, 64, 32, 1.0, 0).unwrap();
        assert_eq!(s.params().len(), 1584);
        assert!(StudentModel::from_params(StudentArch::Linear, 2, 2, vec![0.0; 5]).is_err());
        assert!(StudentModel::new(StudentArch::Mlp { hidden: 0 }, 2, 2, 1.0, 0).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for arch in [StudentArch::Linear, StudentArch::Mlp { hidden: 4 }] {
            let s = StudentModel::new(arch, 5, 3, 1.0, 2).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            // scalar objective Σ w_r u_r
            let f = |m: &StudentModel| m.relaxed(&x).unwrap().iter().zip(&w).map(|(u, c)| u * c).sum::<f64>();
            let mut grad = vec![0.0; s.params().len()];
            s.accumulate_grad(&x, &s.forward(&x).unwrap(), &w, &mut grad);
            for p in 0..grad.len() {
                let h = 1e-6;
                let mut a = s.clone();
                a.params_mut()[p] += h;
                let mut b = s.clone();
                b.params_mut()[p] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                assert!((fd - grad[p]).abs() < 1e-8, "{arch:?} param {p}");
            }
        }
    }
}
