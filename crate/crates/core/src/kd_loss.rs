//! Contrastive distillation losses over one mini-batch, with analytic
//! gradients with respect to the relaxed student codes.
//!
//! A batch holds `M` anchors and their `M` augmentations. Teacher-side
//! members are indexed `0..2M`: anchor `j` at `j`, augmentation `j'` at
//! `M + j`. For anchor `i` the positive is `M + i` and the negatives `N(i)`
//! are every other member.
//!
//! Similarity is cosine. Teacher codes are exact `±1` so their norm is
//! `sqrt(b)`. The student code is normalized inside the cosine, so every
//! gradient carries the normalization Jacobian
//! `∂φ(s, t)/∂s = t / (|s||t|) - φ · s / |s|²`.
//!
//! Each per-batch loss is a sum over anchors. All arithmetic is `f64`, and
//! log-sum-exp terms subtract their maximum before exponentiating.

use crate::bitmask::{apply_mask, BitMaskSet};
use crate::codes::{cosine_unchecked, BitCode};
use crate::error::{BrcdError, Result};
use rayon::prelude::*;

/// Default softmax temperature.
pub const DEFAULT_TAU: f64 = 0.3;
/// Grid for the individual-vs-augmentation weighting.
pub const ALPHA_GRID: [f64; 4] = [0.6, 0.7, 0.8, 0.9];
/// Label smoothing used by the KL baseline.
pub const KL_SMOOTHING: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub tau: f64,
    pub delta: f64,
}

impl LossConfig {
    pub fn new(alpha: f64, tau: f64, delta: f64) -> Result<Self> {
        let cfg = LossConfig { alpha, tau, delta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(BrcdError::invalid(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(BrcdError::invalid(format!("tau = {} must be positive", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(BrcdError::invalid(format!("delta = {} outside [0, 1]", self.delta)));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.8, tau: DEFAULT_TAU, delta: 0.4 }
    }
}

/// One contrastive mini-batch as seen by the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchView {
    student: Vec<Vec<f64>>,
    teacher: Vec<BitCode>,
    teacher_aug: Vec<BitCode>,
    anchor_labels: Vec<usize>,
    aug_labels: Vec<usize>,
    // teacher-side members as ±1 reals: anchors then augmentations
    members: Vec<Vec<f64>>,
}

impl BatchView {
    pub fn new(
        student: Vec<Vec<f64>>,
        teacher: Vec<BitCode>,
        teacher_aug: Vec<BitCode>,
        anchor_labels: Vec<usize>,
        aug_labels: Vec<usize>,
    ) -> Result<Self> {
        let m = student.len();
        if m == 0 {
            return Err(BrcdError::invalid("batch needs at least one anchor"));
        }
        for len in [teacher.len(), teacher_aug.len(), anchor_labels.len(), aug_labels.len()] {
            if len != m {
                return Err(BrcdError::dim(m, len));
            }
        }
        let b = student[0].len();
        if b == 0 {
            return Err(BrcdError::invalid("code length must be at least 1"));
        }
        for s in &student {
            if s.len() != b {
                return Err(BrcdError::dim(b, s.len()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(BrcdError::invalid("non-finite student code"));
            }
        }
        for t in teacher.iter().chain(&teacher_aug) {
            if t.len() != b {
                return Err(BrcdError::dim(b, t.len()));
            }
        }
        let members = teacher.iter().chain(&teacher_aug).map(|t| t.to_f64()).collect();
        Ok(BatchView { student, teacher, teacher_aug, anchor_labels, aug_labels, members })
    }

    /// A batch where anchor `i` and its augmentation share label `i` and
    /// no other member does, so the robust filters are no-ops.
    pub fn unlabeled(student: Vec<Vec<f64>>, teacher: Vec<BitCode>, teacher_aug: Vec<BitCode>) -> Result<Self> {
        let m = student.len();
        Self::new(student, teacher, teacher_aug, (0..m).collect(), (0..m).collect())
    }

    /// Same batch with different student codes.
    pub fn with_student(&self, student: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            student,
            self.teacher.clone(),
            self.teacher_aug.clone(),
            self.anchor_labels.clone(),
            self.aug_labels.clone(),
        )
    }

    pub fn m(&self) -> usize {
        self.student.len()
    }

    pub fn bits(&self) -> usize {
        self.student[0].len()
    }

    pub fn student(&self) -> &[Vec<f64>] {
        &self.student
    }

    pub fn teacher(&self) -> &[BitCode] {
        &self.teacher
    }

    pub fn teacher_aug(&self) -> &[BitCode] {
        &self.teacher_aug
    }

    pub fn anchor_labels(&self) -> &[usize] {
        &self.anchor_labels
    }

    pub fn aug_labels(&self) -> &[usize] {
        &self.aug_labels
    }

    /// Teacher-side member `r` in `0..2M` as a `±1` vector.
    pub fn member(&self, r: usize) -> &[f64] {
        &self.members[r]
    }

    /// Pseudo label of teacher-side member `r`.
    pub fn member_label(&self, r: usize) -> usize {
        let m = self.m();
        if r < m {
            self.anchor_labels[r]
        } else {
            self.aug_labels[r - m]
        }
    }

    /// Labels of all `2M` members, anchors first.
    pub fn member_labels(&self) -> Vec<usize> {
        self.anchor_labels.iter().chain(&self.aug_labels).copied().collect()
    }
}

/// `alpha` when anchor and augmentation share a cluster, else `1`.
pub fn dynamic_alpha(y_anchor: usize, y_aug: usize, alpha: f64) -> f64 {
    if y_anchor == y_aug {
        alpha
    } else {
        1.0
    }
}

/// The loss family implemented by the row engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Fixed α, denominator over every member.
    Basic,
    /// Dynamic α and false negatives removed from the denominator.
    Robust,
    /// Robust plus bit-masked similarity on the structural terms.
    Brcd,
    /// Bit-masked similarity with fixed α and no negative filtering.
    BrcdUnfiltered,
}

impl LossKind {
    fn masked(self) -> bool {
        matches!(self, LossKind::Brcd | LossKind::BrcdUnfiltered)
    }

    fn filtered(self) -> bool {
        matches!(self, LossKind::Robust | LossKind::Brcd)
    }
}

/// A similarity term `φ(h_i^s, h_r^t)`, optionally masked.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Term {
    member: usize,
    masked: bool,
}

struct RowSpec {
    alpha: f64,
    aug: Term,
    denominator: Vec<Term>,
}

fn row_spec(kind: LossKind, batch: &BatchView, cfg: &LossConfig, i: usize) -> RowSpec {
    let m = batch.m();
    let yi = batch.anchor_labels[i];
    let alpha = if kind.filtered() {
        dynamic_alpha(yi, batch.aug_labels[i], cfg.alpha)
    } else {
        cfg.alpha
    };
    let masked = kind.masked();
    let keep = |r: usize| r == i || r == m + i || !kind.filtered() || batch.member_label(r) != yi;
    let denominator = (0..2 * m)
        .filter(|&r| keep(r))
        .map(|r| Term { member: r, masked: masked && r != i })
        .collect();
    RowSpec { alpha, aug: Term { member: m + i, masked }, denominator }
}

/// Similarity and its gradient with respect to the raw student code.
fn sim_and_grad(
    batch: &BatchView,
    masks: Option<&BitMaskSet>,
    i: usize,
    term: Term,
) -> (f64, Vec<f64>) {
    let s = &batch.student[i];
    let t = batch.member(term.member);
    let (u, v, smask) = if term.masked {
        let masks = masks.expect("masked term without masks");
        let ms = masks.mask(batch.anchor_labels[i]);
        let mt = masks.mask(batch.member_label(term.member));
        (apply_mask(s, ms), apply_mask(t, mt), Some(ms))
    } else {
        (s.clone(), t.to_vec(), None)
    };
    let nu2: f64 = u.iter().map(|x| x * x).sum();
    let nv2: f64 = v.iter().map(|x| x * x).sum();
    if nu2 == 0.0 || nv2 == 0.0 {
        return (0.0, vec![0.0; s.len()]);
    }
    let (nu, nv) = (nu2.sqrt(), nv2.sqrt());
    let c = u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    let mut g: Vec<f64> = u
        .iter()
        .zip(&v)
        .map(|(&uu, &vv)| vv / (nu * nv) - c * uu / nu2)
        .collect();
    if let Some(ms) = smask {
        for (gr, &keep) in g.iter_mut().zip(ms) {
            if !keep {
                *gr = 0.0;
            }
        }
    }
    (c, g)
}

fn check_masks(batch: &BatchView, masks: &BitMaskSet) -> Result<()> {
    if masks.bits() != batch.bits() {
        return Err(BrcdError::invalid(format!(
            "masks have {} bits, batch codes {}",
            masks.bits(),
            batch.bits()
        )));
    }
    let max = batch.member_labels().into_iter().max().unwrap_or(0);
    if max >= masks.k() {
        return Err(BrcdError::invalid(format!(
            "pseudo label {max} has no mask ({} clusters)",
            masks.k()
        )));
    }
    Ok(())
}

fn logsumexp(xs: &[f64]) -> (f64, Vec<f64>) {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = xs.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    (mx + z.ln(), w.into_iter().map(|x| x / z).collect())
}

/// Per-anchor loss and gradient for the given loss kind.
fn row_loss_grad(
    kind: LossKind,
    batch: &BatchView,
    cfg: &LossConfig,
    masks: Option<&BitMaskSet>,
    i: usize,
) -> (f64, Vec<f64>) {
    let spec = row_spec(kind, batch, cfg, i);
    let b = batch.bits();
    let tau = cfg.tau;
    let (pos, gpos) = sim_and_grad(batch, masks, i, Term { member: i, masked: false });
    let (aug, gaug) = sim_and_grad(batch, masks, i, spec.aug);

    let terms: Vec<(f64, Vec<f64>)> = spec
        .denominator
        .iter()
        .map(|&t| sim_and_grad(batch, masks, i, t))
        .collect();
    let logits: Vec<f64> = terms.iter().map(|(s, _)| s / tau).collect();
    let (lse, weights) = logsumexp(&logits);

    let loss = lse - (spec.alpha * pos + (1.0 - spec.alpha) * aug) / tau;
    let mut grad = vec![0.0; b];
    for ((_, g), w) in terms.iter().zip(&weights) {
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += w * x / tau;
        }
    }
    for r in 0..b {
        grad[r] -= (spec.alpha * gpos[r] + (1.0 - spec.alpha) * gaug[r]) / tau;
    }
    (loss, grad)
}

/// Loss and `M × b` gradient for any kind. `masks` is required for the
/// masked kinds and ignored otherwise.
pub fn loss_and_grad(
    kind: LossKind,
    batch: &BatchView,
    cfg: &LossConfig,
    masks: Option<&BitMaskSet>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if kind.masked() {
        let masks = masks.ok_or_else(|| BrcdError::invalid("bit-masked loss needs masks"))?;
        check_masks(batch, masks)?;
    }
    let rows: Vec<(f64, Vec<f64>)> = (0..batch.m())
        .into_par_iter()
        .map(|i| row_loss_grad(kind, batch, cfg, masks, i))
        .collect();
    let loss = rows.iter().map(|(l, _)| l).sum();
    Ok((loss, rows.into_iter().map(|(_, g)| g).collect()))
}

pub fn loss_basic(batch: &BatchView, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_and_grad(LossKind::Basic, batch, cfg, None)?.0)
}

pub fn loss_robust(batch: &BatchView, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_and_grad(LossKind::Robust, batch, cfg, None)?.0)
}

pub fn grad_robust(batch: &BatchView, cfg: &LossConfig) -> Result<Vec<Vec<f64>>> {
    Ok(loss_and_grad(LossKind::Robust, batch, cfg, None)?.1)
}

pub fn loss_brcd(batch: &BatchView, cfg: &LossConfig, masks: &BitMaskSet) -> Result<f64> {
    Ok(loss_and_grad(LossKind::Brcd, batch, cfg, Some(masks))?.0)
}

pub fn grad_brcd(batch: &BatchView, cfg: &LossConfig, masks: &BitMaskSet) -> Result<Vec<Vec<f64>>> {
    Ok(loss_and_grad(LossKind::Brcd, batch, cfg, Some(masks))?.1)
}

/// Softmax weights of the basic loss for one anchor, grouped the way the
/// closed-form gradient groups them.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoCoefficients {
    pub alpha: f64,
    /// `(member, ρ1)` for every negative.
    pub negatives: Vec<(usize, f64)>,
    /// `α · ρ2 = α - p_i`.
    pub anchor_weight: f64,
    /// `(1 - α) · ρ3 = (1 - α) - p_i'`.
    pub aug_weight: f64,
}

impl RhoCoefficients {
    /// `ρ2`; undefined when `α = 0`.
    pub fn rho2(&self) -> Option<f64> {
        (self.alpha != 0.0).then(|| self.anchor_weight / self.alpha)
    }

    /// `ρ3`; undefined when `α = 1`.
    pub fn rho3(&self) -> Option<f64> {
        (self.alpha != 1.0).then(|| self.aug_weight / (1.0 - self.alpha))
    }
}

pub fn rho_coefficients(batch: &BatchView, cfg: &LossConfig, i: usize) -> Result<RhoCoefficients> {
    cfg.validate()?;
    let m = batch.m();
    if i >= m {
        return Err(BrcdError::invalid(format!("anchor {i} out of range for M = {m}")));
    }
    let s = &batch.student[i];
    let logits: Vec<f64> = (0..2 * m)
        .map(|r| cosine_unchecked(s, batch.member(r)) / cfg.tau)
        .collect();
    let (_, p) = logsumexp(&logits);
    let negatives = (0..2 * m)
        .filter(|&r| r != i && r != m + i)
        .map(|r| (r, p[r]))
        .collect();
    Ok(RhoCoefficients {
        alpha: cfg.alpha,
        negatives,
        anchor_weight: cfg.alpha - p[i],
        aug_weight: (1.0 - cfg.alpha) - p[m + i],
    })
}

/// Gradient of the basic loss in closed form:
/// `Σ_n ρ1/τ ∇φ_n - αρ2/τ ∇φ_i - (1-α)ρ3/τ ∇φ_i'`.
pub fn grad_basic(batch: &BatchView, cfg: &LossConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let m = batch.m();
    let b = batch.bits();
    (0..m)
        .map(|i| {
            let rho = rho_coefficients(batch, cfg, i)?;
            let jac = |r: usize| {
                let (_, g) = sim_and_grad(batch, None, i, Term { member: r, masked: false });
                g
            };
            let mut grad = vec![0.0; b];
            let mut add = |coef: f64, g: Vec<f64>| {
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += coef / cfg.tau * x;
                }
            };
            for &(n, rho1) in &rho.negatives {
                add(rho1, jac(n));
            }
            add(-rho.anchor_weight, jac(i));
            add(-rho.aug_weight, jac(m + i));
            Ok(grad)
        })
        .collect()
}

/// Similarity-preserving loss `‖H_s H_sᵀ - H_t H_tᵀ‖_F² / b²`.
pub fn sp_loss(student: &[Vec<f64>], teacher: &[Vec<f64>]) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(BrcdError::dim(teacher.len(), student.len()));
    }
    let b = teacher.first().map(|r| r.len()).unwrap_or(0);
    if b == 0 {
        return Err(BrcdError::invalid("SP loss needs non-empty codes"));
    }
    if student.iter().chain(teacher).any(|r| r.len() != b) {
        return Err(BrcdError::invalid("SP loss inputs must share one code length"));
    }
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let n = student.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = dot(&student[i], &student[j]) - dot(&teacher[i], &teacher[j]);
            total += d * d;
        }
    }
    Ok(total / (b * b) as f64)
}

/// Pairwise SP term in its expanded form
/// `2b - 2 Σ_k a_k c_k + 2 Σ_{k<r} (a_k - c_k)(a_r - c_r)`
/// with `a_k = h_ik^s h_jk^s` and `c_k = h_ik^t h_jk^t`.
pub fn sp_pair_expand(hi_s: &[i8], hj_s: &[i8], hi_t: &[i8], hj_t: &[i8]) -> Result<i64> {
    let b = hi_s.len();
    for v in [hj_s, hi_t, hj_t] {
        if v.len() != b {
            return Err(BrcdError::dim(b, v.len()));
        }
    }
    if b == 0 {
        return Err(BrcdError::invalid("empty code"));
    }
    if [hi_s, hj_s, hi_t, hj_t].iter().flat_map(|v| v.iter()).any(|&x| x != 1 && x != -1) {
        return Err(BrcdError::invalid("SP expansion requires ±1 codes"));
    }
    let a: Vec<i64> = hi_s.iter().zip(hj_s).map(|(&x, &y)| (x * y) as i64).collect();
    let c: Vec<i64> = hi_t.iter().zip(hj_t).map(|(&x, &y)| (x * y) as i64).collect();
    let diag: i64 = a.iter().zip(&c).map(|(x, y)| x * y).sum();
    let d: Vec<i64> = a.iter().zip(&c).map(|(x, y)| x - y).collect();
    let mut cross = 0i64;
    for k in 0..b {
        for r in k + 1..b {
            cross += d[k] * d[r];
        }
    }
    Ok(2 * b as i64 - 2 * diag + 2 * cross)
}

fn bernoulli_kl(q: f64, p: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    term(q, p) + term(1.0 - q, 1.0 - p)
}

/// Per-bit Bernoulli KL baseline with the default smoothing.
pub fn kl_loss(student: &[Vec<f64>], teacher: &[BitCode], temperature: f64) -> Result<f64> {
    kl_loss_smoothed(student, teacher, temperature, KL_SMOOTHING)
}

fn kl_check(student: &[Vec<f64>], teacher: &[BitCode], temperature: f64, eps: f64) -> Result<()> {
    if !(temperature > 0.0) {
        return Err(BrcdError::invalid("KL temperature must be positive"));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(BrcdError::invalid("smoothing must lie in [0, 1)"));
    }
    if student.len() != teacher.len() || student.is_empty() {
        return Err(BrcdError::dim(teacher.len(), student.len()));
    }
    for (s, t) in student.iter().zip(teacher) {
        if s.len() != t.len() {
            return Err(BrcdError::dim(t.len(), s.len()));
        }
    }
    Ok(())
}

/// Mean over all `M·b` bits of `KL(q ‖ p)` where the teacher bit gives
/// `q = (1 + (1-ε) h) / 2` and the student logit gives
/// `p = (1 + (1-ε) tanh(v / T)) / 2`.
pub fn kl_loss_smoothed(student: &[Vec<f64>], teacher: &[BitCode], temperature: f64, eps: f64) -> Result<f64> {
    kl_check(student, teacher, temperature, eps)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (s, t) in student.iter().zip(teacher) {
        for (r, &v) in s.iter().enumerate() {
            let q = (1.0 + (1.0 - eps) * t.get(r) as f64) / 2.0;
            let p = (1.0 + (1.0 - eps) * (v / temperature).tanh()) / 2.0;
            total += bernoulli_kl(q, p);
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Gradient of [`kl_loss_smoothed`] with respect to the student logits.
pub fn kl_grad_smoothed(student: &[Vec<f64>], teacher: &[BitCode], temperature: f64, eps: f64) -> Result<Vec<Vec<f64>>> {
    kl_check(student, teacher, temperature, eps)?;
    let n = (student.len() * student[0].len()) as f64;
    Ok(student
        .iter()
        .zip(teacher)
        .map(|(s, t)| {
            s.iter()
                .enumerate()
                .map(|(r, &v)| {
                    let q = (1.0 + (1.0 - eps) * t.get(r) as f64) / 2.0;
                    let th = (v / temperature).tanh();
                    let p = (1.0 + (1.0 - eps) * th) / 2.0;
                    let dp = (1.0 - eps) * (1.0 - th * th) / (2.0 * temperature);
                    (p - q) / (p * (1.0 - p)) * dp / n
                })
                .collect()
        })
        .collect())
}
