use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{Forward, StudentModel, TeacherModel};
use crate::bitmask::BitMaskSet;
use crate::cluster::{kmeans_fit, ClusterModel, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::codes::CodeMatrix;
use crate::data::EmbeddingMatrix;
use crate::error::{BrcdError, Result};
use crate::kd_loss::{loss_and_grad, BatchView, LossConfig, LossKind, DEFAULT_TAU};
use crate::metrics::{isd, opr};
use crate::rng::{derive_seed, stream_rng};

/// Feature noise followed by coordinate dropout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub gaussian_sigma: f64,
    pub dropout_p: f64,
    pub seed: u64,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec { gaussian_sigma: 0.0, dropout_p: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(BrcdError::invalid("gaussian_sigma must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(BrcdError::invalid("dropout_p must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn apply<R: Rng>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let noisy = if self.gaussian_sigma > 0.0 {
                    v + self.gaussian_sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    v
                };
                if self.dropout_p > 0.0 && rng.random::<f64>() < self.dropout_p {
                    0.0
                } else {
                    noisy
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub m: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub alpha: f64,
    pub tau: f64,
    pub delta: f64,
    pub k: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 64,
            epochs: 30,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            alpha: 0.8,
            tau: DEFAULT_TAU,
            delta: 0.4,
            k: 20,
            seed: 0,
            loss: LossKind::Brcd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(BrcdError::Config("batch size M must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(BrcdError::Config("learning rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(BrcdError::Config("Adam needs betas in [0, 1) and eps > 0".into()));
        }
        if self.k == 0 {
            return Err(BrcdError::Config("k must be at least 1".into()));
        }
        self.loss_config().map_err(|e| BrcdError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        LossConfig::new(self.alpha, self.tau, self.delta)
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Everything frozen for one run: teacher codes of the training set, the
/// clustering of those codes and the per-cluster bit masks.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub teacher_codes: CodeMatrix,
    pub cluster: ClusterModel,
    pub masks: BitMaskSet,
}

pub fn prepare_run(features: &EmbeddingMatrix, teacher: &TeacherModel, cfg: &TrainConfig) -> Result<RunState> {
    if features.is_empty() {
        return Err(BrcdError::invalid("no training features"));
    }
    let teacher_codes = teacher.encode_all(features)?;
    let cluster = kmeans_fit(&teacher_codes, cfg.k, cfg.seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let masks = BitMaskSet::from_clusters(&teacher_codes, &cluster, cfg.delta)?;
    Ok(RunState { teacher_codes, cluster, masks })
}

struct Batch {
    view: BatchView,
    forwards: Vec<Forward>,
}

fn build_batch(
    features: &EmbeddingMatrix,
    teacher: &TeacherModel,
    student: &StudentModel,
    aug: &AugmentationSpec,
    indices: &[usize],
    cluster: &ClusterModel,
    step: u64,
) -> Result<Batch> {
    aug.validate()?;
    let n = features.len();
    let mut seen = std::collections::HashSet::new();
    for &i in indices {
        if i >= n {
            return Err(BrcdError::invalid(format!("batch index {i} out of range for {n} rows")));
        }
        if !seen.insert(i) {
            return Err(BrcdError::invalid(format!("batch index {i} repeated")));
        }
    }
    let mut rng = stream_rng(derive_seed(aug.seed, 0xA06), step);
    let augmented: Vec<Vec<f64>> = indices.iter().map(|&i| aug.apply(features.row(i), &mut rng)).collect();

    let per_row = indices
        .par_iter()
        .zip(&augmented)
        .map(|(&i, xa)| -> Result<_> {
            let x = features.row(i);
            let fwd = student.forward(x)?;
            let t = teacher.encode(x)?;
            let ta = teacher.encode(xa)?;
            let ya = cluster.assign(&t)?;
            let yb = cluster.assign(&ta)?;
            Ok((fwd, t, ta, ya, yb))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut forwards = Vec::with_capacity(indices.len());
    let (mut student_codes, mut t, mut ta, mut ya, mut yb) = (vec![], vec![], vec![], vec![], vec![]);
    for (fwd, a, b, la, lb) in per_row {
        student_codes.push(fwd.code.clone());
        forwards.push(fwd);
        t.push(a);
        ta.push(b);
        ya.push(la);
        yb.push(lb);
    }
    Ok(Batch { view: BatchView::new(student_codes, t, ta, ya, yb)?, forwards })
}

/// One contrastive batch for `indices`. Augmentation randomness is drawn
/// from a stream derived from `(aug.seed, step)`.
pub fn make_batch(
    features: &EmbeddingMatrix,
    teacher: &TeacherModel,
    student: &StudentModel,
    aug: &AugmentationSpec,
    indices: &[usize],
    cluster: &ClusterModel,
    step: u64,
) -> Result<BatchView> {
    Ok(build_batch(features, teacher, student, aug, indices, cluster, step)?.view)
}

fn param_grad(
    student: &StudentModel,
    features: &EmbeddingMatrix,
    indices: &[usize],
    forwards: &[Forward],
    code_grads: &[Vec<f64>],
) -> Vec<f64> {
    let mut grad = vec![0.0; student.params().len()];
    for ((&i, fwd), g) in indices.iter().zip(forwards).zip(code_grads) {
        student.accumulate_grad(features.row(i), fwd, g, &mut grad);
    }
    grad
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-anchor loss over the epoch's batches.
    pub loss: f64,
    /// Mean Hamming distance between student and teacher codes of the
    /// training set after the epoch.
    pub isd: f64,
    /// Share of offset positives among the epoch's batch rows.
    pub opr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedStudent {
    pub student: StudentModel,
    pub log: Vec<EpochLog>,
}

/// Adam on the configured loss. Batches are consecutive chunks of a
/// per-epoch shuffle; a trailing chunk smaller than `M` is dropped.
pub fn train(
    features: &EmbeddingMatrix,
    run: &RunState,
    teacher: &TeacherModel,
    student: StudentModel,
    cfg: &TrainConfig,
    aug: &AugmentationSpec,
) -> Result<TrainedStudent> {
    cfg.validate()?;
    aug.validate()?;
    let n = features.len();
    if n < cfg.m {
        return Err(BrcdError::invalid(format!("{n} training rows is fewer than M = {}", cfg.m)));
    }
    if student.input_dim() != features.dim() {
        return Err(BrcdError::dim(features.dim(), student.input_dim()));
    }
    if student.bits() != run.teacher_codes.bits() {
        return Err(BrcdError::dim(run.teacher_codes.bits(), student.bits()));
    }
    if let Some(tp) = teacher.param_count() {
        if student.params().len() >= tp {
            return Err(BrcdError::Config(format!(
                "student has {} parameters, teacher {tp}: the student must be smaller",
                student.params().len()
            )));
        }
    }
    let loss_cfg = cfg.loss_config()?;
    let mut student = student;
    let mut adam = Adam::new(student.params().len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(derive_seed(cfg.seed, 0x5EED), epoch as u64));
        let (mut loss_sum, mut rows, mut offset) = (0.0, 0usize, 0usize);
        for chunk in order.chunks_exact(cfg.m) {
            let batch = build_batch(features, teacher, &student, aug, chunk, &run.cluster, step)?;
            step += 1;
            let (loss, code_grads) = loss_and_grad(cfg.loss, &batch.view, &loss_cfg, Some(&run.masks))?;
            if !loss.is_finite() {
                return Err(BrcdError::Numeric(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            let grad = param_grad(&student, features, chunk, &batch.forwards, &code_grads);
            adam.step(student.params_mut(), &grad);
            if student.params().iter().any(|p| !p.is_finite()) {
                return Err(BrcdError::Numeric(format!("non-finite parameter at epoch {epoch}, step {step}")));
            }
            loss_sum += loss;
            rows += chunk.len();
            offset += (opr(batch.view.anchor_labels(), batch.view.aug_labels())? * chunk.len() as f64).round() as usize;
        }
        let codes = student.encode_all(features)?;
        log.push(EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / rows as f64,
            isd: isd(&codes, &run.teacher_codes)?,
            opr: offset as f64 / rows as f64,
        });
    }
    Ok(TrainedStudent { student, log })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// `max |a - n| / max(|a|, |n|, 1e-3)` over the checked parameters.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Analytic parameter gradient of the batch loss against central
/// differences (steps `1e-4` and `5e-5`, extrapolated) on up to `n_params` randomly chosen
/// parameters. The batch's student codes are recomputed from `inputs`.
pub fn check_grad(
    student: &StudentModel,
    inputs: &[Vec<f64>],
    batch: &BatchView,
    kind: LossKind,
    cfg: &LossConfig,
    masks: Option<&BitMaskSet>,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if inputs.len() != batch.m() {
        return Err(BrcdError::dim(batch.m(), inputs.len()));
    }
    let eval = |s: &StudentModel| -> Result<(f64, Vec<Forward>, Vec<Vec<f64>>)> {
        let forwards = inputs.iter().map(|x| s.forward(x)).collect::<Result<Vec<_>>>()?;
        let view = batch.with_student(forwards.iter().map(|f| f.code.clone()).collect())?;
        let (loss, g) = loss_and_grad(kind, &view, cfg, masks)?;
        Ok((loss, forwards, g))
    };
    let (_, forwards, code_grads) = eval(student)?;
    let mut analytic = vec![0.0; student.params().len()];
    for ((x, f), g) in inputs.iter().zip(&forwards).zip(&code_grads) {
        student.accumulate_grad(x, f, g, &mut analytic);
    }

    let mut picks: Vec<usize> = (0..analytic.len()).collect();
    picks.shuffle(&mut stream_rng(seed, 0x6C));
    picks.truncate(n_params.min(analytic.len()));
    let h = 1e-4;
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for &p in &picks {
        let central = |step: f64| -> Result<f64> {
            let mut plus = student.clone();
            plus.params_mut()[p] += step;
            let mut minus = student.clone();
            minus.params_mut()[p] -= step;
            Ok((eval(&plus)?.0 - eval(&minus)?.0) / (2.0 * step))
        };
        // Richardson extrapolation removes the O(h²) term
        let numeric = (4.0 * central(h / 2.0)? - central(h)?) / 3.0;
        let diff = (analytic[p] - numeric).abs();
        max_abs = max_abs.max(diff);
        max_rel = max_rel.max(diff / analytic[p].abs().max(numeric.abs()).max(1e-3));
    }
    Ok(GradCheckReport { checked: picks.len(), max_rel_err: max_rel, max_abs_err: max_abs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub alpha: f64,
    pub delta: f64,
    pub score: f64,
}

/// Independent runs over `alphas × deltas`, each with its own run state,
/// executed in parallel. `score` maps a finished run to a number.
#[allow(clippy::too_many_arguments)]
pub fn grid_search<F>(
    features: &EmbeddingMatrix,
    teacher: &TeacherModel,
    student: &StudentModel,
    cfg: &TrainConfig,
    aug: &AugmentationSpec,
    alphas: &[f64],
    deltas: &[f64],
    score: F,
) -> Result<Vec<GridPoint>>
where
    F: Fn(&RunState, &TrainedStudent) -> Result<f64> + Sync,
{
    let points: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| deltas.iter().map(move |&d| (a, d))).collect();
    points
        .into_par_iter()
        .map(|(alpha, delta)| {
            let cfg = TrainConfig { alpha, delta, ..cfg.clone() };
            let run = prepare_run(features, teacher, &cfg)?;
            let trained = train(features, &run, teacher, student.clone(), &cfg, aug)?;
            Ok(GridPoint { alpha, delta, score: score(&run, &trained)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitmask::make_masks;
    use crate::cluster::ClusterModel;
    use crate::data::BlobSpec;
    use crate::codes::BitCode;
    use crate::distill::StudentArch;
    use crate::kd_loss::grad_basic;

    fn blobs(per_class: usize) -> (EmbeddingMatrix, Vec<u32>) {
        let d = BlobSpec { n_classes: 4, dim: 12, spread: 0.4, seed: 5 }.sample(per_class, 0).unwrap();
        (d.features, d.labels)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { m: 8, epochs: 3, k: 4, ..TrainConfig::default() }
    }

    #[test]
    fn identity_augmentation_has_no_offset() {
        let (x, y) = blobs(25);
        let teacher = TeacherModel::centroid(&x, &y, 16, 1).unwrap();
        let run = prepare_run(&x, &teacher, &small_cfg()).unwrap();
        let student = StudentModel::new(StudentArch::Linear, 12, 16, 1.0, 0).unwrap();
        let idx: Vec<usize> = (0..100).step_by(7).collect();
        let b = make_batch(&x, &teacher, &student, &AugmentationSpec::identity(), &idx, &run.cluster, 3).unwrap();
        assert_eq!(b.anchor_labels(), b.aug_labels());
        assert_eq!(b.teacher(), b.teacher_aug());
        assert_eq!(opr(b.anchor_labels(), b.aug_labels()).unwrap(), 0.0);
    }

    #[test]
    fn batches_are_reproducible_and_validated() {
        let (x, y) = blobs(25);
        let teacher = TeacherModel::centroid(&x, &y, 16, 1).unwrap();
        let run = prepare_run(&x, &teacher, &small_cfg()).unwrap();
        let student = StudentModel::new(StudentArch::Linear, 12, 16, 1.0, 0).unwrap();
        let aug = AugmentationSpec { gaussian_sigma: 0.8, dropout_p: 0.1, seed: 9 };
        let idx = [3, 50, 99, 0];
        let a = make_batch(&x, &teacher, &student, &aug, &idx, &run.cluster, 11).unwrap();
        let b = make_batch(&x, &teacher, &student, &aug, &idx, &run.cluster, 11).unwrap();
        assert_eq!(a, b);
        let c = make_batch(&x, &teacher, &student, &aug, &idx, &run.cluster, 12).unwrap();
        assert_ne!(a.teacher_aug(), c.teacher_aug());
        assert!(make_batch(&x, &teacher, &student, &aug, &[0, 100], &run.cluster, 0).is_err());
        assert!(make_batch(&x, &teacher, &student, &aug, &[1, 1], &run.cluster, 0).is_err());
    }

    #[test]
    fn huge_noise_reaches_random_assignment_rate() {
        let (x, y) = blobs(100);
        let teacher = TeacherModel::centroid(&x, &y, 16, 1).unwrap();
        let run = prepare_run(&x, &teacher, &small_cfg()).unwrap();
        let student = StudentModel::new(StudentArch::Linear, 12, 16, 1.0, 0).unwrap();
        let aug = AugmentationSpec { gaussian_sigma: 1e3, dropout_p: 0.0, seed: 2 };
        let idx: Vec<usize> = (0..400).collect();
        let b = make_batch(&x, &teacher, &student, &aug, &idx, &run.cluster, 0).unwrap();
        let rate = opr(b.anchor_labels(), b.aug_labels()).unwrap();

        // Monte-Carlo estimate: anchors keep their cluster, augmentations are
        // labelled by where pure noise lands
        let mut rng = stream_rng(77, 0);
        let mut off = 0;
        let trials = 4000;
        for t in 0..trials {
            let noise: Vec<f64> = (0..12).map(|_| 1e3 * rng.sample::<f64, _>(StandardNormal)).collect();
            let ya = run.cluster.labels()[t % 400];
            let yb = run.cluster.assign(&teacher.encode(&noise).unwrap()).unwrap();
            off += (ya != yb) as usize;
        }
        let expect = off as f64 / trials as f64;
        assert!((rate - expect).abs() < 0.08, "batch {rate} vs estimate {expect}");
    }

    #[test]
    fn prepare_run_equals_manual_steps() {
        let (x, y) = blobs(25);
        let teacher = TeacherModel::hyperplane(&x, 16, 3).unwrap();
        let cfg = small_cfg();
        let run = prepare_run(&x, &teacher, &cfg).unwrap();
        let codes = teacher.encode_all(&x).unwrap();
        let cluster = kmeans_fit(&codes, cfg.k, cfg.seed, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let masks = BitMaskSet::from_clusters(&codes, &cluster, cfg.delta).unwrap();
        assert_eq!(run, RunState { teacher_codes: codes, cluster, masks });
        let _ = y;
    }

    #[test]
    fn single_cluster_filters_every_negative() {
        let (x, y) = blobs(10);
        let teacher = TeacherModel::centroid(&x, &y, 8, 0).unwrap();
        let run = prepare_run(&x, &teacher, &TrainConfig { k: 1, ..small_cfg() }).unwrap();
        assert!(run.cluster.labels().iter().all(|&l| l == 0));
        let student = StudentModel::new(StudentArch::Linear, 12, 8, 1.0, 0).unwrap();
        let aug = AugmentationSpec { gaussian_sigma: 0.5, dropout_p: 0.0, seed: 0 };
        let b = make_batch(&x, &teacher, &student, &aug, &[0, 11, 22, 33], &run.cluster, 0).unwrap();
        let cfg = LossConfig::default();
        let (l, _) = loss_and_grad(LossKind::Robust, &b, &cfg, None).unwrap();
        // with every negative filtered each row is -log softmax over {i, i'}
        let cos = |i: usize, r: usize| crate::codes::cosine(&b.student()[i], b.member(r)).unwrap();
        let m = b.m();
        let expect: f64 = (0..m)
            .map(|i| {
                let (p, a) = (cos(i, i) / cfg.tau, cos(i, m + i) / cfg.tau);
                (p.exp() + a.exp()).ln() - (cfg.alpha * p + (1.0 - cfg.alpha) * a)
            })
            .sum();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (x, y) = blobs(25);
        let teacher = TeacherModel::centroid(&x, &y, 16, 1).unwrap();
        // one full batch per epoch, so only the row order changes between epochs
        let cfg = TrainConfig { learning_rate: 0.0, m: 100, ..small_cfg() };
        let run = prepare_run(&x, &teacher, &cfg).unwrap();
        let student = StudentModel::new(StudentArch::Mlp { hidden: 6 }, 12, 16, 1.0, 0).unwrap();
        let aug = AugmentationSpec::identity();
        let out = train(&x, &run, &teacher, student.clone(), &cfg, &aug).unwrap();
        assert_eq!(out.student, student);
        let isds: Vec<f64> = out.log.iter().map(|l| l.isd).collect();
        assert!(isds.windows(2).all(|w| w[0] == w[1]));
        let losses: Vec<f64> = out.log.iter().map(|l| l.loss).collect();
        assert!(losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{losses:?}");
    }

    #[test]
    fn training_is_deterministic_and_leaves_run_state_alone() {
        let (x, y) = blobs(25);
        let teacher = TeacherModel::centroid(&x, &y, 16, 1).unwrap();
        let cfg = small_cfg();
        let run = prepare_run(&x, &teacher, &cfg).unwrap();
        let frozen = run.clone();
        let student = StudentModel::new(StudentArch::Mlp { hidden: 6 }, 12, 16, 1.0, 4).unwrap();
        let aug = AugmentationSpec { gaussian_sigma: 0.3, dropout_p: 0.05, seed: 1 };
        let a = train(&x, &run, &teacher, student.clone(), &cfg, &aug).unwrap();
        let b = train(&x, &run, &teacher, student, &cfg, &aug).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.student, b.student);
        assert_eq!(run, frozen);
        assert_eq!(teacher.encode_all(&x).unwrap(), frozen.teacher_codes);
    }

    #[test]
    fn training_reduces_loss() {
        let (x, y) = blobs(100);
        let teacher = TeacherModel::centroid(&x, &y, 16, 1).unwrap();
        let aug = AugmentationSpec { gaussian_sigma: 0.2, dropout_p: 0.0, seed: 1 };
        let mut first = 0.0;
        let mut fifth = 0.0;
        for seed in 0..3 {
            let cfg = TrainConfig { m: 16, epochs: 5, k: 4, seed, learning_rate: 0.01, ..TrainConfig::default() };
            let run = prepare_run(&x, &teacher, &cfg).unwrap();
            let student = StudentModel::new(StudentArch::Mlp { hidden: 6 }, 12, 16, 1.0, seed).unwrap();
            let out = train(&x, &run, &teacher, student, &cfg, &aug).unwrap();
            first += out.log[0].loss;
            fifth += out.log[4].loss;
        }
        assert!(fifth <= first, "epoch 5 {fifth} vs epoch 1 {first}");
    }

    #[test]
    fn oversized_student_rejected() {
        let (x, y) = blobs(10);
        let teacher = TeacherModel::centroid(&x, &y, 4, 1).unwrap();
        let cfg = small_cfg();
        let run = prepare_run(&x, &teacher, &cfg).unwrap();
        // teacher: 4·12 + 12 = 60, linear student: 4·12 + 4 = 52, MLP with 8 hidden: 140
        let ok = StudentModel::new(StudentArch::Linear, 12, 4, 1.0, 0).unwrap();
        assert!(train(&x, &run, &teacher, ok, &TrainConfig { epochs: 1, ..cfg.clone() }, &AugmentationSpec::identity()).is_ok());
        let big = StudentModel::new(StudentArch::Mlp { hidden: 8 }, 12, 4, 1.0, 0).unwrap();
        assert!(matches!(
            train(&x, &run, &teacher, big, &cfg, &AugmentationSpec::identity()),
            Err(BrcdError::Config(_))
        ));
    }

    fn random_inputs(m: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, 1);
        (0..m).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn random_codes(m: usize, b: usize, seed: u64) -> Vec<BitCode> {
        let mut rng = stream_rng(seed, 2);
        (0..m)
            .map(|_| BitCode::from_bools(&(0..b).map(|_| rng.random()).collect::<Vec<_>>()).unwrap())
            .collect()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (m, b, dim) = (4, 16, 10);
        let inputs = random_inputs(m, dim, 0);
        let student = StudentModel::new(StudentArch::Linear, dim, b, 1.0, 1).unwrap();
        let codes: Vec<Vec<f64>> = inputs.iter().map(|x| student.relaxed(x).unwrap()).collect();
        let batch = BatchView::new(codes, random_codes(m, b, 3), random_codes(m, b, 4), vec![0, 1, 0, 2], vec![0, 2, 0, 2]).unwrap();
        let masks = make_masks(vec![vec![0.9; b], vec![0.3; b], vec![0.5; b]], 0.4).unwrap();
        let cfg = LossConfig::default();
        let r = check_grad(&student, &inputs, &batch, LossKind::Brcd, &cfg, Some(&masks), 200, 0).unwrap();
        assert_eq!(r.checked, 176);
        assert!(r.passed(1e-5), "{r:?}");

        let mlp = StudentModel::new(StudentArch::Mlp { hidden: 12 }, dim, b, 1.0, 1).unwrap();
        let r = check_grad(&mlp, &inputs, &batch, LossKind::Brcd, &cfg, Some(&masks), 200, 0).unwrap();
        assert_eq!(r.checked, 200);
        assert!(r.passed(1e-5), "{r:?}");
    }

    #[test]
    fn zero_weight_student_at_symmetric_batch() {
        let (m, b, dim) = (2, 4, 3);
        let mut params = vec![0.0; b * dim];
        params.extend([0.5, 0.5, 0.0, 0.0]);
        let student = StudentModel::from_params(StudentArch::Linear, dim, b, params).unwrap();
        let inputs = random_inputs(m, dim, 5);
        let codes: Vec<Vec<f64>> = inputs.iter().map(|x| student.relaxed(x).unwrap()).collect();
        let t = |v: [i8; 4]| BitCode::from_signs(&v).unwrap();
        let batch = BatchView::unlabeled(
            codes,
            vec![t([1, -1, 1, 1]), t([-1, 1, 1, -1])],
            vec![t([1, -1, -1, 1]), t([-1, 1, -1, -1])],
        )
        .unwrap();
        let r = check_grad(&student, &inputs, &batch, LossKind::Basic, &LossConfig::default(), None, 200, 0).unwrap();
        assert!(r.max_abs_err < 1e-8, "{r:?}");
    }

    #[test]
    fn masked_out_teacher_bits_are_invisible() {
        // bit 2 is dropped from every mask: flipping it on every member except
        // the anchor's own teacher code changes neither loss nor gradient
        let (m, b, dim) = (3, 6, 5);
        let inputs = random_inputs(m, dim, 6);
        let student = StudentModel::new(StudentArch::Linear, dim, b, 1.0, 2).unwrap();
        let codes: Vec<Vec<f64>> = inputs.iter().map(|x| student.relaxed(x).unwrap()).collect();
        let masks = BitMaskSet::from_masks(vec![(0..b).map(|r| r != 2).collect(); 2]).unwrap();
        let teacher = random_codes(m, b, 7);
        let aug = random_codes(m, b, 8);
        let flip = |c: &BitCode| {
            let mut s = c.to_signs();
            s[2] = -s[2];
            BitCode::from_signs(&s).unwrap()
        };
        let cfg = LossConfig::default();
        let grads = |i: usize, t: Vec<BitCode>, a: Vec<BitCode>| {
            let view = BatchView::new(codes.clone(), t, a, vec![0, 1, 0], vec![0, 1, 1]).unwrap();
            let (l, g) = loss_and_grad(LossKind::BrcdUnfiltered, &view, &cfg, Some(&masks)).unwrap();
            let fwd = student.forward(&inputs[i]).unwrap();
            let mut pg = vec![0.0; student.params().len()];
            student.accumulate_grad(&inputs[i], &fwd, &g[i], &mut pg);
            (l, g[i].clone(), pg)
        };
        for i in 0..m {
            let t2: Vec<BitCode> = teacher.iter().enumerate().map(|(j, c)| if j == i { c.clone() } else { flip(c) }).collect();
            let a2: Vec<BitCode> = aug.iter().map(flip).collect();
            let base = grads(i, teacher.clone(), aug.clone());
            let moved = grads(i, t2, a2);
            for (x, y) in base.1.iter().zip(&moved.1).chain(base.2.iter().zip(&moved.2)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn train_step_matches_closed_form_chain() {
        // identity augmentation, δ = 0, one cluster per row: the trainer's
        // gradient equals grad_basic pushed through the student
        let (m, b, dim) = (4, 8, 6);
        let inputs = random_inputs(m, dim, 9);
        let x = EmbeddingMatrix::from_rows(&inputs).unwrap();
        let student = StudentModel::new(StudentArch::Mlp { hidden: 5 }, dim, b, 1.0, 3).unwrap();
        let teacher_codes = random_codes(m, b, 10);
        let teacher = TeacherModel::from_codes(CodeMatrix::from_codes(&teacher_codes).unwrap(), x.clone()).unwrap();
        let cm = teacher.encode_all(&x).unwrap();
        let centroids: Vec<Vec<f64>> = teacher_codes.iter().map(|c| c.to_f64()).collect();
        let cluster = ClusterModel::from_parts(centroids, cm.ids().to_vec(), (0..m).collect(), 0.0).unwrap();
        let masks = BitMaskSet::from_clusters(&cm, &cluster, 0.0).unwrap();
        let idx: Vec<usize> = (0..m).collect();
        let batch = build_batch(&x, &teacher, &student, &AugmentationSpec::identity(), &idx, &cluster, 0).unwrap();
        let cfg = LossConfig::new(0.8, 0.3, 0.0).unwrap();

        let (_, g) = loss_and_grad(LossKind::Brcd, &batch.view, &cfg, Some(&masks)).unwrap();
        let trainer = param_grad(&student, &x, &idx, &batch.forwards, &g);
        let closed = param_grad(&student, &x, &idx, &batch.forwards, &grad_basic(&batch.view, &cfg).unwrap());
        for (a, c) in trainer.iter().zip(&closed) {
            assert!((a - c).abs() < 1e-9);
        }
    }
}
