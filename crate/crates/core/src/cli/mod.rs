//! The `brcd` command line. Every subcommand takes its randomness from a
//! single `--seed`, expanded with ChaCha8 (see [`crate::rng`]).
//!
//! CSV layouts written to stdout or `--log`:
//!
//! | command      | columns                                                   |
//! |--------------|-----------------------------------------------------------|
//! | `cluster`    | `iteration,inertia`                                       |
//! | `mask`       | `cluster,dim,expectation,kept` (histogram: `cluster,dim,plus,minus`) |
//! | `distill`    | `epoch,loss,isd,opr`                                      |
//! | `eval`       | `metric,name,K,value`                                     |
//! | `bench`      | `batch_size,N,K,mean_ms,median_ms`                        |
//! | `check-grad` | `batch,loss,checked,max_rel_err,max_abs_err,passed`       |

mod pipeline;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bitmask::{bit_frequency_histogram, BitMaskSet};
use crate::cluster::kmeans_fit;
use crate::codes::CodeMatrix;
use crate::data::{BlobSpec, EmbeddingMatrix};
use crate::distill::{
    check_grad, make_batch, prepare_run, train, AugmentationSpec, StudentArch, StudentModel, TeacherModel,
    TrainConfig,
};
use crate::error::BrcdError;
use crate::experiment::QUERY_ID_OFFSET;
use crate::io;
use crate::kd_loss::LossKind;
use crate::metrics::{isd, nra_at_k, RelevanceJudge};
use crate::search::{bench, evaluate, synthetic_codes, HammingIndex, Paradigm};

pub use pipeline::RunConfigFile;

/// A failure carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    fn numeric(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }

    fn in_stage(stage: &str, e: BrcdError) -> Self {
        CliError { code: e.exit_code(), message: format!("stage {stage}: {e}") }
    }
}

impl From<BrcdError> for CliError {
    fn from(e: BrcdError) -> Self {
        CliError { code: e.exit_code(), message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "brcd", version, about = "Bit-mask robust contrastive distillation for binary hash codes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample labelled Gaussian blobs (writes <out>.emb and <out>.lab).
    GenData(GenDataArgs),
    /// Fit a teacher and write its codes for a feature file.
    Teacher(TeacherArgs),
    /// k-means over binary codes.
    Cluster(ClusterArgs),
    /// Per-cluster bit masks from codes and assignments.
    Mask(MaskArgs),
    /// Train a student against a teacher.
    Distill(DistillArgs),
    /// Binarize features with a trained student.
    Encode(EncodeArgs),
    /// mAP@K, ISD and NRA@K for student and teacher codes.
    Eval(EvalArgs),
    /// Search latency over database size, batch size and K.
    Bench(BenchArgs),
    /// Compare parameter gradients against finite differences.
    CheckGrad(CheckGradArgs),
    /// Teacher codes, clustering, masks, distillation and evaluation from one config.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.5)]
    pub spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample stream: splits drawn from different streams share class means.
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TeacherKind {
    Hyperplane,
    Centroid,
}

#[derive(Args, Debug)]
pub struct TeacherArgs {
    #[arg(long, value_enum)]
    pub kind: TeacherKind,
    /// Features the teacher is fitted on.
    #[arg(long)]
    pub fit: PathBuf,
    /// Labels for `--fit`, required by the centroid teacher.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Features to encode (defaults to `--fit`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub bits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub codes: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::cluster::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, default_value_t = crate::cluster::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub out_labels: PathBuf,
    #[arg(long)]
    pub out_centroids: PathBuf,
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    #[arg(long)]
    pub codes: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    pub delta: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Expectations CSV (stdout when absent).
    #[arg(long)]
    pub expectations: Option<PathBuf>,
    /// Per-dimension +1/-1 frequencies of every cluster.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Basic,
    Robust,
    Brcd,
    BrcdUnfiltered,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Basic => LossKind::Basic,
            LossArg::Robust => LossKind::Robust,
            LossArg::Brcd => LossKind::Brcd,
            LossArg::BrcdUnfiltered => LossKind::BrcdUnfiltered,
        }
    }
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// `file:<codes>`, `hyperplane` or `centroid`.
    #[arg(long)]
    pub teacher: String,
    /// Labels for `--features`, required by the centroid teacher.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub bits: usize,
    #[arg(long = "M", default_value_t = 64)]
    pub m: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    #[arg(long, default_value_t = crate::kd_loss::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.4)]
    pub delta: f64,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = LossArg::Brcd)]
    pub loss: LossArg,
    /// Hidden width of the student; 0 gives a linear student.
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Per-epoch CSV (stdout when absent).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ParadigmArg {
    Sshp,
    Ashp,
    Both,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = ParadigmArg::Both)]
    pub paradigm: ParadigmArg,
    #[arg(long)]
    pub student_db: PathBuf,
    #[arg(long)]
    pub teacher_db: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub db_labels: PathBuf,
    #[arg(long)]
    pub query_labels: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Database codes file.
    #[arg(long, conflicts_with = "synthetic")]
    pub codes: Option<PathBuf>,
    /// Random database of N codes.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Code length of `--synthetic` databases.
    #[arg(long, default_value_t = 64)]
    pub bits: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,100")]
    pub batch_sizes: Vec<usize>,
    #[arg(long = "k", value_delimiter = ',', default_value = "100")]
    pub k_values: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct CheckGradArgs {
    /// Training features (a small blob sample when absent).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub bits: usize,
    #[arg(long = "M", default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Brcd)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 5)]
    pub batches: usize,
    /// Parameters checked per batch.
    #[arg(long, default_value_t = 64)]
    pub params: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Teacher(a) => teacher(a),
        Command::Cluster(a) => cluster(a),
        Command::Mask(a) => mask(a),
        Command::Distill(a) => distill(a),
        Command::Encode(a) => encode(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
        Command::CheckGrad(a) => check_grad_cmd(a),
        Command::Pipeline(a) => pipeline::run(&a.config, a.force),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| BrcdError::Io { path: path.to_path_buf(), source }.into())
}

fn csv_sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) => Ok(Box::new(create(p)?)),
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn write_err(e: std::io::Error) -> CliError {
    CliError { code: 3, message: format!("write failed: {e}") }
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let spec = BlobSpec { n_classes: a.n_classes, dim: a.dim, spread: a.spread, seed: a.seed };
    let data = spec.sample(a.per_class, a.stream)?;
    io::write_embeddings(&with_ext(&a.out, "emb"), &data.features)?;
    io::write_labels(&with_ext(&a.out, "lab"), &data.labels)?;
    Ok(())
}

fn fit_teacher(
    kind: TeacherKind,
    features: &EmbeddingMatrix,
    labels: Option<&Path>,
    bits: usize,
    seed: u64,
) -> CliResult<TeacherModel> {
    Ok(match kind {
        TeacherKind::Hyperplane => TeacherModel::hyperplane(features, bits, seed)?,
        TeacherKind::Centroid => {
            let path = labels.ok_or_else(|| CliError::usage("the centroid teacher needs --labels"))?;
            TeacherModel::centroid(features, &io::read_labels(path)?, bits, seed)?
        }
    })
}

/// Parse `file:<codes>`, `hyperplane` or `centroid` into a teacher for `features`.
fn teacher_from_spec(
    spec: &str,
    features: &EmbeddingMatrix,
    labels: Option<&Path>,
    bits: usize,
    seed: u64,
) -> CliResult<TeacherModel> {
    if let Some(path) = spec.strip_prefix("file:") {
        let codes = io::read_codes(Path::new(path))?;
        if codes.bits() != bits {
            return Err(CliError::usage(format!("{path} holds {}-bit codes, --bits is {bits}", codes.bits())));
        }
        return Ok(TeacherModel::from_codes(codes, features.clone())?);
    }
    let kind = TeacherKind::from_str(spec, true)
        .map_err(|_| CliError::usage(format!("unknown teacher '{spec}': expected file:<codes>, hyperplane or centroid")))?;
    fit_teacher(kind, features, labels, bits, seed)
}

fn teacher(a: TeacherArgs) -> CliResult<()> {
    let fit = io::read_embeddings(&a.fit)?;
    let model = fit_teacher(a.kind, &fit, a.labels.as_deref(), a.bits, a.seed)?;
    let target = match &a.features {
        Some(p) => io::read_embeddings(p)?,
        None => fit,
    };
    io::write_codes(&a.out, &model.encode_all(&target)?)?;
    Ok(())
}

fn cluster(a: ClusterArgs) -> CliResult<()> {
    let codes = io::read_codes(&a.codes)?;
    let model = kmeans_fit(&codes, a.k, a.seed, a.max_iter, a.tol)?;
    let labels: Vec<u32> = model.labels().iter().map(|&l| l as u32).collect();
    io::write_labels(&a.out_labels, &labels)?;
    io::write_embeddings(&a.out_centroids, &EmbeddingMatrix::from_rows(model.centroids())?)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "iteration,inertia").map_err(write_err)?;
    for (i, v) in model.history().iter().enumerate() {
        writeln!(out, "{i},{v}").map_err(write_err)?;
    }
    Ok(())
}

fn mask(a: MaskArgs) -> CliResult<()> {
    let codes = io::read_codes(&a.codes)?;
    let labels: Vec<usize> = io::read_labels(&a.labels)?.into_iter().map(|l| l as usize).collect();
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let masks = BitMaskSet::from_assignments(&codes, &labels, k, a.delta)?;
    io::write_codes(&a.out, &masks.to_code_matrix()?)?;
    let mut out = csv_sink(a.expectations.as_deref())?;
    write_expectations(&mut out, &masks).map_err(write_err)?;
    if let Some(path) = &a.histogram {
        let mut h = create(path)?;
        writeln!(h, "cluster,dim,plus,minus").map_err(write_err)?;
        for c in 0..k {
            let rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == c).collect();
            if rows.is_empty() {
                continue;
            }
            for (d, (p, m)) in bit_frequency_histogram(&codes.select(&rows)?)?.into_iter().enumerate() {
                writeln!(h, "{c},{d},{p},{m}").map_err(write_err)?;
            }
        }
    }
    Ok(())
}

fn write_expectations(out: &mut dyn Write, masks: &BitMaskSet) -> std::io::Result<()> {
    writeln!(out, "cluster,dim,expectation,kept")?;
    for (c, e) in masks.expectations().iter().enumerate() {
        for (d, v) in e.iter().enumerate() {
            writeln!(out, "{c},{d},{v},{}", u8::from(masks.mask(c)[d]))?;
        }
    }
    Ok(())
}

fn student_arch(hidden: usize) -> StudentArch {
    if hidden == 0 {
        StudentArch::Linear
    } else {
        StudentArch::Mlp { hidden }
    }
}

fn distill(a: DistillArgs) -> CliResult<()> {
    let features = io::read_embeddings(&a.features)?;
    let teacher = teacher_from_spec(&a.teacher, &features, a.labels.as_deref(), a.bits, a.seed)?;
    let cfg = TrainConfig {
        m: a.m,
        epochs: a.epochs,
        learning_rate: a.lr,
        alpha: a.alpha,
        tau: a.tau,
        delta: a.delta,
        k: a.k,
        seed: a.seed,
        loss: a.loss.into(),
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let aug = AugmentationSpec { gaussian_sigma: a.sigma, dropout_p: a.dropout, seed: a.seed };
    aug.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let run = prepare_run(&features, &teacher, &cfg)?;
    let student = StudentModel::new(student_arch(a.hidden), features.dim(), a.bits, 1.0, a.seed)?;
    let trained = train(&features, &run, &teacher, student, &cfg, &aug)?;
    io::write_student(&a.out, &trained.student)?;
    let mut out = csv_sink(a.log.as_deref())?;
    write_log(&mut out, &trained.log).map_err(write_err)
}

fn write_log(out: &mut dyn Write, log: &[crate::distill::EpochLog]) -> std::io::Result<()> {
    writeln!(out, "epoch,loss,isd,opr")?;
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.isd, e.opr)?;
    }
    out.flush()
}

fn encode(a: EncodeArgs) -> CliResult<()> {
    let student = io::read_student(&a.student)?;
    let features = io::read_embeddings(&a.features)?;
    io::write_codes(&a.out, &student.encode_all(&features)?)?;
    Ok(())
}

/// Query codes re-keyed past the database ids so the two never collide.
fn query_codes(codes: CodeMatrix) -> CliResult<CodeMatrix> {
    let ids = (0..codes.len() as u64).map(|i| QUERY_ID_OFFSET + i).collect();
    Ok(codes.relabel(ids)?)
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let sdb = io::read_codes(&a.student_db)?;
    let tdb = io::read_codes(&a.teacher_db)?;
    let queries = query_codes(io::read_codes(&a.queries)?)?;
    let db_labels = io::read_labels(&a.db_labels)?;
    let q_labels = io::read_labels(&a.query_labels)?;
    let mut judge = RelevanceJudge::from_pairs(sdb.ids(), &db_labels)?;
    if q_labels.len() != queries.len() {
        return Err(BrcdError::Dimension { expected: queries.len(), got: q_labels.len() }.into());
    }
    judge.extend(queries.ids(), &q_labels);

    let mut out = std::io::stdout().lock();
    writeln!(out, "metric,name,K,value").map_err(write_err)?;
    let paradigms: &[Paradigm] = match a.paradigm {
        ParadigmArg::Sshp => &[Paradigm::Sshp],
        ParadigmArg::Ashp => &[Paradigm::Ashp],
        ParadigmArg::Both => &[Paradigm::Sshp, Paradigm::Ashp],
    };
    for &p in paradigms {
        let v = evaluate(p, &sdb, &tdb, &queries, &judge, a.k)?;
        writeln!(out, "mAP,{},{},{v}", p.name(), a.k).map_err(write_err)?;
    }
    writeln!(out, "NRA,student_queries,{},{}", a.k, nra_at_k(&queries, &tdb, &judge, a.k)?).map_err(write_err)?;
    writeln!(out, "ISD,db,,{}", isd(&sdb, &tdb)?).map_err(write_err)?;
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> CliResult<()> {
    let db = match (&a.codes, a.synthetic) {
        (Some(p), None) => io::read_codes(p)?,
        (None, Some(n)) => synthetic_codes(n, a.bits, a.seed)?,
        _ => return Err(CliError::usage("bench needs exactly one of --codes or --synthetic")),
    };
    let bits = db.bits();
    let index = HammingIndex::build(db)?;
    let batches = a
        .batch_sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| synthetic_codes(n, bits, a.seed.wrapping_add(1 + i as u64)))
        .collect::<crate::error::Result<Vec<_>>>()?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "batch_size,N,K,mean_ms,median_ms").map_err(write_err)?;
    for &k in &a.k_values {
        for row in bench(&index, &batches, k, a.reps)? {
            writeln!(out, "{},{},{},{:.4},{:.4}", row.batch_size, row.n, row.k, row.mean_ms, row.median_ms)
                .map_err(write_err)?;
        }
    }
    Ok(())
}

fn check_grad_cmd(a: CheckGradArgs) -> CliResult<()> {
    let features = match &a.features {
        Some(p) => io::read_embeddings(p)?,
        None => BlobSpec { n_classes: 4, dim: 12, spread: 1.0, seed: a.seed }.sample(25, 0)?.features,
    };
    if a.m > features.len() {
        return Err(CliError::usage(format!("M = {} exceeds the {} feature rows", a.m, features.len())));
    }
    let teacher = TeacherModel::hyperplane(&features, a.bits, a.seed)?;
    let cfg = TrainConfig { m: a.m, k: a.k, seed: a.seed, loss: a.loss.into(), ..TrainConfig::default() };
    cfg.validate()?;
    let run = prepare_run(&features, &teacher, &cfg)?;
    let student = StudentModel::new(student_arch(a.hidden), features.dim(), a.bits, 1.0, a.seed)?;
    let aug = AugmentationSpec { gaussian_sigma: 0.5, dropout_p: 0.0, seed: a.seed };
    let loss_cfg = cfg.loss_config()?;

    let mut order: Vec<usize> = (0..features.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut crate::rng::stream_rng(a.seed, 0xC4E));
    let mut out = std::io::stdout().lock();
    writeln!(out, "batch,loss,checked,max_rel_err,max_abs_err,passed").map_err(write_err)?;
    let mut failed = 0;
    for (b, chunk) in order.chunks_exact(a.m).take(a.batches).enumerate() {
        let view = make_batch(&features, &teacher, &student, &aug, chunk, &run.cluster, b as u64)?;
        let inputs: Vec<Vec<f64>> = chunk.iter().map(|&i| features.row(i).to_vec()).collect();
        let r = check_grad(&student, &inputs, &view, cfg.loss, &loss_cfg, Some(&run.masks), a.params, a.seed + b as u64)?;
        let ok = r.passed(a.tol);
        failed += usize::from(!ok);
        writeln!(out, "{b},{:?},{},{:e},{:e},{ok}", cfg.loss, r.checked, r.max_rel_err, r.max_abs_err)
            .map_err(write_err)?;
    }
    if failed > 0 {
        return Err(CliError::numeric(format!("{failed} batch(es) exceed relative error {}", a.tol)));
    }
    Ok(())
}
