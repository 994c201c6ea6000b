//! `brcd pipeline --config run.toml`.
//!
//! Relative paths in the config resolve against the config file's directory.
//! Outputs land in `out_dir`:
//!
//! | file               | format                                  |
//! |--------------------|-----------------------------------------|
//! | `teacher_train.cod`, `teacher_db.cod`, `teacher_query.cod` | codes |
//! | `clusters.lab`     | k-means assignment of the train codes   |
//! | `centroids.emb`    | k-means centroids                       |
//! | `masks.cod`        | one mask row per cluster                |
//! | `expectations.csv` | `cluster,dim,expectation,kept`          |
//! | `student.stu`      | trained student                         |
//! | `train_log.csv`    | `epoch,loss,isd,opr`                    |
//! | `student_db.cod`, `student_query.cod` | student codes        |
//! | `eval.csv`         | `metric,name,K,value`                   |
//! | `summary.csv`      | see [`SUMMARY_COLUMNS`]                 |

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{query_codes, student_arch, teacher_from_spec, write_expectations, write_log, CliError, CliResult};
use crate::data::EmbeddingMatrix;
use crate::distill::{prepare_run, train, AugmentationSpec, StudentModel, TrainConfig};
use crate::error::BrcdError;
use crate::io;
use crate::kd_loss::LossKind;
use crate::metrics::{isd, nra_at_k, RelevanceJudge};
use crate::search::{evaluate, Paradigm};

pub const CONFIG_VERSION: u32 = 1;

pub const SUMMARY_COLUMNS: &str =
    "teacher,bits,k,delta,loss,epochs,final_loss,final_train_isd,mean_opr,K,student_sshp,student_ashp,teacher_sshp,db_isd";

const OUTPUTS: [&str; 13] = [
    "teacher_train.cod",
    "teacher_db.cod",
    "teacher_query.cod",
    "clusters.lab",
    "centroids.emb",
    "masks.cod",
    "expectations.csv",
    "student.stu",
    "train_log.csv",
    "student_db.cod",
    "student_query.cod",
    "eval.csv",
    "summary.csv",
];

fn default_teacher() -> String {
    "centroid".into()
}
fn default_bits() -> usize {
    32
}
fn default_hidden() -> usize {
    16
}
fn default_loss() -> String {
    "brcd".into()
}
fn default_sigma() -> f64 {
    0.5
}
fn default_eval_k() -> usize {
    100
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub version: u32,
    pub out_dir: PathBuf,
    pub train_features: PathBuf,
    /// Needed by the centroid teacher.
    pub train_labels: Option<PathBuf>,
    pub query_features: PathBuf,
    pub query_labels: PathBuf,
    pub db_features: PathBuf,
    pub db_labels: PathBuf,
    /// `centroid`, `hyperplane` or `file:<codes aligned with train_features>`.
    #[serde(default = "default_teacher")]
    pub teacher: String,
    #[serde(default = "default_bits")]
    pub bits: usize,
    /// Student hidden width; 0 gives a linear student.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// `basic`, `robust`, `brcd` or `brcd-unfiltered`.
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default = "default_sigma")]
    pub aug_sigma: f64,
    #[serde(default)]
    pub aug_dropout: f64,
    #[serde(default = "default_eval_k")]
    pub eval_k: usize,
    #[serde(default)]
    pub train: TrainSection,
}

/// Mirrors [`TrainConfig`]; absent keys take its defaults.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub m: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub alpha: f64,
    pub tau: f64,
    pub delta: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            m: d.m,
            epochs: d.epochs,
            lr: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            alpha: d.alpha,
            tau: d.tau,
            delta: d.delta,
            k: d.k,
            seed: d.seed,
        }
    }
}

fn parse_loss(s: &str) -> CliResult<LossKind> {
    Ok(match s {
        "basic" => LossKind::Basic,
        "robust" => LossKind::Robust,
        "brcd" => LossKind::Brcd,
        "brcd-unfiltered" => LossKind::BrcdUnfiltered,
        other => return Err(CliError::usage(format!("unknown loss '{other}'"))),
    })
}

impl RunConfigFile {
    pub fn parse(text: &str) -> crate::error::Result<Self> {
        let cfg: RunConfigFile = toml::from_str(text).map_err(|e| BrcdError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(BrcdError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> crate::error::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| BrcdError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.out_dir,
            &mut cfg.train_features,
            &mut cfg.query_features,
            &mut cfg.query_labels,
            &mut cfg.db_features,
            &mut cfg.db_labels,
        ] {
            *p = base.join(&*p);
        }
        if let Some(p) = &mut cfg.train_labels {
            *p = base.join(&*p);
        }
        if let Some(codes) = cfg.teacher.strip_prefix("file:") {
            cfg.teacher = format!("file:{}", base.join(codes).display());
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            m: t.m,
            epochs: t.epochs,
            learning_rate: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            alpha: t.alpha,
            tau: t.tau,
            delta: t.delta,
            k: t.k,
            seed: t.seed,
            loss: parse_loss(&self.loss)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn stage<T>(name: &str, r: crate::error::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::in_stage(name, e))
}

fn write_csv(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> crate::error::Result<()> {
    let io_err = |source| BrcdError::Io { path: path.to_path_buf(), source };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    body(&mut f).and_then(|_| f.flush()).map_err(io_err)
}

pub fn run(config: &Path, force: bool) -> CliResult<()> {
    let cfg = stage("config", RunConfigFile::load(config))?;
    let train_cfg = cfg.train_config().map_err(|e| CliError { message: format!("stage config: {}", e.message), ..e })?;
    let aug = AugmentationSpec { gaussian_sigma: cfg.aug_sigma, dropout_p: cfg.aug_dropout, seed: train_cfg.seed };
    stage("config", aug.validate().map_err(|e| BrcdError::Config(e.to_string())))?;

    let out = |name: &str| cfg.out_dir.join(name);
    if !force {
        if let Some(existing) = OUTPUTS.iter().map(|n| out(n)).find(|p| p.exists()) {
            return Err(CliError::usage(format!(
                "refusing to overwrite {} (pass --force)",
                existing.display()
            )));
        }
    }
    stage(
        "config",
        std::fs::create_dir_all(&cfg.out_dir).map_err(|source| BrcdError::Io { path: cfg.out_dir.clone(), source }),
    )?;

    let (train_x, query_x, db_x, query_y, db_y) = stage("load", load_inputs(&cfg))?;

    let teacher = teacher_from_spec(&cfg.teacher, &train_x, cfg.train_labels.as_deref(), cfg.bits, train_cfg.seed)
        .map_err(|e| CliError { message: format!("stage teacher: {}", e.message), ..e })?;
    let teacher_db = stage("teacher", teacher.encode_all(&db_x))?;
    let teacher_query = stage("teacher", teacher.encode_all(&query_x))?;

    let run = stage("cluster", prepare_run(&train_x, &teacher, &train_cfg))?;
    stage("teacher", io::write_codes(&out("teacher_train.cod"), &run.teacher_codes))?;
    stage("teacher", io::write_codes(&out("teacher_db.cod"), &teacher_db))?;
    stage("teacher", io::write_codes(&out("teacher_query.cod"), &teacher_query))?;
    let assignment: Vec<u32> = run.cluster.labels().iter().map(|&l| l as u32).collect();
    stage("cluster", io::write_labels(&out("clusters.lab"), &assignment))?;
    stage(
        "cluster",
        EmbeddingMatrix::from_rows(run.cluster.centroids()).and_then(|c| io::write_embeddings(&out("centroids.emb"), &c)),
    )?;
    stage("mask", run.masks.to_code_matrix().and_then(|m| io::write_codes(&out("masks.cod"), &m)))?;
    stage("mask", write_csv(&out("expectations.csv"), |w| write_expectations(w, &run.masks)))?;

    let student = stage(
        "distill",
        StudentModel::new(student_arch(cfg.hidden), train_x.dim(), cfg.bits, 1.0, train_cfg.seed),
    )?;
    let trained = stage("distill", train(&train_x, &run, &teacher, student, &train_cfg, &aug))?;
    stage("distill", io::write_student(&out("student.stu"), &trained.student))?;
    stage("distill", write_csv(&out("train_log.csv"), |w| write_log(w, &trained.log)))?;

    let k = cfg.eval_k;
    let eval = || -> crate::error::Result<Vec<(String, String, String, f64)>> {
        let sdb = trained.student.encode_all(&db_x)?;
        let sq = trained.student.encode_all(&query_x)?;
        io::write_codes(&out("student_db.cod"), &sdb)?;
        io::write_codes(&out("student_query.cod"), &sq)?;
        let sq = query_codes(sq).map_err(|e| BrcdError::invalid(e.message))?;
        let tq = query_codes(teacher_query.clone()).map_err(|e| BrcdError::invalid(e.message))?;
        let mut judge = RelevanceJudge::from_pairs(sdb.ids(), &db_y)?;
        if query_y.len() != sq.len() {
            return Err(BrcdError::Dimension { expected: sq.len(), got: query_y.len() });
        }
        judge.extend(sq.ids(), &query_y);
        let row = |m: &str, n: &str, k: String, v: f64| (m.to_string(), n.to_string(), k, v);
        Ok(vec![
            row("mAP", "SSHP", k.to_string(), evaluate(Paradigm::Sshp, &sdb, &teacher_db, &sq, &judge, k)?),
            row("mAP", "ASHP", k.to_string(), evaluate(Paradigm::Ashp, &sdb, &teacher_db, &sq, &judge, k)?),
            row("mAP", "teacher_SSHP", k.to_string(), evaluate(Paradigm::Sshp, &teacher_db, &teacher_db, &tq, &judge, k)?),
            row("NRA", "student_queries", k.to_string(), nra_at_k(&sq, &teacher_db, &judge, k)?),
            row("ISD", "db", String::new(), isd(&sdb, &teacher_db)?),
        ])
    };
    let rows = stage("eval", eval())?;
    stage(
        "eval",
        write_csv(&out("eval.csv"), |w| {
            writeln!(w, "metric,name,K,value")?;
            for (m, n, k, v) in &rows {
                writeln!(w, "{m},{n},{k},{v}")?;
            }
            Ok(())
        }),
    )?;

    let last = trained.log.last();
    let mean_opr = trained.log.iter().map(|e| e.opr).sum::<f64>() / trained.log.len().max(1) as f64;
    let summary = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        cfg.teacher,
        cfg.bits,
        train_cfg.k,
        train_cfg.delta,
        cfg.loss,
        train_cfg.epochs,
        last.map_or(f64::NAN, |e| e.loss),
        last.map_or(f64::NAN, |e| e.isd),
        mean_opr,
        k,
        rows[0].3,
        rows[1].3,
        rows[2].3,
        rows[4].3,
    );
    stage(
        "summary",
        write_csv(&out("summary.csv"), |w| {
            writeln!(w, "{SUMMARY_COLUMNS}")?;
            writeln!(w, "{summary}")
        }),
    )?;
    println!("{SUMMARY_COLUMNS}");
    println!("{summary}");
    Ok(())
}

type Inputs = (EmbeddingMatrix, EmbeddingMatrix, EmbeddingMatrix, Vec<u32>, Vec<u32>);

fn load_inputs(cfg: &RunConfigFile) -> crate::error::Result<Inputs> {
    let train_x = io::read_embeddings(&cfg.train_features)?;
    let query_x = io::read_embeddings(&cfg.query_features)?;
    let db_x = io::read_embeddings(&cfg.db_features)?;
    let query_y = io::read_labels(&cfg.query_labels)?;
    let db_y = io::read_labels(&cfg.db_labels)?;
    if let Some(p) = &cfg.train_labels {
        io::read_labels(p)?;
    }
    Ok((train_x, query_x, db_x, query_y, db_y))
}
