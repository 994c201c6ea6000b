use std::path::Path;
use std::process::{Command, Output};

use brcd::io;

fn brcd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brcd")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = brcd(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn gen_splits(dir: &Path) {
    ok(&["gen-data", "--per-class", "60", "--dim", "16", "--out", "train"], dir);
    ok(&["gen-data", "--per-class", "10", "--dim", "16", "--stream", "1", "--out", "query"], dir);
    ok(&["gen-data", "--per-class", "30", "--dim", "16", "--stream", "2", "--out", "db"], dir);
}

const CONFIG: &str = r#"
version = 1
out_dir = "out"
train_features = "train.emb"
train_labels = "train.lab"
query_features = "query.emb"
query_labels = "query.lab"
db_features = "db.emb"
db_labels = "db.lab"
bits = 16
hidden = 4
eval_k = 20

[train]
m = 32
epochs = 3
k = 10
"#;

#[test]
fn help_version_and_unknown_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&["--help"], dir.path());
    for sub in ["gen-data", "teacher", "cluster", "mask", "distill", "eval", "bench", "check-grad", "pipeline"] {
        assert!(help.contains(sub), "missing {sub}");
    }
    let v = ok(&["--version"], dir.path());
    let ver = v.trim().rsplit(' ').next().unwrap();
    assert_eq!(ver.split('.').filter(|p| p.parse::<u64>().is_ok()).count(), 3, "{v}");
    let bad = brcd(&["frobnicate"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(!bad.stderr.is_empty());
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-data", "--out", "a"], d);
    ok(&["gen-data", "--out", "b"], d);
    assert_eq!(std::fs::read(d.join("a.emb")).unwrap(), std::fs::read(d.join("b.emb")).unwrap());
    let x = io::read_embeddings(&d.join("a.emb")).unwrap();
    let y = io::read_labels(&d.join("a.lab")).unwrap();
    assert_eq!((x.len(), x.dim()), (5000, 64));
    assert_eq!(*y.iter().max().unwrap(), 9);

    ok(&["gen-data", "--spread", "0", "--per-class", "5", "--out", "flat"], d);
    let x = io::read_embeddings(&d.join("flat.emb")).unwrap();
    assert_eq!(x.row(0), x.row(4));
    assert_ne!(x.row(0), x.row(5));
}

#[test]
fn stepwise_commands_write_readable_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_splits(d);
    ok(&["teacher", "--kind", "centroid", "--fit", "train.emb", "--labels", "train.lab", "--bits", "16", "--out", "t.cod"], d);
    let csv = ok(&["cluster", "--codes", "t.cod", "--k", "5", "--out-labels", "c.lab", "--out-centroids", "c.emb"], d);
    assert!(csv.starts_with("iteration,inertia\n"));
    assert_eq!(io::read_labels(&d.join("c.lab")).unwrap().len(), 600);
    assert_eq!(io::read_embeddings(&d.join("c.emb")).unwrap().len(), 5);

    let exp = ok(&["mask", "--codes", "t.cod", "--labels", "c.lab", "--out", "m.cod", "--histogram", "h.csv"], d);
    assert!(exp.starts_with("cluster,dim,expectation,kept\n"));
    assert_eq!(exp.lines().count(), 1 + 5 * 16);
    let masks = io::read_codes(&d.join("m.cod")).unwrap();
    assert_eq!((masks.len(), masks.bits()), (5, 16));
    assert!(std::fs::read_to_string(d.join("h.csv")).unwrap().starts_with("cluster,dim,plus,minus\n"));

    let log = ok(
        &["distill", "--features", "train.emb", "--teacher", "file:t.cod", "--bits", "16", "--M", "32", "--epochs", "2", "--k", "5", "--hidden", "4", "--out", "s.stu"],
        d,
    );
    assert!(log.starts_with("epoch,loss,isd,opr\n"));
    assert_eq!(log.lines().count(), 3);
    ok(&["encode", "--student", "s.stu", "--features", "db.emb", "--out", "sdb.cod"], d);
    ok(&["encode", "--student", "s.stu", "--features", "query.emb", "--out", "sq.cod"], d);
    ok(&["teacher", "--kind", "centroid", "--fit", "train.emb", "--labels", "train.lab", "--bits", "16", "--features", "db.emb", "--out", "tdb.cod"], d);
    let eval = ok(
        &["eval", "--student-db", "sdb.cod", "--teacher-db", "tdb.cod", "--queries", "sq.cod", "--db-labels", "db.lab", "--query-labels", "query.lab", "--k", "20"],
        d,
    );
    let lines: Vec<&str> = eval.lines().collect();
    assert_eq!(lines[0], "metric,name,K,value");
    assert!(lines[1].starts_with("mAP,SSHP,20,") && lines[2].starts_with("mAP,ASHP,20,"));
}

#[test]
fn distill_rejects_bad_teacher_and_missing_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_splits(d);
    let out = brcd(&["distill", "--features", "train.emb", "--teacher", "oracle", "--out", "s.stu"], d);
    assert_eq!(out.status.code(), Some(2));
    let out = brcd(&["distill", "--features", "train.emb", "--teacher", "centroid", "--out", "s.stu"], d);
    assert_eq!(out.status.code(), Some(2));
    let out = brcd(&["distill", "--features", "nowhere.emb", "--teacher", "hyperplane", "--out", "s.stu"], d);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.emb"));
}

#[test]
fn bench_structure_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = || ok(&["bench", "--synthetic", "2000", "--bits", "32", "--batch-sizes", "1,10", "--k", "5,50"], dir.path());
    let shape = |s: String| s.lines().map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect::<Vec<_>>();
    let a = shape(run());
    assert_eq!(a, shape(run()));
    assert_eq!(a, ["batch_size,N,K", "1,2000,5", "10,2000,5", "1,2000,50", "10,2000,50"]);
}

#[test]
fn check_grad_passes_and_fails_by_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let csv = ok(&["check-grad", "--batches", "2"], dir.path());
    assert_eq!(csv.lines().count(), 3);
    let out = brcd(&["check-grad", "--batches", "1", "--tol", "1e-300"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn pipeline_runs_and_guards_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_splits(d);
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    let summary = ok(&["pipeline", "--config", "run.toml"], d);
    assert!(summary.starts_with("teacher,bits,k,delta,loss,epochs,"));
    let eval = std::fs::read_to_string(d.join("out/eval.csv")).unwrap();
    assert!(eval.contains("mAP,SSHP,20,") && eval.contains("mAP,ASHP,20,"));
    assert_eq!(io::read_codes(&d.join("out/masks.cod")).unwrap().len(), 10);
    io::read_student(&d.join("out/student.stu")).unwrap();
    let first = std::fs::read(d.join("out/student_db.cod")).unwrap();

    let again = brcd(&["pipeline", "--config", "run.toml"], d);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["pipeline", "--config", "run.toml", "--force"], d);
    assert_eq!(first, std::fs::read(d.join("out/student_db.cod")).unwrap());
}

#[test]
fn pipeline_names_missing_path_and_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    let out = brcd(&["pipeline", "--config", "run.toml"], d);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage load") && err.contains("train.emb"), "{err}");

    std::fs::write(d.join("bad.toml"), format!("{CONFIG}\nextra = 1\n")).unwrap();
    let out = brcd(&["pipeline", "--config", "bad.toml"], d);
    assert_eq!(out.status.code(), Some(2));
}
