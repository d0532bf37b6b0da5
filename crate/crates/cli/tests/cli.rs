use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn drec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drec"))
        .args(args)
        .output()
        .expect("spawn drec")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Six users over five items with ratings 1..5 and increasing timestamps.
fn ratings(dir: &Path) -> PathBuf {
    let mut text = String::new();
    let mut t = 0;
    for u in 1..=6 {
        for i in 1..=5 {
            if (u + i) % 3 != 0 {
                t += 1;
                text.push_str(&format!("u{u}\t{}\t{}\t{t}\n", i * 10, 1 + (u * i) % 5));
            }
        }
    }
    let p = dir.join("ratings.tsv");
    fs::write(&p, text).unwrap();
    p
}

fn svd_config(dir: &Path, data: &str, extra_eval: &str) -> PathBuf {
    let text = format!(
        r#"[data]
path = "{data}"
format = "uirt"
split = "random:0.2"
seed = 1

[model]
name = "biasedsvd"
k = 2

[train]
optimizer = "adam"
lr = 0.05
epochs = 5
batch_size = 8
seed = 2
{extra_eval}"#
    );
    let p = dir.join("svd.toml");
    fs::write(&p, text).unwrap();
    p
}

fn bpr_config(dir: &Path) -> PathBuf {
    let text = r#"[data]
path = "ratings.tsv"
format = "uirt"
split = "loo"
seed = 1

[model]
name = "bprmf"
k = 4

[train]
optimizer = "adam"
lr = 0.05
epochs = 5
batch_size = 8
seed = 3

[eval]
cutoffs = [1, 3]
protocol = "full"
"#;
    let p = dir.join("bpr.toml");
    fs::write(&p, text).unwrap();
    p
}

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ratings(dir.path());
    dir
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_prints_rating_metrics_and_writes_checkpoint() {
    let dir = setup();
    let cfg = svd_config(dir.path(), "ratings.tsv", "");
    let ckpt = dir.path().join("m.drec");
    let o = drec(&["train", "--config", path(&cfg), "--out", path(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let keys: Vec<&str> = out
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(keys, ["rmse", "mae"]);
    assert_eq!(&fs::read(&ckpt).unwrap()[..4], b"DREC");
}

#[test]
fn identical_runs_write_identical_reports() {
    let dir = setup();
    let cfg = bpr_config(dir.path());
    let run = |name: &str| {
        let report = dir.path().join(name);
        let ckpt = dir.path().join(format!("{name}.drec"));
        let o = drec(&[
            "train",
            "--config",
            path(&cfg),
            "--out",
            path(&ckpt),
            "--report",
            path(&report),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read(report).unwrap(), fs::read(ckpt).unwrap())
    };
    let (a, ca) = run("a.txt");
    let (b, cb) = run("b.txt");
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let text = String::from_utf8(a).unwrap();
    for key in [
        "precision@1",
        "recall@1",
        "ndcg@1",
        "precision@3",
        "recall@3",
        "ndcg@3",
        "mrr",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{key}\t"))),
            "{key} missing:\n{text}"
        );
    }
}

#[test]
fn evaluate_reproduces_the_training_report() {
    let dir = setup();
    let cfg = bpr_config(dir.path());
    let ckpt = dir.path().join("m.drec");
    let trained = drec(&["train", "--config", path(&cfg), "--out", path(&ckpt)]);
    assert!(trained.status.success(), "{}", stderr(&trained));
    let again = drec(&["evaluate", "--ckpt", path(&ckpt), "--config", path(&cfg)]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(stdout(&trained), stdout(&again));
}

#[test]
fn recommend_prints_n_lines_in_descending_order() {
    let dir = setup();
    let cfg = bpr_config(dir.path());
    let ckpt = dir.path().join("m.drec");
    assert!(drec(&["train", "--config", path(&cfg), "--out", path(&ckpt)])
        .status
        .success());
    let o = drec(&["recommend", "--ckpt", path(&ckpt), "--user", "u2", "--n", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<(String, f64)> = out
        .lines()
        .map(|l| {
            let (item, score) = l.split_once('\t').unwrap();
            (item.to_string(), score.parse().unwrap())
        })
        .collect();
    assert_eq!(lines.len(), 3, "{out}");
    assert!(lines.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(lines
        .iter()
        .all(|(i, _)| ["10", "20", "30", "40", "50"].contains(&i.as_str())));
}

#[test]
fn unknown_user_is_a_validation_error() {
    let dir = setup();
    let cfg = bpr_config(dir.path());
    let ckpt = dir.path().join("m.drec");
    assert!(drec(&["train", "--config", path(&cfg), "--out", path(&ckpt)])
        .status
        .success());
    let o = drec(&["recommend", "--ckpt", path(&ckpt), "--user", "nobody", "--n", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nobody"));
}

#[test]
fn missing_data_file_is_a_runtime_error_naming_the_path() {
    let dir = setup();
    let cfg = svd_config(dir.path(), "absent.tsv", "");
    let o = drec(&[
        "train",
        "--config",
        path(&cfg),
        "--out",
        path(&dir.path().join("m.drec")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.tsv"), "{}", stderr(&o));
}

#[test]
fn ranking_settings_on_a_rating_checkpoint_are_rejected() {
    let dir = setup();
    let cfg = svd_config(dir.path(), "ratings.tsv", "");
    let ckpt = dir.path().join("m.drec");
    assert!(drec(&["train", "--config", path(&cfg), "--out", path(&ckpt)])
        .status
        .success());
    let bad = svd_config(
        dir.path(),
        "ratings.tsv",
        "\n[eval]\ncutoffs = [5]\nprotocol = \"full\"\n",
    );
    let o = drec(&["evaluate", "--ckpt", path(&ckpt), "--config", path(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cutoffs"), "{}", stderr(&o));
}

#[test]
fn model_mismatch_is_rejected() {
    let dir = setup();
    let svd = svd_config(dir.path(), "ratings.tsv", "");
    let ckpt = dir.path().join("m.drec");
    assert!(drec(&["train", "--config", path(&svd), "--out", path(&ckpt)])
        .status
        .success());
    let o = drec(&[
        "evaluate",
        "--ckpt",
        path(&ckpt),
        "--config",
        path(&bpr_config(dir.path())),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = setup();
    let ckpt = dir.path().join("bad.drec");
    fs::write(&ckpt, b"XXXX\x01\x00").unwrap();
    let o = drec(&["recommend", "--ckpt", path(&ckpt), "--user", "u1", "--n", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"));
}

#[test]
fn unknown_flag_prints_usage() {
    let o = drec(&["train", "--config", "x.toml", "--out", "y", "--epochs", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn split_materializes_both_parts() {
    let dir = setup();
    let cfg = bpr_config(dir.path());
    let out = dir.path().join("parts");
    let o = drec(&["split", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train = fs::read_to_string(out.join("train.txt")).unwrap();
    let test = fs::read_to_string(out.join("test.txt")).unwrap();
    let total = fs::read_to_string(dir.path().join("ratings.tsv"))
        .unwrap()
        .lines()
        .count();
    let dropped: usize = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("dropped\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(test.lines().count() <= 6);
    assert_eq!(train.lines().count() + test.lines().count() + dropped, total);
    assert!(train.lines().all(|l| l.split('\t').count() == 4));
}

#[test]
fn config_errors_are_listed_together() {
    let dir = setup();
    let cfg = dir.path().join("bad.toml");
    let text = fs::read_to_string(bpr_config(dir.path()))
        .unwrap()
        .replace("k = 4", "k = 4\nwidth = 3")
        .replace("seed = 3", "");
    fs::write(&cfg, text).unwrap();
    let o = drec(&[
        "train",
        "--config",
        path(&cfg),
        "--out",
        path(&dir.path().join("m.drec")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("width") && err.contains("seed"), "{err}");
}
