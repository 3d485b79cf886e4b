use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 6] = ["synth", "train", "eval", "gradcheck", "ablate", "inspect"];

fn ialgca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ialgca"))
        .args(args)
        .env("IALGCA_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn synth(dir: &Path) {
    let o = ialgca(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--classes",
        "7",
        "--train-per-class",
        "2",
        "--test-per-class",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

/// Compare with `tests/golden/NAME.txt`; `UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_default();
    assert_eq!(actual, expected, "help text of {name} changed; rerun with UPDATE_GOLDEN=1");
}

#[test]
fn help_texts_match_golden_files() {
    let o = ialgca(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    golden("ialgca", &stdout(&o));
    for sub in SUBCOMMANDS {
        let o = ialgca(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        golden(sub, &stdout(&o));
    }
}

#[test]
fn usage_errors_exit_one() {
    let o = ialgca(&["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[E_USAGE]"));
    let o = ialgca(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_are_one_line_with_a_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let o = ialgca(&["inspect", "--ckpt", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[E_IO]"), "{err}");

    let o = ialgca(&["gradcheck", "--module", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[E_CONFIG]"));

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"NOTACKPT").unwrap();
    let o = ialgca(&["inspect", "--ckpt", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[E_FORMAT]"), "{}", stderr(&o));
}

#[test]
fn gradcheck_module_passes() {
    let o = ialgca(&["gradcheck", "--module", "losses"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().skip(1).all(|l| l.ends_with(" ok")));
}

#[test]
fn untrained_checkpoint_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let ckpt = dir.path().join("m.ckpt");
    let o = ialgca(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--epochs",
        "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ialgca(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let war = v["war"].as_f64().unwrap();
    assert!((war - 1.0 / 7.0).abs() <= 0.1, "{war}");
}

#[test]
fn train_then_eval_reports_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let ckpt = dir.path().join("m.ckpt");
    let o = ialgca(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--attention",
        "gca",
        "--lambda",
        "0.1",
        "--aux",
        "on",
        "--epochs",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("m.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,lr,loss,train_war,test_uar,test_war");
    assert_eq!(log.lines().count(), 2);

    let o = ialgca(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in ["uar", "war", "per_class_recall", "confusion", "low_intensity", "high_intensity"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let text = ialgca(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(stdout(&text).starts_with("UAR"));

    let o = ialgca(&["inspect", "--ckpt", ckpt.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("stage0.attn.kernel"));
}

#[test]
fn ablate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    std::fs::write(
        &spec,
        "classes = 3\ntrain_per_class = 2\ntest_per_class = 2\nheight = 16\nwidth = 16\nepochs = 1\nu = 2\n\n\
         [cell baseline]\nattention = none\nlambda = 0\n\n[cell gca+ial]\nattention = gca\nlambda = 0.1\n",
    )
    .unwrap();
    let out = dir.path().join("table.csv");
    let o = ialgca(&["ablate", "--spec", spec.to_str().unwrap(), "--seeds", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(csv.starts_with("cell,attention,lambda,aux,r,aggregate,uar,war,low_war,high_war"));
}
