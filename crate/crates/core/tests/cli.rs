use std::path::Path;
use std::process::{Command, Output};

fn rar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rar"))
        .current_dir(dir)
        .env("RAR_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn make_data(dir: &Path) {
    ok(&rar(dir, &["make-data", "--random-potts", "2,3,2,2", "--train", "32", "--eval", "16", "--out", "data", "--seed", "4"]));
}

#[test]
fn make_data_is_deterministic_and_prints_the_fingerprint() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ok(&rar(tmp.path(), &["make-data", "--random-potts", "2,3,2,2", "--train", "8", "--eval", "4", "--out", "a", "--seed", "4"]));
    let b = ok(&rar(tmp.path(), &["make-data", "--random-potts", "2,3,2,2", "--train", "8", "--eval", "4", "--out", "b", "--seed", "4"]));
    assert_eq!(a, b);
    assert_eq!(a.trim().len(), 16);
    for f in ["spec.json", "meta.json", "train.shard", "eval.shard"] {
        assert_eq!(std::fs::read(tmp.path().join("a").join(f)).unwrap(), std::fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_sample_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    make_data(d);
    ok(&rar(d, &["train", "--data", "data", "--out", "run", "--model", "micro", "--epochs", "2", "--batch", "8"]));
    let csv = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(d.join("run/epoch_0001.ckpt").exists() && d.join("run/final.opt").exists());

    ok(&rar(d, &["sample", "--ckpt", "run/final.ckpt", "--data", "data", "--out", "s", "--n", "3", "--render", "--guidance", "2", "--schedule", "linear"]));
    assert!(d.join("s/samples.shard").exists() && d.join("s/palette.json").exists() && d.join("s/sample_00002.ppm").exists());

    let json = ok(&rar(d, &["eval", "--ckpt", "run/final.ckpt", "--data", "data", "--order", "row_major,spiral_in"]));
    let rows: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    let oracle: Vec<f64> = rows.as_array().unwrap().iter().map(|r| r["oracle_nll"].as_f64().unwrap()).collect();
    assert_eq!(oracle[0], oracle[1]);
}

#[test]
fn resume_reproduces_the_final_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    make_data(d);
    let args = ["--data", "data", "--model", "micro", "--epochs", "3", "--batch", "8"];
    ok(&rar(d, &[&["train", "--out", "full"][..], &args].concat()));
    ok(&rar(d, &[&["train", "--out", "again", "--resume", "full/epoch_0001.ckpt"][..], &args].concat()));
    assert_eq!(std::fs::read(d.join("full/final.ckpt")).unwrap(), std::fs::read(d.join("again/final.ckpt")).unwrap());
    // A fresh directory only records the steps it ran itself.
    let full = std::fs::read_to_string(d.join("full/metrics.csv")).unwrap();
    let again = std::fs::read_to_string(d.join("again/metrics.csv")).unwrap();
    let tail: Vec<&str> = again.lines().skip(1).collect();
    assert_eq!(tail.len(), 8);
    assert!(full.ends_with(&(tail.join("\n") + "\n")));
}

#[test]
fn sweep_skips_invalid_pairs_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    make_data(d);
    let out = rar(d, &["sweep", "--data", "data", "--model", "micro", "--epochs", "2", "--batch", "16", "--starts", "0,2", "--ends", "1,2", "--seeds", "0"]);
    let csv = ok(&out);
    assert_eq!(csv.lines().next().unwrap(), "start,end,seed,mean_nll,oracle_nll,gap");
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("start=2 end=1"));
}

#[test]
fn orders_prints_the_scan_and_a_heat_map() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&rar(tmp.path(), &["orders", "--kind", "z_curve", "--h", "4", "--w", "4", "--ppm", "z.ppm"]));
    assert_eq!(out.trim(), "0,1,4,5,2,3,6,7,8,9,12,13,10,11,14,15");
    assert!(std::fs::read(tmp.path().join("z.ppm")).unwrap().starts_with(b"P6\n64 64\n255\n"));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rar(d, &["make-data", "--spec", "missing.json", "--train", "1", "--eval", "1", "--out", "x"]).status.code(), Some(2));
    assert_eq!(rar(d, &["orders", "--kind", "z_curve", "--h", "3", "--w", "3"]).status.code(), Some(2));
    assert_eq!(rar(d, &["no-such-command"]).status.code(), Some(2));
    make_data(d);
    ok(&rar(d, &["train", "--data", "data", "--out", "run", "--model", "micro", "--epochs", "1", "--batch", "8"]));
    let base = ["sample", "--ckpt", "run/final.ckpt", "--data", "data", "--out", "s"];
    assert_eq!(rar(d, &[&base[..], &["--temperature", "0"]].concat()).status.code(), Some(2));
    assert_eq!(rar(d, &[&base[..], &["--order", "spiral_in"]].concat()).status.code(), Some(2));
    assert_eq!(rar(d, &[&base[..], &["--order", "spiral_in", "--force-order", "--merge-pe"]].concat()).status.code(), Some(2));
    ok(&rar(d, &[&base[..], &["--order", "spiral_in", "--force-order", "--n", "1"]].concat()));
    assert_eq!(rar(d, &["train", "--data", "data", "--out", "bad", "--anneal-start", "5", "--anneal-end", "2"]).status.code(), Some(2));
    assert!(!d.join("bad").exists());
}
