use std::process::Command;

fn osr(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_osr")).args(args).output().unwrap()
}

const TINY: &str = "dataset = blobs
blobs.train_per_class = 30
blobs.test_per_class = 10
blobs.dim = 5
arch.kind = mlp
arch.dense = 8, 4
train.iterations = 20
train.batch_size = 12
loss.switch_iteration = 10
known_set = [0, 1, 2]
methods = ce, ls+ce
runs = 2
";

#[test]
fn gradcheck_passes_and_lists_each_component_once() {
    let out = osr(&["gradcheck", "--instances", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    for kind in ["dense", "conv2d", "maxpool2", "relu", "batchnorm", "dropout", "superlative", "superlative-tracked-radius"] {
        assert_eq!(names.iter().filter(|n| **n == kind).count(), 1, "{kind} in {names:?}");
    }
}

#[test]
fn corrupted_gradient_exits_with_verification_failure() {
    let out = osr(&["gradcheck", "--corrupt-gradient"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exit_codes_for_config_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "method = svm\n").unwrap();
    assert_eq!(osr(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("missing.conf");
    assert_eq!(osr(&["train", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    let nodata = dir.path().join("nodata.conf");
    std::fs::write(&nodata, "dataset = mnist\ndata.dir = /nonexistent\n").unwrap();
    assert_eq!(osr(&["train", "--config", nodata.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(osr(&["report", "--out", dir.path().join("none").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn train_then_report_reproduces_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("tiny.conf");
    std::fs::write(&conf, TINY).unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let status = osr(&["train", "--config", conf.to_str().unwrap(), "--out", o, "--seed", "5", "--runs", "3"]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let runs: Vec<_> = std::fs::read_dir(out.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 6);
    let first = std::fs::read_to_string(out.join("runs/blobs_ce_-0-1-2-_run000.txt")).unwrap();
    assert!(first.contains("\nseed 5\n"));
    let metrics = std::fs::read(out.join("metrics.csv")).unwrap();
    let manifest = std::fs::read(out.join("manifest.json")).unwrap();
    std::fs::remove_file(out.join("metrics.csv")).unwrap();
    assert_eq!(osr(&["report", "--out", o]).status.code(), Some(0));
    assert_eq!(std::fs::read(out.join("metrics.csv")).unwrap(), metrics);
    assert_eq!(std::fs::read(out.join("manifest.json")).unwrap(), manifest);
    assert!(out.join("timings.txt").exists());
}

#[test]
fn sweep_verb_writes_openness_levels() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("tiny.conf");
    std::fs::write(&conf, TINY.replace("runs = 2", "runs = 1").replace("methods = ce, ls+ce", "method = ce")).unwrap();
    let out = dir.path().join("out");
    let status = osr(&["sweep-openness", "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap(), "--counts", "8,4"]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(out.join("openness_f1.csv")).unwrap();
    let levels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(5).unwrap()).collect();
    assert_eq!(levels, ["0.269703", "0.082337"]);
    assert_eq!(osr(&["sweep-openness", "--config", conf.to_str().unwrap(), "--counts", "10"]).status.code(), Some(1));
}
