use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo")
}

fn dcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcsim")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let path = entry.unwrap().path();
        let target = to.join(path.file_name().unwrap());
        if path.is_dir() {
            copy_dir(&path, &target);
        } else {
            std::fs::copy(&path, &target).unwrap();
        }
    }
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out.join("demo"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn list_prints_matrix() {
    let exp = demo().join("experiment.json");
    let out = dcsim(&["--experiment-path", exp.to_str().unwrap(), "--list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("baseline")).count(), 4);
    assert_eq!(text.lines().count(), 48 + 1);
}

#[test]
fn run_then_refuse_then_resume() {
    let exp = demo().join("experiment.json");
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let args = ["--experiment-path", exp.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap(), "--parallelism", "2"];

    let first = dcsim(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let runs = run_dirs(&out_dir);
    assert_eq!(runs.len(), 48);
    for r in &runs {
        assert!(r.join("summary.csv").is_file());
        assert!(r.join("run.json").is_file());
    }
    assert!(out_dir.join("demo/aggregate.csv").is_file());
    let aggregate = std::fs::read(out_dir.join("demo/aggregate.csv")).unwrap();

    let again = dcsim(&args);
    assert_eq!(again.status.code(), Some(2));

    let mut resumed_args = args.to_vec();
    resumed_args.push("--resume");
    let resumed = Command::new(env!("CARGO_BIN_EXE_dcsim")).args(&resumed_args).env("RUST_LOG", "info").output().unwrap();
    assert!(resumed.status.success());
    let log = String::from_utf8_lossy(&resumed.stderr);
    assert!(log.contains("0 runs executed, 48 resumed"), "{log}");
    assert_eq!(std::fs::read(out_dir.join("demo/aggregate.csv")).unwrap(), aggregate);
}

#[test]
fn bad_trace_fails_only_its_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg");
    copy_dir(&demo(), &cfg);
    std::fs::write(cfg.join("carbon/FR.csv"), "timestamp,carbon_intensity\n0,not-a-number\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = dcsim(&[
        "--experiment-path",
        cfg.join("experiment.json").to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let runs = run_dirs(&out_dir);
    let failed = runs.iter().filter(|r| r.join("error.txt").is_file()).count();
    let done = runs.iter().filter(|r| r.join("summary.csv").is_file()).count();
    assert_eq!((failed, done), (24, 24));
    let summary = std::fs::read_to_string(out_dir.join("demo/summary.csv")).unwrap();
    assert!(summary.contains("NL") && !summary.contains(",FR,"));
}

#[test]
fn missing_experiment_is_config_error() {
    let out = dcsim(&["--experiment-path", "/nonexistent/experiment.json"]);
    assert_eq!(out.status.code(), Some(2));
}
