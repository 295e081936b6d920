use std::fs;
use std::path::Path;
use std::process::Command;

use fapn::checkpoint;
use fapn::cli::{self, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK};
use fapn::config::ExperimentConfig;
use fapn::nn::Arch;
use fapn::pgm;
use fapn::train::{self, Datasets};

const SMALL: [&str; 14] = [
    "--set", "height=32", "--set", "width=32", "--set", "train_size=4", "--set", "eval_size=3",
    "--set", "pyramid_width=6", "--set", "max_iters=4", "--set", "eval_interval=2",
];

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run_with(std::iter::once("fapn").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn train_small(dir: &Path, arch: &str) {
    let mut args = vec!["train", "--arch", arch, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    let (code, out, err) = run(&args);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains(&format!("{arch} seed=0")), "{out}");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_fapn");
    let s = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(s.status.code(), Some(0));
    let s = Command::new(bin).args(["train", "--config", "/no/such/file.txt"]).output().unwrap();
    assert_eq!(s.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&s.stderr).contains("/no/such/file.txt"));
    let s = Command::new(bin).args(["gradcheck", "--op", "upsample"]).output().unwrap();
    assert_eq!(s.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&s.stdout).contains("PASS upsample"));
}

#[test]
fn config_errors_exit_two() {
    for args in [
        vec!["train", "--arch", "resnet"],
        vec!["train", "--set", "colour=blue"],
        vec!["train", "--set", "classes=1"],
        vec!["gradcheck", "--op", "softmax"],
        vec!["compare", "--archs", "fpn"],
        vec!["bogus"],
    ] {
        let (code, _, err) = run(&args);
        assert_eq!(code, EXIT_CONFIG, "{args:?}: {err}");
        assert!(!err.is_empty());
    }
}

#[test]
fn gradcheck_failure_exits_three() {
    let (code, out, _) = run(&["gradcheck", "--op", "conv2d", "--tol", "0"]);
    assert_eq!(code, EXIT_NUMERIC);
    assert!(out.lines().last().unwrap().starts_with("FAIL conv2d"));
}

#[test]
fn divergent_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", dir.path().to_str().unwrap(), "--set", "base_lr=1e200"];
    args.extend_from_slice(&SMALL);
    let (code, _, err) = run(&args);
    assert_eq!(code, EXIT_NUMERIC, "{err}");
    assert!(err.contains("non-finite"), "{err}");
    assert!(!dir.path().join(cli::LOCK_FILE).exists());
}

#[test]
fn held_lock_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(cli::LOCK_FILE), "1\n").unwrap();
    let mut args = vec!["train", "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    let (code, _, err) = run(&args);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("locked"), "{err}");
}

#[test]
fn config_file_matches_flags() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("flags"), root.path().join("file"));
    train_small(&a, "fpn");
    let cfg_path = root.path().join("exp.txt");
    fs::write(&cfg_path, fs::read_to_string(a.join(train::CONFIG_FILE)).unwrap()).unwrap();
    let (code, _, err) = run(&["train", "--config", cfg_path.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(
        fs::read(a.join(train::METRICS_FILE)).unwrap(),
        fs::read(b.join(train::METRICS_FILE)).unwrap()
    );
}

#[test]
fn eval_reproduces_final_report() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "fapn");
    let metrics = fs::read_to_string(dir.path().join(train::METRICS_FILE)).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows[0], train::METRICS_HEADER);
    assert_eq!(rows.len(), 3);
    let (code, out, err) = run(&["eval", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.starts_with("fapn miou="));
    assert_eq!(
        fs::read_to_string(dir.path().join(cli::EVAL_FILE)).unwrap(),
        fs::read_to_string(dir.path().join(train::REPORT_FILE)).unwrap()
    );
}

#[test]
fn export_matches_in_memory_prediction() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "fapn");
    let (code, _, err) = run(&["export", "--out", dir.path().to_str().unwrap(), "--sample", "1"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let cfg = ExperimentConfig::load(&dir.path().join(train::CONFIG_FILE)).unwrap();
    let model = train::load_model(&cfg, &dir.path().join(train::CHECKPOINT_DIR)).unwrap();
    let sets = Datasets::generate(&cfg).unwrap();
    let ex = dir.path().join(cli::EXPORT_DIR);
    let pred = pgm::read_label(&ex.join("pred.pgm"), cfg.classes).unwrap();
    assert_eq!(pred, model.predict(&sets.eval[1].image).unwrap());
    let gt = pgm::read_label(&ex.join("gt.pgm"), cfg.classes).unwrap();
    assert_eq!(gt, sets.eval[1].label);
    for n in [1, 2, 3] {
        assert!(ex.join(format!("band_n{n}.pgm")).is_file());
    }
    let offsets = fs::read_to_string(ex.join("offsets.csv")).unwrap();
    assert_eq!(offsets.lines().next(), Some(cli::OFFSETS_HEADER));
    assert_eq!(offsets.lines().count(), 1 + Arch::Fapn.level_count() - 1);
    let (code, _, _) = run(&["export", "--out", dir.path().to_str().unwrap(), "--sample", "99"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn untrained_fapn_exports_zero_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        arch: Arch::Fapn,
        height: 32,
        width: 32,
        eval_size: 2,
        pyramid_width: Some(6),
        out: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    fs::write(dir.path().join(train::CONFIG_FILE), cfg.to_text()).unwrap();
    let model = train::build_model(&cfg).unwrap();
    checkpoint::save(&model.store, &dir.path().join(train::CHECKPOINT_DIR)).unwrap();
    let (code, _, err) = run(&["export", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let offsets = fs::read_to_string(dir.path().join(cli::EXPORT_DIR).join("offsets.csv")).unwrap();
    for line in offsets.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], "0.000000");
        assert_eq!(fields[2], "0.000000");
        assert!(fields[3].split(';').all(|v| v == "0.000000"));
        assert_eq!(fields[3].split(';').count(), 9);
    }
}

#[test]
fn compare_shares_dataset_and_writes_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["compare", "--archs", "fpn,fapn_realtime", "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    let (code, out, err) = run(&args);
    assert_eq!(code, EXIT_OK, "{err}");
    let cfg = ExperimentConfig::load(&dir.path().join("fpn").join(train::CONFIG_FILE)).unwrap();
    let sum = Datasets::generate(&cfg).unwrap().checksum();
    assert!(out.starts_with(&format!("dataset checksum {sum:016x}")), "{out}");
    for arch in ["fpn", "fapn_realtime"] {
        assert!(dir.path().join(arch).join(train::CHECKPOINT_DIR).join(checkpoint::MANIFEST).is_file());
    }
    let table = fs::read_to_string(dir.path().join(cli::COMPARE_FILE)).unwrap();
    assert_eq!(table.lines().count(), 3);
}
