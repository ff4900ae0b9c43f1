use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clstm::evaluation::{parse_convergence_log, DecileReport, SweepReport};

fn clstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clstm")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, docs: usize, length: usize) -> PathBuf {
    let data = dir.join("data");
    let out = clstm(&[
        "synth",
        "--out-dir",
        data.to_str().unwrap(),
        "--docs",
        &docs.to_string(),
        "--length",
        &length.to_string(),
        "--noise-vocab",
        "30",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

fn write_config(dir: &Path, train: &str, extra_train: &str) -> PathBuf {
    let path = dir.join("run.json");
    let text = format!(
        r#"{{
  "model": {{"cell_kind": "clstm", "bidirectional": true, "input_dim": 4, "hidden": 6, "groups": 3, "classes": 3, "use_bias": true}},
  "train": {{"learning_rate": 0.05, "weight_decay": 0.0, "batch_size": 8, "max_epochs": 2, "seed": 1{extra_train}}},
  "data": {{"train": "{train}", "dev": "data/dev.tsv"}},
  "output_dir": "out"
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 60, 20);
    let cfg = write_config(dir.path(), "data/train.tsv", "");
    let out = clstm(&["train", "--config", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("best_epoch"));
    let run = dir.path().join("out");
    let epochs = parse_convergence_log(&fs::read_to_string(run.join("epochs.csv")).unwrap()).unwrap();
    assert_eq!(epochs.len(), 3);
    assert!(run.join("metrics.json").is_file());

    let deciles = dir.path().join("deciles.csv");
    let out = clstm(&[
        "eval",
        "--model",
        run.join("model.bin").to_str().unwrap(),
        "--corpus",
        dir.path().join("data/train.tsv").to_str().unwrap(),
        "--deciles",
        deciles.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("accuracy"));
    let report = DecileReport::from_csv(&fs::read_to_string(&deciles).unwrap()).unwrap();
    assert_eq!(report.total(), 54);
    assert_eq!(report.to_csv().unwrap(), fs::read_to_string(&deciles).unwrap());
}

#[test]
fn zero_epochs_records_initial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 30, 12);
    let cfg = write_config(dir.path(), "data/train.tsv", "");
    let out = clstm(&["train", "--config", cfg.to_str().unwrap(), "--max-epochs", "0", "--quiet"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let epochs = parse_convergence_log(&fs::read_to_string(dir.path().join("out/epochs.csv")).unwrap()).unwrap();
    assert_eq!(epochs.len(), 1);
    assert_eq!(epochs[0].epoch, 0);
}

#[test]
fn missing_corpus_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 30, 12);
    let cfg = write_config(dir.path(), "data/nope.tsv", "");
    let out = clstm(&["train", "--config", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("data.train"), "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_config_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 30, 12);
    let cfg = write_config(dir.path(), "data/train.tsv", "");
    let out = clstm(&["train", "--config", cfg.to_str().unwrap(), "--set", "model.groups=4"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("model"), "{}", stderr(&out));
    let out = clstm(&["train", "--config", cfg.to_str().unwrap(), "--set", "train.bogus=1"]);
    assert_eq!(code(&out), 2);
    let out = clstm(&["train"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn corrupted_model_header_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 30, 12);
    let cfg = write_config(dir.path(), "data/train.tsv", "");
    assert_eq!(code(&clstm(&["train", "--config", cfg.to_str().unwrap(), "--max-epochs", "0", "--quiet"])), 0);
    let model = dir.path().join("out/model.bin");
    let mut bytes = fs::read(&model).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&model, bytes).unwrap();
    let out = clstm(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--corpus",
        dir.path().join("data/dev.tsv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    for cell in ["rnn", "lstm", "cifg", "clstm"] {
        let out = clstm(&["gradcheck", "--cell", cell, "--steps", "3", "--bidirectional"]);
        assert_eq!(code(&out), 0, "{cell}: {}", stdout(&out));
        assert!(stdout(&out).contains("PASS"));
    }
    let out = clstm(&["gradcheck", "--inject-fault", "1.01"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("FAIL"));
    let out = clstm(&["gradcheck", "--hidden", "7"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), 50, 15);
    synth(b.path(), 50, 15);
    for f in ["train.tsv", "dev.tsv"] {
        assert_eq!(fs::read(a.path().join("data").join(f)).unwrap(), fs::read(b.path().join("data").join(f)).unwrap());
    }
}

#[test]
fn convert_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("reviews.txt");
    fs::write(&input, "u1\t\tp1\t\t5\t\tGreat food <sssss> Friendly staff\nu2\t\tp2\t\t1\t\tcold\n\n").unwrap();
    let output = dir.path().join("canon.tsv");
    let out = clstm(&[
        "convert",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--classes",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&output).unwrap(), "4\tgreat food friendly staff\n0\tcold\n");

    fs::write(&input, "u\t\tp\t\t6\t\ttoo good\n").unwrap();
    let out = clstm(&[
        "convert",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("bad.tsv").to_str().unwrap(),
        "--classes",
        "5",
    ]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("bad.tsv").exists());
}

#[test]
fn sweep_writes_one_row_per_group_count() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 40, 10);
    let cfg = write_config(dir.path(), "data/train.tsv", "");
    let out = clstm(&["sweep", "--config", cfg.to_str().unwrap(), "--groups", "1,2,3,4", "--set", "train.max_epochs=1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("K=4"));
    let report = SweepReport::from_csv(&fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap()).unwrap();
    let ks: Vec<usize> = report.entries.iter().map(|e| e.k).collect();
    assert_eq!(ks, [1, 2, 3]);
}
