use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FIXTURE: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/reviews100.jsonl"
);

fn transrev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transrev"))
        .args(args)
        .env_remove("TRANSREV_DATA")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = transrev(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn preprocessed(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "preprocess",
        "--input",
        FIXTURE,
        "--format",
        "amazon",
        "--out",
        s(&data),
        "--seed",
        "1",
    ]);
    data
}

#[test]
fn help_exits_zero() {
    let out = transrev(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("preprocess"));
    assert_eq!(transrev(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(transrev(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(transrev(&[]).status.code(), Some(1));
    assert_eq!(transrev(&["train", "--k", "abc"]).status.code(), Some(1));
    assert_eq!(
        transrev(&[
            "preprocess",
            "--input",
            FIXTURE,
            "--format",
            "imdb",
            "--out",
            "x"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = transrev(&[
        "evaluate",
        "--model",
        "missing.bin",
        "--data",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let bogus = dir.path().join("bogus.bin");
    fs::write(&bogus, b"not a model").unwrap();
    let data = preprocessed(dir.path());
    let out = transrev(&["evaluate", "--model", s(&bogus), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a model file"));
}

#[test]
fn preprocess_train_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = preprocessed(dir.path());
    for f in [
        "vocab.tsv",
        "train.tsv",
        "validation.tsv",
        "test.tsv",
        "manifest.json",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }
    let model = dir.path().join("model.bin");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--k",
        "4",
        "--epochs",
        "20",
        "--lr",
        "0.005",
        "--seed",
        "2",
        "--out",
        s(&model),
    ]);
    let metrics = fs::read_to_string(dir.path().join("model.bin.metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        assert_eq!(line.split('\t').count(), 3);
    }

    let printed = ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--split",
        "test",
    ]);
    let line = printed.trim();
    let (mse, n) = line
        .strip_prefix("mse=")
        .and_then(|r| r.split_once(" n="))
        .unwrap_or_else(|| panic!("unexpected output {line:?}"));
    assert!(mse.parse::<f64>().unwrap().is_finite());
    assert!(n.parse::<usize>().unwrap() > 0);

    let words = dir.path().join("words.tsv");
    ok(&[
        "export-words",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&words),
    ]);
    let words = fs::read_to_string(words).unwrap();
    assert_eq!(words.lines().count(), 50);
    assert!(words.lines().all(|l| l.split('\t').count() == 2 + 4));

    let users = fs::read_to_string(data.join("users.tsv")).unwrap();
    let items = fs::read_to_string(data.join("items.tsv")).unwrap();
    let user = users.lines().next().unwrap().split('\t').nth(1).unwrap();
    let item = items.lines().next().unwrap().split('\t').nth(1).unwrap();
    let shown = ok(&[
        "retrieve",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--user",
        user,
        "--item",
        item,
        "--top",
        "3",
    ]);
    assert_eq!(shown.lines().count(), 4);
    let unknown = transrev(&[
        "retrieve",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--user",
        "nobody",
        "--item",
        item,
    ]);
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn data_directory_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = preprocessed(dir.path());
    let model = dir.path().join("offset.bin");
    let out = Command::new(env!("CARGO_BIN_EXE_transrev"))
        .args(["train-baseline", "--model", "offset", "--out", s(&model)])
        .env("TRANSREV_DATA", &data)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ok(&["evaluate", "--model", s(&model), "--data", s(&data)]).starts_with("mse="));
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = preprocessed(dir.path());
    let run = |name: &str| {
        let model = dir.path().join(format!("{name}.bin"));
        let metrics = dir.path().join(format!("{name}.tsv"));
        ok(&[
            "train",
            "--data",
            s(&data),
            "--k",
            "4",
            "--epochs",
            "30",
            "--seed",
            "9",
            "--out",
            s(&model),
            "--metrics",
            s(&metrics),
        ]);
        (fs::read(model).unwrap(), fs::read(metrics).unwrap())
    };
    assert_eq!(run("a"), run("b"));

    let again = dir.path().join("data2");
    ok(&[
        "preprocess",
        "--input",
        FIXTURE,
        "--format",
        "amazon",
        "--out",
        s(&again),
        "--seed",
        "1",
    ]);
    for f in [
        "vocab.tsv",
        "train.tsv",
        "validation.tsv",
        "test.tsv",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(data.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap()
        );
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = preprocessed(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[hyperparameters]\nk = 3\nmax_epochs = 10\nvalidate_every = 5\n",
    )
    .unwrap();
    let model = dir.path().join("m.bin");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--epochs",
        "20",
        "--out",
        s(&model),
    ]);
    let metrics = fs::read_to_string(dir.path().join("m.bin.metrics.tsv")).unwrap();
    let epochs: Vec<&str> = metrics
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(epochs, ["5", "10", "15", "20"]);
    // k = 3 from the file: 3 embedding columns per exported word
    let words = dir.path().join("w.tsv");
    ok(&[
        "export-words",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&words),
    ]);
    let first = fs::read_to_string(words).unwrap();
    assert_eq!(first.lines().next().unwrap().split('\t').count(), 5);

    fs::write(&cfg, "[hyperparameters]\nepochs = 10\n").unwrap();
    let out = transrev(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&model),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grid_writes_a_row_per_cell_and_the_best_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = preprocessed(dir.path());
    let cfg = dir.path().join("grid.toml");
    fs::write(
        &cfg,
        "[hyperparameters]\nk = 4\nmax_epochs = 10\n[grid]\nlearning_rates = [0.001, 0.005]\nmus = [1e-4]\nlambdas = [0.25, 0.5, 1.0]\n",
    )
    .unwrap();
    let runs = dir.path().join("runs");
    let printed = ok(&[
        "grid",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&runs),
        "--threads",
        "2",
    ]);
    assert!(printed.starts_with("best "));
    let table = fs::read_to_string(runs.join("results.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 6);
    assert!(runs.join("best.bin").exists());
    assert!(ok(&[
        "evaluate",
        "--model",
        s(&runs.join("best.bin")),
        "--data",
        s(&data)
    ])
    .starts_with("mse="));

    let svd_runs = dir.path().join("svd");
    ok(&[
        "grid",
        "--model",
        "svd",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&svd_runs),
    ]);
    let table = fs::read_to_string(svd_runs.join("results.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2);
}

#[test]
fn model_from_another_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = preprocessed(dir.path());
    let other = dir.path().join("other");
    ok(&[
        "preprocess",
        "--input",
        FIXTURE,
        "--format",
        "amazon",
        "--out",
        s(&other),
        "--seed",
        "1",
        "--min-df",
        "0.2",
    ]);
    let model = dir.path().join("m.bin");
    ok(&[
        "train",
        "--data",
        s(&other),
        "--k",
        "2",
        "--epochs",
        "10",
        "--out",
        s(&model),
    ]);
    let out = transrev(&["evaluate", "--model", s(&model), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different vocabulary"));
}

#[test]
fn synth_output_round_trips_through_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let words = dir.path().join("w.tsv");
    ok(&[
        "synth",
        "--out",
        s(&corpus),
        "--words-out",
        s(&words),
        "--users",
        "30",
        "--items",
        "10",
        "--reviews-per-user",
        "4",
        "--noise",
        "0.2",
        "--seed",
        "4",
    ]);
    assert_eq!(fs::read_to_string(&corpus).unwrap().lines().count(), 120);
    let tags = fs::read_to_string(words).unwrap();
    assert_eq!(
        tags.lines().filter(|l| l.ends_with("\tpositive")).count(),
        10
    );
    let printed = ok(&[
        "preprocess",
        "--input",
        s(&corpus),
        "--format",
        "amazon",
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert!(printed.starts_with("train=96 "));
}
