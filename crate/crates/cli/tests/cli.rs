use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
nil_holdout_fraction = 0.2
render_style = "medmentions"
ks = [1, 8]
rank_depth = 16

[synth]
n_entities = 60
n_train_mentions = 160
n_validation_mentions = 60
n_test_mentions = 60
n_types = 10
zero_shot_fraction = 0.5
seed = 3

[train]
epochs = 2
learning_rate = 0.01
batch_size = 16
fgsm_enabled = true

[train.model]
hidden_dim = 8
output_dim = 8
max_seq_len = 48

[train.sampling]
kind = "mixed"
n_negatives = 8
"#;

fn proxlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxlink")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = proxlink(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit status and the single stderr line of a failing invocation.
fn fails(args: &[&str]) -> (i32, String) {
    let out = proxlink(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "stderr not one line: {stderr:?}");
    (out.status.code().unwrap(), stderr.trim_end().to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("config.toml");
    fs::write(&config, CONFIG).unwrap();
    let data = root.join("data");
    ok(&["gen-synth", "--config", s(&config), "--out", s(&data)]);
    Workspace { _dir: dir, root, config, data }
}

fn metric(tsv: &str, name: &str) -> f64 {
    tsv.lines()
        .find_map(|l| l.strip_prefix(&format!("{name}\t")))
        .unwrap_or_else(|| panic!("no `{name}` in {tsv}"))
        .parse()
        .unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let w = workspace();
    let (cfg, data, run) = (s(&w.config), s(&w.data), w.root.join("run"));
    ok(&["train", "--config", cfg, "--data", data, "--out", s(&run)]);
    for f in ["checkpoint-epoch-0.bin", "checkpoint-epoch-1.bin", "model.bin", "vocab.txt", "trace.tsv", "train_config.toml"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read(run.join("checkpoint-epoch-1.bin")).unwrap(), fs::read(run.join("model.bin")).unwrap());

    let (model, vocab) = (run.join("model.bin"), run.join("vocab.txt"));
    let (val, test) = (w.root.join("val.jsonl"), w.root.join("test.jsonl"));
    ok(&["rank", "--config", cfg, "--data", data, "--split", "validation", "--checkpoint", s(&model), "--vocab", s(&vocab), "--out", s(&val)]);
    ok(&["rank", "--config", cfg, "--data", data, "--checkpoint", s(&model), "--vocab", s(&vocab), "--out", s(&test)]);
    assert_eq!(fs::read_to_string(&test).unwrap().lines().count(), 60);

    let eval_dir = w.root.join("eval");
    let printed = ok(&["eval", "--config", cfg, "--data", data, "--predictions", s(&test), "--out", s(&eval_dir)]);
    let metrics = fs::read_to_string(eval_dir.join("metrics.tsv")).unwrap();
    assert_eq!(printed, metrics);
    assert!(metric(&metrics, "recall@1") <= metric(&metrics, "recall@8"));

    let tau = w.root.join("tau.tsv");
    ok(&["nil-tune", "--config", cfg, "--data", data, "--predictions", s(&val), "--out", s(&tau)]);
    assert!(fs::read_to_string(&tau).unwrap().contains("selected_on\tvalidation"));

    let nil_dir = w.root.join("nil");
    ok(&["nil-eval", "--config", cfg, "--data", data, "--predictions", s(&test), "--threshold", s(&tau), "--out", s(&nil_dir)]);
    let nil = fs::read_to_string(nil_dir.join("metrics.tsv")).unwrap();
    let au_pr = metric(&nil, "nil_au_pr");
    assert!((0.0..=1.0).contains(&au_pr));
    assert!(metric(&nil, "n_nil") > 0.0);
    let curve = fs::read_to_string(nil_dir.join("pr_curve.tsv")).unwrap();
    assert_eq!(curve.lines().next(), Some("threshold\tprecision\trecall"));

    let exported = w.root.join("trace.tsv");
    let summary = ok(&["trace-export", "--config", cfg, "--trace", s(&run.join("trace.tsv")), "--out", s(&exported)]);
    // Same smoothing factor, so re-smoothing reproduces the trace byte for byte.
    assert_eq!(fs::read(&exported).unwrap(), fs::read(run.join("trace.tsv")).unwrap());
    assert!(metric(&summary, "smoothed_variance") >= 0.0);
}

#[test]
fn training_twice_gives_identical_bytes() {
    let w = workspace();
    let (a, b) = (w.root.join("a"), w.root.join("b"));
    for out in [&a, &b] {
        ok(&["train", "--config", s(&w.config), "--data", s(&w.data), "--out", s(out)]);
    }
    for f in ["model.bin", "trace.tsv", "vocab.txt", "checkpoint-epoch-0.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn errors_are_single_categorised_lines() {
    let w = workspace();
    let (cfg, data) = (s(&w.config), s(&w.data));

    let (code, line) = fails(&["gen-synth", "--config", s(&w.root.join("nope.toml")), "--out", "x"]);
    assert_eq!(code, 1);
    assert!(line.starts_with("error: io: "), "{line}");

    let bad = w.root.join("bad.toml");
    fs::write(&bad, "bogus = 1\n").unwrap();
    let (code, line) = fails(&["gen-synth", "--config", s(&bad), "--out", "x"]);
    assert_eq!(code, 1);
    assert!(line.starts_with("error: config: "), "{line}");

    fs::write(&bad, "[train]\nlearning_rate = -1.0\n").unwrap();
    assert!(fails(&["gen-synth", "--config", s(&bad), "--out", "x"]).1.starts_with("error: config: "));

    let junk = w.root.join("junk.bin");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let vocab = w.root.join("vocab.txt");
    fs::write(&vocab, "[PAD]\n").unwrap();
    let (_, line) = fails(&[
        "rank", "--config", cfg, "--data", data, "--checkpoint", s(&junk), "--vocab", s(&vocab), "--out", s(&w.root.join("p.jsonl")),
    ]);
    assert!(line.starts_with("error: checkpoint: "), "{line}");

    let (code, line) = fails(&["rank", "--config", cfg]);
    assert_eq!(code, 2);
    assert!(line.starts_with("error: usage: ") && line.contains("--checkpoint"), "{line}");
    assert_eq!(fails(&["frobnicate"]).0, 2);
}

#[test]
fn predictions_must_cover_the_split() {
    let w = workspace();
    let preds = w.root.join("empty.jsonl");
    fs::write(&preds, "").unwrap();
    let (_, line) = fails(&[
        "nil-tune", "--config", s(&w.config), "--data", s(&w.data), "--predictions", s(&preds), "--out", s(&w.root.join("t.tsv")),
    ]);
    assert!(line.starts_with("error: argument: "), "{line}");
}
