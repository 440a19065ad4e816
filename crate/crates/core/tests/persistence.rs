use std::fs;

use proxlink::checkpoint;
use proxlink::datakit::{build_vocabulary, generate_synthetic, load_dataset, make_nil_split, pick_holdout_types, write_dataset};
use proxlink::evalkit::{read_predictions, write_predictions, RankedPrediction};
use proxlink::trainer::{train, ModelConfig};
use proxlink::*;

fn dataset() -> DatasetSplit {
    let d = generate_synthetic(&SynthConfig {
        n_entities: 50,
        n_train_mentions: 80,
        n_validation_mentions: 30,
        n_test_mentions: 30,
        n_types: 5,
        zero_shot_fraction: 0.5,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let held = pick_holdout_types(&d.kb, 0.2, 1).unwrap();
    make_nil_split(&d, &held).unwrap()
}

#[test]
fn dataset_round_trips_byte_for_byte() {
    let d = dataset();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_dataset(&a, &d).unwrap();
    let loaded = load_dataset(&a).unwrap();
    assert_eq!(loaded, d);
    write_dataset(&b, &loaded).unwrap();
    for f in ["entities.jsonl", "train.jsonl", "validation.jsonl", "test.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn dangling_labels_are_rejected_on_load() {
    let d = dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &d).unwrap();
    let path = dir.path().join("train.jsonl");
    let gold = d.train[0].label.entity().unwrap().to_string();
    let text = fs::read_to_string(&path).unwrap().replacen(&format!("\"{gold}\""), "\"no-such-entity\"", 1);
    fs::write(&path, text).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap_err().category(), "data");

    fs::write(&path, "{not json}\n").unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap_err().category(), "schema");
}

#[test]
fn vocabulary_round_trips() {
    let vocab = build_vocabulary(&dataset());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    vocab.write(&path).unwrap();
    assert_eq!(Vocabulary::read(&path).unwrap(), vocab);
}

#[test]
fn trained_checkpoint_round_trips() {
    let d = dataset();
    let vocab = build_vocabulary(&d);
    let data = TrainingSet::from_records(&d.train, &d.kb, &vocab, 40, RenderStyle::Medmentions).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 1,
        sampling: SamplingPolicy { n_negatives: 4, ..Default::default() },
        model: ModelConfig { hidden_dim: 5, output_dim: 4, max_seq_len: 40, ..Default::default() },
        ..Default::default()
    };
    let model = train(&data, &cfg, |_, _| Ok(())).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    checkpoint::save(&model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(checkpoint::to_bytes(&back), fs::read(&path).unwrap());

    let bytes = fs::read(&path).unwrap();
    for cut in [0, 7, 13, bytes.len() - 1] {
        assert_eq!(checkpoint::from_bytes(&bytes[..cut]).unwrap_err().category(), "checkpoint");
    }
}

#[test]
fn train_config_toml_round_trips() {
    let cfg = TrainConfig {
        loss_kind: LossKind::CrossEntropy,
        fgsm_enabled: true,
        sampling: SamplingPolicy { kind: SamplingKind::Mixed, ..Default::default() },
        ..Default::default()
    };
    assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    assert_eq!(TrainConfig::from_toml_str("epochs = 2\n").unwrap().epochs, 2);
    assert_eq!(TrainConfig::from_toml_str("epoch = 2\n").unwrap_err().category(), "config");
}

#[test]
fn predictions_and_thresholds_round_trip() {
    let preds = vec![
        RankedPrediction {
            mention_id: "m1".into(),
            ranked: vec!["e2".into(), "e1".into()],
            scores: vec![0.5, -0.25],
            top1_score: 0.5,
        },
        RankedPrediction { mention_id: "m2".into(), ranked: vec!["e1".into()], scores: vec![0.1], top1_score: 0.1 },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    write_predictions(&path, &preds).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), preds);

    for tau in [0.125, f64::INFINITY, -3.0e-7] {
        let t = NilThreshold { tau, selected_on: "validation".into(), f1_at_tau: 0.75 };
        let path = dir.path().join("tau.tsv");
        t.write(&path).unwrap();
        assert_eq!(NilThreshold::read(&path).unwrap(), t);
    }
}

#[test]
fn trace_round_trips() {
    let mut trace = GradNormTrace::new(0.98).unwrap();
    for (i, g) in [3.0, 1.5, 0.1, 2.25].into_iter().enumerate() {
        trace.record(1e-3 * i as f64, g, 1.0 / (i + 1) as f64);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.tsv");
    trace.write_tsv(&path).unwrap();
    assert_eq!(GradNormTrace::read_tsv(&path, 0.98).unwrap(), trace);
}
