mod common;

use std::fs;

use spanforge::albert_retro::{FFN2_BIAS, FFN2_WEIGHT};
use spanforge::config::RunConfig;
use spanforge::pipeline::{
    ablate_reinit, evaluate, load_run, parse_document, predict, restrict_document, train, training_items, TrainItem,
};
use spanforge::tensor::{save_checkpoint, Precision};
use spanforge::{Architecture, Error};

fn toy_config(arch: &str, epochs: usize, out: &std::path::Path) -> RunConfig {
    let mut cfg = common::mini(arch);
    cfg.train.epochs = epochs;
    cfg.data_train = Some(common::data_path("toy_train.json"));
    cfg.data_dev = Some(common::data_path("toy_train.json"));
    cfg.out = Some(out.to_path_buf());
    cfg
}

#[test]
fn train_then_evaluate_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let report = train(&toy_config("bidaf", 8, dir.path())).unwrap();
    assert_eq!(report.log.len(), 8);
    for f in ["config.json", "vocab.txt", "chars.txt", "ema.bin", "train_log.csv", "checkpoint-epoch8.bin"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,dev_em,dev_f1"));
    assert_eq!(log.lines().count(), 9);

    let eval_dir = dir.path().join("eval");
    let r = evaluate(
        &dir.path().join("checkpoint-epoch8.bin"),
        &common::data_path("toy_train.json"),
        Some(Architecture::Bidaf),
        &eval_dir,
    )
    .unwrap();
    assert_eq!(r.exact, 1.0);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(eval_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["exact"], 1.0);
    let preds: serde_json::Value = serde_json::from_slice(&fs::read(eval_dir.join("predictions.json")).unwrap()).unwrap();
    assert_eq!(preds.as_object().unwrap().len(), 20);

    let wrong = evaluate(
        &dir.path().join("checkpoint-epoch8.bin"),
        &common::data_path("toy_train.json"),
        Some(Architecture::Albert),
        &eval_dir,
    );
    assert!(matches!(wrong, Err(Error::Config(_))));

    // answer a question written against an unseen document layout
    let run = load_run(&dir.path().join("checkpoint-epoch8.bin")).unwrap();
    let data = common::load("toy_train.json");
    let doc = &data.documents[3];
    let q = &doc.paragraphs[0].questions[0];
    let single = parse_document(
        serde_json::json!({ "paragraphs": [doc.paragraphs[0].context] }).to_string().as_bytes(),
    )
    .unwrap();
    let a = predict(&run, &single, &q.text).unwrap();
    assert_eq!(a.text, q.answers[0].text);
}

#[test]
fn training_is_bitwise_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        train(&toy_config("docqa", 2, d.path())).unwrap();
    }
    for f in ["checkpoint-epoch1.bin", "checkpoint-epoch2.bin", "ema.bin", "train_log.csv", "vocab.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn checkpoint_must_match_configuration() {
    let dir = tempfile::tempdir().unwrap();
    train(&toy_config("bidaf", 1, dir.path())).unwrap();
    let mut other = common::mini("bidaf");
    other.model.hidden = 6;
    let data = common::load("toy_train.json");
    let vocabs = spanforge::pipeline::build_vocabularies(&other, &data);
    let store = spanforge::pipeline::Model::new(other, vocabs).unwrap().init_store().unwrap();
    let bad = dir.path().join("resized.bin");
    save_checkpoint(&store, Precision::F32, &bad).unwrap();
    assert!(load_run(&bad).is_err());
}

#[test]
fn training_reports_bad_input_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = toy_config("bidaf", 1, &out);
    cfg.data_train = Some(dir.path().join("missing.json"));
    assert!(train(&cfg).is_err());
    assert!(!out.exists());

    let mut cfg = toy_config("bidaf", 1, &out);
    cfg.data_train = Some(common::data_path("unanswerable.json"));
    assert!(matches!(train(&cfg), Err(Error::Empty(_))));
}

#[test]
fn reinit_ablation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let report = ablate_reinit(&toy_config("albert", 2, dir.path())).unwrap();
    let names: Vec<&str> = report.reinit_diff.iter().map(|d| d.name.as_str()).collect();
    assert_eq!(names, [FFN2_BIAS, FFN2_WEIGHT]);
    assert!(report.control_diff.is_empty());
    assert_eq!(report.rows.len(), 4);
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert!(csv.starts_with("epoch,variant,dev_em,dev_f1"));
    assert_eq!(fs::read_to_string(dir.path().join("reinit_diff.txt")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_to_string(dir.path().join("control_diff.txt")).unwrap(), "");

    assert!(matches!(ablate_reinit(&toy_config("bidaf", 1, dir.path())), Err(Error::Config(_))));
}

#[test]
fn shared_norm_groups_hold_the_answer_paragraph() {
    let data = common::load("scaling.json");
    let mut cfg = common::mini("docqa");
    cfg.train.confidence_mode = spanforge::ConfidenceMode::SharedNorm;
    let model = spanforge::pipeline::Model::new(cfg.clone(), spanforge::pipeline::build_vocabularies(&cfg, &data)).unwrap();
    let (items, dropped) = training_items(&model, &data);
    assert_eq!((items.len(), dropped), (50, 0));
    for item in items {
        let TrainItem::Paragraphs { features, gold_index, gold } = item else { panic!() };
        assert_eq!(features.len(), 1 + cfg.train.negatives);
        assert_eq!(features[gold_index].gold, Some(gold));
        assert!(features.iter().enumerate().all(|(i, f)| (i == gold_index) == f.gold.is_some()));
    }
}

#[test]
fn restricted_documents_keep_the_gold_paragraph() {
    let data = common::load("scaling.json");
    for doc in &data.documents {
        let (p, q) = doc.questions().next().unwrap();
        for n in 1..=5 {
            let r = restrict_document(doc, p, n);
            assert_eq!(r.paragraphs.len(), n.min(doc.paragraphs.len()));
            assert!(r.paragraphs.iter().any(|para| para.questions.iter().any(|x| x.id == q.id)));
        }
    }
}

#[test]
fn document_schema_errors_carry_a_path() {
    assert!(parse_document(br#"{"paragraphs": ["a", {"context": "b"}]}"#).is_ok());
    match parse_document(br#"{"paragraphs": ["a", {"text": 3}]}"#) {
        Err(Error::Schema { .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_document(br#"{"paragraphs": []}"#), Err(Error::Empty(_))));
}
