mod common;

use std::fs;
use std::process::{Command, Output};

fn spanforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanforge")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn train_evaluate_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let toy = common::data_path("toy_train.json");
    let before = fs::read(&toy).unwrap();
    ok(&spanforge(&[
        "train", "--arch", "albert", "--preset", "albert-mini", "--data-train", toy.to_str().unwrap(),
        "--epochs", "12", "--seed", "5", "--out", run.to_str().unwrap(),
    ]));
    assert_eq!(fs::read(&toy).unwrap(), before);
    let config: serde_json::Value = serde_json::from_slice(&fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["train"]["seed"], 5);

    let ckpt = run.join("checkpoint-epoch12.bin");
    let mut metrics = Vec::new();
    for threads in ["1", "3"] {
        let eval = dir.path().join(format!("eval{threads}"));
        let out = Command::new(env!("CARGO_BIN_EXE_spanforge"))
            .args(["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data-dev", toy.to_str().unwrap()])
            .args(["--out", eval.to_str().unwrap()])
            .env("SPANFORGE_THREADS", threads)
            .output()
            .unwrap();
        ok(&out);
        metrics.push((fs::read(eval.join("metrics.json")).unwrap(), fs::read(eval.join("predictions.json")).unwrap()));
    }
    assert_eq!(metrics[0], metrics[1]);
    let m: serde_json::Value = serde_json::from_slice(&metrics[0].0).unwrap();
    assert_eq!(m["exact"], 1.0);
    assert_eq!(m["exact_pct"], 100.0);

    let doc = common::data_path("document.json");
    let answer = |extra: &[&str]| -> serde_json::Value {
        let mut args = vec!["predict", "--checkpoint", ckpt.to_str().unwrap(), "--document", doc.to_str().unwrap()];
        args.extend(["--question", "Where was Arlen born?"]);
        args.extend(extra);
        serde_json::from_str(&ok(&spanforge(&args))).unwrap()
    };
    assert_eq!(answer(&[])["answer"], "Ostrava");
    let never = answer(&["--na-threshold", "inf"]);
    assert_eq!(never["answer"], "");
    assert!(never["paragraph"].is_null());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = spanforge(&["train", "--preset", "no-such-preset", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = spanforge(&["train", "--arch", "bidaf", "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!out.status.success());

    let out = spanforge(&["ablate-reinit", "--arch", "docqa", "--data-train", common::data_path("toy_train.json").to_str().unwrap()]);
    assert!(!out.status.success());

    let out = spanforge(&["train", "--arch", "bidaf", "--lr", "-1", "--data-train", "x.json"]);
    assert!(!out.status.success());
}
