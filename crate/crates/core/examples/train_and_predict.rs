//! Trains a small reader on the toy set, reloads it from its run directory
//! and answers questions against a free-standing document.
//!
//! The recurrent readers normalize each paragraph on its own, so a
//! one-word paragraph gets a confident answer; ALBERT's abstention margin
//! does not have that weakness.
//!
//! cargo run --release --example train_and_predict -- [albert|bidaf|docqa]

use std::path::Path;

use spanforge::config::RunConfig;
use spanforge::pipeline::{load_document, load_run, predict, train};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arch = std::env::args().nth(1).unwrap_or_else(|| "albert".into());
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let out = std::env::temp_dir().join(format!("spanforge-{arch}-{}", std::process::id()));

    let mut cfg = RunConfig::preset(&format!("{arch}-mini"))?;
    cfg.train.epochs = 12;
    cfg.data_train = Some(data.join("toy_train.json"));
    cfg.data_dev = Some(data.join("toy_train.json"));
    cfg.out = Some(out.clone());
    let report = train(&cfg)?;
    for e in &report.log {
        println!("epoch {:2} loss {:.4} dev em {:?}", e.epoch, e.train_loss, e.dev_em);
    }

    let run = load_run(&out.join(format!("checkpoint-epoch{}.bin", cfg.train.epochs)))?;
    let doc = load_document(&data.join("document.json"))?;
    for q in ["Where was Arlen born?", "Where does Corin work?"] {
        let a = predict(&run, &doc, q)?;
        println!("{q} -> {:?} (paragraph {:?}, score {:.3})", a.text, a.paragraph, a.score);
    }
    std::fs::remove_dir_all(&out)?;
    Ok(())
}
