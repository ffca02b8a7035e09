//! Overfits each mini preset on the bundled 20-question toy set and
//! reports the step at which train EM first reaches 100%.
//!
//! cargo run --release --example overfit -- [bidaf|docqa|albert]

use std::path::Path;
use std::time::Instant;

use spanforge::config::RunConfig;
use spanforge::pipeline::{build_vocabularies, training_items, Model, Trainer};
use spanforge::squad::load_squad;

fn main() -> spanforge::Result<()> {
    let data = load_squad(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy_train.json"))?;
    let mut archs: Vec<String> = std::env::args().skip(1).collect();
    if archs.is_empty() {
        archs = vec!["bidaf".into(), "docqa".into(), "albert".into()];
    }
    for arch in archs {
        let cfg = RunConfig::preset(&format!("{arch}-mini"))?;
        let vocabs = build_vocabularies(&cfg, &data);
        let model = Model::new(cfg, vocabs)?;
        let (items, _) = training_items(&model, &data);
        let mut trainer = Trainer::new(model, items)?;
        let start = Instant::now();
        let mut epoch = 0;
        while trainer.steps < 500 {
            epoch += 1;
            let loss = trainer.run_epoch(epoch)?;
            let (_, live) = trainer.model.evaluate(&trainer.store, &data)?;
            println!(
                "{arch} step {:4} loss {loss:.4} train em {:.3} ({:.1}s)",
                trainer.steps,
                live.exact,
                start.elapsed().as_secs_f64()
            );
            if live.exact >= 1.0 {
                break;
            }
        }
    }
    Ok(())
}
