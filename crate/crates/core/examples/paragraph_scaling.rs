//! Trains DocumentQA with per-paragraph and shared normalization on the
//! bundled distractor set, then scores both with 1 and 4 paragraphs per
//! question.
//!
//! cargo run --release --example paragraph_scaling -- [steps]

use std::path::Path;

use spanforge::config::RunConfig;
use spanforge::pipeline::{build_vocabularies, paragraph_scaling, training_items, Model, Trainer};
use spanforge::squad::load_squad;
use spanforge::ConfidenceMode;

fn main() -> spanforge::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let data = load_squad(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scaling.json"))?;
    for mode in [ConfidenceMode::None, ConfidenceMode::SharedNorm] {
        let mut cfg = RunConfig::preset("docqa-mini")?;
        cfg.train.confidence_mode = mode;
        cfg.train.max_steps = Some(steps);
        let model = Model::new(cfg.clone(), build_vocabularies(&cfg, &data))?;
        let (items, _) = training_items(&model, &data);
        let mut trainer = Trainer::new(model, items)?;
        let mut epoch = 0;
        while trainer.steps < steps {
            epoch += 1;
            trainer.run_epoch(epoch)?;
        }
        for row in paragraph_scaling(&trainer.model, &trainer.shadow, &data, &[1, 4], mode)? {
            println!("{}\t{}\t{:.3}", row.mode, row.n_paragraphs, row.f1);
        }
    }
    Ok(())
}
