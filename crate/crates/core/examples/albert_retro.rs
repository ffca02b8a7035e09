//! Factorized embeddings, cross-layer sharing, selective re-initialization
//! and the two-signal abstention decision of the ALBERT reader.

use spanforge::albert_retro::{
    factorized_param_count, init_albert, reinit_last_linear, retro_decode, retro_margin, AlbertConfig, RetroLogits,
};
use spanforge::tensor::{ParameterStore, ReinitMode};

fn main() -> spanforge::Result<()> {
    let cfg = AlbertConfig::default();
    let mut store = ParameterStore::new();
    init_albert(&mut store, &cfg, 11)?;
    println!(
        "embedding: {} factorized vs {} for a V x H table",
        factorized_param_count(&store)?,
        cfg.vocab * cfg.hidden
    );
    let shared = store.param_count_with_prefix("albert.shared.");
    println!(
        "{} layers read {shared} shared block parameters; {} stored in total",
        cfg.layers,
        store.param_count()
    );

    let before = store.clone();
    reinit_last_linear(&mut store, ReinitMode::Initializer, 12)?;
    for d in store.diff(&before)? {
        println!("re-initialized {} (l2 change {:.3})", d.name, d.l2_delta);
    }

    // Seven positions: [CLS], two question tokens, [SEP], three context tokens.
    let logits = RetroLogits {
        answerable: 0.4,
        unanswerable: 0.1,
        start: vec![1.0, 0.0, 0.0, 0.0, 2.5, 0.2, 0.1],
        end: vec![1.0, 0.0, 0.0, 0.0, 0.3, 2.2, 0.1],
    };
    let legal = [false, false, false, false, true, true, true];
    if let Some((s, e, m)) = retro_margin(&logits, &legal, 4)? {
        println!("best span ({s}, {e}), margin {m:.2}");
    }
    for delta in [f64::NEG_INFINITY, 0.0, 3.0, f64::INFINITY] {
        let out = retro_decode(&logits, &legal, 4, delta)?;
        println!("threshold {delta:>5}: {out:?}");
    }
    Ok(())
}
