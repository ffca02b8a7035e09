//! Reverse-mode gradients against central differences, first for a small
//! composite of primitives and then for a whole BiDAF loss.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanforge::bidaf::{self, BidafConfig};
use spanforge::encoders::EncoderConfig;
use spanforge::squad::{build_pair, load_squad, Vocabularies};
use spanforge::tensor::{gradient_check, gradient_check_store, ParameterStore, Tensor};

fn main() -> spanforge::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let err = gradient_check(
        |g, v| {
            let w = g.constant(w.clone());
            let h = g.matmul(w, v)?;
            let h = g.tanh(h)?;
            let p = g.softmax(h, 1)?;
            let row = g.slice_rows(p, 0, 1)?;
            g.cross_entropy(row, 2)
        },
        &x,
    )?;
    println!("tanh/softmax/cross-entropy composite: max rel err {err:.2e}");

    let data = load_squad(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy_train.json"))?;
    let vocabs = Vocabularies::build(&data, 1, None);
    let q = data.questions().next().expect("toy set has questions");
    let context = &data.documents[0].paragraphs[0].context;
    let f = build_pair(q, context, &vocabs, 64).expect("gold span fits");
    let gold = f.gold.expect("answerable");
    let cfg = BidafConfig {
        encoder: EncoderConfig { word_dim: 4, char_dim: 3, cnn_width: 2, hidden: 2, dropout_keep: 1.0 },
        vocab: vocabs.words.len(),
        chars: Some(vocabs.chars.len()),
    };
    let mut store = ParameterStore::new();
    bidaf::init_bidaf(&mut store, &cfg, 7)?;
    let report = gradient_check_store(
        &store,
        |g, s| {
            let st = bidaf::forward(g, s, &cfg, &f, None)?;
            bidaf::bidaf_loss(g, &[(st.start_logits, st.end_logits)], &[gold])
        },
        8,
        1,
    )?;
    println!(
        "BiDAF d=2: {} coordinates, max rel err {:.2e} at {:?}",
        report.coordinates, report.max_rel_error, report.worst
    );
    Ok(())
}
