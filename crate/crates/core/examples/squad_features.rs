//! Loads SQuAD-format files, prints corpus statistics and shows the
//! question/context pair used by the recurrent readers next to the packed
//! sequence used by ALBERT.

use std::path::Path;

use spanforge::encoders::Vocabulary;
use spanforge::squad::{corpus_stats, featurize, load_squad, Feature, Vocabularies};
use spanforge::Architecture;

fn main() -> spanforge::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let mut names: Vec<String> = std::env::args().skip(1).collect();
    if names.is_empty() {
        names = vec!["toy_train.json".into(), "unanswerable.json".into()];
    }
    for name in &names {
        let data = load_squad(&dir.join(name))?;
        println!("{name} (v2: {}): {:?}", data.is_v2(), corpus_stats(&data));
    }

    let data = load_squad(&dir.join(&names[0]))?;
    let vocabs = Vocabularies::build(&data, 1, None);
    let words = |ids: &[usize], v: &Vocabulary| {
        ids.iter().map(|&i| v.token(i).unwrap_or("?").to_string()).collect::<Vec<_>>().join(" ")
    };

    let pairs = featurize(&data, &vocabs, 64, Architecture::Bidaf);
    if let Some(Feature::Pair(f)) = pairs.features.first() {
        println!("pair {}: question [{}]", f.qid, words(&f.question, &vocabs.words));
        println!("  context [{}] gold {:?}", words(&f.context, &vocabs.words), f.gold);
    }
    let packed = featurize(&data, &vocabs, 32, Architecture::Albert);
    if let Some(Feature::Packed(f)) = packed.features.first() {
        println!("packed {} ({} of {} positions used):", f.qid, f.len, f.ids.len());
        println!("  [{}] gold {:?}", words(&f.ids[..f.len], &vocabs.words), f.gold);
    }
    println!("dropped at length 32: {}", packed.dropped);
    Ok(())
}
