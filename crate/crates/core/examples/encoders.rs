//! Word and character embeddings feeding the bidirectional LSTM and GRU
//! encoders, with the output shapes each produces.

use std::path::Path;

use spanforge::encoders::{
    bigru_encode, bilstm_encode, embed_word_char, init_bigru, init_bilstm, init_word_char, EncoderConfig,
};
use spanforge::squad::{load_squad, tokenize, Vocabularies};
use spanforge::tensor::{Graph, ParameterStore};

fn main() -> spanforge::Result<()> {
    let data = load_squad(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy_train.json"))?;
    let vocabs = Vocabularies::build(&data, 1, None);
    println!("{} words, {} characters", vocabs.words.len(), vocabs.chars.len());

    let cfg = EncoderConfig { word_dim: 6, char_dim: 4, cnn_width: 3, hidden: 5, dropout_keep: 1.0 };
    let mut store = ParameterStore::new();
    init_word_char(&mut store, "embed", &cfg, vocabs.words.len(), Some(vocabs.chars.len()), 1)?;
    let d_in = cfg.word_dim + cfg.char_dim;
    init_bilstm(&mut store, "lstm", d_in, cfg.hidden, 1)?;
    init_bigru(&mut store, "gru", d_in, cfg.hidden, 1)?;

    let tokens = tokenize("Arlen was born in Ostrava.");
    let ids: Vec<usize> = tokens.iter().map(|t| vocabs.words.id(&t.text)).collect();
    let chars: Vec<Vec<usize>> = tokens.iter().map(|t| vocabs.char_ids(&t.text)).collect();
    let mut g = Graph::new();
    let x = embed_word_char(&mut g, &store, "embed", &ids, &chars, cfg.cnn_width)?;
    let h_lstm = bilstm_encode(&mut g, &store, "lstm", x)?;
    let h_gru = bigru_encode(&mut g, &store, "gru", x)?;
    println!("tokens {:?}", tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>());
    println!("embedding {:?}, bi-LSTM {:?}, bi-GRU {:?}", g.shape(x), g.shape(h_lstm), g.shape(h_gru));
    Ok(())
}
