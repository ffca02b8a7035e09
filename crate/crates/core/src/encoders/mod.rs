//! Sequence encoders shared by the BiDAF and DocumentQA readers.
//!
//! Every encoder reads its weights from a [`ParameterStore`] under a name
//! prefix and writes nothing back; the matching `init_*` function creates
//! those entries.

mod recurrent;
mod vocab;

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use recurrent::{bigru_encode, bilstm_encode, init_bigru, init_bilstm, RecurrentCell};
pub use vocab::{Vocabulary, CLS, PAD, PARSEP, SEP, UNK};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub cnn_width: usize,
    pub hidden: usize,
    pub dropout_keep: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 100,
            char_dim: 100,
            cnn_width: 5,
            hidden: 100,
            dropout_keep: 0.8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.char_dim == 0 || self.cnn_width == 0 || self.hidden == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Config(format!(
                "dropout keep probability {} outside (0, 1]",
                self.dropout_keep
            )));
        }
        Ok(())
    }
}

/// Creates a `vocab × dim` embedding table.
pub fn init_embedding(store: &mut ParameterStore, name: &str, vocab: usize, dim: usize, seed: u64) -> Result<()> {
    store.insert_uniform(name, vec![vocab, dim], dim, seed)
}

/// Looks up `tokens` in the table `name`; column `t` is the row of token `t`.
pub fn embed_words(g: &mut Graph, store: &ParameterStore, name: &str, tokens: &[usize]) -> Result<Var> {
    let table = g.param(store, name)?;
    g.lookup(table, tokens)
}

/// Overwrites rows of the embedding table `name` from a text vector file
/// (`token v1 … vn` per line). Tokens missing from `vocab` are skipped.
/// Returns the number of rows written.
pub fn load_word_vectors(store: &mut ParameterStore, name: &str, vocab: &Vocabulary, text: &str) -> Result<usize> {
    let table = store.get_mut(name)?;
    let dim = table.cols();
    let mut written = 0;
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("word vectors line {}: {e}", lineno + 1)))?;
        if values.len() != dim {
            return Err(Error::Config(format!(
                "word vectors line {}: {} values, table has {dim} columns",
                lineno + 1,
                values.len()
            )));
        }
        let id = vocab.id(token);
        if id == UNK && token != "[UNK]" {
            continue;
        }
        if id >= table.rows() {
            return Err(Error::IndexOutOfRange {
                what: "word vector row",
                index: id,
                bound: table.rows(),
            });
        }
        for (k, v) in values.into_iter().enumerate() {
            table.set(id, k, v);
        }
        written += 1;
    }
    Ok(written)
}

pub fn load_word_vectors_file(
    store: &mut ParameterStore,
    name: &str,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_word_vectors(store, name, vocab, &text)
}

/// Character table `{prefix}.chars`, filters `{prefix}.conv.weight`
/// (`char_dim × width·char_dim`) and `{prefix}.conv.bias`.
pub fn init_char_cnn(
    store: &mut ParameterStore,
    prefix: &str,
    n_chars: usize,
    char_dim: usize,
    width: usize,
    seed: u64,
) -> Result<()> {
    init_embedding(store, &format!("{prefix}.chars"), n_chars, char_dim, seed)?;
    let fan_in = width * char_dim;
    store.insert_uniform(&format!("{prefix}.conv.weight"), vec![char_dim, fan_in], fan_in, seed)?;
    store.insert_uniform(&format!("{prefix}.conv.bias"), vec![char_dim], fan_in, seed)
}

/// Width-`width` convolution over the character embeddings of one word,
/// max-pooled over positions. Words shorter than the filter are padded
/// with [`PAD`] on the right. Returns a `char_dim × 1` column.
pub fn char_cnn_embed(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    chars: &[usize],
    width: usize,
) -> Result<Var> {
    let mut ids = chars.to_vec();
    if ids.len() < width {
        ids.resize(width, PAD);
    }
    let table = g.param(store, &format!("{prefix}.chars"))?;
    let emb = g.lookup(table, &ids)?;
    let windows = g.unfold(emb, width)?;
    let w = g.param(store, &format!("{prefix}.conv.weight"))?;
    let b = g.param(store, &format!("{prefix}.conv.bias"))?;
    let conv = g.affine(w, windows, b)?;
    g.max_over_columns(conv)
}

/// Char-CNN output for every word of a sequence, `char_dim × T`.
pub fn char_cnn_sequence(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    words: &[Vec<usize>],
    width: usize,
) -> Result<Var> {
    if words.is_empty() {
        return Err(Error::Empty("char-CNN input sequence"));
    }
    let cols = words
        .iter()
        .map(|w| char_cnn_embed(g, store, prefix, w, width))
        .collect::<Result<Vec<_>>>()?;
    g.concat_cols(&cols)
}

/// Word table `{prefix}.word` and, when `chars` is set, a char-CNN under
/// `{prefix}.char`.
pub fn init_word_char(
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    vocab: usize,
    chars: Option<usize>,
    seed: u64,
) -> Result<()> {
    init_embedding(store, &format!("{prefix}.word"), vocab, cfg.word_dim, seed)?;
    if let Some(n) = chars {
        init_char_cnn(store, &format!("{prefix}.char"), n, cfg.char_dim, cfg.cnn_width, seed)?;
    }
    Ok(())
}

/// Word embeddings stacked over char-CNN features when the store has a
/// char-CNN under `{prefix}.char`: `(word_dim [+ char_dim]) × T`.
pub fn embed_word_char(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    words: &[usize],
    chars: &[Vec<usize>],
    width: usize,
) -> Result<Var> {
    let w = embed_words(g, store, &format!("{prefix}.word"), words)?;
    let cnn = format!("{prefix}.char");
    if !store.contains(&format!("{cnn}.chars")) {
        return Ok(w);
    }
    if chars.len() != words.len() {
        return Err(Error::Shape {
            op: "embed_word_char",
            lhs: vec![words.len()],
            rhs: vec![chars.len()],
        });
    }
    let c = char_cnn_sequence(g, store, &cnn, chars, width)?;
    g.concat_rows(&[w, c])
}

/// Inverted dropout. Identity when not training or when `keep == 1`.
pub fn dropout(g: &mut Graph, x: Var, keep: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::invalid("dropout", format!("keep probability {keep} outside (0, 1]")));
    }
    if !training || keep == 1.0 {
        return Ok(x);
    }
    let (r, c) = g.shape(x);
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = g.constant(Tensor::new(vec![r, c], mask)?);
    g.mul(x, m)
}
