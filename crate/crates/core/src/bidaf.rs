//! Bi-directional attention flow reader.
//!
//! Shapes follow the usual notation: context encoding `H` is `2d × T`,
//! question encoding `U` is `2d × J`, similarity `S` is `T × J`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attend, max_pool_attend, trilinear};
use crate::encoders::{bilstm_encode, dropout, embed_word_char, init_bilstm, init_word_char, EncoderConfig};
use crate::error::{Error, Result};
use crate::squad::PairFeature;
use crate::tensor::{Graph, ParameterStore, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidafConfig {
    pub encoder: EncoderConfig,
    pub vocab: usize,
    /// Character vocabulary size; `None` disables the char-CNN.
    pub chars: Option<usize>,
}

impl BidafConfig {
    fn input_dim(&self) -> usize {
        self.encoder.word_dim + self.chars.map_or(0, |_| self.encoder.char_dim)
    }
}

pub fn init_bidaf(store: &mut ParameterStore, cfg: &BidafConfig, seed: u64) -> Result<()> {
    cfg.encoder.validate()?;
    let d = cfg.encoder.hidden;
    init_word_char(store, "bidaf.embed", &cfg.encoder, cfg.vocab, cfg.chars, seed)?;
    init_bilstm(store, "bidaf.context", cfg.input_dim(), d, seed)?;
    store.insert_uniform("bidaf.similarity.w", vec![6 * d], 6 * d, seed)?;
    init_bilstm(store, "bidaf.model1", 8 * d, d, seed)?;
    init_bilstm(store, "bidaf.model2", 2 * d, d, seed)?;
    init_bilstm(store, "bidaf.end", 2 * d, d, seed)?;
    store.insert_uniform("bidaf.p1.w", vec![10 * d], 10 * d, seed)?;
    store.insert_uniform("bidaf.p2.w", vec![10 * d], 10 * d, seed)
}

/// `S[t, j] = w_S · [H_t ; U_j ; H_t ∘ U_j]` with `w_S` of length `6d`.
pub fn similarity_matrix(g: &mut Graph, h: Var, u: Var, w_s: Var) -> Result<Var> {
    let k = g.shape(h).0;
    if g.shape(u).0 != k || g.shape(w_s) != (3 * k, 1) {
        return Err(Error::Shape {
            op: "similarity_matrix",
            lhs: vec![g.shape(h).0, g.shape(u).0],
            rhs: vec![g.shape(w_s).0],
        });
    }
    let w_h = g.slice_rows(w_s, 0, k)?;
    let w_u = g.slice_rows(w_s, k, k)?;
    let w_hu = g.slice_rows(w_s, 2 * k, k)?;
    trilinear(g, h, u, w_h, w_u, w_hu)
}

/// Context-to-query: `Ũ_t = Σ_j softmax(S_t·)_j U_j`.
pub fn c2q_attention(g: &mut Graph, s: Var, u: Var) -> Result<Var> {
    attend(g, s, u, None)
}

/// Query-to-context: `h̃ = Σ_t softmax_t(max_j S[t, j]) H_t`, tiled over T.
pub fn q2c_attention(g: &mut Graph, s: Var, h: Var) -> Result<Var> {
    let t = g.shape(h).1;
    let pooled = max_pool_attend(g, s, h)?;
    g.tile_cols(pooled, t)
}

/// `G = [H ; Ũ ; H ∘ Ũ ; H ∘ H̃]`, `8d × T`.
pub fn fuse_g(g: &mut Graph, h: Var, u_att: Var, h_att: Var) -> Result<Var> {
    let hu = g.mul(h, u_att)?;
    let hh = g.mul(h, h_att)?;
    g.concat_rows(&[h, u_att, hu, hh])
}

/// Two stacked bi-LSTMs over `G`.
pub fn modeling_layer(g: &mut Graph, store: &ParameterStore, gm: Var) -> Result<Var> {
    let m1 = bilstm_encode(g, store, "bidaf.model1", gm)?;
    bilstm_encode(g, store, "bidaf.model2", m1)
}

/// Start and end logits as `1 × T` rows. The end distribution reads `M`
/// through one more bi-LSTM.
pub fn span_logits(g: &mut Graph, store: &ParameterStore, gm: Var, m: Var) -> Result<(Var, Var)> {
    let w1 = g.param(store, "bidaf.p1.w")?;
    let w2 = g.param(store, "bidaf.p2.w")?;
    let gm1 = g.concat_rows(&[gm, m])?;
    let w1t = g.transpose(w1)?;
    let start = g.matmul(w1t, gm1)?;
    let m2 = bilstm_encode(g, store, "bidaf.end", m)?;
    let gm2 = g.concat_rows(&[gm, m2])?;
    let w2t = g.transpose(w2)?;
    let end = g.matmul(w2t, gm2)?;
    Ok((start, end))
}

/// `(p1, p2)`: softmax over T of the span logits.
pub fn span_distributions(g: &mut Graph, store: &ParameterStore, gm: Var, m: Var) -> Result<(Var, Var)> {
    let (start, end) = span_logits(g, store, gm, m)?;
    Ok((g.softmax(start, 1)?, g.softmax(end, 1)?))
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BidafState {
    pub h: Var,
    pub u: Var,
    pub s: Var,
    pub u_att: Var,
    pub h_att: Var,
    pub g: Var,
    pub m: Var,
    pub start_logits: Var,
    pub end_logits: Var,
}

/// Full forward pass. Dropout is applied to the embeddings and to `G`
/// when `rng` is given.
pub fn forward(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &BidafConfig,
    f: &PairFeature,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<BidafState> {
    let keep = cfg.encoder.dropout_keep;
    let width = cfg.encoder.cnn_width;
    let mut drop = |g: &mut Graph, x: Var| match rng.as_deref_mut() {
        Some(r) => dropout(g, x, keep, true, r),
        None => Ok(x),
    };
    let xc = embed_word_char(g, store, "bidaf.embed", &f.context, &f.context_chars, width)?;
    let xq = embed_word_char(g, store, "bidaf.embed", &f.question, &f.question_chars, width)?;
    let xc = drop(g, xc)?;
    let xq = drop(g, xq)?;
    let h = bilstm_encode(g, store, "bidaf.context", xc)?;
    let u = bilstm_encode(g, store, "bidaf.context", xq)?;
    let w_s = g.param(store, "bidaf.similarity.w")?;
    let s = similarity_matrix(g, h, u, w_s)?;
    let u_att = c2q_attention(g, s, u)?;
    let h_att = q2c_attention(g, s, h)?;
    let gm = fuse_g(g, h, u_att, h_att)?;
    let gm_in = drop(g, gm)?;
    let m = modeling_layer(g, store, gm_in)?;
    let (start_logits, end_logits) = span_logits(g, store, gm_in, m)?;
    Ok(BidafState {
        h,
        u,
        s,
        u_att,
        h_att,
        g: gm,
        m,
        start_logits,
        end_logits,
    })
}

/// `−log p1[gold_start] − log p2[gold_end]`, averaged over the batch.
pub fn bidaf_loss(g: &mut Graph, logits: &[(Var, Var)], golds: &[(usize, usize)]) -> Result<Var> {
    if logits.is_empty() || logits.len() != golds.len() {
        return Err(Error::invalid("bidaf_loss", format!("{} outputs, {} golds", logits.len(), golds.len())));
    }
    let mut terms = Vec::with_capacity(2 * logits.len());
    for (&(start, end), &(gs, ge)) in logits.iter().zip(golds) {
        terms.push(g.cross_entropy(start, gs)?);
        terms.push(g.cross_entropy(end, ge)?);
    }
    let total = g.add_all(&terms)?;
    g.scale(total, 1.0 / logits.len() as f64)
}
