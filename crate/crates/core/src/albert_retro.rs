//! Mini ALBERT encoder with a retro-reader head pair.
//!
//! All encoder layers resolve to one block stored under `albert.shared`;
//! `albert.layer.{i}.*` are aliases of it. Hidden states are `H × S`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::attend;
use crate::encoders::dropout;
use crate::error::{Error, Result};
use crate::eval::decode_best_span;
use crate::squad::PackedFeature;
use crate::tensor::{Graph, ParameterStore, ReinitMode, Tensor, Var};

pub const FFN2_WEIGHT: &str = "albert.shared.ffn2.weight";
pub const FFN2_BIAS: &str = "albert.shared.ffn2.bias";

const LN_EPS: f64 = 1e-12;

const BLOCK_LINEARS: [&str; 6] = ["attn.q", "attn.k", "attn.v", "attn.o", "ffn1", "ffn2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbertConfig {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub seq_len: usize,
    pub dropout_keep: f64,
}

impl Default for AlbertConfig {
    fn default() -> Self {
        Self {
            vocab: 2000,
            embed: 32,
            hidden: 64,
            layers: 4,
            heads: 4,
            ffn: 128,
            seq_len: 128,
            dropout_keep: 0.9,
        }
    }
}

impl AlbertConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.embed == 0 || self.embed > self.hidden {
            return fail(format!("embedding dim {} must be in 1..={}", self.embed, self.hidden));
        }
        if self.seq_len < 8 {
            return fail(format!("sequence length {} is below 8", self.seq_len));
        }
        if self.layers == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "{} layers, {} heads for hidden size {}",
                self.layers, self.heads, self.hidden
            ));
        }
        if self.ffn == 0 || self.vocab == 0 {
            return fail("empty vocabulary or feed-forward layer".into());
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return fail(format!("dropout keep {} outside (0, 1]", self.dropout_keep));
        }
        Ok(())
    }
}

fn insert_linear(store: &mut ParameterStore, name: &str, out: usize, inp: usize, seed: u64) -> Result<()> {
    store.insert_uniform(&format!("{name}.weight"), vec![out, inp], inp, seed)?;
    store.insert_uniform(&format!("{name}.bias"), vec![out], inp, seed)
}

fn insert_norm(store: &mut ParameterStore, name: &str, h: usize) -> Result<()> {
    store.insert(format!("{name}.gamma"), Tensor::filled(vec![h], 1.0))?;
    store.insert(format!("{name}.beta"), Tensor::zeros(vec![h]))
}

fn block_names() -> Vec<String> {
    let mut out = Vec::new();
    for l in BLOCK_LINEARS {
        out.push(format!("{l}.weight"));
        if l != "attn.k" {
            out.push(format!("{l}.bias"));
        }
    }
    for n in ["ln1", "ln2"] {
        out.push(format!("{n}.gamma"));
        out.push(format!("{n}.beta"));
    }
    out
}

pub fn init_albert(store: &mut ParameterStore, cfg: &AlbertConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    let (e, h, f) = (cfg.embed, cfg.hidden, cfg.ffn);
    store.insert_uniform("albert.embed.word", vec![cfg.vocab, e], e, seed)?;
    store.insert_uniform("albert.embed.proj", vec![h, e], e, seed)?;
    store.insert_uniform("albert.embed.pos", vec![cfg.seq_len, h], h, seed)?;
    insert_norm(store, "albert.embed.ln", h)?;
    for l in ["attn.q", "attn.v", "attn.o"] {
        insert_linear(store, &format!("albert.shared.{l}"), h, h, seed)?;
    }
    // A key bias adds q·b to every score in a row and cancels in the softmax.
    store.insert_uniform("albert.shared.attn.k.weight", vec![h, h], h, seed)?;
    insert_linear(store, "albert.shared.ffn1", f, h, seed)?;
    insert_linear(store, "albert.shared.ffn2", h, f, seed)?;
    insert_norm(store, "albert.shared.ln1", h)?;
    insert_norm(store, "albert.shared.ln2", h)?;
    for i in 0..cfg.layers {
        for n in block_names() {
            store.alias(format!("albert.layer.{i}.{n}"), &format!("albert.shared.{n}"))?;
        }
    }
    insert_linear(store, "albert.cls", 2, h, seed)?;
    store.insert_uniform("albert.span.weight", vec![2, h], h, seed)
}

/// Parameters in the two embedding factors, `V·E + E·H`.
pub fn factorized_param_count(store: &ParameterStore) -> Result<usize> {
    Ok(store.get("albert.embed.word")?.len() + store.get("albert.embed.proj")?.len())
}

/// `proj · word[tokens] + pos[0..n]`, `H × n`.
pub fn factorized_embedding(g: &mut Graph, store: &ParameterStore, tokens: &[usize]) -> Result<Var> {
    let word = g.param(store, "albert.embed.word")?;
    let proj = g.param(store, "albert.embed.proj")?;
    let pos = g.param(store, "albert.embed.pos")?;
    let e = g.lookup(word, tokens)?;
    let x = g.matmul(proj, e)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let p = g.lookup(pos, &positions)?;
    g.add(x, p)
}

fn layer_norm(g: &mut Graph, store: &ParameterStore, name: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &format!("{name}.gamma"))?;
    let beta = g.param(store, &format!("{name}.beta"))?;
    let n = g.normalize_cols(x, LN_EPS)?;
    let n = g.mul_col(n, gamma)?;
    g.add_col(n, beta)
}

fn linear(g: &mut Graph, store: &ParameterStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{name}.weight"))?;
    let b = g.param(store, &format!("{name}.bias"))?;
    g.affine(w, x, b)
}

fn maybe_drop(g: &mut Graph, x: Var, keep: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng.as_deref_mut() {
        Some(r) => dropout(g, x, keep, true, r),
        None => Ok(x),
    }
}

/// One post-norm transformer block read through the names under
/// `prefix`. Keys with `key_mask[j] == false` receive no attention.
#[allow(clippy::too_many_arguments)]
pub fn encoder_block(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    x: Var,
    key_mask: &[bool],
    heads: usize,
    keep: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let (h, n) = g.shape(x);
    if key_mask.len() != n {
        return Err(Error::Shape {
            op: "encoder_block",
            lhs: vec![h, n],
            rhs: vec![key_mask.len()],
        });
    }
    let dh = h / heads;
    let q = linear(g, store, &format!("{prefix}.attn.q"), x)?;
    let wk = g.param(store, &format!("{prefix}.attn.k.weight"))?;
    let k = g.matmul(wk, x)?;
    let v = linear(g, store, &format!("{prefix}.attn.v"), x)?;
    let mask: Vec<bool> = (0..n * n).map(|i| key_mask[i % n]).collect();
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = g.slice_rows(q, head * dh, dh)?;
        let kh = g.slice_rows(k, head * dh, dh)?;
        let vh = g.slice_rows(v, head * dh, dh)?;
        let qt = g.transpose(qh)?;
        let scores = g.matmul(qt, kh)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        outs.push(attend(g, scores, vh, Some(&mask))?);
    }
    let heads_out = g.concat_rows(&outs)?;
    let attn = linear(g, store, &format!("{prefix}.attn.o"), heads_out)?;
    let attn = maybe_drop(g, attn, keep, rng)?;
    let x1 = g.add(x, attn)?;
    let x1 = layer_norm(g, store, &format!("{prefix}.ln1"), x1)?;
    let f = linear(g, store, &format!("{prefix}.ffn1"), x1)?;
    let f = g.gelu(f)?;
    let f = linear(g, store, &format!("{prefix}.ffn2"), f)?;
    let f = maybe_drop(g, f, keep, rng)?;
    let x2 = g.add(x1, f)?;
    layer_norm(g, store, &format!("{prefix}.ln2"), x2)
}

/// `layers` applications of the shared block, layer `i` read through the
/// `albert.layer.{i}` aliases.
pub fn shared_encoder_stack(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &AlbertConfig,
    x: Var,
    key_mask: &[bool],
    layers: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    if layers == 0 {
        return Err(Error::Config("encoder stack needs at least one layer".into()));
    }
    let mut h = x;
    for i in 0..layers {
        h = encoder_block(
            g,
            store,
            &format!("albert.layer.{i}"),
            h,
            key_mask,
            cfg.heads,
            cfg.dropout_keep,
            &mut rng,
        )?;
    }
    Ok(h)
}

/// `[answerable, unanswerable]` logits read from position 0, `2 × 1`.
pub fn answerability_head(g: &mut Graph, store: &ParameterStore, encoded: Var) -> Result<Var> {
    let cls = g.column(encoded, 0)?;
    linear(g, store, "albert.cls", cls)
}

/// Start (row 0) and end (row 1) logits for every position, `2 × S`.
/// No bias: a per-row offset cancels in the span softmax.
pub fn span_head(g: &mut Graph, store: &ParameterStore, encoded: Var) -> Result<Var> {
    let w = g.param(store, "albert.span.weight")?;
    g.matmul(w, encoded)
}

#[derive(Debug, Clone, Copy)]
pub struct RetroOutput {
    pub answerability: Var,
    pub span: Var,
}

pub fn forward(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &AlbertConfig,
    f: &PackedFeature,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<RetroOutput> {
    let x = factorized_embedding(g, store, &f.ids)?;
    let x = layer_norm(g, store, "albert.embed.ln", x)?;
    let x = maybe_drop(g, x, cfg.dropout_keep, &mut rng)?;
    let key_mask: Vec<bool> = (0..f.ids.len()).map(|i| i < f.len).collect();
    let enc = shared_encoder_stack(g, store, cfg, x, &key_mask, cfg.layers, rng)?;
    Ok(RetroOutput {
        answerability: answerability_head(g, store, enc)?,
        span: span_head(g, store, enc)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetroGold {
    pub is_impossible: bool,
    /// Answer span in packed positions; unanswerable examples point at
    /// position 0.
    pub span: (usize, usize),
    /// Positions allowed to carry an answer boundary (position 0 included).
    pub mask: Vec<bool>,
}

impl RetroGold {
    pub fn new(is_impossible: bool, span: Option<(usize, usize)>, mask: Vec<bool>) -> Result<Self> {
        let span = match (is_impossible, span) {
            (true, Some(s)) => {
                return Err(Error::InconsistentGold(format!(
                    "unanswerable example carries span {s:?}"
                )))
            }
            (true, None) => (0, 0),
            (false, Some(s)) if s.0 <= s.1 && s.1 < mask.len() && mask[s.0] && mask[s.1] => s,
            (false, s) => return Err(Error::InconsistentGold(format!("answerable example has span {s:?}"))),
        };
        Ok(Self {
            is_impossible,
            span,
            mask,
        })
    }

    pub fn from_feature(f: &PackedFeature) -> Result<Self> {
        let mut mask = f.context_mask.clone();
        mask[0] = true;
        let span = (!f.is_impossible).then_some(f.gold);
        Self::new(f.is_impossible, span, mask)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetroLoss {
    pub total: Var,
    pub cls: Var,
    pub span: Var,
}

/// Answerability cross-entropy plus masked start and end cross-entropy,
/// each averaged over the batch.
pub fn retro_loss(g: &mut Graph, outputs: &[RetroOutput], golds: &[RetroGold]) -> Result<RetroLoss> {
    if outputs.is_empty() || outputs.len() != golds.len() {
        return Err(Error::invalid(
            "retro_loss",
            format!("{} outputs, {} golds", outputs.len(), golds.len()),
        ));
    }
    let mut cls_terms = Vec::new();
    let mut span_terms = Vec::new();
    for (o, gold) in outputs.iter().zip(golds) {
        cls_terms.push(g.cross_entropy(o.answerability, gold.is_impossible as usize)?);
        let start = g.slice_rows(o.span, 0, 1)?;
        let end = g.slice_rows(o.span, 1, 1)?;
        span_terms.push(g.masked_cross_entropy(start, gold.span.0, &gold.mask)?);
        span_terms.push(g.masked_cross_entropy(end, gold.span.1, &gold.mask)?);
    }
    let scale = 1.0 / outputs.len() as f64;
    let cls = g.add_all(&cls_terms)?;
    let cls = g.scale(cls, scale)?;
    let span = g.add_all(&span_terms)?;
    let span = g.scale(span, scale)?;
    let total = g.add(cls, span)?;
    Ok(RetroLoss { total, cls, span })
}

/// Selected re-initialization of the shared block's second feed-forward
/// linear. Every layer reads the new values through its aliases.
pub fn reinit_last_linear(store: &mut ParameterStore, mode: ReinitMode, seed: u64) -> Result<()> {
    let fan_in = store.get(FFN2_WEIGHT)?.cols();
    store.reinit(FFN2_WEIGHT, fan_in, mode, seed)?;
    store.reinit(FFN2_BIAS, fan_in, mode, seed)
}

/// Plain logits of one example, detached from the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RetroLogits {
    pub answerable: f64,
    pub unanswerable: f64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl RetroLogits {
    pub fn from_output(g: &Graph, o: &RetroOutput) -> Self {
        let a = g.value(o.answerability).data();
        let s = g.value(o.span);
        Self {
            answerable: a[0],
            unanswerable: a[1],
            start: s.row_values(0).to_vec(),
            end: s.row_values(1).to_vec(),
        }
    }
}

/// Best legal span with its has-answer margin
/// `(answerable − unanswerable) + (best span score − CLS span score)`.
/// `None` when no span is legal.
pub fn retro_margin(logits: &RetroLogits, legal: &[bool], max_len: usize) -> Result<Option<(usize, usize, f64)>> {
    let (s, e, best) = match decode_best_span(&logits.start, &logits.end, legal, max_len) {
        Ok(b) => b,
        Err(Error::NoLegalSpan) => return Ok(None),
        Err(err) => return Err(err),
    };
    let null = logits.start[0] + logits.end[0];
    Ok(Some((s, e, (logits.answerable - logits.unanswerable) + (best - null))))
}

/// Best legal span, or `None` to abstain. The answer is kept when its
/// margin (see [`retro_margin`]) exceeds `delta`; `delta = +∞` always
/// abstains.
pub fn retro_decode(logits: &RetroLogits, legal: &[bool], max_len: usize, delta: f64) -> Result<Option<(usize, usize)>> {
    Ok(retro_margin(logits, legal, max_len)?.and_then(|(s, e, m)| (m > delta).then_some((s, e))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check_store;

    fn tiny() -> AlbertConfig {
        AlbertConfig {
            vocab: 20,
            embed: 4,
            hidden: 8,
            layers: 2,
            heads: 2,
            ffn: 6,
            seq_len: 8,
            dropout_keep: 1.0,
        }
    }

    fn store(cfg: &AlbertConfig) -> ParameterStore {
        let mut s = ParameterStore::new();
        init_albert(&mut s, cfg, 7).unwrap();
        s
    }

    #[test]
    fn config_checks() {
        assert!(AlbertConfig::default().validate().is_ok());
        assert!(AlbertConfig { embed: 80, ..tiny() }.validate().is_err());
        assert!(AlbertConfig { seq_len: 7, ..tiny() }.validate().is_err());
        assert!(AlbertConfig { heads: 3, ..tiny() }.validate().is_err());
    }

    #[test]
    fn factorized_count() {
        let cfg = AlbertConfig {
            vocab: 1000,
            embed: 16,
            hidden: 64,
            ..tiny()
        };
        assert_eq!(factorized_param_count(&store(&cfg)).unwrap(), 17_024);
    }

    #[test]
    fn identity_projection_is_a_lookup() {
        let cfg = AlbertConfig { embed: 8, ..tiny() };
        let mut s = store(&cfg);
        let mut eye = Tensor::zeros(vec![8, 8]);
        for i in 0..8 {
            eye.set(i, i, 1.0);
        }
        s.set("albert.embed.proj", eye).unwrap();
        s.set("albert.embed.pos", Tensor::zeros(vec![8, 8])).unwrap();
        let tokens = [3, 0, 19];
        let mut g = Graph::new();
        let x = factorized_embedding(&mut g, &s, &tokens).unwrap();
        let table = s.get("albert.embed.word").unwrap();
        for (j, &t) in tokens.iter().enumerate() {
            assert_eq!(g.value(x).column_values(j), table.row_values(t));
        }
        assert!(factorized_embedding(&mut g, &s, &[20]).is_err());
    }

    #[test]
    fn stack_census_ignores_depth() {
        let a = store(&AlbertConfig { layers: 1, ..tiny() });
        let b = store(&AlbertConfig { layers: 12, ..tiny() });
        assert_eq!(a.param_count(), b.param_count());
        assert_eq!(b.resolve("albert.layer.11.ffn2.weight").unwrap(), FFN2_WEIGHT);
    }

    #[test]
    fn two_layers_are_one_more_block() {
        let cfg = tiny();
        let s = store(&cfg);
        let x = Tensor::new(vec![8, 3], (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mask = [true, true, false];
        let mut g = Graph::new();
        let xv = g.constant(x);
        let one = shared_encoder_stack(&mut g, &s, &cfg, xv, &mask, 1, None).unwrap();
        let two = shared_encoder_stack(&mut g, &s, &cfg, xv, &mask, 2, None).unwrap();
        let again = encoder_block(&mut g, &s, "albert.shared", one, &mask, cfg.heads, 1.0, &mut None).unwrap();
        assert!(g.value(two).max_abs_diff(g.value(again)) < 1e-12);
    }

    #[test]
    fn cls_head_reads_position_zero() {
        let s = store(&tiny());
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![8, 3], (0..24).map(|i| i as f64 * 0.1).collect()).unwrap());
        let mut other = g.value(a).clone();
        for r in 0..8 {
            other.set(r, 2, -5.0);
        }
        let b = g.constant(other);
        let la = answerability_head(&mut g, &s, a).unwrap();
        let lb = answerability_head(&mut g, &s, b).unwrap();
        assert_eq!(g.value(la), g.value(lb));
        assert_eq!(g.shape(la), (2, 1));
        let sp = span_head(&mut g, &s, a).unwrap();
        assert_eq!(g.shape(sp), (2, 3));
    }

    fn packed(ids: Vec<usize>, len: usize, gold: (usize, usize), impossible: bool) -> PackedFeature {
        let n = ids.len();
        PackedFeature {
            qid: "q".into(),
            segments: vec![0; n],
            offsets: (0..n).map(|i| (i >= 3 && i + 1 < len).then_some((i, i + 1))).collect(),
            context_mask: (0..n).map(|i| i >= 3 && i + 1 < len).collect(),
            ids,
            len,
            gold,
            is_impossible: impossible,
        }
    }

    #[test]
    fn uniform_loss_value() {
        let mut g = Graph::new();
        let o = RetroOutput {
            answerability: g.constant(Tensor::zeros(vec![2, 1])),
            span: g.constant(Tensor::zeros(vec![2, 4])),
        };
        let gold = RetroGold::new(false, Some((1, 2)), vec![true; 4]).unwrap();
        let l = retro_loss(&mut g, &[o], std::slice::from_ref(&gold)).unwrap();
        let expect = 2f64.ln() + 2.0 * 4f64.ln();
        assert!((g.value(l.total).data()[0] - expect).abs() < 1e-12);

        let o2 = RetroOutput {
            answerability: g.constant(Tensor::column(vec![1.0, -1.0])),
            span: g.constant(Tensor::new(vec![2, 4], vec![0.3, 0.1, 2.0, -1.0, 0.0, 0.5, 0.2, 0.9]).unwrap()),
        };
        let single = retro_loss(&mut g, &[o2], std::slice::from_ref(&gold)).unwrap();
        let pair = retro_loss(&mut g, &[o, o2], &[gold.clone(), gold]).unwrap();
        let mean = (expect + g.value(single.total).data()[0]) / 2.0;
        assert!((g.value(pair.total).data()[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_gold() {
        assert!(matches!(
            RetroGold::new(true, Some((1, 1)), vec![true; 4]),
            Err(Error::InconsistentGold(_))
        ));
        assert!(RetroGold::new(false, None, vec![true; 4]).is_err());
        let g = RetroGold::new(true, None, vec![true; 4]).unwrap();
        assert_eq!(g.span, (0, 0));
    }

    #[test]
    fn reinit_touches_exactly_ffn2() {
        let cfg = tiny();
        let before = store(&cfg);
        let mut after = before.clone();
        reinit_last_linear(&mut after, ReinitMode::Initializer, 99).unwrap();
        let diff = after.diff(&before).unwrap();
        let names: Vec<&str> = diff.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, [FFN2_BIAS, FFN2_WEIGHT]);
        assert!(diff.iter().all(|d| d.l2_delta > 0.0));

        let mut again = before.clone();
        reinit_last_linear(&mut again, ReinitMode::Initializer, 99).unwrap();
        assert!(again.bitwise_eq(&after));

        let f = packed(vec![2, 5, 3, 6, 7, 8, 3, 0], 7, (4, 5), false);
        let run = |s: &ParameterStore| {
            let mut g = Graph::new();
            let o = forward(&mut g, s, &cfg, &f, None).unwrap();
            g.value(o.span).clone()
        };
        assert!(run(&before).max_abs_diff(&run(&after)) > 0.0);
    }

    #[test]
    fn decode_thresholds() {
        let l = RetroLogits {
            answerable: 0.5,
            unanswerable: 0.2,
            start: vec![1.0, 0.0, 3.0, 0.5],
            end: vec![1.0, 0.2, 0.1, 2.0],
        };
        let legal = [false, true, true, true];
        assert_eq!(retro_decode(&l, &legal, 17, f64::NEG_INFINITY).unwrap(), Some((2, 3)));
        assert_eq!(retro_decode(&l, &legal, 17, f64::INFINITY).unwrap(), None);
        // margin: 0.3 + (5.0 − 2.0) = 3.3
        assert_eq!(retro_decode(&l, &legal, 17, 3.2).unwrap(), Some((2, 3)));
        assert_eq!(retro_decode(&l, &legal, 17, 3.4).unwrap(), None);
        assert_eq!(retro_decode(&l, &[false; 4], 17, f64::NEG_INFINITY).unwrap(), None);
    }

    #[test]
    fn end_to_end_gradients() {
        let cfg = tiny();
        let s = store(&cfg);
        let f = packed(vec![2, 5, 3, 6, 7, 8, 3, 0], 7, (4, 5), false);
        let gold = RetroGold::from_feature(&f).unwrap();
        let report = gradient_check_store(
            &s,
            |g, st| {
                let o = forward(g, st, &cfg, &f, None)?;
                Ok(retro_loss(g, &[o], std::slice::from_ref(&gold))?.total)
            },
            6,
            21,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
