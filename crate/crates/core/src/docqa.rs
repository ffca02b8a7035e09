//! DocumentQA reader and multi-paragraph confidence scoring.
//!
//! Context and question share one bi-GRU encoder, so both live in a
//! `k × n` space with `k = 2 · hidden`.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{attend, max_pool_attend, trilinear};
use crate::config::ConfidenceMode;
use crate::encoders::{bigru_encode, dropout, embed_word_char, init_bigru, init_word_char, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::decode_best_span;
use crate::squad::features::pair_from_tokens;
use crate::squad::{char_slice, document_offset, merge_paragraphs, tokenize, PairFeature, Question, SquadDocument, Vocabularies};
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocqaConfig {
    pub encoder: EncoderConfig,
    pub vocab: usize,
    pub chars: Option<usize>,
    /// Longest decoded answer, in tokens.
    pub max_span: usize,
    /// Context tokens read per paragraph (or per merged document).
    pub max_context: usize,
}

impl DocqaConfig {
    fn input_dim(&self) -> usize {
        self.encoder.word_dim + self.chars.map_or(0, |_| self.encoder.char_dim)
    }

    fn k(&self) -> usize {
        2 * self.encoder.hidden
    }
}

pub fn init_docqa(store: &mut ParameterStore, cfg: &DocqaConfig, seed: u64) -> Result<()> {
    cfg.encoder.validate()?;
    if cfg.max_span == 0 || cfg.max_context == 0 {
        return Err(Error::Config("max_span and max_context must be positive".into()));
    }
    let (d, k) = (cfg.encoder.hidden, cfg.k());
    init_word_char(store, "docqa.embed", &cfg.encoder, cfg.vocab, cfg.chars, seed)?;
    init_bigru(store, "docqa.enc", cfg.input_dim(), d, seed)?;
    for w in ["w1", "w2", "w3"] {
        store.insert_uniform(&format!("docqa.attn.{w}"), vec![k], k, seed)?;
    }
    for w in ["w2", "w3"] {
        store.insert_uniform(&format!("docqa.self.{w}"), vec![k], k, seed)?;
    }
    store.insert_uniform("docqa.attn.proj.weight", vec![k, 4 * k], 4 * k, seed)?;
    store.insert_uniform("docqa.attn.proj.bias", vec![k], 4 * k, seed)?;
    store.insert_uniform("docqa.self.proj.weight", vec![k, 2 * k], 2 * k, seed)?;
    init_bigru(store, "docqa.start_gru", k, d, seed)?;
    init_bigru(store, "docqa.end_gru", 2 * k, d, seed)?;
    store.insert_uniform("docqa.start.w", vec![k], k, seed)?;
    store.insert_uniform("docqa.end.w", vec![k], k, seed)
}

/// Extra parameters of the end-to-start feedback wiring.
pub fn init_cycle_variant(store: &mut ParameterStore, cfg: &DocqaConfig, seed: u64) -> Result<()> {
    init_bigru(store, "docqa.cycle.start_gru", 2 * cfg.k(), cfg.encoder.hidden, seed)
}

#[derive(Debug, Clone, Copy)]
pub struct TriAttentionWeights {
    pub w1: Var,
    pub w2: Var,
    pub w3: Var,
}

impl TriAttentionWeights {
    pub fn from_store(g: &mut Graph, store: &ParameterStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: g.param(store, &format!("{prefix}.w1"))?,
            w2: g.param(store, &format!("{prefix}.w2"))?,
            w3: g.param(store, &format!("{prefix}.w3"))?,
        })
    }
}

/// `A[i, j] = w1·h_i + w2·q_j + w3·(h_i ∘ q_j)`, `n_c × n_q`.
pub fn tri_linear_attention(g: &mut Graph, h: Var, q: Var, w: &TriAttentionWeights) -> Result<Var> {
    trilinear(g, h, q, w.w1, w.w2, w.w3)
}

/// `C` (`k × n_c`, each column a softmax-weighted mix of question
/// vectors) and the query-to-context vector `q_c` (`k × 1`).
pub fn attended_vectors(g: &mut Graph, a: Var, q: Var, h: Var) -> Result<(Var, Var)> {
    let c = attend(g, a, q, None)?;
    let q_c = max_pool_attend(g, a, h)?;
    Ok((c, q_c))
}

/// `[h_i ; c_i ; h_i ∘ c_i ; q_c ∘ c_i]`, `4k × n_c`.
pub fn attention_output(g: &mut Graph, h: Var, c: Var, q_c: Var) -> Result<Var> {
    let hc = g.mul(h, c)?;
    let qc = g.mul_col(c, q_c)?;
    g.concat_rows(&[h, c, hc, qc])
}

/// Passage attending to itself with the diagonal excluded; the attended
/// vectors go through a relu projection and are added back onto `x`.
/// A single-token passage has nothing to attend to and returns `x`.
///
/// The `w1` term is constant along each softmax row and cancels, so the
/// layer has no `w1` parameter.
pub fn self_attention_layer(g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
    let (k, n) = g.shape(x);
    let w = TriAttentionWeights {
        w1: g.constant(Tensor::zeros(vec![k, 1])),
        w2: g.param(store, "docqa.self.w2")?,
        w3: g.param(store, "docqa.self.w3")?,
    };
    let a = tri_linear_attention(g, x, x, &w)?;
    let off_diagonal: Vec<bool> = (0..n * n).map(|i| i / n != i % n).collect();
    let cx = attend(g, a, x, Some(&off_diagonal))?;
    let xc = g.mul(x, cx)?;
    let feats = g.concat_rows(&[cx, xc])?;
    let proj = g.param(store, "docqa.self.proj.weight")?;
    let z = g.matmul(proj, feats)?;
    let z = g.relu(z)?;
    g.add(x, z)
}

#[derive(Debug, Clone, Copy)]
pub struct SpanPrediction {
    /// `1 × n_c`.
    pub start_logits: Var,
    /// `1 × n_c`.
    pub end_logits: Var,
    pub start_hidden: Var,
    pub end_hidden: Var,
}

fn linear_row(g: &mut Graph, store: &ParameterStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, name)?;
    let wt = g.transpose(w)?;
    g.matmul(wt, x)
}

/// Start logits from a bi-GRU over `x`; end logits from a second bi-GRU
/// reading `x` together with the start states.
pub fn predict_span(g: &mut Graph, store: &ParameterStore, x: Var) -> Result<SpanPrediction> {
    let hs = bigru_encode(g, store, "docqa.start_gru", x)?;
    let start_logits = linear_row(g, store, "docqa.start.w", hs)?;
    let xe = g.concat_rows(&[x, hs])?;
    let he = bigru_encode(g, store, "docqa.end_gru", xe)?;
    let end_logits = linear_row(g, store, "docqa.end.w", he)?;
    Ok(SpanPrediction {
        start_logits,
        end_logits,
        start_hidden: hs,
        end_hidden: he,
    })
}

/// The same predictor with the end states also fed into the start
/// predictor. The forward values are computed with a zero placeholder;
/// once the loop is closed the graph has a cycle and `backward` fails.
pub fn predict_span_with_feedback(g: &mut Graph, store: &ParameterStore, x: Var) -> Result<SpanPrediction> {
    let (k, n) = g.shape(x);
    let loop_in = g.feedback(k, n);
    let xs = g.concat_rows(&[x, loop_in])?;
    let hs = bigru_encode(g, store, "docqa.cycle.start_gru", xs)?;
    let start_logits = linear_row(g, store, "docqa.start.w", hs)?;
    let xe = g.concat_rows(&[x, hs])?;
    let he = bigru_encode(g, store, "docqa.end_gru", xe)?;
    let end_logits = linear_row(g, store, "docqa.end.w", he)?;
    g.connect(loop_in, he)?;
    Ok(SpanPrediction {
        start_logits,
        end_logits,
        start_hidden: hs,
        end_hidden: he,
    })
}

/// Encoder and attention stack up to (not including) span prediction.
fn encode(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &DocqaConfig,
    f: &PairFeature,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let keep = cfg.encoder.dropout_keep;
    let width = cfg.encoder.cnn_width;
    let mut drop = |g: &mut Graph, x: Var| match rng.as_deref_mut() {
        Some(r) => dropout(g, x, keep, true, r),
        None => Ok(x),
    };
    let ec = embed_word_char(g, store, "docqa.embed", &f.context, &f.context_chars, width)?;
    let eq = embed_word_char(g, store, "docqa.embed", &f.question, &f.question_chars, width)?;
    let ec = drop(g, ec)?;
    let eq = drop(g, eq)?;
    let h = bigru_encode(g, store, "docqa.enc", ec)?;
    let q = bigru_encode(g, store, "docqa.enc", eq)?;
    let w = TriAttentionWeights::from_store(g, store, "docqa.attn")?;
    let a = tri_linear_attention(g, h, q, &w)?;
    let (c, q_c) = attended_vectors(g, a, q, h)?;
    let out = attention_output(g, h, c, q_c)?;
    let out = drop(g, out)?;
    let pw = g.param(store, "docqa.attn.proj.weight")?;
    let pb = g.param(store, "docqa.attn.proj.bias")?;
    let x = g.affine(pw, out, pb)?;
    let x = g.relu(x)?;
    self_attention_layer(g, store, x)
}

pub fn forward(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &DocqaConfig,
    f: &PairFeature,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<SpanPrediction> {
    let x = encode(g, store, cfg, f, rng)?;
    predict_span(g, store, x)
}

pub fn forward_with_feedback(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &DocqaConfig,
    f: &PairFeature,
) -> Result<SpanPrediction> {
    let x = encode(g, store, cfg, f, None)?;
    predict_span_with_feedback(g, store, x)
}

/// Loss of one training group: the gold paragraph's start and end
/// targets under a softmax whose normalizer runs over every paragraph of
/// the group. With one paragraph this is the plain per-paragraph loss.
pub fn group_loss(g: &mut Graph, outputs: &[SpanPrediction], gold_index: usize, gold: (usize, usize)) -> Result<Var> {
    if gold_index >= outputs.len() {
        return Err(Error::IndexOutOfRange {
            what: "gold paragraph",
            index: gold_index,
            bound: outputs.len(),
        });
    }
    let offset: usize = outputs[..gold_index].iter().map(|o| g.shape(o.start_logits).1).sum();
    let starts: Vec<Var> = outputs.iter().map(|o| o.start_logits).collect();
    let ends: Vec<Var> = outputs.iter().map(|o| o.end_logits).collect();
    let s = g.concat_cols(&starts)?;
    let e = g.concat_cols(&ends)?;
    let ls = g.cross_entropy(s, offset + gold.0)?;
    let le = g.cross_entropy(e, offset + gold.1)?;
    g.add(ls, le)
}

/// Raw start/end logits of one paragraph as seen by the ranker.
#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphLogits {
    pub paragraph: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub legal: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanScore {
    pub paragraph: usize,
    pub start: usize,
    pub end: usize,
    pub start_score: f64,
    pub end_score: f64,
    pub confidence: f64,
}

fn softmax(v: &[f64], log_z: f64) -> Vec<f64> {
    v.iter().map(|x| (x - log_z).exp()).collect()
}

fn log_sum_exp<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let m = values.clone().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + values.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Start and end probabilities of every paragraph under one softmax
/// shared across the whole list.
pub fn shared_norm_probabilities(paragraphs: &[ParagraphLogits]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let zs = log_sum_exp(paragraphs.iter().flat_map(|p| p.start.iter()));
    let ze = log_sum_exp(paragraphs.iter().flat_map(|p| p.end.iter()));
    paragraphs
        .iter()
        .map(|p| (softmax(&p.start, zs), softmax(&p.end, ze)))
        .collect()
}

fn per_paragraph_probabilities(p: &ParagraphLogits) -> (Vec<f64>, Vec<f64>) {
    (
        softmax(&p.start, log_sum_exp(p.start.iter())),
        softmax(&p.end, log_sum_exp(p.end.iter())),
    )
}

/// Best span of each paragraph, ranked by confidence (ties keep the
/// input order). Paragraphs without a legal span are skipped.
///
/// `none` and `merge` score a span by its per-paragraph start × end
/// probability, `shared_norm` by the same product under a softmax shared
/// across paragraphs, `original` by the raw logit sum.
pub fn confidence_score(paragraphs: &[ParagraphLogits], mode: ConfidenceMode, max_len: usize) -> Result<Vec<SpanScore>> {
    if paragraphs.is_empty() {
        return Err(Error::Empty("paragraph logits"));
    }
    let shared = (mode == ConfidenceMode::SharedNorm).then(|| shared_norm_probabilities(paragraphs));
    let mut out = Vec::with_capacity(paragraphs.len());
    for (i, p) in paragraphs.iter().enumerate() {
        let (s, e, _) = match decode_best_span(&p.start, &p.end, &p.legal, max_len) {
            Ok(best) => best,
            Err(Error::NoLegalSpan) => continue,
            Err(err) => return Err(err),
        };
        let confidence = match mode {
            ConfidenceMode::Original => p.start[s] + p.end[e],
            ConfidenceMode::SharedNorm => {
                let (ps, pe) = &shared.as_ref().expect("computed for shared_norm")[i];
                ps[s] * pe[e]
            }
            ConfidenceMode::None | ConfidenceMode::Merge => {
                let (ps, pe) = per_paragraph_probabilities(p);
                ps[s] * pe[e]
            }
        };
        out.push(SpanScore {
            paragraph: p.paragraph,
            start: s,
            end: e,
            start_score: p.start[s],
            end_score: p.end[e],
            confidence,
        });
    }
    if out.is_empty() {
        return Err(Error::NoLegalSpan);
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(out)
}

/// Anything that maps a question/context feature to start and end logits.
pub trait SpanScorer: Sync {
    fn logits(&self, feature: &PairFeature) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// A trained DocQA model used for inference.
pub struct DocqaReader<'a> {
    pub cfg: &'a DocqaConfig,
    pub store: &'a ParameterStore,
}

impl SpanScorer for DocqaReader<'_> {
    fn logits(&self, feature: &PairFeature) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let out = forward(&mut g, self.store, self.cfg, feature, None)?;
        Ok((g.value(out.start_logits).data().to_vec(), g.value(out.end_logits).data().to_vec()))
    }
}

/// Answer located in the document text (paragraphs joined by `"\n"`).
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentAnswer {
    pub text: String,
    pub paragraph: usize,
    /// Character range `[start, end)` in [`SquadDocument::text`].
    pub char_start: usize,
    pub char_end: usize,
    pub confidence: f64,
}

/// Reads every paragraph of `doc` (or the merged document in `merge`
/// mode), ranks the candidates and returns the best one.
pub fn multi_paragraph_answer(
    scorer: &impl SpanScorer,
    doc: &SquadDocument,
    question: &Question,
    vocabs: &Vocabularies,
    mode: ConfidenceMode,
    max_span: usize,
    max_context: usize,
) -> Result<DocumentAnswer> {
    if doc.paragraphs.is_empty() {
        return Err(Error::Empty("document paragraphs"));
    }
    let text = doc.text();
    let all: Vec<usize> = (0..doc.paragraphs.len()).collect();
    // (feature, paragraph of each token, document offset added to token offsets)
    let inputs: Vec<(PairFeature, Vec<usize>, usize)> = if mode == ConfidenceMode::Merge {
        let merged = merge_paragraphs(doc, &all);
        let mut owner = Vec::with_capacity(merged.tokens.len());
        for (i, &sep) in merged.separators.iter().enumerate() {
            let next = merged.separators.get(i + 1).copied().unwrap_or(merged.tokens.len());
            owner.extend(std::iter::repeat_n(i, next - sep));
        }
        let f = pair_from_tokens(question, merged.tokens, merged.legal, None, vocabs, max_context)
            .ok_or(Error::Empty("merged document tokens"))?;
        owner.truncate(f.tokens.len());
        vec![(f, owner, 0)]
    } else {
        all.iter()
            .filter_map(|&p| {
                let tokens = tokenize(&doc.paragraphs[p].context);
                let legal = vec![true; tokens.len()];
                let f = pair_from_tokens(question, tokens, legal, None, vocabs, max_context)?;
                let owner = vec![p; f.tokens.len()];
                Some((f, owner, document_offset(doc, p)))
            })
            .collect()
    };
    if inputs.is_empty() {
        return Err(Error::Empty("paragraph tokens"));
    }
    let logits: Vec<ParagraphLogits> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, (f, _, _))| {
            let (start, end) = scorer.logits(f)?;
            Ok(ParagraphLogits {
                paragraph: i,
                start,
                end,
                legal: f.legal.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let best = &confidence_score(&logits, mode, max_span)?[0];
    let (f, owner, base) = &inputs[best.paragraph];
    let char_start = base + f.tokens[best.start].start;
    let char_end = base + f.tokens[best.end].end;
    Ok(DocumentAnswer {
        text: char_slice(&text, char_start, char_end),
        paragraph: owner[best.start],
        char_start,
        char_end,
        confidence: best.confidence,
    })
}
