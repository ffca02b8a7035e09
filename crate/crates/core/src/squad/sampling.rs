use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{pair_from_tokens, PairFeature, Vocabularies};
use super::tokenize::{char_span_to_tokens, tokenize, Token};
use super::{Question, SquadDocument};
use crate::config::ConfidenceMode;

/// The paragraphs one question is trained against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingGroup {
    pub qid: String,
    /// Paragraph holding the question and its answer.
    pub gold_paragraph: usize,
    /// Paragraphs in the group, in document order.
    pub paragraphs: Vec<usize>,
    /// Read as one merged sequence instead of paragraph by paragraph.
    pub merged: bool,
}

/// Character offset of paragraph `p` in [`SquadDocument::text`].
pub fn document_offset(doc: &SquadDocument, p: usize) -> usize {
    doc.paragraphs[..p].iter().map(|x| x.context.chars().count() + 1).sum()
}

/// One group per answerable question: the answer paragraph alone for
/// `none`/`original`, plus up to `n_negatives` other paragraphs of the
/// same document for `shared_norm` and `merge`.
pub fn sample_paragraphs(
    doc: &SquadDocument,
    mode: ConfidenceMode,
    n_negatives: usize,
    seed: u64,
) -> Vec<TrainingGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    for (p, q) in doc.questions() {
        if q.is_impossible || q.answers.is_empty() {
            continue;
        }
        let mut paragraphs = vec![p];
        if matches!(mode, ConfidenceMode::SharedNorm | ConfidenceMode::Merge) {
            let others: Vec<usize> = (0..doc.paragraphs.len()).filter(|&i| i != p).collect();
            let k = n_negatives.min(others.len());
            paragraphs.extend(sample(&mut rng, others.len(), k).into_iter().map(|i| others[i]));
            paragraphs.sort_unstable();
        }
        groups.push(TrainingGroup {
            qid: q.id.clone(),
            gold_paragraph: p,
            paragraphs,
            merged: mode == ConfidenceMode::Merge,
        });
    }
    groups
}

/// Paragraphs concatenated into one token sequence, each preceded by a
/// `[PARSEP]` token. Offsets index [`SquadDocument::text`].
#[derive(Debug, Clone, PartialEq)]
pub struct MergedSequence {
    pub tokens: Vec<Token>,
    pub legal: Vec<bool>,
    /// Token index of the separator opening each merged paragraph.
    pub separators: Vec<usize>,
}

pub fn merge_paragraphs(doc: &SquadDocument, paragraphs: &[usize]) -> MergedSequence {
    let mut merged = MergedSequence {
        tokens: Vec::new(),
        legal: Vec::new(),
        separators: Vec::new(),
    };
    for &p in paragraphs {
        let base = document_offset(doc, p);
        merged.separators.push(merged.tokens.len());
        merged.tokens.push(Token {
            text: "[PARSEP]".into(),
            start: base,
            end: base,
        });
        merged.legal.push(false);
        for t in tokenize(&doc.paragraphs[p].context) {
            merged.tokens.push(Token {
                text: t.text,
                start: base + t.start,
                end: base + t.end,
            });
            merged.legal.push(true);
        }
    }
    merged
}

/// Features for one group: one per paragraph (gold only on the answer
/// paragraph), or a single merged feature. `None` if the answer is lost
/// to truncation.
pub fn group_features(
    doc: &SquadDocument,
    q: &Question,
    group: &TrainingGroup,
    vocabs: &Vocabularies,
    max_context: usize,
) -> Option<Vec<PairFeature>> {
    let answer = q.answers.first().filter(|_| !q.is_impossible);
    if group.merged {
        let merged = merge_paragraphs(doc, &group.paragraphs);
        let gold = match answer {
            Some(a) => {
                let (s, e) = a.char_span();
                let base = document_offset(doc, group.gold_paragraph);
                Some(char_span_to_tokens(&merged.tokens, base + s, base + e)?)
            }
            None => None,
        };
        return pair_from_tokens(q, merged.tokens, merged.legal, gold, vocabs, max_context).map(|f| vec![f]);
    }
    let mut out = Vec::with_capacity(group.paragraphs.len());
    for &p in &group.paragraphs {
        let tokens = tokenize(&doc.paragraphs[p].context);
        let gold = match answer {
            Some(a) if p == group.gold_paragraph => {
                let (s, e) = a.char_span();
                Some(char_span_to_tokens(&tokens, s, e)?)
            }
            _ => None,
        };
        let legal = vec![true; tokens.len()];
        out.push(pair_from_tokens(q, tokens, legal, gold, vocabs, max_context)?);
    }
    Some(out)
}
