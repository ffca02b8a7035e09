use std::path::Path;

use super::tokenize::{char_span_to_tokens, tokenize, Token};
use super::{Question, SquadDataset};
use crate::config::Architecture;
use crate::encoders::{Vocabulary, CLS, PAD, SEP};
use crate::error::Result;

pub const SEGMENT_QUESTION: u8 = 0;
pub const SEGMENT_CONTEXT: u8 = 1;

/// Word and character vocabularies for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabularies {
    pub words: Vocabulary,
    pub chars: Vocabulary,
}

impl Vocabularies {
    /// Word vocabulary over questions and contexts (optionally capped),
    /// character vocabulary over every word.
    pub fn build(data: &SquadDataset, min_count: usize, max_words: Option<usize>) -> Self {
        let mut words = Vec::new();
        for doc in &data.documents {
            for p in &doc.paragraphs {
                words.extend(tokenize(&p.context).into_iter().map(|t| t.text));
                for q in &p.questions {
                    words.extend(tokenize(&q.text).into_iter().map(|t| t.text));
                }
            }
        }
        let mut vocab = Vocabulary::build(words.iter().map(String::as_str), min_count);
        if let Some(max) = max_words {
            vocab = vocab.truncated(max);
        }
        let chars = Vocabulary::build_chars(words.iter().map(String::as_str));
        Vocabularies { words: vocab, chars }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.words.save(&dir.join("vocab.txt"))?;
        self.chars.save(&dir.join("chars.txt"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Vocabularies {
            words: Vocabulary::load(&dir.join("vocab.txt"))?,
            chars: Vocabulary::load(&dir.join("chars.txt"))?,
        })
    }

    /// Character ids of a token; special tokens are a single reserved id.
    pub fn char_ids(&self, token: &str) -> Vec<usize> {
        let id = self.words.id(token);
        if id < crate::encoders::PARSEP + 1 && token.starts_with('[') {
            return vec![id];
        }
        self.chars.char_ids(token)
    }
}

/// Question and context as separate sequences (BiDAF, DocumentQA).
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature {
    pub qid: String,
    pub question: Vec<usize>,
    pub question_chars: Vec<Vec<usize>>,
    pub context: Vec<usize>,
    pub context_chars: Vec<Vec<usize>>,
    /// Context tokens with character offsets into the source text.
    pub tokens: Vec<Token>,
    /// Positions that may start or end an answer.
    pub legal: Vec<bool>,
    pub gold: Option<(usize, usize)>,
    pub is_impossible: bool,
}

/// `[CLS] question [SEP] context [SEP]` padded to a fixed length (ALBERT).
#[derive(Debug, Clone, PartialEq)]
pub struct PackedFeature {
    pub qid: String,
    pub ids: Vec<usize>,
    pub segments: Vec<u8>,
    /// Character offsets of context positions in the paragraph.
    pub offsets: Vec<Option<(usize, usize)>>,
    pub context_mask: Vec<bool>,
    /// Number of non-padding positions.
    pub len: usize,
    /// Gold token span; `(0, 0)` (the CLS position) when unanswerable.
    pub gold: (usize, usize),
    pub is_impossible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Pair(PairFeature),
    Packed(PackedFeature),
}

impl Feature {
    pub fn qid(&self) -> &str {
        match self {
            Feature::Pair(f) => &f.qid,
            Feature::Packed(f) => &f.qid,
        }
    }
}

fn gold_chars(q: &Question) -> Option<(usize, usize)> {
    if q.is_impossible {
        return None;
    }
    q.answers.first().map(|a| a.char_span())
}

pub(crate) fn pair_from_tokens(
    q: &Question,
    mut tokens: Vec<Token>,
    mut legal: Vec<bool>,
    gold: Option<(usize, usize)>,
    vocabs: &Vocabularies,
    max_context: usize,
) -> Option<PairFeature> {
    tokens.truncate(max_context);
    legal.truncate(max_context);
    if tokens.is_empty() {
        return None;
    }
    let gold = match gold {
        Some(t) if t.1 >= tokens.len() => return None,
        g => g,
    };
    let qtok = tokenize(&q.text);
    Some(PairFeature {
        qid: q.id.clone(),
        question: qtok.iter().map(|t| vocabs.words.id(&t.text)).collect(),
        question_chars: qtok.iter().map(|t| vocabs.char_ids(&t.text)).collect(),
        context: tokens.iter().map(|t| vocabs.words.id(&t.text)).collect(),
        context_chars: tokens.iter().map(|t| vocabs.char_ids(&t.text)).collect(),
        tokens,
        legal,
        gold,
        is_impossible: q.is_impossible,
    })
}

/// Separate question/context feature with at most `max_context` context
/// tokens. `None` when the gold answer does not survive truncation.
pub fn build_pair(q: &Question, context: &str, vocabs: &Vocabularies, max_context: usize) -> Option<PairFeature> {
    let tokens = tokenize(context);
    let gold = match gold_chars(q) {
        Some((s, e)) => Some(char_span_to_tokens(&tokens, s, e)?),
        None => None,
    };
    let legal = vec![true; tokens.len()];
    pair_from_tokens(q, tokens, legal, gold, vocabs, max_context)
}

/// Packed feature of exactly `s_len` positions, truncating the context
/// tail. `None` when the question leaves no room or the answer is cut off.
pub fn build_packed(q: &Question, context: &str, vocabs: &Vocabularies, s_len: usize) -> Option<PackedFeature> {
    let qtok = tokenize(&q.text);
    let mut ctok = tokenize(context);
    if qtok.len() + 3 >= s_len || ctok.is_empty() {
        return None;
    }
    let gold_tokens = match gold_chars(q) {
        Some((s, e)) => Some(char_span_to_tokens(&ctok, s, e)?),
        None => None,
    };
    ctok.truncate(s_len - qtok.len() - 3);
    let base = qtok.len() + 2;
    let gold = match gold_tokens {
        Some((_, e)) if e >= ctok.len() => return None,
        Some((s, e)) => (base + s, base + e),
        None => (0, 0),
    };

    let mut ids = Vec::with_capacity(s_len);
    let mut segments = Vec::with_capacity(s_len);
    let mut offsets = Vec::with_capacity(s_len);
    ids.push(CLS);
    ids.extend(qtok.iter().map(|t| vocabs.words.id(&t.text)));
    ids.push(SEP);
    segments.resize(ids.len(), SEGMENT_QUESTION);
    offsets.resize(ids.len(), None);
    for t in &ctok {
        ids.push(vocabs.words.id(&t.text));
        segments.push(SEGMENT_CONTEXT);
        offsets.push(Some((t.start, t.end)));
    }
    ids.push(SEP);
    segments.push(SEGMENT_CONTEXT);
    offsets.push(None);
    let len = ids.len();
    ids.resize(s_len, PAD);
    segments.resize(s_len, SEGMENT_QUESTION);
    offsets.resize(s_len, None);
    let context_mask = offsets.iter().map(Option::is_some).collect();
    Some(PackedFeature {
        qid: q.id.clone(),
        ids,
        segments,
        offsets,
        context_mask,
        len,
        gold,
        is_impossible: q.is_impossible,
    })
}

/// Packed feature for inference: no gold span is needed, so the context
/// is only truncated, never rejected for losing the answer.
pub fn build_packed_query(q: &Question, context: &str, vocabs: &Vocabularies, s_len: usize) -> Option<PackedFeature> {
    let unlabeled = Question {
        answers: Vec::new(),
        is_impossible: true,
        plausible_answers: None,
        ..q.clone()
    };
    build_packed(&unlabeled, context, vocabs, s_len)
}

/// Pair feature for inference, with every context token legal.
pub fn build_pair_query(q: &Question, context: &str, vocabs: &Vocabularies, max_context: usize) -> Option<PairFeature> {
    let tokens = tokenize(context);
    let legal = vec![true; tokens.len()];
    pair_from_tokens(q, tokens, legal, None, vocabs, max_context)
}

/// Feature in the layout `arch` reads; `s_len` caps the packed length
/// (ALBERT) or the context length (BiDAF, DocumentQA).
pub fn build_features(
    q: &Question,
    context: &str,
    vocabs: &Vocabularies,
    s_len: usize,
    arch: Architecture,
) -> Option<Feature> {
    match arch {
        Architecture::Albert => build_packed(q, context, vocabs, s_len).map(Feature::Packed),
        Architecture::Bidaf | Architecture::Docqa => build_pair(q, context, vocabs, s_len).map(Feature::Pair),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub features: Vec<Feature>,
    /// Questions whose answer was truncated away.
    pub dropped: usize,
}

/// One feature per question, each read against its own paragraph.
pub fn featurize(data: &SquadDataset, vocabs: &Vocabularies, s_len: usize, arch: Architecture) -> FeatureSet {
    let mut set = FeatureSet::default();
    for doc in &data.documents {
        for p in &doc.paragraphs {
            for q in &p.questions {
                match build_features(q, &p.context, vocabs, s_len, arch) {
                    Some(f) => set.features.push(f),
                    None => set.dropped += 1,
                }
            }
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::squad::Answer;

    fn question(text: &str, answer: Option<(&str, usize)>) -> Question {
        Question {
            id: "q".into(),
            text: text.into(),
            answers: answer
                .map(|(t, s)| {
                    vec![Answer {
                        text: t.into(),
                        answer_start: s,
                    }]
                })
                .unwrap_or_default(),
            is_impossible: answer.is_none(),
            plausible_answers: None,
        }
    }

    fn vocabs() -> Vocabularies {
        let words = Vocabulary::build(["who", "has", "it", "anna", "a", "red", "ball", "."], 1);
        let chars = Vocabulary::build_chars(["who", "has", "it", "anna", "a", "red", "ball", "."]);
        Vocabularies { words, chars }
    }

    #[test]
    fn packed_layout_counts() {
        let q = question("who has it", Some(("red", 9)));
        let f = build_packed(&q, "anna has red ball .", &vocabs(), 16).unwrap();
        assert_eq!(f.len, 1 + 3 + 1 + 5 + 1);
        assert_eq!(f.ids.len(), 16);
        assert_eq!(f.ids[0], CLS);
        assert_eq!(f.ids[4], SEP);
        assert_eq!(f.ids[10], SEP);
        assert!(f.ids[11..].iter().all(|&i| i == PAD));
        assert_eq!(f.context_mask.iter().filter(|&&m| m).count(), 5);
    }

    #[test]
    fn gold_maps_through_offsets() {
        // "anna has red ball .": chars 5..8 are "has"
        let q = question("who has it", Some(("has", 5)));
        let f = build_packed(&q, "anna has red ball .", &vocabs(), 16).unwrap();
        assert_eq!(f.gold, (6, 6));
        assert_eq!(f.offsets[6], Some((5, 8)));
        let p = build_pair(&q, "anna has red ball .", &vocabs(), 50).unwrap();
        assert_eq!(p.gold, Some((1, 1)));
    }

    #[test]
    fn unanswerable_points_at_cls() {
        let q = question("who has it", None);
        let f = build_packed(&q, "anna has red ball .", &vocabs(), 16).unwrap();
        assert_eq!(f.gold, (0, 0));
        assert!(f.is_impossible);
    }

    #[test]
    fn truncation_drops_unreachable_answers() {
        let q = question("who has it", Some(("ball", 13)));
        assert!(build_packed(&q, "anna has red ball .", &vocabs(), 9).is_none());
        assert!(build_packed(&q, "anna has red ball .", &vocabs(), 10).is_some());
        assert!(build_pair(&q, "anna has red ball .", &vocabs(), 3).is_none());
        // question is never truncated
        assert!(build_packed(&q, "anna has red ball .", &vocabs(), 6).is_none());
    }
}
