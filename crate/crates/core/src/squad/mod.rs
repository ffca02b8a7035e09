//! SQuAD v1.1 / v2.0 ingestion and feature building.

mod batch;
pub(crate) mod features;
mod sampling;
mod tokenize;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use batch::{batch_iterator, Batches};
pub use features::{
    build_features, build_packed, build_packed_query, build_pair, build_pair_query, featurize, Feature, FeatureSet, PackedFeature, PairFeature,
    Vocabularies, SEGMENT_CONTEXT, SEGMENT_QUESTION,
};
pub use sampling::{
    document_offset, group_features, merge_paragraphs, sample_paragraphs, MergedSequence, TrainingGroup,
};
pub use tokenize::{char_slice, char_span_to_tokens, tokenize, tokenize_and_index, Token};

use crate::error::{Error, Result};

/// Maximum distance, in characters, searched when repairing an answer
/// offset that does not point at its text.
pub const OFFSET_REPAIR_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
}

impl Answer {
    /// Character range `[start, end)` in the paragraph context.
    pub fn char_span(&self) -> (usize, usize) {
        (self.answer_start, self.answer_start + self.text.chars().count())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub answers: Vec<Answer>,
    pub is_impossible: bool,
    pub plausible_answers: Option<Vec<Answer>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paragraph {
    pub context: String,
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquadDocument {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

impl SquadDocument {
    pub fn questions(&self) -> impl Iterator<Item = (usize, &Question)> {
        self.paragraphs
            .iter()
            .enumerate()
            .flat_map(|(p, para)| para.questions.iter().map(move |q| (p, q)))
    }

    /// Paragraph contexts joined by newlines; the text that document-level
    /// character offsets index.
    pub fn text(&self) -> String {
        self.paragraphs
            .iter()
            .map(|p| p.context.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquadDataset {
    pub version: String,
    pub documents: Vec<SquadDocument>,
    /// Answers whose offsets were moved during parsing.
    pub repaired_offsets: usize,
}

impl SquadDataset {
    /// True for v2.0 data, where `is_impossible` is part of the schema.
    pub fn is_v2(&self) -> bool {
        self.version.starts_with("v2") || self.version.starts_with('2')
    }

    pub fn questions(&self) -> impl Iterator<Item = &Question> {
        self.documents.iter().flat_map(|d| d.questions().map(|(_, q)| q))
    }

    pub fn question_count(&self) -> usize {
        self.questions().count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let raw = RawFile {
            version: Some(self.version.clone()),
            data: self
                .documents
                .iter()
                .map(|d| RawArticle {
                    title: d.title.clone(),
                    paragraphs: d
                        .paragraphs
                        .iter()
                        .map(|p| RawParagraph {
                            context: p.context.clone(),
                            qas: p
                                .questions
                                .iter()
                                .map(|q| RawQa {
                                    id: q.id.clone(),
                                    question: q.text.clone(),
                                    answers: q.answers.clone(),
                                    is_impossible: self.is_v2().then_some(q.is_impossible),
                                    plausible_answers: q.plausible_answers.clone(),
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_value(raw).expect("dataset serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    data: Vec<RawArticle>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<RawParagraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawParagraph {
    context: String,
    qas: Vec<RawQa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawQa {
    id: String,
    question: String,
    answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_impossible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plausible_answers: Option<Vec<Answer>>,
}

/// Moves `answer.answer_start` to the nearest position within
/// [`OFFSET_REPAIR_WINDOW`] where the context spells the answer text.
/// Returns whether the offset changed, or `None` when no match is found.
fn repair_offset(context: &[char], answer: &mut Answer) -> Option<bool> {
    let text: Vec<char> = answer.text.chars().collect();
    let matches = |s: usize| context.get(s..s + text.len()) == Some(&text[..]);
    if matches(answer.answer_start) {
        return Some(false);
    }
    for delta in 1..=OFFSET_REPAIR_WINDOW {
        for s in [answer.answer_start.checked_sub(delta), answer.answer_start.checked_add(delta)]
            .into_iter()
            .flatten()
        {
            if matches(s) {
                answer.answer_start = s;
                return Some(true);
            }
        }
    }
    None
}

/// Parses a SQuAD JSON file. Schema violations report the JSON path of the
/// offending value; answer offsets that miss their text by a few characters
/// are repaired with a warning.
pub fn parse_squad_json(bytes: &[u8]) -> Result<SquadDataset> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let raw: RawFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    let has_flags = raw
        .data
        .iter()
        .flat_map(|a| &a.paragraphs)
        .flat_map(|p| &p.qas)
        .any(|q| q.is_impossible.is_some());
    let version = raw
        .version
        .unwrap_or_else(|| if has_flags { "v2.0".into() } else { "1.1".into() });

    let mut repaired = 0;
    let mut documents = Vec::with_capacity(raw.data.len());
    for (a, article) in raw.data.into_iter().enumerate() {
        let mut paragraphs = Vec::with_capacity(article.paragraphs.len());
        for (p, para) in article.paragraphs.into_iter().enumerate() {
            let chars: Vec<char> = para.context.chars().collect();
            let mut questions = Vec::with_capacity(para.qas.len());
            for (k, qa) in para.qas.into_iter().enumerate() {
                let is_impossible = qa.is_impossible.unwrap_or(false);
                if is_impossible && !qa.answers.is_empty() {
                    return Err(Error::InconsistentGold(qa.id));
                }
                let mut answers = qa.answers;
                for (l, ans) in answers.iter_mut().enumerate() {
                    match repair_offset(&chars, ans) {
                        Some(true) => {
                            log::warn!("{}: answer offset repaired to {}", qa.id, ans.answer_start);
                            repaired += 1;
                        }
                        Some(false) => {}
                        None => {
                            return Err(Error::Schema {
                                path: format!("data[{a}].paragraphs[{p}].qas[{k}].answers[{l}]"),
                                msg: format!("answer `{}` not found near offset {}", ans.text, ans.answer_start),
                            })
                        }
                    }
                }
                questions.push(Question {
                    id: qa.id,
                    text: qa.question,
                    answers,
                    is_impossible,
                    plausible_answers: qa.plausible_answers,
                });
            }
            paragraphs.push(Paragraph {
                context: para.context,
                questions,
            });
        }
        documents.push(SquadDocument {
            title: article.title,
            paragraphs,
        });
    }
    Ok(SquadDataset {
        version,
        documents,
        repaired_offsets: repaired,
    })
}

pub fn load_squad(path: &Path) -> Result<SquadDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_squad_json(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub paragraphs: usize,
    pub questions: usize,
    pub unanswerable: usize,
    /// Mean whitespace-separated words per paragraph context.
    pub avg_context_words: f64,
    pub avg_question_words: f64,
}

pub fn corpus_stats(data: &SquadDataset) -> CorpusStats {
    let paragraphs: Vec<&Paragraph> = data.documents.iter().flat_map(|d| &d.paragraphs).collect();
    let questions: Vec<&Question> = data.questions().collect();
    let words = |s: &str| s.split_whitespace().count() as f64;
    let mean = |total: f64, n: usize| if n == 0 { 0.0 } else { total / n as f64 };
    CorpusStats {
        documents: data.documents.len(),
        paragraphs: paragraphs.len(),
        questions: questions.len(),
        unanswerable: questions.iter().filter(|q| q.is_impossible).count(),
        avg_context_words: mean(paragraphs.iter().map(|p| words(&p.context)).sum(), paragraphs.len()),
        avg_question_words: mean(questions.iter().map(|q| words(&q.text)).sum(), questions.len()),
    }
}
