//! SQuAD scoring and span decoding.

mod predictions;

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde_json::json;

pub use predictions::{parse_predictions, Predictions};

use crate::error::{Error, Result};
use crate::squad::SquadDataset;

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"))
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the as whole
/// words, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p == g { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match and token F1 against the best-matching gold answer. An
/// empty gold list means the question has no answer, scored against `""`.
pub fn em_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> (f64, f64) {
    let pred = normalize_answer(prediction);
    let golds: Vec<String> = if golds.is_empty() {
        vec![String::new()]
    } else {
        golds.iter().map(|g| normalize_answer(g.as_ref())).collect()
    };
    let em = golds.contains(&pred) as u8 as f64;
    let f1 = golds.iter().map(|g| token_f1(&pred, g)).fold(0.0, f64::max);
    (em, f1)
}

/// Best `(start, end, score)` with `start ≤ end < start + max_len`, both
/// positions legal, maximizing `start_logits[s] + end_logits[e]`. Ties go
/// to the smallest start, then the smallest end.
pub fn decode_best_span(
    start_logits: &[f64],
    end_logits: &[f64],
    legal: &[bool],
    max_len: usize,
) -> Result<(usize, usize, f64)> {
    let n = start_logits.len();
    if end_logits.len() != n || legal.len() != n {
        return Err(Error::Shape {
            op: "decode_best_span",
            lhs: vec![n, end_logits.len()],
            rhs: vec![legal.len()],
        });
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for s in (0..n).filter(|&s| legal[s]) {
        for e in s..n.min(s + max_len) {
            if !legal[e] {
                continue;
            }
            let score = start_logits[s] + end_logits[e];
            if best.is_none_or(|b| score > b.2) {
                best = Some((s, e, score));
            }
        }
    }
    best.ok_or(Error::NoLegalSpan)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubScore {
    pub exact: f64,
    pub f1: f64,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionScore {
    pub id: String,
    pub exact: f64,
    pub f1: f64,
    pub has_answer: bool,
}

/// Dataset-level scores as fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub exact: f64,
    pub f1: f64,
    pub total: usize,
    pub has_ans: Option<SubScore>,
    /// Absent for v1.1 data, which has no unanswerable questions.
    pub no_ans: Option<SubScore>,
    /// Gold questions without a prediction (scored zero).
    pub missing: usize,
    pub per_question: Vec<QuestionScore>,
}

fn sub_score(scores: &[&QuestionScore]) -> Option<SubScore> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(SubScore {
        exact: scores.iter().map(|s| s.exact).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
        total: scores.len(),
    })
}

impl MetricReport {
    /// Keys `exact`, `f1`, `total`, `HasAns_*`, `NoAns_*` as fractions,
    /// with `*_pct` percentage twins.
    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        let mut put = |prefix: &str, s: SubScore| {
            m.insert(format!("{prefix}exact"), json!(s.exact));
            m.insert(format!("{prefix}f1"), json!(s.f1));
            m.insert(format!("{prefix}total"), json!(s.total));
            m.insert(format!("{prefix}exact_pct"), json!(100.0 * s.exact));
            m.insert(format!("{prefix}f1_pct"), json!(100.0 * s.f1));
        };
        put(
            "",
            SubScore {
                exact: self.exact,
                f1: self.f1,
                total: self.total,
            },
        );
        if let Some(s) = self.has_ans {
            put("HasAns_", s);
        }
        if let Some(s) = self.no_ans {
            put("NoAns_", s);
        }
        m.insert("missing".into(), json!(self.missing));
        serde_json::Value::Object(m)
    }
}

/// Macro-averaged EM/F1 over every gold question. Missing predictions
/// score zero, or fail when `strict`.
pub fn evaluate_predictions(predictions: &Predictions, gold: &SquadDataset, strict: bool) -> Result<MetricReport> {
    let questions: Vec<_> = gold.questions().collect();
    if questions.is_empty() {
        return Err(Error::Empty("gold dataset"));
    }
    let mut missing = 0;
    for q in &questions {
        if predictions.get(&q.id).is_none() {
            if strict {
                return Err(Error::MissingPrediction(q.id.clone()));
            }
            missing += 1;
        }
    }
    let per_question: Vec<QuestionScore> = questions
        .par_iter()
        .map(|q| {
            let golds: Vec<&str> = if q.is_impossible {
                Vec::new()
            } else {
                q.answers.iter().map(|a| a.text.as_str()).collect()
            };
            let (exact, f1) = match predictions.get(&q.id) {
                Some(p) => em_f1(p, &golds),
                None => (0.0, 0.0),
            };
            QuestionScore {
                id: q.id.clone(),
                exact,
                f1,
                has_answer: !q.is_impossible,
            }
        })
        .collect();
    let all: Vec<&QuestionScore> = per_question.iter().collect();
    let overall = sub_score(&all).expect("non-empty");
    let has: Vec<&QuestionScore> = per_question.iter().filter(|s| s.has_answer).collect();
    let no: Vec<&QuestionScore> = per_question.iter().filter(|s| !s.has_answer).collect();
    Ok(MetricReport {
        exact: overall.exact,
        f1: overall.f1,
        total: overall.total,
        has_ans: sub_score(&has),
        no_ans: if gold.is_v2() { sub_score(&no) } else { None },
        missing,
        per_question,
    })
}
