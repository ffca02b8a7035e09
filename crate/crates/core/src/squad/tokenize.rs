use crate::encoders::Vocabulary;

/// A lowercased token and the half-open character range it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercases and splits on whitespace; alphanumeric runs form tokens and
/// every other visible character is a token of its own. Offsets count
/// characters, not bytes.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run: Option<(usize, String)> = None;
    let mut n = 0;
    for (i, ch) in text.chars().enumerate() {
        n = i + 1;
        if ch.is_alphanumeric() {
            run.get_or_insert_with(|| (i, String::new())).1.extend(ch.to_lowercase());
            continue;
        }
        if let Some((start, text)) = run.take() {
            tokens.push(Token { text, start, end: i });
        }
        if !ch.is_whitespace() {
            tokens.push(Token {
                text: ch.to_lowercase().collect(),
                start: i,
                end: i + 1,
            });
        }
    }
    if let Some((start, text)) = run {
        tokens.push(Token { text, start, end: n });
    }
    tokens
}

/// Tokens of `text` with their vocabulary ids; unknown words map to
/// `[UNK]` and keep their offsets.
pub fn tokenize_and_index(text: &str, vocab: &Vocabulary) -> (Vec<Token>, Vec<usize>) {
    let tokens = tokenize(text);
    let ids = tokens.iter().map(|t| vocab.id(&t.text)).collect();
    (tokens, ids)
}

/// Characters `start..end` of `text`.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Token indices covering the character span `[start, end)`: the first
/// token ending after `start` and the last token beginning before `end`.
pub fn char_span_to_tokens(tokens: &[Token], start: usize, end: usize) -> Option<(usize, usize)> {
    let first = tokens.iter().position(|t| t.end > start)?;
    let last = tokens.iter().rposition(|t| t.start < end)?;
    (first <= last).then_some((first, last))
}
