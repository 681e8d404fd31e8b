//! Whitespace-plus-punctuation tokenizer shared by every component that
//! deals with token-index spans.
//!
//! A token is either a run of alphanumerics (which may contain `.`, `:` or
//! `'` between two alphanumerics, so `5.99`, `10:35` and `don't` stay whole,
//! and may carry a leading `$` when followed by a digit) or a single
//! punctuation character.

use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte range in the source string.
    pub range: Range<usize>,
}

pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| -> usize {
        if i + 1 < chars.len() {
            chars[i + 1].0
        } else {
            text.len()
        }
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let dollar_number = c == '$' && i + 1 < chars.len() && chars[i + 1].1.is_ascii_digit();
        if c.is_alphanumeric() || dollar_number {
            let mut j = i + 1;
            while j < chars.len() {
                let cj = chars[j].1;
                let joiner = matches!(cj, '.' | ':' | '\'')
                    && j + 1 < chars.len()
                    && chars[j + 1].1.is_alphanumeric()
                    && chars[j - 1].1.is_alphanumeric();
                if cj.is_alphanumeric() || joiner {
                    j += 1;
                } else {
                    break;
                }
            }
            let end = end_of(j - 1);
            out.push(Token {
                text: text[start..end].to_string(),
                range: start..end,
            });
            i = j;
        } else {
            let end = end_of(i);
            out.push(Token {
                text: text[start..end].to_string(),
                range: start..end,
            });
            i += 1;
        }
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

/// Canonical surface form of an entity value: its tokens joined by single
/// spaces.
pub fn normalize_value(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Case-folded canonical form, used for all value comparisons.
pub fn fold_value(text: &str) -> String {
    normalize_value(text).to_lowercase()
}
