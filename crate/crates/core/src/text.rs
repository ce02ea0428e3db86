//! Small text utilities shared by the classifier, the rule extractor and the
//! independence scorer.

use std::collections::HashSet;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF)
}

/// Lowercases, drops URLs and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&lower);
    }
    out
}

/// Character shingles of width `width`. Strings shorter than `width` yield a
/// single shingle holding the whole string (nothing for the empty string).
pub fn shingles(text: &str, width: usize) -> HashSet<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return HashSet::new();
    }
    if chars.len() < width {
        return std::iter::once(text.to_string()).collect();
    }
    chars.windows(width).map(|w| w.iter().collect()).collect()
}

pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    /// Starts with an ASCII digit, e.g. `29`, `2,200`, `4k`.
    Number,
    Word,
    /// A run of CJK characters, kept whole because those scripts do not
    /// separate words with spaces.
    Cjk,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub kind: TokenKind,
}

/// Splits text into number, word and CJK-run tokens; punctuation and
/// whitespace separate tokens and are dropped. Commas and dots stay inside a
/// number when followed by a digit.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        let kind = if c.is_ascii_digit() {
            TokenKind::Number
        } else if is_cjk(c) {
            TokenKind::Cjk
        } else if c.is_alphabetic() {
            TokenKind::Word
        } else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            let keep = match kind {
                TokenKind::Number => {
                    c.is_ascii_alphanumeric()
                        || ((c == ',' || c == '.')
                            && chars.get(j + 1).is_some_and(|&(_, n)| n.is_ascii_digit()))
                }
                TokenKind::Cjk => is_cjk(c),
                TokenKind::Word => c.is_alphabetic() && !is_cjk(c),
            };
            if !keep {
                break;
            }
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |&(pos, _)| pos);
        tokens.push(Token {
            text: &text[start..end],
            kind,
        });
        i = j;
    }
    tokens
}
