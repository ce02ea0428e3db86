//! Deterministic rule extractor used when no completion backend is configured.
//!
//! Counts are paired with casualty lexemes at most three tokens away. When a
//! kind has several candidates the one nearest a lexeme wins, ties going to
//! the earliest count. The extractor cannot tell an earthquake's toll from
//! another disaster's toll mentioned in the same post.

use serde::Deserialize;

use super::count::parse_count;
use super::{CasualtyKind, ExtractError, ExtractionAnswer, FieldConfidences};
use crate::ingest::{EarthquakeEvent, RawPost};
use crate::text::{is_cjk, tokenize, Token, TokenKind};

pub const RULE_CONFIDENCE: f64 = 0.6;
const WINDOW: usize = 3;

#[derive(Debug, Clone)]
struct Lexeme {
    kind: CasualtyKind,
    /// Lowercased words for Latin-script lexemes.
    words: Vec<String>,
    /// Set for lexemes written in CJK scripts; matched as substrings.
    cjk: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    lexemes: Vec<Lexeme>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self::from_csv(include_str!("../../../../fixtures/lexicon.csv")).expect("bundled lexicon is valid")
    }

    /// Reads a `language,kind,lexeme` CSV.
    pub fn from_csv(data: &str) -> Result<Self, ExtractError> {
        #[derive(Deserialize)]
        struct Row {
            #[allow(dead_code)]
            language: String,
            kind: String,
            lexeme: String,
        }
        let mut lexicon = Self::default();
        let mut reader = csv::Reader::from_reader(data.as_bytes());
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| ExtractError::Resource(format!("lexicon: {e}")))?;
            let kind = row.kind.trim().parse().map_err(ExtractError::Resource)?;
            let lexeme = row.lexeme.trim();
            if lexeme.is_empty() {
                continue;
            }
            lexicon.lexemes.push(if lexeme.chars().any(is_cjk) {
                Lexeme {
                    kind,
                    words: vec![],
                    cjk: Some(lexeme.to_string()),
                }
            } else {
                Lexeme {
                    kind,
                    words: lexeme.split_whitespace().map(str::to_lowercase).collect(),
                    cjk: None,
                }
            });
        }
        Ok(lexicon)
    }

    /// Kinds whose lexeme starts at token `i`.
    fn kinds_at(&self, tokens: &[Token<'_>], lower: &[String], i: usize) -> Vec<CasualtyKind> {
        let mut kinds = Vec::new();
        for lex in &self.lexemes {
            let hit = match &lex.cjk {
                Some(s) => tokens[i].kind == TokenKind::Cjk && tokens[i].text.contains(s.as_str()),
                None => {
                    tokens[i].kind == TokenKind::Word
                        && i + lex.words.len() <= tokens.len()
                        && lex.words.iter().zip(&lower[i..]).all(|(w, t)| w == t)
                }
            };
            if hit && !kinds.contains(&lex.kind) {
                kinds.push(lex.kind);
            }
        }
        kinds
    }
}

#[derive(Debug, Clone)]
struct GazetteerEntry {
    name: String,
    city: Option<String>,
    country: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
}

impl Gazetteer {
    pub fn bundled() -> Self {
        Self::from_csv(include_str!("../../../../fixtures/gazetteer.csv"))
            .expect("bundled gazetteer is valid")
    }

    /// Reads a `name,city,country` CSV.
    pub fn from_csv(data: &str) -> Result<Self, ExtractError> {
        #[derive(Deserialize)]
        struct Row {
            name: String,
            city: String,
            country: String,
        }
        let nonempty = |s: String| {
            let s = s.trim().to_string();
            (!s.is_empty()).then_some(s)
        };
        let mut entries = Vec::new();
        let mut reader = csv::Reader::from_reader(data.as_bytes());
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| ExtractError::Resource(format!("gazetteer: {e}")))?;
            entries.push(GazetteerEntry {
                name: row.name.trim().to_string(),
                city: nonempty(row.city),
                country: nonempty(row.country),
            });
        }
        Ok(Self { entries })
    }

    /// Earliest gazetteer names found in `text`. Latin-script names must
    /// match case-sensitively on word boundaries (so only capitalised
    /// mentions count); CJK names match as substrings.
    fn lookup(&self, text: &str) -> (Option<String>, Option<String>) {
        let mut hits: Vec<(usize, &GazetteerEntry)> = Vec::new();
        for entry in &self.entries {
            if entry.name.is_empty() {
                continue;
            }
            let cjk = entry.name.chars().any(is_cjk);
            let found = text.match_indices(entry.name.as_str()).find(|&(pos, m)| {
                if cjk {
                    return true;
                }
                let before = text[..pos].chars().next_back();
                let after = text[pos + m.len()..].chars().next();
                !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
            });
            if let Some((pos, _)) = found {
                hits.push((pos, entry));
            }
        }
        hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.name.len().cmp(&a.1.name.len())));
        let city = hits.iter().find_map(|(_, e)| e.city.clone());
        let country = hits.iter().find_map(|(_, e)| e.country.clone());
        (city, country)
    }
}

#[derive(Debug, Clone)]
pub struct RuleExtractor {
    pub lexicon: Lexicon,
    pub gazetteer: Gazetteer,
    pub confidence: f64,
}

impl Default for RuleExtractor {
    fn default() -> Self {
        Self {
            lexicon: Lexicon::bundled(),
            gazetteer: Gazetteer::bundled(),
            confidence: RULE_CONFIDENCE,
        }
    }
}

impl RuleExtractor {
    fn pick(
        &self,
        counts: &[(usize, u64)],
        lexemes: &[(usize, CasualtyKind)],
        kind: CasualtyKind,
    ) -> Option<u64> {
        let mut best: Option<(usize, usize, u64)> = None;
        for &(ci, value) in counts {
            let nearest = lexemes
                .iter()
                .filter(|(_, k)| *k == kind)
                .map(|(li, _)| ci.abs_diff(*li))
                .filter(|&d| (1..=WINDOW).contains(&d))
                .min();
            if let Some(d) = nearest {
                if best.is_none_or(|(bd, bi, _)| (d, ci) < (bd, bi)) {
                    best = Some((d, ci, value));
                }
            }
        }
        best.map(|(_, _, v)| v)
    }

    /// Total and deterministic. `None` when no count sits next to a casualty
    /// lexeme.
    pub fn extract(&self, post: &RawPost, event: &EarthquakeEvent, stage1_passed: bool) -> Option<ExtractionAnswer> {
        let tokens = tokenize(&post.text);
        let lower: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
        let counts: Vec<(usize, u64)> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind != TokenKind::Cjk)
            .filter_map(|(i, t)| parse_count(t.text).map(|v| (i, v)))
            .collect();
        let lexemes: Vec<(usize, CasualtyKind)> = (0..tokens.len())
            .flat_map(|i| {
                self.lexicon
                    .kinds_at(&tokens, &lower, i)
                    .into_iter()
                    .map(move |k| (i, k))
            })
            .collect();
        let deaths = self.pick(&counts, &lexemes, CasualtyKind::Deaths);
        let injuries = self.pick(&counts, &lexemes, CasualtyKind::Injuries);
        if deaths.is_none() && injuries.is_none() {
            return None;
        }
        let (city, country) = self.gazetteer.lookup(&post.text);
        Some(ExtractionAnswer {
            deaths,
            injuries,
            location: city.clone().or_else(|| country.clone()),
            city,
            country,
            year: Some(event.year()),
            event_match: stage1_passed,
            field_confidences: FieldConfidences::uniform(self.confidence),
        })
    }
}
