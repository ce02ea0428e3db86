//! Few-shot prompt construction and the `|`-delimited answer-key grammar.

use serde::{Deserialize, Serialize};

use super::count::parse_count;
use super::{ExtractError, ExtractionAnswer, FieldConfidences};
use crate::ingest::{EarthquakeEvent, RawPost};

pub const TWEET_TAG: &str = "[Tweet]: ";
pub const QUERY_TAG: &str = "[Query]:";
pub const KEY_TAG: &str = "[Key]:";
pub const DEFAULT_MISSING_MARKER: char = '∅';

/// Fixed query labels preceding the event-match question.
pub const DEFAULT_QUERY_FIELDS: [&str; 6] =
    ["deaths", "injuries", "location", "Cities", "Country", "Year"];

/// Number of `|` segments in every key: six fields plus the event question.
pub const KEY_SEGMENTS: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub text: String,
    pub query: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub shots: Vec<Shot>,
    pub query_fields: Vec<String>,
    pub missing_marker: char,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        let fields = DEFAULT_QUERY_FIELDS.join("|");
        let shot = |text: &str, event: &str, key: &str| Shot {
            text: text.into(),
            query: format!("{fields}|{event}?"),
            key: key.into(),
        };
        Self {
            shots: vec![
                shot(
                    "BREAKING: Earthquake of 5.9 magnitude in Nice this morning, killing 600 and 4k injured. #France#NICE",
                    "Haiti Earthquake",
                    "600|4000|Nice|Nice|France|2021|No",
                ),
                shot(
                    "Strong earthquake hits Abra province this morning, at least 4 people died according to officials",
                    "Luzon Earthquake",
                    "4|∅|Abra|Abra|Philippines|2022|Yes",
                ),
                shot(
                    "Remembering the 2010 quake in Port-au-Prince that left over 200,000 dead and 300,000 injured",
                    "Haiti Earthquake",
                    "200000|300000|Port-au-Prince|Port-au-Prince|Haiti|2010|No",
                ),
            ],
            query_fields: DEFAULT_QUERY_FIELDS.iter().map(|s| s.to_string()).collect(),
            missing_marker: DEFAULT_MISSING_MARKER,
        }
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl PromptTemplate {
    /// A template needs at least one shot, one shot exercising the missing
    /// marker, and keys with exactly one segment per query field.
    pub fn validate(&self) -> Result<(), ExtractError> {
        if self.shots.is_empty() {
            return Err(ExtractError::Template("at least one shot is required".into()));
        }
        if self.query_fields.len() + 1 != KEY_SEGMENTS {
            return Err(ExtractError::Template(format!(
                "expected {} query fields, got {}",
                KEY_SEGMENTS - 1,
                self.query_fields.len()
            )));
        }
        for (i, shot) in self.shots.iter().enumerate() {
            let n = shot.key.split('|').count();
            if n != KEY_SEGMENTS {
                return Err(ExtractError::Template(format!(
                    "shot {i} key has {n} segments, expected {KEY_SEGMENTS}"
                )));
            }
        }
        let marker = self.missing_marker.to_string();
        if !self
            .shots
            .iter()
            .any(|s| s.key.split('|').any(|seg| seg.trim() == marker))
        {
            return Err(ExtractError::Template(
                "no shot covers a missing field".into(),
            ));
        }
        Ok(())
    }

    pub fn query_line(&self, event: &EarthquakeEvent) -> String {
        format!("{}|{}?", self.query_fields.join("|"), event.name())
    }

    /// Shots in order, each as tweet/query/key lines separated by a blank
    /// line, followed by the post and the event query. Output is byte-stable.
    pub fn build_prompt(&self, post: &RawPost, event: &EarthquakeEvent) -> Result<String, ExtractError> {
        self.validate()?;
        let mut out = String::new();
        for shot in &self.shots {
            out.push_str(TWEET_TAG);
            out.push_str(&one_line(&shot.text));
            out.push('\n');
            out.push_str(QUERY_TAG);
            out.push_str(&shot.query);
            out.push('\n');
            out.push_str(KEY_TAG);
            out.push_str(&shot.key);
            out.push_str("\n\n");
        }
        out.push_str(TWEET_TAG);
        out.push_str(&one_line(&post.text));
        out.push('\n');
        out.push_str(QUERY_TAG);
        out.push_str(&self.query_line(event));
        Ok(out)
    }

    fn is_missing(&self, segment: &str) -> bool {
        segment.is_empty() || segment.chars().eq(std::iter::once(self.missing_marker))
    }

    fn text_field(&self, segment: &str) -> Option<String> {
        (!self.is_missing(segment)).then(|| segment.to_string())
    }

    /// Parses a key line (with or without the `[Key]:` tag). Counts that do
    /// not convert become absent; a wrong segment count or an unreadable
    /// event answer is an error.
    pub fn parse_key(&self, key_line: &str) -> Result<ExtractionAnswer, ExtractError> {
        let line = key_line.trim();
        let line = line.strip_prefix(KEY_TAG).unwrap_or(line);
        let segs: Vec<&str> = line.split('|').map(str::trim).collect();
        if segs.len() != KEY_SEGMENTS {
            return Err(ExtractError::Parse(format!(
                "expected {KEY_SEGMENTS} segments, got {}",
                segs.len()
            )));
        }
        let count = |s: &str| if self.is_missing(s) { None } else { parse_count(s) };
        let event_match = match segs[6].to_ascii_lowercase().as_str() {
            "yes" | "y" => true,
            "no" | "n" => false,
            s if self.is_missing(s) => false,
            other => {
                return Err(ExtractError::Parse(format!(
                    "unrecognised event answer {other:?}"
                )))
            }
        };
        Ok(ExtractionAnswer {
            deaths: count(segs[0]),
            injuries: count(segs[1]),
            location: self.text_field(segs[2]),
            city: self.text_field(segs[3]),
            country: self.text_field(segs[4]),
            year: if self.is_missing(segs[5]) {
                None
            } else {
                segs[5].parse().ok()
            },
            event_match,
            field_confidences: FieldConfidences::uniform(1.0),
        })
    }

    pub fn render_key(&self, answer: &ExtractionAnswer) -> String {
        let marker = self.missing_marker.to_string();
        let opt = |v: Option<String>| v.unwrap_or_else(|| marker.clone());
        [
            opt(answer.deaths.map(|v| v.to_string())),
            opt(answer.injuries.map(|v| v.to_string())),
            opt(answer.location.clone()),
            opt(answer.city.clone()),
            opt(answer.country.clone()),
            opt(answer.year.map(|v| v.to_string())),
            if answer.event_match { "Yes" } else { "No" }.to_string(),
        ]
        .join("|")
    }
}
