//! Structured casualty extraction from filtered posts.

mod count;
mod llm;
mod prompt;
mod rules;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EarthquakeEvent, RawPost};

pub use count::parse_count;
pub use llm::{
    extract_batch, Completion, CompletionClient, CompletionRequest, HttpCompletionClient,
    LlmExtractor,
};
pub use prompt::{PromptTemplate, Shot, DEFAULT_MISSING_MARKER, KEY_SEGMENTS};
pub use rules::{Gazetteer, Lexicon, RuleExtractor, RULE_CONFIDENCE};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("template error: {0}")]
    Template(String),
    #[error("key parse error: {0}")]
    Parse(String),
    #[error("retryable completion error: {0}")]
    Retryable(String),
    #[error("completion backend error: {0}")]
    Backend(String),
    #[error("resource error: {0}")]
    Resource(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CasualtyKind {
    Deaths,
    Injuries,
}

impl CasualtyKind {
    pub const ALL: [CasualtyKind; 2] = [CasualtyKind::Deaths, CasualtyKind::Injuries];

    pub fn as_str(self) -> &'static str {
        match self {
            CasualtyKind::Deaths => "deaths",
            CasualtyKind::Injuries => "injuries",
        }
    }
}

impl std::str::FromStr for CasualtyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deaths" => Ok(CasualtyKind::Deaths),
            "injuries" => Ok(CasualtyKind::Injuries),
            other => Err(format!("unknown casualty kind {other:?}")),
        }
    }
}

/// Per-field confidence (mean token probability for model answers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfidences {
    pub deaths: f64,
    pub injuries: f64,
    pub location: f64,
    pub city: f64,
    pub country: f64,
    pub year: f64,
    pub event_match: f64,
}

impl FieldConfidences {
    pub fn uniform(value: f64) -> Self {
        Self::from_array([value; 7])
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            deaths: v[0],
            injuries: v[1],
            location: v[2],
            city: v[3],
            country: v[4],
            year: v[5],
            event_match: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.deaths,
            self.injuries,
            self.location,
            self.city,
            self.country,
            self.year,
            self.event_match,
        ]
    }

    pub fn for_kind(&self, kind: CasualtyKind) -> f64 {
        match kind {
            CasualtyKind::Deaths => self.deaths,
            CasualtyKind::Injuries => self.injuries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionAnswer {
    pub deaths: Option<u64>,
    pub injuries: Option<u64>,
    pub location: Option<String>,
    pub city: Option<String>,
    pub country: Option<String>,
    pub year: Option<i32>,
    pub event_match: bool,
    pub field_confidences: FieldConfidences,
}

impl ExtractionAnswer {
    pub fn count(&self, kind: CasualtyKind) -> Option<u64> {
        match kind {
            CasualtyKind::Deaths => self.deaths,
            CasualtyKind::Injuries => self.injuries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Place {
    pub city: Option<String>,
    pub country: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasualtyClaim {
    pub post_id: String,
    pub source_account: String,
    pub timestamp: DateTime<Utc>,
    pub kind: CasualtyKind,
    pub value: u64,
    pub place: Option<Place>,
    /// ξ, strictly inside (0, 1).
    pub confidence: f64,
}

const XI_EPS: f64 = 1e-6;

/// Second-layer relevance check. Drops answers for another event, another
/// year or a country outside the event's region set; otherwise emits one
/// claim per reported kind.
pub fn validate_claim(
    answer: &ExtractionAnswer,
    event: &EarthquakeEvent,
    post: &RawPost,
) -> Vec<CasualtyClaim> {
    if !answer.event_match {
        return Vec::new();
    }
    if answer.year.is_some_and(|y| y != event.year()) {
        return Vec::new();
    }
    if answer
        .country
        .as_deref()
        .is_some_and(|c| !event.covers_region(c))
    {
        return Vec::new();
    }
    let place = (answer.city.is_some() || answer.country.is_some()).then(|| Place {
        city: answer.city.clone(),
        country: answer.country.clone(),
    });
    CasualtyKind::ALL
        .into_iter()
        .filter_map(|kind| {
            answer.count(kind).map(|value| CasualtyClaim {
                post_id: post.post_id.clone(),
                source_account: post.source_account.clone(),
                timestamp: post.timestamp,
                kind,
                value,
                place: place.clone(),
                confidence: answer
                    .field_confidences
                    .for_kind(kind)
                    .clamp(XI_EPS, 1.0 - XI_EPS),
            })
        })
        .collect()
}
