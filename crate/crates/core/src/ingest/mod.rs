//! Event-triggered acquisition of posts.

mod client;
mod replay;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Datelike, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{fetch_batch, HttpSourceClient, SourceClient, SourceItem};
pub use replay::{load_replay, parse_replay, Replay};

/// Default batch cadence: one round per half hour.
pub const DEFAULT_CADENCE: TimeDelta = TimeDelta::minutes(30);

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("replay format error: {malformed} of {total} lines malformed")]
    Format { malformed: usize, total: usize },
    #[error("retryable source error: {message}")]
    Retryable {
        message: String,
        retry_after: Option<Duration>,
    },
    #[error("source authentication failed: {0}")]
    Auth(String),
    #[error("source error: {0}")]
    Source(String),
}

impl IngestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::Retryable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Social,
    News,
}

impl Platform {
    /// Upstream per-call cap: 10,000 tweets or 100 news records per half hour.
    pub fn batch_cap(self) -> usize {
        match self {
            Platform::Social => 10_000,
            Platform::News => 100,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Social => "social",
            Platform::News => "news",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarthquakeEvent {
    pub event_id: String,
    pub magnitude: f64,
    pub region_names: Vec<String>,
    pub origin_time: DateTime<Utc>,
    #[serde(default)]
    pub trigger_threshold_met: bool,
}

impl EarthquakeEvent {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.event_id.trim().is_empty() {
            return Err(IngestError::InvalidEvent("event_id is empty".into()));
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return Err(IngestError::InvalidEvent(format!(
                "magnitude must be positive, got {}",
                self.magnitude
            )));
        }
        if self.region_names.iter().all(|r| r.trim().is_empty()) {
            return Err(IngestError::InvalidEvent("region_names is empty".into()));
        }
        Ok(())
    }

    /// Display name used in prompts, e.g. "Haiti Earthquake".
    pub fn name(&self) -> String {
        format!("{} Earthquake", self.region_names[0])
    }

    pub fn year(&self) -> i32 {
        self.origin_time.year()
    }

    pub fn hours_since_origin(&self, at: DateTime<Utc>) -> f64 {
        (at - self.origin_time).num_milliseconds() as f64 / 3_600_000.0
    }

    /// Case-insensitive membership in the event's region set.
    pub fn covers_region(&self, place: &str) -> bool {
        let place = place.trim().to_lowercase();
        self.region_names.iter().any(|r| r.to_lowercase() == place)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub magnitude_threshold: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            magnitude_threshold: 5.5,
        }
    }
}

/// Inclusive: an event exactly at the threshold triggers.
pub fn should_trigger(event: &EarthquakeEvent, config: &TriggerConfig) -> bool {
    event.magnitude >= config.magnitude_threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub keywords: Vec<String>,
    pub language_hint: Option<String>,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub source: Platform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermType {
    Earthquake,
    Casualty,
}

/// Per-language search terms, loaded from a `language,term_type,term` CSV.
#[derive(Debug, Clone, Default)]
pub struct KeywordDictionary {
    terms: BTreeMap<String, BTreeMap<TermType, Vec<String>>>,
}

#[derive(Debug, Deserialize)]
struct DictionaryRow {
    language: String,
    term_type: String,
    term: String,
}

impl KeywordDictionary {
    pub fn bundled() -> Self {
        Self::from_csv(include_str!("../../../../fixtures/dictionary.csv"))
            .expect("bundled dictionary is valid")
    }

    pub fn from_csv(data: &str) -> Result<Self, IngestError> {
        let mut dict = Self::default();
        let mut reader = csv::Reader::from_reader(data.as_bytes());
        for row in reader.deserialize::<DictionaryRow>() {
            let row = row.map_err(|e| IngestError::Config(format!("dictionary: {e}")))?;
            let term_type = match row.term_type.trim() {
                "earthquake" => TermType::Earthquake,
                "casualty" => TermType::Casualty,
                other => {
                    return Err(IngestError::Config(format!(
                        "dictionary: unknown term_type {other:?}"
                    )))
                }
            };
            dict.insert(row.language.trim(), term_type, row.term.trim());
        }
        Ok(dict)
    }

    pub fn insert(&mut self, language: &str, term_type: TermType, term: &str) {
        let list = self
            .terms
            .entry(language.to_string())
            .or_default()
            .entry(term_type)
            .or_default();
        if !list.iter().any(|t| t == term) {
            list.push(term.to_string());
        }
    }

    /// Keeps only the listed languages.
    pub fn restrict(&self, languages: &[&str]) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .filter(|(lang, _)| languages.contains(&lang.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn terms(&self, language: &str, term_type: TermType) -> &[String] {
        self.terms
            .get(language)
            .and_then(|m| m.get(&term_type))
            .map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.terms
            .values()
            .all(|m| m.get(&TermType::Earthquake).is_none_or(Vec::is_empty))
    }
}

/// Start and end of the `round`-th batch window (rounds count from 1 at the
/// origin time).
pub fn round_window(
    origin: DateTime<Utc>,
    round: u32,
    cadence: TimeDelta,
) -> (DateTime<Utc>, DateTime<Utc>) {
    let start = origin + cadence * (round.max(1) as i32 - 1);
    (start, start + cadence)
}

/// Round index a timestamp falls into. Posts before the origin land in round 1.
pub fn round_of(origin: DateTime<Utc>, at: DateTime<Utc>, cadence: TimeDelta) -> u32 {
    let elapsed = (at - origin).num_milliseconds();
    if elapsed < 0 {
        return 1;
    }
    (elapsed / cadence.num_milliseconds()) as u32 + 1
}

/// Builds one query per (source, language) for the given round's window. Each
/// spec crosses the event's region names with the language's earthquake
/// terms, plus earthquake terms crossed with casualty terms.
pub fn generate_queries(
    event: &EarthquakeEvent,
    dictionary: &KeywordDictionary,
    sources: &[Platform],
    round: u32,
    cadence: TimeDelta,
) -> Result<Vec<QuerySpec>, IngestError> {
    if dictionary.is_empty() {
        return Err(IngestError::Config(
            "keyword dictionary has no earthquake terms".into(),
        ));
    }
    let (window_start, window_end) = round_window(event.origin_time, round, cadence);
    let mut specs = Vec::new();
    for &source in sources {
        for language in dictionary.languages() {
            let quake_terms = dictionary.terms(language, TermType::Earthquake);
            if quake_terms.is_empty() {
                continue;
            }
            let mut keywords = Vec::new();
            for term in quake_terms {
                for region in &event.region_names {
                    keywords.push(format!("{term} {region}"));
                }
            }
            for term in quake_terms {
                for casualty in dictionary.terms(language, TermType::Casualty) {
                    keywords.push(format!("{term} {casualty}"));
                }
            }
            specs.push(QuerySpec {
                keywords,
                language_hint: Some(language.to_string()),
                window_start,
                window_end,
                source,
            });
        }
    }
    Ok(specs)
}

/// One crowdsourced text item. Field names are the replay line format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPost {
    pub post_id: String,
    pub source_account: String,
    pub platform: Platform,
    pub verified: bool,
    pub timestamp: DateTime<Utc>,
    pub language: String,
    pub text: String,
    pub is_forward: bool,
    pub cited_links: Vec<String>,
}

/// Post ids already admitted to an event's store.
#[derive(Debug, Clone, Default)]
pub struct SeenPosts {
    ids: HashSet<String>,
}

impl SeenPosts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, post_id: &str) -> bool {
        self.ids.contains(post_id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Drops posts whose id was seen before (including earlier in the same
    /// batch) and records the rest. Order is preserved.
    pub fn dedup_exact(&mut self, batch: Vec<RawPost>) -> Vec<RawPost> {
        batch
            .into_iter()
            .filter(|p| self.ids.insert(p.post_id.clone()))
            .collect()
    }
}

/// Stateless variant of [`SeenPosts::dedup_exact`] for a single batch.
pub fn dedup_exact(batch: Vec<RawPost>) -> Vec<RawPost> {
    SeenPosts::new().dedup_exact(batch)
}

pub fn language_histogram<'a, I>(posts: I) -> BTreeMap<String, usize>
where
    I: IntoIterator<Item = &'a RawPost>,
{
    let mut hist = BTreeMap::new();
    for post in posts {
        let lang = post.language.trim();
        let key = if lang.is_empty() { "und" } else { lang };
        *hist.entry(key.to_string()).or_insert(0) += 1;
    }
    hist
}

/// Loads a keyword dictionary from disk.
pub fn load_dictionary(path: &Path) -> Result<KeywordDictionary, IngestError> {
    let data = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    KeywordDictionary::from_csv(&data)
}


#[cfg(test)]
mod tests {
    use super::test_support::post;
    use super::*;
    use proptest::prelude::*;

    fn event(magnitude: f64, regions: &[&str]) -> EarthquakeEvent {
        EarthquakeEvent {
            event_id: "ev".into(),
            magnitude,
            region_names: regions.iter().map(|s| s.to_string()).collect(),
            origin_time: "2021-08-14T12:29:08Z".parse().unwrap(),
            trigger_threshold_met: false,
        }
    }

    #[test]
    fn trigger_is_inclusive() {
        let cfg = TriggerConfig::default();
        assert!(should_trigger(&event(6.8, &["Luding"]), &cfg));
        assert!(should_trigger(&event(5.5, &["x"]), &cfg));
        assert!(!should_trigger(&event(4.0, &["x"]), &cfg));
    }

    #[test]
    fn event_validation() {
        assert!(event(6.8, &["Luding"]).validate().is_ok());
        assert!(event(0.0, &["Luding"]).validate().is_err());
        assert!(event(6.0, &[]).validate().is_err());
    }

    #[test]
    fn haiti_queries_cross_region_with_keywords() {
        let dict = KeywordDictionary::bundled().restrict(&["en", "fr", "ht"]);
        let ev = event(7.2, &["Haiti", "Les Cayes"]);
        let specs =
            generate_queries(&ev, &dict, &[Platform::Social, Platform::News], 1, DEFAULT_CADENCE)
                .unwrap();
        assert!(specs.iter().any(|s| s.source == Platform::Social));
        assert!(specs.iter().any(|s| s.source == Platform::News));
        let en = specs
            .iter()
            .find(|s| s.language_hint.as_deref() == Some("en"))
            .unwrap();
        assert!(en.keywords.iter().any(|k| k == "earthquake Haiti"));
        for s in &specs {
            assert_eq!(s.window_end - s.window_start, DEFAULT_CADENCE);
            assert!(s.window_start < s.window_end);
        }
    }

    #[test]
    fn english_only_dictionary_gives_english_specs() {
        let dict = KeywordDictionary::bundled().restrict(&["en"]);
        let specs =
            generate_queries(&event(7.2, &["Haiti"]), &dict, &[Platform::Social], 1, DEFAULT_CADENCE)
                .unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].language_hint.as_deref(), Some("en"));
    }

    #[test]
    fn chinese_terms_cross_luding() {
        let dict = KeywordDictionary::bundled().restrict(&["zh"]);
        let specs = generate_queries(
            &event(6.8, &["Luding", "Sichuan"]),
            &dict,
            &[Platform::Social],
            1,
            DEFAULT_CADENCE,
        )
        .unwrap();
        let kws = &specs[0].keywords;
        assert!(kws.contains(&"地震 Luding".to_string()));
        assert!(kws.contains(&"地震 Sichuan".to_string()));
    }

    #[test]
    fn empty_dictionary_is_config_error() {
        let err = generate_queries(
            &event(7.2, &["Haiti"]),
            &KeywordDictionary::default(),
            &[Platform::Social],
            1,
            DEFAULT_CADENCE,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::Config(_)));
    }

    #[test]
    fn windows_tile_half_hours() {
        let origin: DateTime<Utc> = "2022-09-05T04:52:18Z".parse().unwrap();
        let (s1, e1) = round_window(origin, 1, DEFAULT_CADENCE);
        let (s2, _) = round_window(origin, 2, DEFAULT_CADENCE);
        assert_eq!(s1, origin);
        assert_eq!(e1, s2);
        assert_eq!(round_of(origin, origin + TimeDelta::minutes(180), DEFAULT_CADENCE), 7);
        assert_eq!(round_of(origin, origin - TimeDelta::minutes(5), DEFAULT_CADENCE), 1);
    }

    #[test]
    fn dedup_keeps_first_copy() {
        let a = post("1", 0, "en", "a");
        let b = post("2", 1, "en", "b");
        let out = dedup_exact(vec![a.clone(), b.clone(), a.clone()]);
        assert_eq!(out, vec![a.clone(), b.clone()]);

        let mut seen = SeenPosts::new();
        assert_eq!(seen.dedup_exact(vec![a.clone()]).len(), 1);
        assert!(seen.dedup_exact(vec![a]).is_empty());
    }

    #[test]
    fn dedup_ignores_identical_text() {
        let a = post("1", 0, "en", "same text");
        let b = post("2", 0, "en", "same text");
        assert_eq!(dedup_exact(vec![a, b]).len(), 2);
    }

    #[test]
    fn histogram_counts_languages() {
        assert!(language_histogram(&[]).is_empty());
        let posts = vec![
            post("1", 0, "en", "a"),
            post("2", 0, "en", "b"),
            post("3", 0, "en", "c"),
            post("4", 0, "fr", "d"),
            post("5", 0, "", "e"),
        ];
        let h = language_histogram(&posts);
        assert_eq!(h["en"], 3);
        assert_eq!(h["fr"], 1);
        assert_eq!(h["und"], 1);
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(ids in proptest::collection::vec(0u8..20, 0..40)) {
            let batch: Vec<RawPost> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| post(&id.to_string(), i as i64, "en", "t"))
                .collect();
            let once = dedup_exact(batch);
            let twice = dedup_exact(once.clone());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn histogram_total_matches_input(langs in proptest::collection::vec("[a-z]{0,2}", 0..30)) {
            let posts: Vec<RawPost> = langs
                .iter()
                .enumerate()
                .map(|(i, l)| post(&i.to_string(), 0, l, "t"))
                .collect();
            let total: usize = language_histogram(&posts).values().sum();
            prop_assert_eq!(total, posts.len());
        }
    }
}
