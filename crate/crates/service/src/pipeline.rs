//! Shared pipeline components: sources, the two-stage filter and the
//! extractor backend.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use quaketruth_core::classify::{
    parse_corpus, train_baseline, ClassifierModel, FilterScores, HierarchicalFilter, Stage,
};
use quaketruth_core::extract::{
    extract_batch, CompletionClient, ExtractError, ExtractionAnswer, HttpCompletionClient,
    LlmExtractor, RuleExtractor,
};
use quaketruth_core::ingest::{
    fetch_batch, generate_queries, EarthquakeEvent, HttpSourceClient, IngestError,
    KeywordDictionary, Platform, RawPost, SourceClient,
};
use tracing::{info, warn};

use crate::config::{ClassifierBackend, Config, ExtractorBackend, RetryConfig};
use crate::ServiceError;

const BUNDLED_EVENT_CORPUS: &str = include_str!("../../../fixtures/corpus/event.csv");
const BUNDLED_STATS_CORPUS: &str = include_str!("../../../fixtures/corpus/stats.csv");

pub enum Extractor {
    Rules(RuleExtractor),
    Llm {
        extractor: LlmExtractor,
        client: Arc<dyn CompletionClient>,
        max_in_flight: usize,
    },
}

impl std::fmt::Debug for Extractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Extractor::Rules(_) => f.write_str("Extractor::Rules"),
            Extractor::Llm { .. } => f.write_str("Extractor::Llm"),
        }
    }
}

pub struct Pipeline {
    pub filter: HierarchicalFilter,
    pub extractor: Extractor,
    pub sources: Vec<Arc<dyn SourceClient>>,
    pub dictionary: KeywordDictionary,
    pub retry: RetryConfig,
}

fn read_or_bundled(path: &Path, bundled: &'static str) -> Result<String, ServiceError> {
    if path.is_file() {
        std::fs::read_to_string(path).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))
    } else {
        Ok(bundled.to_string())
    }
}

/// Trains both baseline stages on the corpus found under `fixtures_dir`
/// (or the bundled one).
pub fn train_filter(fixtures_dir: &Path, seed: u64) -> Result<(ClassifierModel, ClassifierModel), ServiceError> {
    let corpus_dir = fixtures_dir.join("corpus");
    let event = parse_corpus(&read_or_bundled(&corpus_dir.join("event.csv"), BUNDLED_EVENT_CORPUS)?)
        .map_err(|e| ServiceError::Config(e.to_string()))?;
    let stats = parse_corpus(&read_or_bundled(&corpus_dir.join("stats.csv"), BUNDLED_STATS_CORPUS)?)
        .map_err(|e| ServiceError::Config(e.to_string()))?;
    let event = train_baseline(&event, Stage::Event, seed).map_err(|e| ServiceError::Config(e.to_string()))?;
    let stats = train_baseline(&stats, Stage::Statistics, seed).map_err(|e| ServiceError::Config(e.to_string()))?;
    info!(
        event_accuracy = ?event.heldout_accuracy,
        stats_accuracy = ?stats.heldout_accuracy,
        "trained baseline classifiers"
    );
    Ok((event, stats))
}

impl Pipeline {
    /// Builds the components named by `config`, reading endpoints from the
    /// environment.
    pub fn from_config(config: &Config) -> Result<Self, ServiceError> {
        let (event, stats) = train_filter(&config.fixtures_dir, config.classifier.seed)?;
        let filter = match config.classifier.backend {
            ClassifierBackend::Baseline => HierarchicalFilter::new(event, stats),
            ClassifierBackend::Remote => {
                let t = config.classifier.remote_temperature;
                let url = std::env::var("QT_CLASSIFIER_URL")
                    .map_err(|_| ServiceError::Config("QT_CLASSIFIER_URL is not set".into()))?;
                HierarchicalFilter::new(
                    ClassifierModel::remote(Stage::Event, format!("{url}/event"), t),
                    ClassifierModel::remote(Stage::Statistics, format!("{url}/statistics"), t),
                )
                .with_fallback(event, stats)
            }
        };
        let extractor = match config.extractor.backend {
            ExtractorBackend::Rules => Extractor::Rules(RuleExtractor::default()),
            ExtractorBackend::Llm => {
                let client = HttpCompletionClient::from_env()
                    .ok_or_else(|| ServiceError::Config("QT_LLM_URL is not set".into()))?;
                Extractor::Llm {
                    extractor: llm_extractor(config),
                    client: Arc::new(client),
                    max_in_flight: config.extractor.max_in_flight,
                }
            }
        };
        let mut sources: Vec<Arc<dyn SourceClient>> = Vec::new();
        for platform in [Platform::Social, Platform::News] {
            match HttpSourceClient::from_env(platform) {
                Ok(client) => sources.push(Arc::new(client)),
                Err(e) => info!(platform = platform.as_str(), error = %e, "source not configured"),
            }
        }
        let dictionary_path = config.fixtures_dir.join("dictionary.csv");
        let dictionary = if dictionary_path.is_file() {
            quaketruth_core::ingest::load_dictionary(&dictionary_path)
                .map_err(|e| ServiceError::Config(e.to_string()))?
        } else {
            KeywordDictionary::bundled()
        };
        Ok(Self {
            filter,
            extractor,
            sources,
            dictionary,
            retry: config.retry.clone(),
        })
    }

    /// Baseline classifiers and rule extraction, no live sources.
    pub fn offline(config: &Config) -> Result<Self, ServiceError> {
        let (event, stats) = train_filter(&config.fixtures_dir, config.classifier.seed)?;
        Ok(Self {
            filter: HierarchicalFilter::new(event, stats),
            extractor: Extractor::Rules(RuleExtractor::default()),
            sources: Vec::new(),
            dictionary: KeywordDictionary::bundled(),
            retry: config.retry.clone(),
        })
    }

    fn backoff(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        let exp = self.retry.base_delay_ms.saturating_mul(1u64 << attempt.min(16));
        let delay = Duration::from_millis(exp.min(self.retry.max_delay_ms));
        hint.map_or(delay, |h| h.min(Duration::from_millis(self.retry.max_delay_ms)).max(delay))
    }

    /// Queries every source for one window. Failures are reported per query
    /// and never abort the batch.
    pub fn fetch_window(
        &self,
        event: &EarthquakeEvent,
        languages: Option<&[String]>,
        round: u32,
        cadence: chrono::TimeDelta,
    ) -> (Vec<RawPost>, Vec<String>) {
        let mut posts = Vec::new();
        let mut errors = Vec::new();
        if self.sources.is_empty() {
            errors.push("no sources configured".to_string());
            return (posts, errors);
        }
        let dictionary = match languages {
            Some(langs) => {
                let langs: Vec<&str> = langs.iter().map(String::as_str).collect();
                self.dictionary.restrict(&langs)
            }
            None => self.dictionary.clone(),
        };
        let platforms: Vec<Platform> = self.sources.iter().map(|s| s.platform()).collect();
        let specs = match generate_queries(event, &dictionary, &platforms, round, cadence) {
            Ok(specs) => specs,
            Err(e) => {
                errors.push(e.to_string());
                return (posts, errors);
            }
        };
        for spec in &specs {
            let Some(client) = self.sources.iter().find(|s| s.platform() == spec.source) else {
                continue;
            };
            match self.with_retry(|| fetch_batch(client.as_ref(), spec)) {
                Ok(batch) => posts.extend(batch),
                Err(e) => {
                    warn!(source = spec.source.as_str(), error = %e, "query failed");
                    errors.push(format!("{} {:?}: {e}", spec.source.as_str(), spec.language_hint));
                }
            }
        }
        posts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.post_id.cmp(&b.post_id)));
        (posts, errors)
    }

    fn with_retry<T>(&self, mut op: impl FnMut() -> Result<T, IngestError>) -> Result<T, IngestError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(IngestError::Retryable { message, retry_after }) if attempt + 1 < self.retry.attempts => {
                    let wait = self.backoff(attempt, retry_after);
                    warn!(%message, attempt, ?wait, "retrying source query");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Filter scores for each post; `None` where a stage rejected the post.
    pub fn filter(&self, posts: &[RawPost]) -> (Vec<Option<FilterScores>>, Vec<String>) {
        let mut errors = Vec::new();
        let scores = posts
            .iter()
            .map(|post| {
                if post.text.trim().is_empty() {
                    return None;
                }
                match self.filter.score(post) {
                    Ok(s) => s,
                    Err(e) => {
                        errors.push(format!("classify {}: {e}", post.post_id));
                        None
                    }
                }
            })
            .collect();
        (scores, errors)
    }

    /// One answer slot per post, in order.
    pub fn extract(&self, posts: &[RawPost], event: &EarthquakeEvent) -> (Vec<Option<ExtractionAnswer>>, Vec<String>) {
        match &self.extractor {
            Extractor::Rules(rules) => (
                posts.iter().map(|p| rules.extract(p, event, true)).collect(),
                Vec::new(),
            ),
            Extractor::Llm {
                extractor,
                client,
                max_in_flight,
            } => {
                let mut errors = Vec::new();
                let results = extract_batch(extractor, client.as_ref(), posts, event, *max_in_flight);
                let answers = results
                    .into_iter()
                    .zip(posts)
                    .map(|(result, post)| {
                        let mut result = result;
                        let mut attempt = 0;
                        while matches!(result, Err(ExtractError::Retryable(_))) && attempt + 1 < self.retry.attempts {
                            std::thread::sleep(self.backoff(attempt, None));
                            result = extractor.extract(client.as_ref(), post, event);
                            attempt += 1;
                        }
                        result.unwrap_or_else(|e| {
                            errors.push(format!("extract {}: {e}", post.post_id));
                            None
                        })
                    })
                    .collect();
                (answers, errors)
            }
        }
    }
}

pub fn llm_extractor(config: &Config) -> LlmExtractor {
    LlmExtractor {
        beam_width: config.extractor.beam_width,
        max_tokens: config.extractor.max_tokens,
        acceptance: (config.extractor.min_confidence, config.extractor.max_confidence),
        ..LlmExtractor::default()
    }
}
