//! Completion-backend extraction.
//!
//! The backend receives the few-shot prompt and returns its beam-search
//! completion with per-token probabilities. Each answer field's confidence is
//! the mean probability of the tokens spelling that field; answers with any
//! field outside the acceptance range are discarded.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::prompt::{PromptTemplate, KEY_SEGMENTS, KEY_TAG};
use super::{ExtractError, ExtractionAnswer, FieldConfidences};
use crate::ingest::{EarthquakeEvent, RawPost};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub beam_width: u32,
    pub max_tokens: u32,
    pub return_token_probs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub token_probs: Vec<f64>,
    /// Token strings aligned with `token_probs`. Without them every field
    /// gets the mean over all tokens.
    #[serde(default)]
    pub tokens: Option<Vec<String>>,
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ExtractError>;
}

#[derive(Debug, Clone)]
pub struct HttpCompletionClient {
    url: String,
    http: reqwest::blocking::Client,
}

impl HttpCompletionClient {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("http client builds"),
        }
    }

    /// Endpoint from `QT_LLM_URL`.
    pub fn from_env() -> Option<Self> {
        std::env::var("QT_LLM_URL").ok().map(Self::new)
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ExtractError> {
        let resp = self
            .http
            .post(&self.url)
            .json(request)
            .send()
            .map_err(|e| ExtractError::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ExtractError::Retryable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ExtractError::Backend(format!("status {status}")));
        }
        resp.json()
            .map_err(|e| ExtractError::Backend(format!("bad completion body: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct LlmExtractor {
    pub template: PromptTemplate,
    pub beam_width: u32,
    pub max_tokens: u32,
    /// Inclusive range each field confidence must fall in.
    pub acceptance: (f64, f64),
}

impl Default for LlmExtractor {
    fn default() -> Self {
        Self {
            template: PromptTemplate::default(),
            beam_width: 4,
            max_tokens: 64,
            acceptance: (0.5, 1.0),
        }
    }
}

impl LlmExtractor {
    pub fn request(&self, post: &RawPost, event: &EarthquakeEvent) -> Result<CompletionRequest, ExtractError> {
        if self.beam_width == 0 {
            return Err(ExtractError::Template("beam width must be at least 1".into()));
        }
        Ok(CompletionRequest {
            prompt: self.template.build_prompt(post, event)?,
            beam_width: self.beam_width,
            max_tokens: self.max_tokens,
            return_token_probs: true,
        })
    }

    /// `Ok(None)` covers unparseable completions and answers rejected by the
    /// confidence gate; transport failures are errors.
    pub fn extract(
        &self,
        client: &dyn CompletionClient,
        post: &RawPost,
        event: &EarthquakeEvent,
    ) -> Result<Option<ExtractionAnswer>, ExtractError> {
        let completion = client.complete(&self.request(post, event)?)?;
        Ok(self.interpret(&completion))
    }

    pub fn interpret(&self, completion: &Completion) -> Option<ExtractionAnswer> {
        let (key_start, key_end) = find_key_line(&completion.text)?;
        let key = &completion.text[key_start..key_end];
        let mut answer = match self.template.parse_key(key) {
            Ok(a) => a,
            Err(e) => {
                debug!(error = %e, "discarding unparseable completion");
                return None;
            }
        };
        answer.field_confidences = field_confidences(completion, key_start, key_end)?;
        let (lo, hi) = self.acceptance;
        if answer
            .field_confidences
            .to_array()
            .iter()
            .any(|&c| !(lo..=hi).contains(&c))
        {
            debug!(?answer.field_confidences, "answer outside confidence range");
            return None;
        }
        Some(answer)
    }
}

/// Byte range of the first key line's content (after the tag).
fn find_key_line(text: &str) -> Option<(usize, usize)> {
    let tag = text.find(KEY_TAG)?;
    let start = tag + KEY_TAG.len();
    let end = text[start..].find('\n').map_or(text.len(), |i| start + i);
    Some((start, end))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn field_confidences(completion: &Completion, key_start: usize, key_end: usize) -> Option<FieldConfidences> {
    let probs = &completion.token_probs;
    if probs.is_empty() {
        return None;
    }
    let spans = completion.tokens.as_ref().and_then(|tokens| {
        if tokens.len() != probs.len() || tokens.concat() != completion.text {
            return None;
        }
        let mut pos = 0;
        Some(
            tokens
                .iter()
                .map(|t| {
                    let span = (pos, pos + t.len());
                    pos += t.len();
                    span
                })
                .collect::<Vec<_>>(),
        )
    });
    let Some(spans) = spans else {
        return Some(FieldConfidences::uniform(mean(probs)?));
    };

    let overlapping = |a: usize, b: usize| -> Vec<f64> {
        spans
            .iter()
            .zip(probs)
            .filter(|((s, e), _)| *s < b && a < *e)
            .map(|(_, &p)| p)
            .collect()
    };
    let line_mean = mean(&overlapping(key_start, key_end)).or_else(|| mean(probs))?;

    let key = &completion.text[key_start..key_end];
    let mut confs = [line_mean; KEY_SEGMENTS];
    let mut seg_start = key_start;
    for (i, seg) in key.split('|').enumerate().take(KEY_SEGMENTS) {
        let seg_end = seg_start + seg.len();
        let trimmed_start = seg_start + (seg.len() - seg.trim_start().len());
        let trimmed_end = seg_start + seg.trim_end().len();
        if trimmed_start < trimmed_end {
            if let Some(m) = mean(&overlapping(trimmed_start, trimmed_end)) {
                confs[i] = m;
            }
        }
        seg_start = seg_end + 1;
    }
    Some(FieldConfidences::from_array(confs))
}

/// Extracts a batch with at most `max_in_flight` concurrent requests,
/// preserving input order in the output.
pub fn extract_batch(
    extractor: &LlmExtractor,
    client: &dyn CompletionClient,
    posts: &[RawPost],
    event: &EarthquakeEvent,
    max_in_flight: usize,
) -> Vec<Result<Option<ExtractionAnswer>, ExtractError>> {
    let width = max_in_flight.max(1);
    let mut out = Vec::with_capacity(posts.len());
    for chunk in posts.chunks(width) {
        let results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|post| scope.spawn(move || extractor.extract(client, post, event)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("extraction thread panicked"))
                .collect()
        });
        out.extend(results);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Platform;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn haiti() -> EarthquakeEvent {
        EarthquakeEvent {
            event_id: "haiti-2021".into(),
            magnitude: 7.2,
            region_names: vec!["Haiti".into(), "Les Cayes".into()],
            origin_time: "2021-08-14T12:29:08Z".parse().unwrap(),
            trigger_threshold_met: true,
        }
    }

    fn post(text: &str) -> RawPost {
        RawPost {
            post_id: "p1".into(),
            source_account: "a".into(),
            platform: Platform::Social,
            verified: false,
            timestamp: "2021-08-14T14:00:00Z".parse().unwrap(),
            language: "en".into(),
            text: text.into(),
            is_forward: false,
            cited_links: vec![],
        }
    }

    /// Tokenises the key at `|` boundaries and assigns `probs[i]` to field i.
    fn tokenised(key: &str, probs: [f64; 7]) -> Completion {
        let mut tokens = vec!["\n".to_string(), KEY_TAG.to_string()];
        let mut token_probs = vec![0.99, 0.99];
        for (i, seg) in key.split('|').enumerate() {
            if i > 0 {
                tokens.push("|".into());
                token_probs.push(0.99);
            }
            tokens.push(seg.to_string());
            token_probs.push(probs[i]);
        }
        Completion {
            text: tokens.concat(),
            token_probs,
            tokens: Some(tokens),
        }
    }

    struct Mock {
        completion: Completion,
        prompts: Mutex<Vec<String>>,
    }

    impl CompletionClient for Mock {
        fn complete(&self, req: &CompletionRequest) -> Result<Completion, ExtractError> {
            assert!(req.return_token_probs);
            self.prompts.lock().unwrap().push(req.prompt.clone());
            Ok(self.completion.clone())
        }
    }

    #[test]
    fn mock_passthrough_matches_parse_key() {
        let key = "600|4000|Nice|Nice|France|2021|No";
        let mock = Mock {
            completion: tokenised(key, [0.9; 7]),
            prompts: Mutex::new(vec![]),
        };
        let ex = LlmExtractor::default();
        let got = ex.extract(&mock, &post("Nice quake"), &haiti()).unwrap().unwrap();
        let mut expected = ex.template.parse_key(key).unwrap();
        expected.field_confidences = FieldConfidences::uniform(0.9);
        assert_eq!(got, expected);
        assert_eq!(mock.prompts.lock().unwrap().len(), 1);
    }

    #[test]
    fn low_death_confidence_discards_answer() {
        let mut probs = [0.9; 7];
        probs[0] = 0.3;
        let mock = Mock {
            completion: tokenised("29|∅|Les Cayes|Les Cayes|Haiti|2021|Yes", probs),
            prompts: Mutex::new(vec![]),
        };
        assert_eq!(
            LlmExtractor::default()
                .extract(&mock, &post("x"), &haiti())
                .unwrap(),
            None
        );
    }

    #[test]
    fn city_string_is_stored_verbatim() {
        let mock = Mock {
            completion: tokenised("29|∅|Les Cayes|Les Cayes|Haiti|2021|Yes", [0.95; 7]),
            prompts: Mutex::new(vec![]),
        };
        let a = LlmExtractor::default()
            .extract(&mock, &post("A lot of damage in Okay. So far 29 reported deaths."), &haiti())
            .unwrap()
            .unwrap();
        assert_eq!(a.city.as_deref(), Some("Les Cayes"));
        assert_eq!(a.field_confidences.deaths, 0.95);
    }

    #[test]
    fn missing_key_line_is_absent() {
        let c = Completion {
            text: "I cannot answer".into(),
            token_probs: vec![0.9],
            tokens: None,
        };
        assert_eq!(LlmExtractor::default().interpret(&c), None);
    }

    #[test]
    fn untokenised_completion_uses_overall_mean() {
        let c = Completion {
            text: "[Key]:7|∅|Luding|Luding|China|2022|Yes\n".into(),
            token_probs: vec![0.8, 0.6],
            tokens: None,
        };
        let a = LlmExtractor::default().interpret(&c).unwrap();
        assert!((a.field_confidences.deaths - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_beam_width_is_rejected() {
        let ex = LlmExtractor {
            beam_width: 0,
            ..LlmExtractor::default()
        };
        assert!(ex.request(&post("x"), &haiti()).is_err());
    }

    struct Counting {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl CompletionClient for Counting {
        fn complete(&self, req: &CompletionRequest) -> Result<Completion, ExtractError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            // Echo the post's count back so order can be checked.
            let tweet = req.prompt.lines().rev().nth(1).unwrap();
            let n: String = tweet.chars().filter(|c| c.is_ascii_digit()).collect();
            Ok(tokenised(&format!("{n}|∅|∅|∅|Haiti|2021|Yes"), [0.9; 7]))
        }
    }

    #[test]
    fn batch_preserves_order_and_bounds_concurrency() {
        let client = Counting {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        };
        let posts: Vec<RawPost> = (0..10).map(|i| post(&format!("{i} dead"))).collect();
        let out = extract_batch(&LlmExtractor::default(), &client, &posts, &haiti(), 4);
        let deaths: Vec<u64> = out
            .into_iter()
            .map(|r| r.unwrap().unwrap().deaths.unwrap())
            .collect();
        assert_eq!(deaths, (0..10).collect::<Vec<u64>>());
        assert!(client.peak.load(Ordering::SeqCst) <= 4);
    }
}
