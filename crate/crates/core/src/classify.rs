//! Two-stage relevance filter.
//!
//! Stage one decides whether a post is about the target earthquake, stage two
//! whether it carries casualty statistics. Both stages expose a calibrated
//! probability that later feeds the relevance score of each claim.
//!
//! The baseline backend is logistic regression over hashed character 3-5
//! grams. A remote backend forwards texts to an external model server.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::ingest::RawPost;
use crate::text::fnv1a64;

pub const FEATURE_BITS: u32 = 18;
pub const FEATURE_DIM: usize = 1 << FEATURE_BITS;
const NGRAM_MIN: usize = 3;
const NGRAM_MAX: usize = 5;
pub const DECISION_THRESHOLD: f64 = 0.5;

const EPOCHS: usize = 30;
const LEARNING_RATE: f64 = 0.5;
const L2: f64 = 1e-5;
const HOLDOUT_DIVISOR: usize = 5;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("training error: {0}")]
    Training(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("retryable classifier error: {0}")]
    Retryable(String),
    #[error("remote classifier error: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Event,
    Statistics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub text: String,
    pub label: bool,
}

impl LabeledSample {
    pub fn new(text: impl Into<String>, label: bool) -> Self {
        Self {
            text: text.into(),
            label,
        }
    }
}

fn parse_label(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "relevant" | "has-stats" | "1" | "true" | "yes" => Some(true),
        "irrelevant" | "no-stats" | "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads a `text,label` CSV.
pub fn parse_corpus(data: &str) -> Result<Vec<LabeledSample>, ClassifyError> {
    #[derive(Deserialize)]
    struct Row {
        text: String,
        label: String,
    }
    let mut out = Vec::new();
    let mut reader = csv::Reader::from_reader(data.as_bytes());
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| ClassifyError::Corpus(format!("row {}: {e}", i + 1)))?;
        let label = parse_label(&row.label).ok_or_else(|| {
            ClassifyError::Corpus(format!("row {}: unknown label {:?}", i + 1, row.label))
        })?;
        out.push(LabeledSample::new(row.text, label));
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<LabeledSample>, ClassifyError> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| ClassifyError::Corpus(format!("{}: {e}", path.display())))?;
    parse_corpus(&data)
}

/// Sparse, L2-normalised hashed character n-gram counts. Digits are folded to
/// `0` so that "29 deaths" and "41 deaths" share features.
pub fn featurize(text: &str) -> Vec<(u32, f64)> {
    let folded: Vec<char> = std::iter::once(' ')
        .chain(text.to_lowercase().chars().map(|c| {
            if c.is_ascii_digit() {
                '0'
            } else if c.is_whitespace() {
                ' '
            } else {
                c
            }
        }))
        .chain(std::iter::once(' '))
        .collect();
    let mut idx: Vec<u32> = Vec::new();
    let mut buf = String::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        for w in folded.windows(n) {
            buf.clear();
            buf.extend(w.iter());
            idx.push((fnv1a64(buf.as_bytes()) & (FEATURE_DIM as u64 - 1)) as u32);
        }
    }
    idx.sort_unstable();
    let mut feats: Vec<(u32, f64)> = Vec::new();
    for i in idx {
        match feats.last_mut() {
            Some((j, v)) if *j == i => *v += 1.0,
            _ => feats.push((i, 1.0)),
        }
    }
    let norm = feats.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut feats {
            *v /= norm;
        }
    }
    feats
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Baseline { weights: Vec<f64>, bias: f64 },
    Remote { endpoint: String },
}

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub stage: Stage,
    pub backend: Backend,
    /// Logits are divided by this before the sigmoid.
    pub temperature: f64,
    /// Accuracy on the stratified held-out split; `None` when the corpus was
    /// too small to hold anything out.
    pub heldout_accuracy: Option<f64>,
    http: OnceLock<reqwest::blocking::Client>,
}

impl ClassifierModel {
    pub fn remote(stage: Stage, endpoint: impl Into<String>, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        Self {
            stage,
            backend: Backend::Remote {
                endpoint: endpoint.into(),
            },
            temperature,
            heldout_accuracy: None,
            http: OnceLock::new(),
        }
    }

    /// Remote model at `QT_CLASSIFIER_URL`, if set.
    pub fn remote_from_env(stage: Stage) -> Option<Self> {
        std::env::var("QT_CLASSIFIER_URL")
            .ok()
            .map(|url| Self::remote(stage, url, 1.0))
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match &self.backend {
            Backend::Baseline { weights, .. } => Some(weights),
            Backend::Remote { .. } => None,
        }
    }

    fn raw_logit(&self, feats: &[(u32, f64)]) -> f64 {
        match &self.backend {
            Backend::Baseline { weights, bias } => {
                bias + feats
                    .iter()
                    .map(|&(j, x)| weights[j as usize] * x)
                    .sum::<f64>()
            }
            Backend::Remote { .. } => unreachable!("remote models have no local logit"),
        }
    }

    pub fn classify_text(&self, text: &str) -> Result<ClassificationResult, ClassifyError> {
        if text.trim().is_empty() {
            return Err(ClassifyError::Input("empty text".into()));
        }
        let z = match &self.backend {
            Backend::Baseline { .. } => self.raw_logit(&featurize(text)),
            Backend::Remote { endpoint } => logit(self.remote_probabilities(endpoint, &[text])?[0]),
        };
        Ok(ClassificationResult::from_probability(sigmoid(
            z / self.temperature,
        )))
    }

    fn remote_probabilities(&self, endpoint: &str, texts: &[&str]) -> Result<Vec<f64>, ClassifyError> {
        #[derive(Serialize)]
        struct Req<'a> {
            texts: &'a [&'a str],
        }
        #[derive(Deserialize)]
        struct Resp {
            probabilities: Vec<f64>,
        }
        let http = self.http.get_or_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()
                .expect("http client builds")
        });
        let resp = http
            .post(endpoint)
            .json(&Req { texts })
            .send()
            .map_err(|e| ClassifyError::Retryable(e.to_string()))?;
        if resp.status().is_server_error() {
            return Err(ClassifyError::Retryable(format!("status {}", resp.status())));
        }
        if !resp.status().is_success() {
            return Err(ClassifyError::Remote(format!("status {}", resp.status())));
        }
        let body: Resp = resp
            .json()
            .map_err(|e| ClassifyError::Remote(format!("bad response: {e}")))?;
        if body.probabilities.len() != texts.len()
            || body.probabilities.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(ClassifyError::Remote("malformed probabilities".into()));
        }
        Ok(body.probabilities)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub label: bool,
    pub probability: f64,
}

impl ClassificationResult {
    fn from_probability(probability: f64) -> Self {
        Self {
            label: probability >= DECISION_THRESHOLD,
            probability,
        }
    }
}

pub fn classify(model: &ClassifierModel, post: &RawPost) -> Result<ClassificationResult, ClassifyError> {
    model.classify_text(&post.text)
}

struct Example {
    feats: Vec<(u32, f64)>,
    label: bool,
}

/// Trains the hashed-feature logistic baseline.
///
/// The corpus is split per class (one fifth held out), trained by SGD with
/// seeded shuffling, and calibrated by fitting a temperature on the held-out
/// part. Identical seed and corpus give bit-identical weights.
pub fn train_baseline(
    corpus: &[LabeledSample],
    stage: Stage,
    seed: u64,
) -> Result<ClassifierModel, ClassifyError> {
    let positives: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].label).collect();
    let negatives: Vec<usize> = (0..corpus.len()).filter(|&i| !corpus[i].label).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(ClassifyError::Training(
            "corpus must contain both classes".into(),
        ));
    }
    if corpus.iter().any(|s| s.text.trim().is_empty()) {
        return Err(ClassifyError::Training("corpus contains empty text".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut holdout_idx = Vec::new();
    for mut class in [positives, negatives] {
        class.shuffle(&mut rng);
        let n_hold = class.len() / HOLDOUT_DIVISOR;
        holdout_idx.extend_from_slice(&class[..n_hold]);
        train_idx.extend_from_slice(&class[n_hold..]);
    }
    train_idx.sort_unstable();
    holdout_idx.sort_unstable();

    let to_examples = |idx: &[usize]| -> Vec<Example> {
        idx.iter()
            .map(|&i| Example {
                feats: featurize(&corpus[i].text),
                label: corpus[i].label,
            })
            .collect()
    };
    let train = to_examples(&train_idx);
    let holdout = to_examples(&holdout_idx);

    // Weights are stored as `scale * v` so the L2 shrink is O(1) per step.
    let mut v = vec![0.0f64; FEATURE_DIM];
    let mut scale = 1.0f64;
    let mut bias = 0.0f64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..EPOCHS {
        order.shuffle(&mut rng);
        let lr = LEARNING_RATE / (1.0 + 0.1 * epoch as f64);
        for &k in &order {
            let ex = &train[k];
            let z = bias
                + scale
                    * ex.feats
                        .iter()
                        .map(|&(j, x)| v[j as usize] * x)
                        .sum::<f64>();
            let y = if ex.label { 1.0 } else { 0.0 };
            let grad = sigmoid(z) - y;
            scale *= 1.0 - lr * L2;
            for &(j, x) in &ex.feats {
                v[j as usize] -= lr * grad * x / scale;
            }
            bias -= lr * grad;
        }
        if scale < 1e-6 {
            v.iter_mut().for_each(|w| *w *= scale);
            scale = 1.0;
        }
    }
    let weights: Vec<f64> = v.into_iter().map(|w| w * scale).collect();

    let mut model = ClassifierModel {
        stage,
        backend: Backend::Baseline { weights, bias },
        temperature: 1.0,
        heldout_accuracy: None,
        http: OnceLock::new(),
    };
    if !holdout.is_empty() {
        let logits: Vec<(f64, bool)> = holdout
            .iter()
            .map(|ex| (model.raw_logit(&ex.feats), ex.label))
            .collect();
        model.temperature = fit_temperature(&logits);
        let correct = logits
            .iter()
            .filter(|&&(z, y)| (sigmoid(z / model.temperature) >= DECISION_THRESHOLD) == y)
            .count();
        model.heldout_accuracy = Some(correct as f64 / logits.len() as f64);
    }
    Ok(model)
}

fn heldout_nll(logits: &[(f64, bool)], temperature: f64) -> f64 {
    logits
        .iter()
        .map(|&(z, y)| {
            let p = sigmoid(z / temperature).clamp(1e-12, 1.0 - 1e-12);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// Golden-section search over log-temperature in [0.25, 8].
fn fit_temperature(logits: &[(f64, bool)]) -> f64 {
    let (mut lo, mut hi) = (0.25f64.ln(), 8.0f64.ln());
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let f = |lt: f64| heldout_nll(logits, lt.exp());
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..60 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    ((lo + hi) / 2.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterScores {
    pub event_prob: f64,
    pub stats_prob: f64,
}

/// The stage models plus optional baseline fallbacks used when a remote
/// backend is unreachable.
#[derive(Debug, Clone)]
pub struct HierarchicalFilter {
    pub event: ClassifierModel,
    pub statistics: ClassifierModel,
    pub fallback: Option<(ClassifierModel, ClassifierModel)>,
}

impl HierarchicalFilter {
    pub fn new(event: ClassifierModel, statistics: ClassifierModel) -> Self {
        Self {
            event,
            statistics,
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, event: ClassifierModel, statistics: ClassifierModel) -> Self {
        self.fallback = Some((event, statistics));
        self
    }

    fn stage(
        &self,
        primary: &ClassifierModel,
        fallback: Option<&ClassifierModel>,
        text: &str,
    ) -> Result<ClassificationResult, ClassifyError> {
        match primary.classify_text(text) {
            Err(ClassifyError::Retryable(msg)) if fallback.is_some() => {
                warn!(error = %msg, "remote classifier unavailable, using baseline");
                fallback.unwrap().classify_text(text)
            }
            other => other,
        }
    }

    /// Scores one post; `None` when either stage rejects it.
    pub fn score(&self, post: &RawPost) -> Result<Option<FilterScores>, ClassifyError> {
        let fb = self.fallback.as_ref();
        let event = self.stage(&self.event, fb.map(|f| &f.0), &post.text)?;
        if !event.label {
            return Ok(None);
        }
        let stats = self.stage(&self.statistics, fb.map(|f| &f.1), &post.text)?;
        if !stats.label {
            return Ok(None);
        }
        Ok(Some(FilterScores {
            event_prob: event.probability,
            stats_prob: stats.probability,
        }))
    }

    /// Keeps posts passing both stages, in input order, with their stage
    /// probabilities attached.
    pub fn filter_hierarchical(
        &self,
        posts: &[RawPost],
    ) -> Result<Vec<(RawPost, FilterScores)>, ClassifyError> {
        let mut out = Vec::new();
        for post in posts {
            if post.text.trim().is_empty() {
                continue;
            }
            if let Some(scores) = self.score(post)? {
                out.push((post.clone(), scores));
            }
        }
        Ok(out)
    }
}
