//! Independence scores: reposts and near-copies of earlier posts carry no
//! new information.

use std::collections::{HashSet, VecDeque};

use crate::ingest::RawPost;
use crate::text::{jaccard, normalize, shingles};

pub const SHINGLE_WIDTH: usize = 3;
pub const DEFAULT_WINDOW: usize = 1000;

/// ρ for `post` against a window of normalised earlier texts.
pub fn independence_score(post: &RawPost, prior_window: &[String]) -> f64 {
    if post.is_forward {
        return 0.0;
    }
    let text = normalize(&post.text);
    let own = shingles(&text, SHINGLE_WIDTH);
    let mut best: f64 = 0.0;
    for prior in prior_window {
        if *prior == text {
            return 0.0;
        }
        best = best.max(jaccard(&own, &shingles(prior, SHINGLE_WIDTH)));
    }
    (1.0 - best).clamp(0.0, 1.0)
}

/// Rolling window of the most recent normalised posts of one event.
#[derive(Debug, Clone)]
pub struct IndependenceScorer {
    capacity: usize,
    window: VecDeque<(String, HashSet<String>)>,
}

impl Default for IndependenceScorer {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl IndependenceScorer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            window: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn score(&self, post: &RawPost) -> f64 {
        if post.is_forward {
            return 0.0;
        }
        let text = normalize(&post.text);
        let own = shingles(&text, SHINGLE_WIDTH);
        let mut best: f64 = 0.0;
        for (prior, prior_shingles) in &self.window {
            if *prior == text {
                return 0.0;
            }
            best = best.max(jaccard(&own, prior_shingles));
        }
        (1.0 - best).clamp(0.0, 1.0)
    }

    pub fn observe(&mut self, post: &RawPost) {
        let text = normalize(&post.text);
        let sh = shingles(&text, SHINGLE_WIDTH);
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back((text, sh));
    }

    /// Scores `post` against what came before, then adds it to the window.
    pub fn score_and_observe(&mut self, post: &RawPost) -> f64 {
        let rho = self.score(post);
        self.observe(post);
        rho
    }
}
