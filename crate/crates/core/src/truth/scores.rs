//! Per-round scoring steps of the truth-discovery update.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ScoredClaim;

/// Clamp margin for the relevance score and the reliability denominator.
pub const EPS: f64 = 1e-6;
/// Consensus scores are kept strictly inside (0, 1).
const CONSENSUS_MARGIN: f64 = 1e-12;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// r = event probability × statistics probability × event-answer confidence,
/// clamped into (0, 1).
pub fn relevance_score(event_prob: f64, stats_prob: f64, answer_event_match_conf: f64) -> f64 {
    (event_prob * stats_prob * answer_event_match_conf).clamp(EPS, 1.0 - EPS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    /// Information score IS: Σ ξ·r·ρ over the source's posts for the value.
    pub is: f64,
    /// IS divided by the round's largest IS.
    pub nis: f64,
    pub posts: Vec<String>,
}

/// Information scores of one round, keyed by (source, value).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub round: u32,
    pub entries: BTreeMap<(String, u64), ScoreEntry>,
}

impl ScoreTable {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> BTreeSet<u64> {
        self.entries.keys().map(|(_, k)| *k).collect()
    }

    pub fn sources(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(i, _)| i.as_str()).collect()
    }

    /// f(k): sources with a positive information score for `value`.
    pub fn claimants(&self, value: u64) -> BTreeSet<&str> {
        self.entries
            .iter()
            .filter(|((_, k), e)| *k == value && e.is > 0.0)
            .map(|((i, _), _)| i.as_str())
            .collect()
    }

    pub fn get(&self, source: &str, value: u64) -> Option<&ScoreEntry> {
        self.entries.get(&(source.to_string(), value))
    }
}

/// Sums ξ·r·ρ per (source, value). NIS is left at zero until
/// [`normalize_scores`].
pub fn information_scores(round: u32, claims: &[ScoredClaim]) -> ScoreTable {
    let mut table = ScoreTable {
        round,
        entries: BTreeMap::new(),
    };
    for sc in claims {
        let entry = table
            .entries
            .entry((sc.claim.source_account.clone(), sc.claim.value))
            .or_insert_with(|| ScoreEntry {
                is: 0.0,
                nis: 0.0,
                posts: Vec::new(),
            });
        entry.is += sc.claim.confidence * sc.relevance * sc.independence;
        entry.posts.push(sc.claim.post_id.clone());
    }
    table
}

/// NIS = IS / max IS over the whole round; an all-zero table stays zero.
pub fn normalize_scores(table: &mut ScoreTable) {
    let max = table.entries.values().map(|e| e.is).fold(0.0, f64::max);
    for e in table.entries.values_mut() {
        e.nis = if max > 0.0 { e.is / max } else { 0.0 };
    }
}

/// Upper bound on p_t^k from the previous distribution: the largest
/// previous probability at or below `value`. `None` when there is no
/// previous distribution.
pub fn prefix_bound(p_prev: &BTreeMap<u64, f64>, value: u64) -> Option<f64> {
    if p_prev.is_empty() {
        return None;
    }
    Some(p_prev.range(..=value).map(|(_, &p)| p).fold(0.0, f64::max))
}

/// Removes entries whose value could only be reached by a decreasing
/// transition (prefix bound zero) and returns the bounds of the values kept.
/// With no previous distribution the table passes through unbounded.
pub fn apply_physical_constraints(
    mut table: ScoreTable,
    p_prev: &BTreeMap<u64, f64>,
) -> (ScoreTable, BTreeMap<u64, f64>) {
    let mut bounds = BTreeMap::new();
    if p_prev.is_empty() {
        return (table, bounds);
    }
    for value in table.values() {
        let bound = prefix_bound(p_prev, value).unwrap_or(f64::INFINITY);
        bounds.insert(value, bound);
    }
    table.entries.retain(|(_, k), _| bounds[k] > 0.0);
    bounds.retain(|_, b| *b > 0.0);
    (table, bounds)
}

/// D_t^k = sigmoid(Σ_{i∈f(k)} IS_{i,t}^k) for every value in the table.
pub fn consensus_scores(table: &ScoreTable) -> BTreeMap<u64, f64> {
    let mut sums: BTreeMap<u64, f64> = BTreeMap::new();
    for ((_, k), e) in &table.entries {
        let s = sums.entry(*k).or_insert(0.0);
        if e.is > 0.0 {
            *s += e.is;
        }
    }
    sums.into_iter()
        .map(|(k, s)| (k, consensus(s)))
        .collect()
}

pub(crate) fn consensus(sum_is: f64) -> f64 {
    sigmoid(sum_is).clamp(CONSENSUS_MARGIN, 1.0 - CONSENSUS_MARGIN)
}

/// What reliability needs to remember about one completed round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// Positive information scores after the constraint step.
    pub scores: BTreeMap<(String, u64), f64>,
    pub consensus: BTreeMap<u64, f64>,
}

impl RoundRecord {
    pub fn from_table(table: &ScoreTable, consensus: BTreeMap<u64, f64>) -> Self {
        Self {
            round: table.round,
            scores: table
                .entries
                .iter()
                .filter(|(_, e)| e.is > 0.0)
                .map(|(key, e)| (key.clone(), e.is))
                .collect(),
            consensus,
        }
    }

    fn is_active(&self, source: &str) -> bool {
        self.scores.keys().any(|(i, _)| i == source)
    }
}

/// Source reliability over all recorded rounds.
///
/// The evaluation pairs are every (value, round) with the value in the
/// source's output set and the source active in that round. A pair scores
/// D when the source backed the value and 1 − D when it did not; the sum is
/// divided by the source's total information score plus ε and clamped to
/// [0, 1].
pub fn update_reliability(history: &[RoundRecord], source: &str) -> f64 {
    let outputs: BTreeSet<u64> = history
        .iter()
        .flat_map(|r| r.scores.keys())
        .filter(|(i, _)| i == source)
        .map(|(_, k)| *k)
        .collect();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for record in history.iter().filter(|r| r.is_active(source)) {
        for &k in &outputs {
            let is = record
                .scores
                .get(&(source.to_string(), k))
                .copied()
                .unwrap_or(0.0);
            let d = record.consensus.get(&k).copied().unwrap_or(0.5);
            numerator += if is > 0.0 { d } else { 1.0 - d };
            denominator += is.abs();
        }
    }
    (numerator / (denominator + EPS)).clamp(0.0, 1.0)
}

/// raw_k = Σ_{i∈f(k)} s_i·NIS_{i,k}, normalised over values. Values above
/// their upper bound are pinned to it and the remaining mass is spread over
/// the others in proportion to raw, repeated until nothing exceeds its bound.
/// When the bounds of every value sum to less than one no distribution fits;
/// the pinned bounds are then renormalised. An all-zero round carries the
/// previous distribution forward.
pub fn update_distribution(
    table: &ScoreTable,
    reliabilities: &BTreeMap<String, f64>,
    upper_bounds: &BTreeMap<u64, f64>,
    p_prev: &BTreeMap<u64, f64>,
) -> BTreeMap<u64, f64> {
    let mut raw: BTreeMap<u64, f64> = BTreeMap::new();
    for ((i, k), e) in &table.entries {
        if e.is > 0.0 {
            let s = reliabilities.get(i).copied().unwrap_or(1.0);
            *raw.entry(*k).or_insert(0.0) += s * e.nis;
        }
    }
    raw.retain(|_, v| *v > 0.0);
    if raw.values().sum::<f64>() <= 0.0 {
        return p_prev.clone();
    }
    let mut pinned: BTreeMap<u64, f64> = BTreeMap::new();
    loop {
        let free_raw: f64 = raw.iter().filter(|(k, _)| !pinned.contains_key(k)).map(|(_, v)| v).sum();
        if free_raw <= 0.0 {
            let total: f64 = pinned.values().sum();
            return pinned.into_iter().map(|(k, b)| (k, b / total)).collect();
        }
        let mass = 1.0 - pinned.values().sum::<f64>();
        let p: BTreeMap<u64, f64> = raw
            .iter()
            .map(|(&k, &v)| (k, pinned.get(&k).copied().unwrap_or(v / free_raw * mass)))
            .collect();
        let over: Vec<(u64, f64)> = p
            .iter()
            .filter(|(k, _)| !pinned.contains_key(k))
            .filter_map(|(k, v)| upper_bounds.get(k).filter(|b| v > *b).map(|b| (*k, *b)))
            .collect();
        if over.is_empty() {
            return p;
        }
        pinned.extend(over);
    }
}

/// argmax over values; ties go to the larger value.
pub fn aggregate(p: &BTreeMap<u64, f64>) -> Option<u64> {
    let mut best: Option<(u64, f64)> = None;
    for (&k, &v) in p {
        if best.is_none_or(|(_, bv)| v >= bv) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}
