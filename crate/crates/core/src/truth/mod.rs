//! Constraint-aware dynamic truth discovery over casualty claims.
//!
//! One [`TruthState`] per (event, kind) consumes one batch of scored claims
//! per round and emits a [`TruthPoint`] whenever the aggregated estimate
//! changes.

mod export;
mod independence;
mod scores;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{CasualtyClaim, CasualtyKind};

pub use export::{
    hourly_latest, read_truth_csv, write_scores_csv, write_truth_csv, ScoreRow, TruthCsvRow,
};
pub use independence::{independence_score, IndependenceScorer, DEFAULT_WINDOW, SHINGLE_WIDTH};
pub use scores::{
    aggregate, apply_physical_constraints, consensus_scores, information_scores, normalize_scores,
    prefix_bound, relevance_score, update_distribution, update_reliability, RoundRecord,
    ScoreEntry, ScoreTable, EPS,
};

#[derive(Debug, Error, PartialEq)]
pub enum TruthError {
    #[error("round {got} out of order, expected {expected}")]
    RoundOrder { expected: u32, got: u32 },
    #[error("claim {post_id} is for {got:?}, state tracks {expected:?}")]
    KindMismatch {
        post_id: String,
        expected: CasualtyKind,
        got: CasualtyKind,
    },
    #[error("invalid scored claim {post_id}: {reason}")]
    InvalidClaim { post_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredClaim {
    pub claim: CasualtyClaim,
    /// r, strictly inside (0, 1).
    pub relevance: f64,
    /// ρ in [0, 1].
    pub independence: f64,
    pub round: u32,
}

impl ScoredClaim {
    pub fn validate(&self) -> Result<(), TruthError> {
        let bad = |reason: &str| {
            Err(TruthError::InvalidClaim {
                post_id: self.claim.post_id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.relevance > 0.0 && self.relevance < 1.0) {
            return bad("relevance outside (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.independence) {
            return bad("independence outside [0, 1]");
        }
        if !(self.claim.confidence > 0.0 && self.claim.confidence < 1.0) {
            return bad("confidence outside (0, 1)");
        }
        Ok(())
    }

    pub fn information(&self) -> f64 {
        self.claim.confidence * self.relevance * self.independence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthStatus {
    Pending,
    Approved,
    Rejected,
}

impl TruthStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TruthStatus::Pending => "pending",
            TruthStatus::Approved => "approved",
            TruthStatus::Rejected => "rejected",
        }
    }
}

impl std::str::FromStr for TruthStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(TruthStatus::Pending),
            "approved" => Ok(TruthStatus::Approved),
            "rejected" => Ok(TruthStatus::Rejected),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub kind: CasualtyKind,
    pub value: u64,
    pub earliest_timestamp: DateTime<Utc>,
    pub round: u32,
    pub status: TruthStatus,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub round: u32,
    pub value: u64,
    pub is: f64,
    pub consensus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    pub source_account: String,
    /// g(i): every value the source has backed with a positive score.
    pub outputs: BTreeSet<u64>,
    pub history: Vec<ProfileEntry>,
    pub reliability: f64,
}

impl SourceProfile {
    fn new(source_account: &str) -> Self {
        Self {
            source_account: source_account.to_string(),
            outputs: BTreeSet::new(),
            history: Vec::new(),
            reliability: 1.0,
        }
    }
}

/// Everything one round produced, for logging and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u32,
    pub table: ScoreTable,
    pub upper_bounds: BTreeMap<u64, f64>,
    pub consensus: BTreeMap<u64, f64>,
    pub reliabilities: BTreeMap<String, f64>,
    pub distribution: BTreeMap<u64, f64>,
    pub estimate: Option<u64>,
    pub truth_point: Option<TruthPoint>,
    /// One row per surviving (source, value, post) triple.
    pub rows: Vec<ScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub kind: CasualtyKind,
    pub round: u32,
    /// p_t; its keys are the candidate set K_t.
    pub distribution: BTreeMap<u64, f64>,
    pub previous: BTreeMap<u64, f64>,
    pub estimate: Option<u64>,
    pub earliest_seen: BTreeMap<u64, DateTime<Utc>>,
    pub profiles: BTreeMap<String, SourceProfile>,
    pub history: Vec<RoundRecord>,
}

impl TruthState {
    pub fn new(kind: CasualtyKind) -> Self {
        Self {
            kind,
            round: 0,
            distribution: BTreeMap::new(),
            previous: BTreeMap::new(),
            estimate: None,
            earliest_seen: BTreeMap::new(),
            profiles: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn candidates(&self) -> BTreeSet<u64> {
        self.distribution.keys().copied().collect()
    }

    pub fn reliability(&self, source: &str) -> Option<f64> {
        self.profiles.get(source).map(|p| p.reliability)
    }

    fn check(&self, round: u32, claims: &[ScoredClaim]) -> Result<(), TruthError> {
        if round != self.round + 1 {
            return Err(TruthError::RoundOrder {
                expected: self.round + 1,
                got: round,
            });
        }
        for sc in claims {
            if sc.claim.kind != self.kind {
                return Err(TruthError::KindMismatch {
                    post_id: sc.claim.post_id.clone(),
                    expected: self.kind,
                    got: sc.claim.kind,
                });
            }
            if sc.round != round {
                return Err(TruthError::InvalidClaim {
                    post_id: sc.claim.post_id.clone(),
                    reason: format!("claim round {} in batch {round}", sc.round),
                });
            }
            sc.validate()?;
        }
        Ok(())
    }

    /// Advances the state by one round. Claims must all be for this state's
    /// kind and carry `round`, which must follow the last processed round.
    pub fn run_round(&mut self, round: u32, claims: &[ScoredClaim]) -> Result<RoundOutcome, TruthError> {
        self.check(round, claims)?;
        self.round = round;
        for sc in claims {
            let seen = self
                .earliest_seen
                .entry(sc.claim.value)
                .or_insert(sc.claim.timestamp);
            if sc.claim.timestamp < *seen {
                *seen = sc.claim.timestamp;
            }
        }

        let mut table = information_scores(round, claims);
        if table.is_empty() {
            self.previous = self.distribution.clone();
            return Ok(self.idle_outcome(round, table));
        }
        normalize_scores(&mut table);
        let (table, upper_bounds) = apply_physical_constraints(table, &self.distribution);
        let consensus = consensus_scores(&table);
        // Rounds without positive evidence leave no history, so the first
        // round with evidence still runs with s = 1.
        let first = self.history.is_empty();
        let record = RoundRecord::from_table(&table, consensus.clone());
        if !record.scores.is_empty() {
            self.history.push(record);
        }

        let mut reliabilities = BTreeMap::new();
        for source in table.sources() {
            let s = if first {
                1.0
            } else {
                update_reliability(&self.history, source)
            };
            reliabilities.insert(source.to_string(), s);
        }
        self.record_profiles(&table, &consensus, &reliabilities);

        let distribution = update_distribution(&table, &reliabilities, &upper_bounds, &self.distribution);
        let estimate = aggregate(&distribution);
        let truth_point = match estimate {
            Some(k) if Some(k) != self.estimate => Some(TruthPoint {
                kind: self.kind,
                value: k,
                earliest_timestamp: self.earliest_seen[&k],
                round,
                status: TruthStatus::Pending,
                evidence: table
                    .entries
                    .iter()
                    .filter(|((_, v), e)| *v == k && e.is > 0.0)
                    .flat_map(|(_, e)| e.posts.iter().cloned())
                    .collect(),
            }),
            _ => None,
        };
        let rows = self.score_rows(&table, claims, &consensus, &reliabilities);
        self.previous = std::mem::replace(&mut self.distribution, distribution.clone());
        self.estimate = estimate;
        Ok(RoundOutcome {
            round,
            table,
            upper_bounds,
            consensus,
            reliabilities,
            distribution,
            estimate,
            truth_point,
            rows,
        })
    }

    fn idle_outcome(&self, round: u32, table: ScoreTable) -> RoundOutcome {
        RoundOutcome {
            round,
            table,
            upper_bounds: BTreeMap::new(),
            consensus: BTreeMap::new(),
            reliabilities: BTreeMap::new(),
            distribution: self.distribution.clone(),
            estimate: self.estimate,
            truth_point: None,
            rows: Vec::new(),
        }
    }

    fn record_profiles(
        &mut self,
        table: &ScoreTable,
        consensus: &BTreeMap<u64, f64>,
        reliabilities: &BTreeMap<String, f64>,
    ) {
        for ((source, value), entry) in &table.entries {
            if entry.is <= 0.0 {
                continue;
            }
            let profile = self
                .profiles
                .entry(source.clone())
                .or_insert_with(|| SourceProfile::new(source));
            profile.outputs.insert(*value);
            profile.history.push(ProfileEntry {
                round: table.round,
                value: *value,
                is: entry.is,
                consensus: consensus[value],
            });
        }
        for (source, &s) in reliabilities {
            if let Some(profile) = self.profiles.get_mut(source) {
                profile.reliability = s;
            }
        }
    }

    fn score_rows(
        &self,
        table: &ScoreTable,
        claims: &[ScoredClaim],
        consensus: &BTreeMap<u64, f64>,
        reliabilities: &BTreeMap<String, f64>,
    ) -> Vec<ScoreRow> {
        claims
            .iter()
            .filter_map(|sc| {
                let entry = table.get(&sc.claim.source_account, sc.claim.value)?;
                Some(ScoreRow {
                    round: table.round,
                    source: sc.claim.source_account.clone(),
                    value: sc.claim.value,
                    post_id: sc.claim.post_id.clone(),
                    xi: sc.claim.confidence,
                    r: sc.relevance,
                    rho: sc.independence,
                    is: entry.is,
                    nis: entry.nis,
                    d: consensus[&sc.claim.value],
                    s: reliabilities[&sc.claim.source_account],
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(post: &str, source: &str, minutes: i64, value: u64, round: u32) -> ScoredClaim {
        let origin: DateTime<Utc> = "2022-09-05T04:52:18Z".parse().unwrap();
        ScoredClaim {
            claim: CasualtyClaim {
                post_id: post.into(),
                source_account: source.into(),
                timestamp: origin + chrono::Duration::minutes(minutes),
                kind: CasualtyKind::Deaths,
                value,
                place: None,
                confidence: 0.8,
            },
            relevance: 0.5,
            independence: 1.0,
            round,
        }
    }

    #[test]
    fn empty_batch_carries_state() {
        let mut st = TruthState::new(CasualtyKind::Deaths);
        st.run_round(1, &[sc("a", "s1", 10, 7, 1)]).unwrap();
        let before = st.distribution.clone();
        let out = st.run_round(2, &[]).unwrap();
        assert!(out.truth_point.is_none());
        assert_eq!(st.distribution, before);
        assert_eq!(st.estimate, Some(7));
        assert_eq!(st.round, 2);
    }

    #[test]
    fn first_estimate_emits_point() {
        let mut st = TruthState::new(CasualtyKind::Deaths);
        let out = st.run_round(1, &[sc("a", "s1", 10, 7, 1)]).unwrap();
        let tp = out.truth_point.unwrap();
        assert_eq!(tp.value, 7);
        assert_eq!(tp.status, TruthStatus::Pending);
        assert_eq!(tp.evidence, vec!["a"]);
        assert_eq!(out.reliabilities["s1"], 1.0);
    }

    #[test]
    fn unchanged_estimate_emits_nothing() {
        let mut st = TruthState::new(CasualtyKind::Deaths);
        st.run_round(1, &[sc("a", "s1", 10, 7, 1)]).unwrap();
        let out = st.run_round(2, &[sc("b", "s2", 40, 7, 2)]).unwrap();
        assert!(out.truth_point.is_none());
    }

    #[test]
    fn earliest_timestamp_comes_from_first_report() {
        let mut st = TruthState::new(CasualtyKind::Deaths);
        st.run_round(
            1,
            &[sc("a", "s1", 10, 7, 1), sc("a2", "s5", 12, 7, 1), sc("b", "s2", 20, 21, 1)],
        )
        .unwrap();
        assert_eq!(st.estimate, Some(7));
        let out = st
            .run_round(2, &[sc("c", "s3", 40, 21, 2), sc("d", "s4", 45, 21, 2)])
            .unwrap();
        let tp = out.truth_point.unwrap();
        assert_eq!(tp.value, 21);
        assert_eq!(tp.earliest_timestamp, st.earliest_seen[&21]);
        assert_eq!(
            (tp.earliest_timestamp - sc("x", "x", 20, 0, 1).claim.timestamp).num_seconds(),
            0
        );
    }

    #[test]
    fn stale_lower_value_is_pruned() {
        let mut st = TruthState::new(CasualtyKind::Deaths);
        st.run_round(1, &[sc("a", "s1", 10, 21, 1)]).unwrap();
        let out = st.run_round(2, &[sc("b", "s2", 40, 7, 2)]).unwrap();
        assert!(out.table.is_empty());
        assert_eq!(st.estimate, Some(21));
        assert!(out.truth_point.is_none());
    }

    #[test]
    fn out_of_order_round_is_rejected() {
        let mut st = TruthState::new(CasualtyKind::Deaths);
        assert_eq!(
            st.run_round(2, &[]).unwrap_err(),
            TruthError::RoundOrder {
                expected: 1,
                got: 2
            }
        );
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut st = TruthState::new(CasualtyKind::Injuries);
        assert!(matches!(
            st.run_round(1, &[sc("a", "s1", 10, 7, 1)]),
            Err(TruthError::KindMismatch { .. })
        ));
    }

    #[test]
    fn invalid_scores_are_rejected() {
        let mut st = TruthState::new(CasualtyKind::Deaths);
        let mut bad = sc("a", "s1", 10, 7, 1);
        bad.relevance = 1.0;
        assert!(matches!(
            st.run_round(1, &[bad]),
            Err(TruthError::InvalidClaim { .. })
        ));
    }

    #[test]
    fn forwarded_copies_do_not_outvote_originals() {
        let mut st = TruthState::new(CasualtyKind::Deaths);
        let mut batch = vec![sc("fake", "liar", 5, 16, 1)];
        for n in 0..20 {
            let mut fwd = sc(&format!("fwd{n}"), &format!("bot{n}"), 6, 16, 1);
            fwd.independence = 0.0;
            batch.push(fwd);
        }
        batch.push(sc("t1", "agency", 7, 4, 1));
        batch.push(sc("t2", "daily", 8, 4, 1));
        let out = st.run_round(1, &batch).unwrap();
        assert_eq!(out.estimate, Some(4));
    }
}
