//! Event records, per-event runtimes and the operations behind the API and
//! CLI.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, TimeDelta, Utc};
use quaketruth_core::classify::FilterScores;
use quaketruth_core::extract::{validate_claim, CasualtyKind};
use quaketruth_core::ingest::{
    language_histogram, load_replay, round_of, round_window, should_trigger, EarthquakeEvent,
    Platform, RawPost, SeenPosts, TriggerConfig,
};
use quaketruth_core::project::{
    bin_probabilities, init_prior, project_final, update_posterior, write_bins_csv, BinReport,
    Observation, PosteriorGrid, PriorSpec, Projection, DEFAULT_SIGMA_OBS,
};
use quaketruth_core::truth::{
    relevance_score, write_scores_csv, write_truth_csv, IndependenceScorer, ScoreRow,
    ScoredClaim, TruthPoint, TruthState, TruthStatus,
};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::pipeline::Pipeline;
use crate::store::{EventStore, Log};
use crate::{Config, ServiceError};

/// Observations earlier than one minute after origin are moved to one minute.
const MIN_OBSERVATION_HOURS: f64 = 1.0 / 60.0;

fn default_median() -> f64 {
    100.0
}

fn default_dispersion() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA_OBS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterPayload {
    pub event_id: String,
    pub magnitude: f64,
    pub region_names: Vec<String>,
    pub origin_time: DateTime<Utc>,
    #[serde(default = "default_median")]
    pub prior_median_deaths: f64,
    #[serde(default = "default_dispersion")]
    pub prior_dispersion_log10: f64,
    #[serde(default = "default_sigma")]
    pub sigma_obs: f64,
    /// Replay file; relative paths resolve against the fixtures directory.
    #[serde(default)]
    pub replay: Option<PathBuf>,
    /// Restricts live queries to these dictionary languages.
    #[serde(default)]
    pub languages: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSettings {
    pub cadence_minutes: u32,
    pub auto_approve: bool,
    pub independence_window: usize,
}

/// The registration record, immutable once written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event: EarthquakeEvent,
    pub prior: PriorSpec,
    pub replay: Option<PathBuf>,
    pub languages: Option<Vec<String>>,
    pub settings: EventSettings,
    pub registered_at: DateTime<Utc>,
}

impl EventRecord {
    fn cadence(&self) -> TimeDelta {
        TimeDelta::minutes(self.settings.cadence_minutes as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventStatus {
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostLine {
    pub round: u32,
    pub post: RawPost,
    pub filter: Option<FilterScores>,
    pub independence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPointRecord {
    pub id: String,
    #[serde(flatten)]
    pub point: TruthPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewKind {
    Approve,
    Reject,
}

impl std::str::FromStr for ReviewKind {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "approve" => Ok(ReviewKind::Approve),
            "reject" => Ok(ReviewKind::Reject),
            other => Err(ServiceError::Input(format!("unknown review action {other:?}"))),
        }
    }
}

/// One line of the review audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewAction {
    pub tp_id: String,
    pub action: ReviewKind,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub event_id: String,
    pub round: u32,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub fetched: usize,
    pub new_posts: usize,
    pub filtered: usize,
    pub claims: usize,
    pub truth_points: Vec<String>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimView {
    pub round: u32,
    pub post_id: String,
    pub source_account: String,
    pub platform: Platform,
    pub verified: bool,
    pub language: String,
    pub timestamp: DateTime<Utc>,
    pub hours_since_origin: f64,
    pub kind: CasualtyKind,
    pub value: u64,
    pub xi: f64,
    pub r: f64,
    pub rho: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPointView {
    pub id: String,
    pub event_id: String,
    pub kind: CasualtyKind,
    pub value: u64,
    pub earliest_timestamp: DateTime<Utc>,
    pub hours_since_origin: f64,
    pub round: u32,
    pub status: TruthStatus,
    pub evidence: Vec<ClaimView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub event_id: String,
    pub name: String,
    pub magnitude: f64,
    pub origin_time: DateTime<Utc>,
    pub status: EventStatus,
    pub rounds_completed: u32,
    pub deaths: Option<u64>,
    pub injuries: Option<u64>,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDetail {
    #[serde(flatten)]
    pub summary: EventSummary,
    pub record: EventRecord,
    pub languages: BTreeMap<String, usize>,
    pub last_batch: Option<BatchSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionView {
    pub event_id: String,
    pub observations: Vec<Observation>,
    pub latest: BinReport,
    pub projection: Projection,
    pub history: Vec<BinReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    TruthCsv,
    ScoresCsv,
    BinsCsv,
    LanguageCsv,
}

impl std::str::FromStr for ReportKind {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truth_csv" => Ok(ReportKind::TruthCsv),
            "scores_csv" => Ok(ReportKind::ScoresCsv),
            "bins_csv" => Ok(ReportKind::BinsCsv),
            "language_csv" => Ok(ReportKind::LanguageCsv),
            other => Err(ServiceError::Input(format!("unknown report kind {other:?}"))),
        }
    }
}

/// Read-only copy of an event's state, replaced after every write.
#[derive(Debug, Clone)]
pub struct EventView {
    pub record: EventRecord,
    pub status: EventStatus,
    pub rounds: Vec<BatchSummary>,
    pub points: Vec<TruthPointRecord>,
    pub claims: Vec<ClaimView>,
    pub score_rows: BTreeMap<CasualtyKind, Vec<ScoreRow>>,
    pub estimates: BTreeMap<CasualtyKind, Option<u64>>,
    pub languages: BTreeMap<String, usize>,
    pub observations: Vec<Observation>,
    pub bins: Vec<BinReport>,
    pub projection: Projection,
}

impl EventView {
    pub fn event_id(&self) -> &str {
        &self.record.event.event_id
    }

    pub fn summary(&self) -> EventSummary {
        let ev = &self.record.event;
        EventSummary {
            event_id: ev.event_id.clone(),
            name: ev.name(),
            magnitude: ev.magnitude,
            origin_time: ev.origin_time,
            status: self.status,
            rounds_completed: self.rounds.len() as u32,
            deaths: self.estimates.get(&CasualtyKind::Deaths).copied().flatten(),
            injuries: self.estimates.get(&CasualtyKind::Injuries).copied().flatten(),
            pending: self
                .points
                .iter()
                .filter(|p| p.point.status == TruthStatus::Pending)
                .count(),
        }
    }

    pub fn detail(&self) -> EventDetail {
        EventDetail {
            summary: self.summary(),
            record: self.record.clone(),
            languages: self.languages.clone(),
            last_batch: self.rounds.last().cloned(),
        }
    }

    pub fn truth_view(&self, record: &TruthPointRecord) -> TruthPointView {
        let tp = &record.point;
        TruthPointView {
            id: record.id.clone(),
            event_id: self.event_id().to_string(),
            kind: tp.kind,
            value: tp.value,
            earliest_timestamp: tp.earliest_timestamp,
            hours_since_origin: self.record.event.hours_since_origin(tp.earliest_timestamp),
            round: tp.round,
            status: tp.status,
            evidence: self
                .claims
                .iter()
                .filter(|c| c.round == tp.round && c.kind == tp.kind && tp.evidence.contains(&c.post_id))
                .cloned()
                .collect(),
        }
    }

    pub fn truth(&self, status: Option<TruthStatus>) -> Vec<TruthPointView> {
        self.points
            .iter()
            .filter(|p| status.is_none_or(|s| p.point.status == s))
            .map(|p| self.truth_view(p))
            .collect()
    }

    pub fn claims(&self, round: Option<u32>) -> Vec<ClaimView> {
        self.claims
            .iter()
            .filter(|c| round.is_none_or(|r| c.round == r))
            .cloned()
            .collect()
    }

    pub fn projection_view(&self) -> ProjectionView {
        ProjectionView {
            event_id: self.event_id().to_string(),
            observations: self.observations.clone(),
            latest: self.bins.last().cloned().expect("prior report always present"),
            projection: self.projection,
            history: self.bins.clone(),
        }
    }

    pub fn report(&self, kind: ReportKind) -> String {
        match kind {
            ReportKind::TruthCsv => write_truth_csv(self.points.iter().map(|p| &p.point)),
            ReportKind::ScoresCsv => write_scores_csv(
                self.score_rows
                    .get(&CasualtyKind::Deaths)
                    .into_iter()
                    .flatten(),
            ),
            ReportKind::BinsCsv => write_bins_csv(&self.bins),
            ReportKind::LanguageCsv => {
                let mut rows: Vec<(&String, &usize)> = self.languages.iter().collect();
                rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
                let mut out = String::from("language,count\n");
                for (lang, n) in rows {
                    out.push_str(&format!("{lang},{n}\n"));
                }
                out
            }
        }
    }
}

struct ReplaySource {
    by_round: BTreeMap<u32, Vec<RawPost>>,
    last_round: u32,
}

impl ReplaySource {
    fn load(path: &std::path::Path, event: &EarthquakeEvent, cadence: TimeDelta) -> Result<Self, ServiceError> {
        let replay = load_replay(path).map_err(|e| ServiceError::Input(e.to_string()))?;
        if replay.skipped > 0 {
            warn!(path = %path.display(), skipped = replay.skipped, "skipped malformed replay lines");
        }
        let mut by_round: BTreeMap<u32, Vec<RawPost>> = BTreeMap::new();
        for post in replay.posts {
            by_round
                .entry(round_of(event.origin_time, post.timestamp, cadence))
                .or_default()
                .push(post);
        }
        let last_round = by_round.keys().next_back().copied().unwrap_or(1);
        Ok(Self { by_round, last_round })
    }
}

/// Single-writer state of one event.
pub struct EventRuntime {
    store: EventStore,
    replay: Option<ReplaySource>,
    seen: SeenPosts,
    scorer: IndependenceScorer,
    truth: BTreeMap<CasualtyKind, TruthState>,
    grid: PosteriorGrid,
    posts: HashMap<String, RawPost>,
    view: EventView,
}

fn prior_spec(payload: &RegisterPayload) -> PriorSpec {
    PriorSpec {
        median_deaths: payload.prior_median_deaths,
        dispersion_log10: payload.prior_dispersion_log10,
        sigma_obs: payload.sigma_obs,
    }
}

fn valid_event_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.')
}

impl EventRuntime {
    fn fresh(record: EventRecord, store: EventStore) -> Result<Self, ServiceError> {
        let grid = init_prior(&record.prior).map_err(|e| ServiceError::Input(e.to_string()))?;
        let replay = match &record.replay {
            Some(path) => Some(ReplaySource::load(path, &record.event, record.cadence())?),
            None => None,
        };
        let prior_report = bin_probabilities(&grid, record.event.origin_time);
        let view = EventView {
            status: EventStatus::Active,
            rounds: Vec::new(),
            points: Vec::new(),
            claims: Vec::new(),
            score_rows: BTreeMap::new(),
            estimates: CasualtyKind::ALL.into_iter().map(|k| (k, None)).collect(),
            languages: BTreeMap::new(),
            observations: Vec::new(),
            bins: vec![prior_report],
            projection: project_final(&grid),
            record,
        };
        Ok(Self {
            store,
            replay,
            seen: SeenPosts::new(),
            scorer: IndependenceScorer::new(view.record.settings.independence_window),
            truth: CasualtyKind::ALL
                .into_iter()
                .map(|k| (k, TruthState::new(k)))
                .collect(),
            grid,
            posts: HashMap::new(),
            view,
        })
    }

    /// Rebuilds the runtime from its logs: committed posts restore the
    /// dedup set, independence window and language counts; committed claims
    /// are replayed through truth discovery; reviews are re-applied in order.
    pub fn recover(store: EventStore) -> Result<Self, ServiceError> {
        let record: EventRecord = store.record()?;
        let rounds: Vec<BatchSummary> = store.read(Log::Rounds)?;
        let committed = rounds.len() as u32;
        store.truncate_after::<BatchSummary, _>(Log::Rounds, |_| true)?;
        store.truncate_after::<PostLine, _>(Log::Posts, |l| l.round <= committed)?;
        store.truncate_after::<ScoredClaim, _>(Log::Claims, |c| c.round <= committed)?;
        store.truncate_after::<TruthPointRecord, _>(Log::Truth, |t| t.point.round <= committed)?;
        store.truncate_after::<ReviewAction, _>(Log::Reviews, |_| true)?;

        let mut rt = Self::fresh(record, store)?;
        let post_lines: Vec<PostLine> = rt.store.read(Log::Posts)?;
        let claims: Vec<ScoredClaim> = rt.store.read(Log::Claims)?;
        let logged_points: Vec<TruthPointRecord> = rt.store.read(Log::Truth)?;

        let mut round_posts: BTreeMap<u32, Vec<RawPost>> = BTreeMap::new();
        for line in post_lines {
            rt.seen.dedup_exact(vec![line.post.clone()]);
            if line.filter.is_some() {
                rt.scorer.observe(&line.post);
                rt.posts.insert(line.post.post_id.clone(), line.post.clone());
            }
            round_posts.entry(line.round).or_default().push(line.post);
        }
        for posts in round_posts.values() {
            for (lang, n) in language_histogram(posts.iter()) {
                *rt.view.languages.entry(lang).or_insert(0) += n;
            }
        }
        let mut by_round: BTreeMap<u32, Vec<ScoredClaim>> = BTreeMap::new();
        for c in claims {
            by_round.entry(c.round).or_default().push(c);
        }
        for summary in rounds {
            let claims = by_round.remove(&summary.round).unwrap_or_default();
            let points = rt.apply_round(summary.round, &claims)?;
            let ids: Vec<&str> = points.iter().map(|p| p.id.as_str()).collect();
            if ids != summary.truth_points.iter().map(String::as_str).collect::<Vec<_>>() {
                warn!(round = summary.round, ?ids, logged = ?summary.truth_points, "recomputed truth points differ from log");
            }
            rt.view.rounds.push(summary);
        }
        if logged_points.len() != rt.view.points.len() {
            warn!(
                logged = logged_points.len(),
                recomputed = rt.view.points.len(),
                "truth log length differs from recomputation"
            );
        }
        for action in rt.store.read::<ReviewAction>(Log::Reviews)? {
            rt.apply_review(&action)?;
        }
        rt.update_status();
        Ok(rt)
    }

    fn update_status(&mut self) {
        if let Some(replay) = &self.replay {
            if self.view.rounds.len() as u32 >= replay.last_round {
                self.view.status = EventStatus::Closed;
            }
        }
    }

    pub fn view(&self) -> &EventView {
        &self.view
    }

    fn claim_view(&self, sc: &ScoredClaim) -> ClaimView {
        let post = self.posts.get(&sc.claim.post_id);
        ClaimView {
            round: sc.round,
            post_id: sc.claim.post_id.clone(),
            source_account: sc.claim.source_account.clone(),
            platform: post.map_or(Platform::Social, |p| p.platform),
            verified: post.is_some_and(|p| p.verified),
            language: post.map(|p| p.language.clone()).unwrap_or_default(),
            timestamp: sc.claim.timestamp,
            hours_since_origin: self.view.record.event.hours_since_origin(sc.claim.timestamp),
            kind: sc.claim.kind,
            value: sc.claim.value,
            xi: sc.claim.confidence,
            r: sc.relevance,
            rho: sc.independence,
            text: post.map(|p| p.text.clone()).unwrap_or_default(),
        }
    }

    /// Runs truth discovery for both kinds over one round's claims.
    fn apply_round(&mut self, round: u32, claims: &[ScoredClaim]) -> Result<Vec<TruthPointRecord>, ServiceError> {
        let event_id = self.view.record.event.event_id.clone();
        let mut emitted = Vec::new();
        for kind in CasualtyKind::ALL {
            let batch: Vec<ScoredClaim> = claims.iter().filter(|c| c.claim.kind == kind).cloned().collect();
            let state = self.truth.get_mut(&kind).expect("state per kind");
            let outcome = state
                .run_round(round, &batch)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            self.view.estimates.insert(kind, outcome.estimate);
            self.view.score_rows.entry(kind).or_default().extend(outcome.rows);
            if let Some(point) = outcome.truth_point {
                emitted.push(TruthPointRecord {
                    id: format!("{event_id}:{}:{round}", kind.as_str()),
                    point,
                });
            }
        }
        let views: Vec<ClaimView> = claims.iter().map(|c| self.claim_view(c)).collect();
        self.view.claims.extend(views);
        self.view.points.extend(emitted.iter().cloned());
        Ok(emitted)
    }

    fn next_round(&self) -> u32 {
        self.view.rounds.len() as u32 + 1
    }

    /// One ingest → classify → extract → truth pass over the next window.
    pub fn run_batch(&mut self, pipeline: &Pipeline) -> Result<BatchSummary, ServiceError> {
        if self.view.status == EventStatus::Closed {
            return Err(ServiceError::State(format!(
                "event {} is closed",
                self.view.event_id()
            )));
        }
        let record = self.view.record.clone();
        let event = &record.event;
        let round = self.next_round();
        let (window_start, window_end) = round_window(event.origin_time, round, record.cadence());
        let mut errors = Vec::new();

        let fetched = match &self.replay {
            Some(replay) => replay.by_round.get(&round).cloned().unwrap_or_default(),
            None => {
                let (posts, errs) =
                    pipeline.fetch_window(event, record.languages.as_deref(), round, record.cadence());
                errors.extend(errs);
                posts
            }
        };
        let fetched_count = fetched.len();
        let new_posts = self.seen.dedup_exact(fetched);

        let (scores, errs) = pipeline.filter(&new_posts);
        errors.extend(errs);
        let mut post_lines = Vec::with_capacity(new_posts.len());
        let mut kept = Vec::new();
        for (post, filter) in new_posts.iter().zip(scores) {
            let independence = filter.map(|_| self.scorer.score_and_observe(post));
            if let (Some(f), Some(rho)) = (filter, independence) {
                kept.push((post.clone(), f, rho));
                self.posts.insert(post.post_id.clone(), post.clone());
            }
            post_lines.push(PostLine {
                round,
                post: post.clone(),
                filter,
                independence,
            });
        }

        let kept_posts: Vec<RawPost> = kept.iter().map(|(p, _, _)| p.clone()).collect();
        let (answers, errs) = pipeline.extract(&kept_posts, event);
        errors.extend(errs);
        let mut claims = Vec::new();
        for ((post, scores, rho), answer) in kept.iter().zip(answers) {
            let Some(answer) = answer else { continue };
            let r = relevance_score(
                scores.event_prob,
                scores.stats_prob,
                answer.field_confidences.event_match,
            );
            for claim in validate_claim(&answer, event, post) {
                claims.push(ScoredClaim {
                    claim,
                    relevance: r,
                    independence: *rho,
                    round,
                });
            }
        }

        for (lang, n) in language_histogram(new_posts.iter()) {
            *self.view.languages.entry(lang).or_insert(0) += n;
        }
        let emitted = self.apply_round(round, &claims)?;
        let summary = BatchSummary {
            event_id: event.event_id.clone(),
            round,
            window_start,
            window_end,
            fetched: fetched_count,
            new_posts: new_posts.len(),
            filtered: kept.len(),
            claims: claims.len(),
            truth_points: emitted.iter().map(|p| p.id.clone()).collect(),
            errors,
        };

        self.store.append(Log::Posts, &post_lines)?;
        self.store.append(Log::Claims, &claims)?;
        self.store.append(Log::Truth, &emitted)?;
        self.store.append(Log::Rounds, std::slice::from_ref(&summary))?;
        self.view.rounds.push(summary.clone());
        self.update_status();

        if record.settings.auto_approve {
            for point in &emitted {
                self.review(&point.id, ReviewKind::Approve, "auto-approve", Utc::now())?;
            }
        }
        info!(
            event = %event.event_id,
            round,
            fetched = summary.fetched,
            filtered = summary.filtered,
            claims = summary.claims,
            emitted = summary.truth_points.len(),
            "batch complete"
        );
        Ok(summary)
    }

    fn apply_review(&mut self, action: &ReviewAction) -> Result<TruthPointRecord, ServiceError> {
        let idx = self
            .view
            .points
            .iter()
            .position(|p| p.id == action.tp_id)
            .ok_or_else(|| ServiceError::NotFound(format!("truth point {}", action.tp_id)))?;
        let current = self.view.points[idx].point.status;
        if current != TruthStatus::Pending {
            return Err(ServiceError::State(format!(
                "truth point {} is already {}",
                action.tp_id,
                current.as_str()
            )));
        }
        let point = &mut self.view.points[idx].point;
        match action.action {
            ReviewKind::Reject => point.status = TruthStatus::Rejected,
            ReviewKind::Approve => {
                point.status = TruthStatus::Approved;
                if point.kind == CasualtyKind::Deaths {
                    let hours = self.view.record.event.hours_since_origin(point.earliest_timestamp);
                    let obs = Observation {
                        t: hours.max(MIN_OBSERVATION_HOURS),
                        n_obs: point.value,
                    };
                    let at = point.earliest_timestamp;
                    update_posterior(&mut self.grid, &obs).map_err(|e| ServiceError::Internal(e.to_string()))?;
                    self.view.observations.push(obs);
                    self.view.bins.push(bin_probabilities(&self.grid, at));
                    self.view.projection = project_final(&self.grid);
                }
            }
        }
        Ok(self.view.points[idx].clone())
    }

    pub fn review(
        &mut self,
        tp_id: &str,
        action: ReviewKind,
        actor: &str,
        at: DateTime<Utc>,
    ) -> Result<TruthPointRecord, ServiceError> {
        let point = self
            .view
            .points
            .iter()
            .find(|p| p.id == tp_id)
            .ok_or_else(|| ServiceError::NotFound(format!("truth point {tp_id}")))?;
        if point.point.status != TruthStatus::Pending {
            return Err(ServiceError::State(format!(
                "truth point {tp_id} is already {}",
                point.point.status.as_str()
            )));
        }
        if actor.trim().is_empty() {
            return Err(ServiceError::Input("actor is required".into()));
        }
        let action = ReviewAction {
            tp_id: tp_id.to_string(),
            action,
            actor: actor.to_string(),
            timestamp: at,
        };
        self.store.append(Log::Reviews, std::slice::from_ref(&action))?;
        self.apply_review(&action)
    }

    pub fn grid(&self) -> &PosteriorGrid {
        &self.grid
    }
}

struct EventHandle {
    runtime: Mutex<EventRuntime>,
    snapshot: RwLock<Arc<EventView>>,
}

impl EventHandle {
    fn new(runtime: EventRuntime) -> Self {
        let snapshot = RwLock::new(Arc::new(runtime.view().clone()));
        Self {
            runtime: Mutex::new(runtime),
            snapshot,
        }
    }

    fn snapshot(&self) -> Arc<EventView> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Runs `f` as the event's single writer and publishes a new snapshot.
    fn write<T>(&self, f: impl FnOnce(&mut EventRuntime) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let mut rt = self.runtime.lock().expect("runtime lock");
        let result = f(&mut rt);
        *self.snapshot.write().expect("snapshot lock") = Arc::new(rt.view().clone());
        result
    }
}

/// Registry of events plus the shared pipeline.
pub struct App {
    config: Config,
    pipeline: Arc<Pipeline>,
    events: RwLock<BTreeMap<String, Arc<EventHandle>>>,
    registration: Mutex<()>,
}

impl App {
    /// Builds the pipeline from `config` and recovers persisted events.
    pub fn open(config: Config) -> Result<Self, ServiceError> {
        let pipeline = Pipeline::from_config(&config)?;
        Self::with_pipeline(config, pipeline)
    }

    pub fn with_pipeline(config: Config, pipeline: Pipeline) -> Result<Self, ServiceError> {
        config.validate()?;
        let mut events = BTreeMap::new();
        for dir in EventStore::list(&config.data_dir)? {
            let rt = EventRuntime::recover(EventStore::open(dir))?;
            let id = rt.view().event_id().to_string();
            info!(event = %id, rounds = rt.view().rounds.len(), "recovered event");
            events.insert(id, Arc::new(EventHandle::new(rt)));
        }
        Ok(Self {
            config,
            pipeline: Arc::new(pipeline),
            events: RwLock::new(events),
            registration: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    fn handle(&self, event_id: &str) -> Result<Arc<EventHandle>, ServiceError> {
        self.events
            .read()
            .expect("registry lock")
            .get(event_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("event {event_id}")))
    }

    pub fn register_event(&self, payload: RegisterPayload) -> Result<EventSummary, ServiceError> {
        let _guard = self.registration.lock().expect("registration lock");
        if !valid_event_id(&payload.event_id) {
            return Err(ServiceError::Input(format!(
                "event_id {:?} must be 1-128 characters of [A-Za-z0-9._-]",
                payload.event_id
            )));
        }
        let mut event = EarthquakeEvent {
            event_id: payload.event_id.clone(),
            magnitude: payload.magnitude,
            region_names: payload.region_names.clone(),
            origin_time: payload.origin_time,
            trigger_threshold_met: false,
        };
        event.validate().map_err(|e| ServiceError::Input(e.to_string()))?;
        if self.events.read().expect("registry lock").contains_key(&event.event_id) {
            return Err(ServiceError::Conflict(format!("event {} already exists", event.event_id)));
        }
        let trigger = TriggerConfig {
            magnitude_threshold: self.config.trigger_magnitude,
        };
        if !should_trigger(&event, &trigger) {
            return Err(ServiceError::Rejected("below trigger threshold".into()));
        }
        event.trigger_threshold_met = true;
        let prior = prior_spec(&payload);
        init_prior(&prior).map_err(|e| ServiceError::Input(e.to_string()))?;
        let replay = payload.replay.as_ref().map(|p| {
            if p.is_relative() && !p.exists() {
                self.config.fixtures_dir.join(p)
            } else {
                p.clone()
            }
        });
        let replay = match replay {
            Some(p) => Some(std::path::absolute(&p).map_err(|e| ServiceError::Input(format!("{}: {e}", p.display())))?),
            None => None,
        };
        if let Some(p) = &replay {
            if !p.is_file() {
                return Err(ServiceError::Input(format!("replay file {} not found", p.display())));
            }
        }
        let record = EventRecord {
            event,
            prior,
            replay,
            languages: payload.languages,
            settings: EventSettings {
                cadence_minutes: self.config.cadence_minutes,
                auto_approve: self.config.auto_approve,
                independence_window: self.config.independence_window,
            },
            registered_at: Utc::now(),
        };
        // Load the replay before touching disk so a bad file leaves no record.
        if let Some(p) = &record.replay {
            ReplaySource::load(p, &record.event, record.cadence())?;
        }
        let store = EventStore::create(&self.config.data_dir, &record.event.event_id, &record)?;
        let rt = EventRuntime::fresh(record, store)?;
        let summary = rt.view().summary();
        self.events
            .write()
            .expect("registry lock")
            .insert(summary.event_id.clone(), Arc::new(EventHandle::new(rt)));
        info!(event = %summary.event_id, "registered event");
        Ok(summary)
    }

    pub fn list_events(&self) -> Vec<EventSummary> {
        self.events
            .read()
            .expect("registry lock")
            .values()
            .map(|h| h.snapshot().summary())
            .collect()
    }

    pub fn snapshot(&self, event_id: &str) -> Result<Arc<EventView>, ServiceError> {
        Ok(self.handle(event_id)?.snapshot())
    }

    pub fn event(&self, event_id: &str) -> Result<EventDetail, ServiceError> {
        Ok(self.snapshot(event_id)?.detail())
    }

    pub fn run_batch(&self, event_id: &str) -> Result<BatchSummary, ServiceError> {
        let handle = self.handle(event_id)?;
        handle.write(|rt| rt.run_batch(&self.pipeline))
    }

    /// Runs batches until the event's replay file is exhausted.
    pub fn run_replay(&self, event_id: &str) -> Result<Vec<BatchSummary>, ServiceError> {
        let handle = self.handle(event_id)?;
        if handle.snapshot().record.replay.is_none() {
            return Err(ServiceError::State(format!("event {event_id} has no replay file")));
        }
        let mut out = Vec::new();
        while handle.snapshot().status == EventStatus::Active {
            out.push(self.run_batch(event_id)?);
        }
        Ok(out)
    }

    pub fn claims(&self, event_id: &str, round: Option<u32>) -> Result<Vec<ClaimView>, ServiceError> {
        Ok(self.snapshot(event_id)?.claims(round))
    }

    pub fn truth(&self, event_id: &str, status: Option<TruthStatus>) -> Result<Vec<TruthPointView>, ServiceError> {
        Ok(self.snapshot(event_id)?.truth(status))
    }

    /// Truth point ids have the form `{event_id}:{kind}:{round}`.
    pub fn review(&self, tp_id: &str, action: ReviewKind, actor: &str) -> Result<TruthPointView, ServiceError> {
        let event_id = tp_id
            .split(':')
            .next()
            .filter(|_| tp_id.matches(':').count() == 2)
            .ok_or_else(|| ServiceError::NotFound(format!("truth point {tp_id}")))?;
        let handle = self.handle(event_id)?;
        let record = handle.write(|rt| rt.review(tp_id, action, actor, Utc::now()))?;
        Ok(handle.snapshot().truth_view(&record))
    }

    pub fn projection(&self, event_id: &str) -> Result<ProjectionView, ServiceError> {
        Ok(self.snapshot(event_id)?.projection_view())
    }

    pub fn report(&self, event_id: &str, kind: ReportKind) -> Result<String, ServiceError> {
        Ok(self.snapshot(event_id)?.report(kind))
    }

    /// Posterior grid of an event, for inspection.
    pub fn grid(&self, event_id: &str) -> Result<PosteriorGrid, ServiceError> {
        let handle = self.handle(event_id)?;
        let rt = handle.runtime.lock().expect("runtime lock");
        Ok(rt.grid().clone())
    }

    /// Ids of active events without a replay file.
    pub fn live_events(&self) -> Vec<(String, DateTime<Utc>)> {
        self.events
            .read()
            .expect("registry lock")
            .values()
            .map(|h| h.snapshot())
            .filter(|v| v.status == EventStatus::Active && v.record.replay.is_none())
            .map(|v| {
                let next = v.rounds.len() as u32 + 1;
                let (_, end) = round_window(v.record.event.origin_time, next, v.record.cadence());
                (v.event_id().to_string(), end)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_ids_are_path_safe() {
        assert!(valid_event_id("luding-2022"));
        assert!(valid_event_id("us7000i9bw"));
        assert!(!valid_event_id("../etc"));
        assert!(!valid_event_id("a:b"));
        assert!(!valid_event_id(""));
    }

    #[test]
    fn report_kinds_parse() {
        assert_eq!("bins_csv".parse::<ReportKind>().unwrap(), ReportKind::BinsCsv);
        assert!(matches!("pdf".parse::<ReportKind>(), Err(ServiceError::Input(_))));
    }

    #[test]
    fn payload_defaults() {
        let p: RegisterPayload = serde_json::from_str(
            r#"{"event_id":"e","magnitude":6.8,"region_names":["Luding"],"origin_time":"2022-09-05T04:52:18Z"}"#,
        )
        .unwrap();
        assert_eq!(p.prior_median_deaths, 100.0);
        assert_eq!(p.sigma_obs, 0.2);
        assert!(p.replay.is_none());
    }
}
