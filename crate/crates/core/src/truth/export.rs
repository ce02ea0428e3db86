//! CSV exports of truth points and per-claim scores.

use std::collections::BTreeMap;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{TruthPoint, TruthStatus};
use crate::extract::CasualtyKind;

pub const TRUTH_HEADER: [&str; 5] = ["kind", "value", "earliest_timestamp", "round", "status"];
pub const SCORES_HEADER: [&str; 10] = ["round", "source", "value", "xi", "r", "rho", "IS", "NIS", "D", "s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub round: u32,
    pub source: String,
    pub value: u64,
    pub post_id: String,
    pub xi: f64,
    pub r: f64,
    pub rho: f64,
    pub is: f64,
    pub nis: f64,
    pub d: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthCsvRow {
    pub kind: CasualtyKind,
    pub value: u64,
    pub earliest_timestamp: DateTime<Utc>,
    pub round: u32,
    pub status: TruthStatus,
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn write_truth_csv<'a, I>(points: I) -> String
where
    I: IntoIterator<Item = &'a TruthPoint>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRUTH_HEADER).expect("in-memory write");
    for tp in points {
        w.write_record([
            tp.kind.as_str().to_string(),
            tp.value.to_string(),
            timestamp(tp.earliest_timestamp),
            tp.round.to_string(),
            tp.status.as_str().to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn read_truth_csv(data: &str) -> Result<Vec<TruthCsvRow>, String> {
    let mut reader = csv::Reader::from_reader(data.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().ne(TRUTH_HEADER) {
        return Err(format!("unexpected header {headers:?}"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| e.to_string())?;
        rows.push(TruthCsvRow {
            kind: r[0].parse()?,
            value: r[1].parse().map_err(|e| format!("value: {e}"))?,
            earliest_timestamp: r[2].parse().map_err(|e| format!("timestamp: {e}"))?,
            round: r[3].parse().map_err(|e| format!("round: {e}"))?,
            status: r[4].parse()?,
        });
    }
    Ok(rows)
}

pub fn write_scores_csv<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = &'a ScoreRow>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCORES_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.source.clone(),
            r.value.to_string(),
            r.xi.to_string(),
            r.r.to_string(),
            r.rho.to_string(),
            r.is.to_string(),
            r.nis.to_string(),
            r.d.to_string(),
            r.s.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Hourly view of per-round estimates: the estimate of the last round ending
/// in each hour since origin. Hour `h` covers rounds ending in (h−1, h].
pub fn hourly_latest(estimates: &[(u32, Option<u64>)], cadence_minutes: u32) -> Vec<(u32, u64)> {
    let mut by_hour: BTreeMap<u32, u64> = BTreeMap::new();
    for &(round, estimate) in estimates {
        if let Some(k) = estimate {
            let end_minutes = round * cadence_minutes;
            by_hour.insert(end_minutes.div_ceil(60), k);
        }
    }
    by_hour.into_iter().collect()
}
