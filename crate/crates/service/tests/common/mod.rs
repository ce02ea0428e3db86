#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use quaketruth::app::{App, RegisterPayload};
use quaketruth::{Config, Pipeline};
use quaketruth_core::ingest::{Platform, RawPost};

pub const LUDING: &str = "luding-2022";

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn config(data_dir: &Path) -> Config {
    Config {
        data_dir: data_dir.to_path_buf(),
        fixtures_dir: fixtures_dir(),
        ..Config::default()
    }
}

pub fn offline_app(config: Config) -> App {
    let pipeline = Pipeline::offline(&config).unwrap();
    App::with_pipeline(config, pipeline).unwrap()
}

pub fn payload(name: &str) -> RegisterPayload {
    let path = fixtures_dir().join("events").join(format!("{name}.json"));
    let mut p: RegisterPayload = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    p.replay = p.replay.map(|r| path.parent().unwrap().join(r));
    p
}

pub fn luding_origin() -> DateTime<Utc> {
    "2022-09-05T04:52:18Z".parse().unwrap()
}

/// Live (no replay) Luding-like payload.
pub fn live_payload(id: &str) -> RegisterPayload {
    RegisterPayload {
        replay: None,
        event_id: id.into(),
        ..payload("luding")
    }
}

pub fn replayed_luding(data_dir: &Path) -> App {
    let app = offline_app(config(data_dir));
    app.register_event(payload("luding")).unwrap();
    app.run_replay(LUDING).unwrap();
    app
}

pub fn post(id: &str, account: &str, minutes: i64, text: &str) -> RawPost {
    RawPost {
        post_id: id.into(),
        source_account: account.into(),
        platform: Platform::Social,
        verified: false,
        timestamp: luding_origin() + TimeDelta::minutes(minutes),
        language: "en".into(),
        text: text.into(),
        is_forward: false,
        cited_links: vec![],
    }
}
