//! Seeded random truth-discovery instances and conversions to library types.

#![allow(dead_code)]

use chrono::{DateTime, TimeDelta, Utc};
use quaketruth_core::extract::{CasualtyClaim, CasualtyKind};
use quaketruth_core::truth::ScoredClaim;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracle::Claim;

pub fn origin() -> DateTime<Utc> {
    "2022-09-05T04:52:18Z".parse().unwrap()
}

/// Rounds of claims; at most 5 sources, 4 values and 6 rounds.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Vec<Vec<Claim>> {
    let n_sources = rng.gen_range(1..=5);
    let n_values = rng.gen_range(1..=4);
    let mut pool: Vec<u64> = Vec::new();
    while pool.len() < n_values {
        let v = rng.gen_range(0..60);
        if !pool.contains(&v) {
            pool.push(v);
        }
    }
    let rounds = rng.gen_range(1..=6);
    (0..rounds)
        .map(|_| {
            let n = rng.gen_range(0..=7);
            (0..n)
                .map(|_| Claim {
                    source: format!("s{}", rng.gen_range(0..n_sources)),
                    value: pool[rng.gen_range(0..pool.len())],
                    xi: rng.gen_range(0.05..0.95),
                    r: rng.gen_range(0.05..0.95),
                    rho: if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.0..=1.0) },
                })
                .collect()
        })
        .collect()
}

pub fn scored(claims: &[Claim], round: u32) -> Vec<ScoredClaim> {
    claims
        .iter()
        .enumerate()
        .map(|(u, c)| ScoredClaim {
            claim: CasualtyClaim {
                post_id: format!("r{round}-p{u}"),
                source_account: c.source.clone(),
                timestamp: origin() + TimeDelta::minutes(30 * (round as i64 - 1) + u as i64),
                kind: CasualtyKind::Deaths,
                value: c.value,
                place: None,
                confidence: c.xi,
            },
            relevance: c.r,
            independence: c.rho,
            round,
        })
        .collect()
}

pub fn claim(source: &str, value: u64, xi: f64, r: f64, rho: f64) -> Claim {
    Claim {
        source: source.into(),
        value,
        xi,
        r,
        rho,
    }
}
