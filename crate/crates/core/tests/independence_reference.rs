mod support;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use quaketruth_core::ingest::{Platform, RawPost};
use quaketruth_core::text::normalize;
use quaketruth_core::truth::{independence_score, IndependenceScorer};

use support::instances::origin;
use support::oracle::jaccard_3gram;

fn post(text: &str, forward: bool) -> RawPost {
    RawPost {
        post_id: "p".into(),
        source_account: "a".into(),
        platform: Platform::Social,
        verified: false,
        timestamp: origin(),
        language: "en".into(),
        text: text.into(),
        is_forward: forward,
        cited_links: vec![],
    }
}

#[test]
fn half_shared_pair_matches_brute_force() {
    let earlier = "Luding earthquake: 21 dead";
    let later = "Luding earthquake: 30 confirmed deaths so far";
    let j = jaccard_3gram(&normalize(earlier), &normalize(later));
    let rho = independence_score(&post(later, false), &[normalize(earlier)]);
    assert_abs_diff_eq!(rho, 1.0 - j, epsilon = 1e-12);
    assert!(j > 0.2 && j < 0.8, "pair should share a good part of its shingles: {j}");
}

#[test]
fn forwards_and_exact_copies_score_zero() {
    assert_eq!(independence_score(&post("anything", true), &[]), 0.0);
    let text = "7 killed in Luding";
    assert_eq!(independence_score(&post("7  KILLED in luding", false), &[normalize(text)]), 0.0);
    assert_eq!(independence_score(&post(text, false), &[]), 1.0);
}

proptest! {
    #[test]
    fn scorer_matches_brute_force_max(
        texts in prop::collection::vec("[a-c ]{0,12}", 1..8),
        probe in "[a-c ]{0,12}",
    ) {
        let mut scorer = IndependenceScorer::new(100);
        for t in &texts {
            scorer.observe(&post(t, false));
        }
        let probe_n = normalize(&probe);
        let want = if texts.iter().any(|t| normalize(t) == probe_n) {
            0.0
        } else {
            let best = texts
                .iter()
                .map(|t| {
                    let tn = normalize(t);
                    if tn.is_empty() && probe_n.is_empty() { 1.0 } else { jaccard_3gram(&probe_n, &tn) }
                })
                .fold(0.0, f64::max);
            1.0 - best
        };
        prop_assert!((scorer.score(&post(&probe, false)) - want).abs() <= 1e-12);
    }
}
