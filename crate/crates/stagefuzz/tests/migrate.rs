// SPDX-License-Identifier: Apache-2.0

//! Integration checks for the migration stage against the bundled corpus.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::SeedableRng;

use stagefuzz::corpus::{
    cluster_instances, cluster_signature, ingest_corpus, prioritize, wrap_instance,
};
use stagefuzz_core::bugs::BugSet;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus_path() -> PathBuf {
    root().join("corpus/operators.jsonl")
}

#[test]
fn bundled_corpus_ingests_fully() {
    let (records, report) = ingest_corpus(&corpus_path()).unwrap();
    assert!(records.len() >= 500, "only {} records", records.len());
    assert!(report.skipped.is_empty(), "skipped: {:?}", report.skipped);
}

#[test]
fn wrapped_records_validate_or_reject_without_crash() {
    let (records, _) = ingest_corpus(&corpus_path()).unwrap();
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    for r in &records {
        match wrap_instance(r, &BugSet::empty()) {
            Ok(g) => {
                let report = stagefuzz_core::graph::validate::validate_graph(&g);
                assert!(report.is_empty(), "{}: {report}", r.origin);
                accepted += 1;
            }
            Err(_) => rejected += 1,
        }
    }
    assert!(accepted >= 480, "accepted {accepted}");
    // The bundled negatives stay in the corpus as loader robustness tests.
    assert!((10..=40).contains(&rejected), "rejected {rejected}");
}

#[test]
fn cluster_count_is_stable_across_runs() {
    let (records, _) = ingest_corpus(&corpus_path()).unwrap();
    let a = cluster_instances(&records, 0.0);
    let b = cluster_instances(&records, 0.0);
    assert_eq!(a.len(), b.len());
    assert!(a.len() >= 40, "suspiciously few clusters: {}", a.len());
    let sig_a: Vec<&str> = a.iter().map(|c| c.signature.as_str()).collect();
    let sig_b: Vec<&str> = b.iter().map(|c| c.signature.as_str()).collect();
    assert_eq!(sig_a, sig_b);
}

#[test]
fn prioritized_prefix_hits_every_cluster_exactly() {
    let (records, _) = ingest_corpus(&corpus_path()).unwrap();
    let clusters = cluster_instances(&records, 0.0);
    let order = prioritize(&clusters, 42);
    assert_eq!(order.len(), records.len(), "every record appears once");
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    for &i in &order {
        assert!(seen.insert(i), "record {i} appears twice");
    }
    let k = clusters.len();
    for prefix in 1..=k {
        let sigs: BTreeSet<String> = order[..prefix]
            .iter()
            .map(|&i| cluster_signature(&records[i]))
            .collect();
        assert_eq!(sigs.len(), prefix, "prefix {prefix} must hit {prefix} clusters");
    }
}

#[test]
fn diversity_prefix_coverage_dominates_random_orders() {
    use rand::seq::SliceRandom;

    let (records, _) = ingest_corpus(&corpus_path()).unwrap();
    let clusters = cluster_instances(&records, 0.0);
    let diversity = prioritize(&clusters, 42);
    let coverage_at = |order: &[usize], k: usize| -> usize {
        order[..k]
            .iter()
            .map(|&i| cluster_signature(&records[i]))
            .collect::<BTreeSet<_>>()
            .len()
    };
    for trial in 0..20 {
        let mut random_order: Vec<usize> = (0..records.len()).collect();
        let mut rng = StdRng::seed_from_u64(1000 + trial);
        random_order.shuffle(&mut rng);
        for k in (1..=records.len()).step_by(13) {
            let dc = coverage_at(&diversity, k);
            let rc = coverage_at(&random_order, k);
            assert!(
                dc >= rc,
                "trial {trial}: diversity coverage {dc} < random {rc} at k={k}"
            );
        }
    }
}

#[test]
fn prioritization_is_seed_deterministic() {
    let (records, _) = ingest_corpus(&corpus_path()).unwrap();
    let clusters = cluster_instances(&records, 0.0);
    assert_eq!(prioritize(&clusters, 7), prioritize(&clusters, 7));
    assert_ne!(prioritize(&clusters, 7), prioritize(&clusters, 8));
}
