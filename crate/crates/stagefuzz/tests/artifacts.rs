// SPDX-License-Identifier: Apache-2.0

//! Failure artifacts: deduplication fixtures and reproduction replay.

use std::path::PathBuf;

use stagefuzz::campaign::{replay_artifact, run_campaign, CampaignConfig, StageSel};
use stagefuzz::oracle::{dedup_key, diff_test, Payload, Stage, TestCase};
use stagefuzz_core::bugs::{BugId, BugSet};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn duplicate_failure_fixture_pair_shares_one_signature() {
    // Two Cast-from-I32 records with different shapes and seeds collapse to
    // one loader signature under L2.
    let fixtures = [
        r#"{"kind":"Cast","params":{"to":"F32"},"inputs":[{"shape":[4],"dtype":"I32","src":{"random":5}}],"origin":"fix_a"}"#,
        r#"{"kind":"Cast","params":{"to":"F32"},"inputs":[{"shape":[2,3],"dtype":"I32","src":{"random":99}}],"origin":"fix_b"}"#,
    ];
    let bugs = BugSet::from_ids([BugId::L2]);
    let mut signatures = Vec::new();
    for (i, line) in fixtures.iter().enumerate() {
        let (mut records, _) = stagefuzz::corpus::ingest_corpus_text(line);
        let tc = TestCase {
            id: format!("fix{i}"),
            stage: Stage::Loader,
            payload: Payload::Record(records.remove(0)),
            data_seed: i as u64,
            lineage: String::new(),
        };
        let outcome = diff_test(&tc, &bugs);
        assert!(!outcome.verdict.is_pass());
        signatures.push(dedup_key(&outcome.verdict, &tc));
    }
    assert_eq!(signatures[0], signatures[1]);
}

#[test]
fn saved_reproductions_replay_to_the_same_verdict() {
    let out_dir = std::env::temp_dir().join(format!("sfz_artifacts_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&out_dir);

    let mut cfg = CampaignConfig::with_root(&root());
    cfg.stage = StageSel::All;
    cfg.budget = 600;
    cfg.seed = 13;
    cfg.jobs = 2;
    cfg.bugs = BugSet::from_ids([BugId::L2, BugId::H3, BugId::B1]);
    cfg.out_dir = Some(out_dir.clone());
    let report = run_campaign(&cfg).unwrap();
    assert!(report.verdicts.failures() > 0, "campaign must find seeded bugs");
    assert!(!report.failures.is_empty());

    let mut replayed = 0usize;
    for failure in &report.failures {
        let artifact = failure.artifact.as_ref().expect("artifact saved");
        let meta_path = out_dir.join(artifact);
        let tag = replay_artifact(&meta_path).unwrap();
        let expected = failure.signature.split('|').nth(2).unwrap();
        assert_eq!(tag.name(), expected, "artifact {artifact} diverged on replay");
        replayed += 1;
    }
    assert!(replayed >= 3, "expected several distinct failures, got {replayed}");

    // The report file itself parses and carries the sealed hash.
    let text = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    let parsed = stagefuzz::report::CampaignReport::from_json(&text).unwrap();
    assert_eq!(parsed.content_hash, parsed.compute_hash());
    std::fs::remove_dir_all(&out_dir).ok();
}

#[test]
fn corpus_ingest_skips_malformed_lines_without_aborting() {
    let dir = std::env::temp_dir().join(format!("sfz_badcorpus_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let good = r#"{"kind":"ReLU","params":{},"inputs":[{"shape":[3],"dtype":"F32","src":{"random":1}}],"origin":"ok"}"#;
    let text = format!("{good}\nnot json at all\n{{\"kind\":\"Conv3D\"}}\n{good}\n");
    let path = dir.join("mixed.jsonl");
    std::fs::write(&path, text).unwrap();
    let (records, report) = stagefuzz::corpus::ingest_corpus(&path).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(report.skipped.len(), 2);
    std::fs::remove_dir_all(&dir).ok();
}
