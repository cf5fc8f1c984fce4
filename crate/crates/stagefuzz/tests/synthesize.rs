// SPDX-License-Identifier: Apache-2.0

//! Integration checks for pattern capture and optimization-aware synthesis
//! over the bundled pass tests.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::SeedableRng;

use stagefuzz::synth::{capture_patterns, parse_pattern_library, synthesize};
use stagefuzz_core::generate::{random_graph, GraphGenConfig};
use stagefuzz_core::graph::validate::validate_graph;
use stagefuzz_core::hl::{run_hl_pipeline, OptLevel, PassId};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn capture_yields_patterns_for_every_pass() {
    let report = capture_patterns(&root().join("passtests")).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert!(report.stale_tests.is_empty(), "stale: {:?}", report.stale_tests);
    assert!(report.patterns.len() >= 6, "{} patterns", report.patterns.len());
    let passes: BTreeSet<PassId> = report.patterns.iter().map(|p| p.source_pass).collect();
    assert_eq!(passes.len(), 6, "one pattern per pass at least: {passes:?}");
    for p in &report.patterns {
        assert!(p.fidelity_holds(), "{}/{} lost fidelity", p.source_pass, p.source_rule);
    }
}

#[test]
fn stale_expectation_is_flagged() {
    let dir = std::env::temp_dir().join(format!("sfz_stale_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    // A CSE expectation over a graph with nothing to merge.
    let text = "#expect-pass: CSE cse.merge\n\
                node 0 Input inputs=[] params={name=x} type=F32[2]\n\
                node 1 ReLU inputs=[0] params={} type=F32[2]\n\
                outputs=[1]\n";
    std::fs::write(dir.join("stale.gr"), text).unwrap();
    let report = capture_patterns(&dir).unwrap();
    assert_eq!(report.stale_tests, vec!["stale.gr".to_string()]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn duplicate_tests_deduplicate_patterns() {
    let dir = std::env::temp_dir().join(format!("sfz_dup_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let text = "#expect-pass: FuseElementwise fuse.chain\n\
                node 0 Input inputs=[] params={name=x} type=F32[4]\n\
                node 1 Input inputs=[] params={name=y} type=F32[4]\n\
                node 2 Add inputs=[0,1] params={} type=F32[4]\n\
                node 3 ReLU inputs=[2] params={} type=F32[4]\n\
                outputs=[3]\n";
    std::fs::write(dir.join("a.gr"), text).unwrap();
    std::fs::write(dir.join("b.gr"), text).unwrap();
    let report = capture_patterns(&dir).unwrap();
    assert_eq!(report.patterns.len(), 1);
    assert!(report.duplicates_dropped >= 1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bundled_pattern_library_roundtrips() {
    let text = std::fs::read_to_string(root().join("patterns.plib")).unwrap();
    let patterns = parse_pattern_library(&text).unwrap();
    assert!(patterns.len() >= 6);
    let report = capture_patterns(&root().join("passtests")).unwrap();
    assert_eq!(patterns.len(), report.patterns.len());
    for (a, b) in patterns.iter().zip(report.patterns.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn passtest_seven_fires_fuse_chain_under_level2() {
    // Pass tests sort by filename; the seventh is the fusion chain.
    let mut files: Vec<_> = std::fs::read_dir(root().join("passtests"))
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "gr"))
        .collect();
    files.sort();
    let seventh = &files[6];
    let g = stagefuzz_core::graph::text::parse_graph_file(seventh).unwrap();
    let result = run_hl_pipeline(OptLevel::O2, &g).unwrap();
    assert!(
        result
            .traces
            .iter()
            .any(|t| t.fired && t.rule_id == "fuse.chain"),
        "{} did not fire fuse.chain",
        seventh.display()
    );
}

#[test]
fn synthesis_validity_is_total_over_bundled_patterns() {
    let report = capture_patterns(&root().join("passtests")).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    let cfg = GraphGenConfig::default();
    let mut produced = 0usize;
    for trial in 0..200 {
        let pattern = &report.patterns[trial % report.patterns.len()];
        let seed = random_graph(&mut rng, &cfg);
        if let Ok(g) = synthesize(pattern, &seed, &mut rng) {
            let v = validate_graph(&g);
            assert!(v.is_empty(), "trial {trial}: {v}");
            produced += 1;
        }
    }
    assert!(produced >= 195, "only {produced}/200 syntheses succeeded");
}

#[test]
fn spliced_patterns_fire_their_source_pass() {
    let report = capture_patterns(&root().join("passtests")).unwrap();
    let mut rng = StdRng::seed_from_u64(11);
    let cfg = GraphGenConfig::default();
    let mut fired_passes: BTreeSet<PassId> = BTreeSet::new();
    for trial in 0..240 {
        let pattern = &report.patterns[trial % report.patterns.len()];
        let seed = random_graph(&mut rng, &cfg);
        let Ok(g) = synthesize(pattern, &seed, &mut rng) else {
            continue;
        };
        let result = run_hl_pipeline(OptLevel::O2, &g).unwrap();
        for t in result.traces.iter().filter(|t| t.fired) {
            fired_passes.insert(t.pass);
        }
    }
    assert_eq!(fired_passes.len(), 6, "fired: {fired_passes:?}");
}
