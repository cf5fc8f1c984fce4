// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite: one test per release criterion, each printing a
//! `criterion N: PASS` line with its measured evidence. Budgets, seeds, and
//! tolerances are pinned here.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::SeedableRng;

use stagefuzz::campaign::{run_campaign, CampaignConfig, OrderMode, StageSel};
use stagefuzz::corpus::{cluster_instances, cluster_signature, ingest_corpus, prioritize};
use stagefuzz::regressions::run_regression;
use stagefuzz::report::CampaignReport;
use stagefuzz_core::bugs::{BugId, BugSet};
use stagefuzz_core::compare::{outputs_close, Tolerance};
use stagefuzz_core::generate::{random_graph, random_inputs, GraphGenConfig};
use stagefuzz_core::graph::interp::interpret_graph;
use stagefuzz_core::hl::{run_hl_pipeline, OptLevel};
use stagefuzz_core::ll::run_ll_pipeline;
use stagefuzz_core::loop_ir::interp::interpret_loop;
use stagefuzz_core::lower::{lower_graph, output_buffer_names};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(stage: StageSel, budget: usize, seed: u64) -> CampaignConfig {
    let mut cfg = CampaignConfig::with_root(&root());
    cfg.stage = stage;
    cfg.budget = budget;
    cfg.seed = seed;
    cfg.jobs = 4;
    cfg
}

fn bug_campaign(stage: StageSel, budget: usize, seed: u64, bugs: &[BugId]) -> CampaignReport {
    let mut cfg = config(stage, budget, seed);
    cfg.bugs = BugSet::from_ids(bugs.iter().copied());
    run_campaign(&cfg).expect("campaign runs")
}

/// Criterion 1. Oracle soundness: with no seeded bugs, a combined campaign
/// of 10,000 tests (all three stages, seed 7) yields zero non-Pass
/// verdicts, within the commodity-hardware time budget.
#[test]
fn criterion_1_oracle_soundness() {
    let started = Instant::now();
    let report = run_campaign(&config(StageSel::All, 10_000, 7)).expect("campaign runs");
    let elapsed = started.elapsed();
    assert_eq!(report.tests_run, 10_000);
    assert_eq!(
        report.verdicts.failures(),
        0,
        "false positives: {:?}",
        report.failures
    );
    assert_eq!(report.verdicts.pass, 10_000);
    assert!(
        elapsed.as_secs() <= 600,
        "runtime {}s exceeds 10 minutes",
        elapsed.as_secs()
    );
    println!(
        "criterion 1: PASS - 10000/10000 Pass verdicts, 0 false positives, {:.1}s",
        elapsed.as_secs_f64()
    );
}

/// Criterion 2. Lowering/pipeline equivalence over 1,000 random graphs:
/// graph interpretation, lowered level-0 execution, and the full level-2
/// pipeline agree within the stated tolerances (exact integers; float
/// rel 1e-5 / abs 1e-6; rel 1e-4 once fma intrinsics fire).
#[test]
fn criterion_2_lowering_pipeline_equivalence() {
    let cfg = GraphGenConfig::default();
    let mut rng = StdRng::seed_from_u64(2024);
    let mut fma_runs = 0usize;
    for i in 0..1000 {
        let g = random_graph(&mut rng, &cfg);
        let inputs = random_inputs(&g, &mut rng, false);
        let reference = interpret_graph(&g, &inputs)
            .unwrap_or_else(|e| panic!("graph {i} reference failed: {e}"));

        // Route B: lowered level-0 execution, bit-comparable.
        let lowered = lower_graph(&g).unwrap();
        let out = interpret_loop(&lowered, &inputs)
            .unwrap_or_else(|e| panic!("graph {i} lowered failed: {e}"));
        let routed: Vec<_> = output_buffer_names(&g)
            .iter()
            .map(|n| out[n].clone())
            .collect();
        outputs_close(&reference, &routed, Tolerance::EXACT)
            .unwrap_or_else(|(pos, d)| panic!("graph {i} lowered output {pos}: {}", d.message));

        // Route C: level-2 graph pipeline, then level-2 loop pipeline.
        let hl = run_hl_pipeline(OptLevel::O2, &g).unwrap();
        let y2 = interpret_graph(&hl.graph, &inputs)
            .unwrap_or_else(|e| panic!("graph {i} hl-optimized failed: {e}"));
        outputs_close(&reference, &y2, Tolerance::STANDARD)
            .unwrap_or_else(|(pos, d)| panic!("graph {i} hl output {pos}: {}", d.message));

        let relowered = lower_graph(&hl.graph).unwrap();
        let (optimized, _) = run_ll_pipeline(OptLevel::O2, &relowered).unwrap();
        let tol = if optimized.intrinsics_used.is_empty() {
            Tolerance::STANDARD
        } else {
            fma_runs += 1;
            Tolerance::INTRINSIC
        };
        let out2 = interpret_loop(&optimized, &inputs)
            .unwrap_or_else(|e| panic!("graph {i} ll-optimized failed: {e}"));
        let routed2: Vec<_> = output_buffer_names(&hl.graph)
            .iter()
            .map(|n| out2[n].clone())
            .collect();
        outputs_close(&y2, &routed2, tol)
            .unwrap_or_else(|(pos, d)| panic!("graph {i} full-pipeline output {pos}: {}", d.message));
    }
    println!(
        "criterion 2: PASS - 1000 graphs equivalent across all three routes ({fma_runs} with fma tolerance)"
    );
}

/// Criterion 3. Loader effectiveness: with L1-L4 enabled, `migrate` over the
/// bundled corpus detects all four loader bugs within 2,000 tests, with
/// four distinct deduplicated signatures.
#[test]
fn criterion_3_loader_effectiveness() {
    let mut hits = Vec::new();
    for bug in [BugId::L1, BugId::L2, BugId::L3, BugId::L4] {
        let report = bug_campaign(StageSel::Loader, 2000, 3, &[bug]);
        let first = report
            .failures
            .iter()
            .map(|f| f.first_hit_index)
            .min()
            .unwrap_or_else(|| panic!("{bug} undetected within 2000 tests"));
        hits.push((bug, first));
    }
    let combined = bug_campaign(
        StageSel::Loader,
        2000,
        3,
        &[BugId::L1, BugId::L2, BugId::L3, BugId::L4],
    );
    assert!(
        combined.failures.len() >= 4,
        "expected >=4 distinct loader signatures, got {}",
        combined.failures.len()
    );
    println!(
        "criterion 3: PASS - loader bugs detected at first-hit indices {:?}, {} distinct signatures",
        hits,
        combined.failures.len()
    );
}

/// Criterion 4. Prioritization efficiency: over 20 trials, mean first-hit
/// index per loader bug is strictly lower under diversity order than random
/// order for at least 3 of 4 bugs, and the first k prioritized tests cover
/// exactly k clusters.
#[test]
fn criterion_4_prioritization_efficiency() {
    // Exact prefix-coverage property of the prioritized order.
    let (records, _) = ingest_corpus(&root().join("corpus/operators.jsonl")).unwrap();
    let clusters = cluster_instances(&records, 0.0);
    let order = prioritize(&clusters, 42);
    for k in 1..=clusters.len() {
        let sigs: BTreeSet<String> = order[..k]
            .iter()
            .map(|&i| cluster_signature(&records[i]))
            .collect();
        assert_eq!(sigs.len(), k, "prefix {k} covers {} clusters", sigs.len());
    }

    // With only the L bugs active, every loader failure signature carries
    // its operator kind, which attributes it to one bug.
    let kind_of = |bug: BugId| match bug {
        BugId::L1 => "Conv2D",
        BugId::L2 => "Cast",
        BugId::L3 => "Concat",
        BugId::L4 => "Transpose",
        other => panic!("not a loader bug: {other}"),
    };
    let bugs = [BugId::L1, BugId::L2, BugId::L3, BugId::L4];
    let first_hit = |report: &CampaignReport, bug: BugId| -> usize {
        report
            .failures
            .iter()
            .filter(|f| f.signature.contains(&format!("|{}|", kind_of(bug))))
            .map(|f| f.first_hit_index)
            .min()
            .unwrap_or_else(|| panic!("{bug} undetected in trial"))
    };
    let trials = 20u64;
    let mut mean_div = [0f64; 4];
    let mut mean_rand = [0f64; 4];
    for trial in 0..trials {
        let mut div_cfg = config(StageSel::Loader, 600, 7000 + trial);
        div_cfg.bugs = BugSet::from_ids(bugs);
        div_cfg.order = OrderMode::Diversity;
        let div = run_campaign(&div_cfg).unwrap();
        let mut rand_cfg = config(StageSel::Loader, 600, 7000 + trial);
        rand_cfg.bugs = BugSet::from_ids(bugs);
        rand_cfg.order = OrderMode::Random;
        let rand = run_campaign(&rand_cfg).unwrap();
        for (i, bug) in bugs.iter().enumerate() {
            mean_div[i] += first_hit(&div, *bug) as f64 / trials as f64;
            mean_rand[i] += first_hit(&rand, *bug) as f64 / trials as f64;
        }
    }
    let wins: Vec<bool> = (0..4).map(|i| mean_div[i] < mean_rand[i]).collect();
    let win_count = wins.iter().filter(|w| **w).count();
    assert!(
        win_count >= 3,
        "diversity wins only {win_count}/4: diversity {mean_div:?} vs random {mean_rand:?}"
    );
    println!(
        "criterion 4: PASS - prefix coverage exact over {} clusters; mean first-hit diversity {:?} vs random {:?} ({}/4 strict wins)",
        clusters.len(),
        mean_div.iter().map(|v| *v as u32).collect::<Vec<_>>(),
        mean_rand.iter().map(|v| *v as u32).collect::<Vec<_>>(),
        win_count
    );
}

fn hl_pass_of(rule: &str) -> &'static str {
    match rule.split('.').next().unwrap_or_default() {
        "fold" => "ConstFold",
        "simp" => "AlgebraicSimplify",
        "cse" => "CSE",
        "layout" => "LayoutTransform",
        "fuse" => "FuseElementwise",
        "dne" => "DeadNodeElim",
        other => panic!("unknown HL rule family `{other}`"),
    }
}

/// Criterion 5. Synthesis effectiveness: with H1-H4 enabled, `synthesize`
/// detects all four bugs within 5,000 tests; pattern-guided runs fire all
/// six high-level passes within 500 tests; and the median distinct-rule
/// coverage over 10 trials strictly exceeds the pattern-free baseline at
/// equal budget.
#[test]
fn criterion_5_synthesis_effectiveness() {
    let mut hits = Vec::new();
    for bug in [BugId::H1, BugId::H2, BugId::H3, BugId::H4] {
        let report = bug_campaign(StageSel::HlOpt, 5000, 11, &[bug]);
        let first = report
            .failures
            .iter()
            .map(|f| f.first_hit_index)
            .min()
            .unwrap_or_else(|| panic!("{bug} undetected within 5000 tests"));
        hits.push((bug, first));
    }
    let combined = bug_campaign(
        StageSel::HlOpt,
        5000,
        11,
        &[BugId::H1, BugId::H2, BugId::H3, BugId::H4],
    );
    assert!(combined.failures.len() >= 4);

    let coverage = bug_campaign(StageSel::HlOpt, 500, 12, &[]);
    assert_eq!(coverage.verdicts.failures(), 0);
    let fired_passes: BTreeSet<&str> = coverage
        .hl_rules_fired
        .iter()
        .map(|r| hl_pass_of(r))
        .collect();
    assert_eq!(
        fired_passes.len(),
        6,
        "pattern-guided run fired only {fired_passes:?} within 500 tests"
    );

    let mut guided_counts = Vec::new();
    let mut baseline_counts = Vec::new();
    for trial in 0..10u64 {
        let guided = bug_campaign(StageSel::HlOpt, 500, 9000 + trial, &[]);
        guided_counts.push(guided.hl_rules_fired.len());
        let mut base_cfg = config(StageSel::HlOpt, 500, 9000 + trial);
        base_cfg.no_patterns = true;
        let baseline = run_campaign(&base_cfg).unwrap();
        baseline_counts.push(baseline.hl_rules_fired.len());
    }
    guided_counts.sort_unstable();
    baseline_counts.sort_unstable();
    let median = |v: &[usize]| v[v.len() / 2];
    let (mg, mb) = (median(&guided_counts), median(&baseline_counts));
    assert!(
        mg > mb,
        "median guided {mg} (counts {guided_counts:?}) must exceed baseline {mb} ({baseline_counts:?})"
    );
    println!(
        "criterion 5: PASS - HL bugs at first-hit {:?}; all 6 passes fired in 500; median rule coverage {mg} guided vs {mb} baseline",
        hits
    );
}

/// Criterion 6. Mutation effectiveness: with B1-B4 enabled, `mutate`
/// detects all four bugs within 5,000 tests; every emitted mutant is
/// probe-equivalent to its seed at level 0; rule-guided runs fire at least
/// 4 of 6 low-level passes within 200 tests.
#[test]
fn criterion_6_mutation_effectiveness() {
    let mut hits = Vec::new();
    for bug in [BugId::B1, BugId::B2, BugId::B3, BugId::B4] {
        let report = bug_campaign(StageSel::LlOpt, 5000, 17, &[bug]);
        let first = report
            .failures
            .iter()
            .map(|f| f.first_hit_index)
            .min()
            .unwrap_or_else(|| panic!("{bug} undetected within 5000 tests"));
        assert_eq!(
            report.generator.mutants_probe_equal, report.generator.mutants_total,
            "{bug}: every emitted mutant must be probe-equivalent"
        );
        hits.push((bug, first));
    }
    let combined = bug_campaign(
        StageSel::LlOpt,
        5000,
        17,
        &[BugId::B1, BugId::B2, BugId::B3, BugId::B4],
    );
    assert!(combined.failures.len() >= 4);

    let coverage = bug_campaign(StageSel::LlOpt, 200, 18, &[]);
    assert_eq!(coverage.verdicts.failures(), 0);
    let ll_pass_of = |rule: &str| match rule.split('.').next().unwrap_or_default() {
        "unroll" => "UnrollExpand",
        "tile" => "TileLoops",
        "vec" => "VectorizeLegalize",
        "reorder" => "ReorderLoops",
        "intr" => "IntrinsicMap",
        "mem" => "MemLatencyHide",
        other => panic!("unknown LL rule family `{other}`"),
    };
    let fired_passes: BTreeSet<&str> =
        coverage.ll_rules_fired.iter().map(|r| ll_pass_of(r)).collect();
    assert!(
        fired_passes.len() >= 4,
        "rule-guided run fired only {fired_passes:?} within 200 tests"
    );
    println!(
        "criterion 6: PASS - LL bugs at first-hit {:?}; {}/6 passes fired in 200; probe equivalence total",
        hits,
        fired_passes.len()
    );
}

/// Criterion 7. Validity by construction: synthesized graphs and emitted
/// mutants always validate, and corpus ingest skips malformed lines without
/// aborting.
#[test]
fn criterion_7_validity_by_construction() {
    let synth = bug_campaign(StageSel::HlOpt, 1000, 23, &[]);
    assert_eq!(synth.generator.synthesized_total, 1000);
    assert_eq!(
        synth.generator.synthesized_valid, synth.generator.synthesized_total,
        "synthesized graphs must all validate"
    );
    let mutants = bug_campaign(StageSel::LlOpt, 1000, 23, &[]);
    assert_eq!(
        mutants.generator.mutants_probe_equal, mutants.generator.mutants_total,
        "emitted mutants must all validate and probe-equal their seed"
    );

    let dir = std::env::temp_dir().join(format!("sfz_c7_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let good = r#"{"kind":"ReLU","params":{},"inputs":[{"shape":[3],"dtype":"F32","src":{"random":1}}],"origin":"ok"}"#;
    std::fs::write(
        dir.join("bad.jsonl"),
        format!("{good}\n{{broken\n{good}\n"),
    )
    .unwrap();
    let (records, report) = ingest_corpus(&dir.join("bad.jsonl")).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(report.skipped.len(), 1);
    std::fs::remove_dir_all(&dir).ok();
    println!(
        "criterion 7: PASS - 1000/1000 synthesized graphs valid, 1000/1000 mutants probe-equal, malformed corpus lines skipped"
    );
}

/// Criterion 8. Determinism: identical config, seed, and `--jobs 1`
/// produce an identical report content hash.
#[test]
fn criterion_8_determinism() {
    let mut cfg = config(StageSel::All, 300, 7);
    cfg.jobs = 1;
    let a = run_campaign(&cfg).unwrap();
    let b = run_campaign(&cfg).unwrap();
    assert_eq!(a.content_hash, b.content_hash);
    assert_eq!(a.to_json(), {
        let mut bj: CampaignReport = CampaignReport::from_json(&b.to_json()).unwrap();
        bj.wall_ms = a.wall_ms;
        bj.to_json()
    });
    println!("criterion 8: PASS - two identical runs hash to {}", a.content_hash);
}

/// Criterion 9. Regression suite: each of the 12 seeded bugs has a
/// deterministic trigger that is Pass with the bug off and non-Pass with
/// the bug on.
#[test]
fn criterion_9_seeded_bug_regressions() {
    let mut flips = 0usize;
    for bug in BugId::ALL {
        let (clean, triggered) = run_regression(bug);
        assert!(clean, "{bug}: regression must pass with the bug disabled");
        assert!(triggered, "{bug}: regression must fail with the bug enabled");
        flips += 1;
    }
    assert_eq!(flips, 12);
    println!("criterion 9: PASS - 12/12 seeded bugs flip their regression verdicts");
}
