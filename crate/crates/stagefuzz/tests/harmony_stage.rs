// SPDX-License-Identifier: Apache-2.0

//! Integration checks for the mutation stage: bundled knowledge sources,
//! rule extraction, campaign coverage, and determinism.

use std::collections::BTreeSet;
use std::path::PathBuf;

use stagefuzz::campaign::{build_pools, run_campaign, CampaignConfig, StageSel};
use stagefuzz::harmony::catalog::{load_catalog, Template};
use stagefuzz::harmony::rules::{extract_rules, Action};
use stagefuzz_core::ll::LLPassId;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn llopt_config(budget: usize, seed: u64) -> CampaignConfig {
    let mut cfg = CampaignConfig::with_root(&root());
    cfg.stage = StageSel::LlOpt;
    cfg.budget = budget;
    cfg.seed = seed;
    cfg.jobs = 2;
    cfg
}

#[test]
fn bundled_template_docs_verify_every_entry() {
    let (catalog, errors) = load_catalog(Some(&root().join("docs/templates")), None);
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(catalog.entries.len(), 5);
    assert_eq!(catalog.verified_count(), 5, "docs agree with builtin");
    assert_eq!(catalog.disputed_count(), 0);
    for t in Template::ALL {
        assert!(catalog.usable(t).is_some(), "{t} unusable");
    }
}

#[test]
fn bundled_docs_yield_one_rule_per_pass() {
    let extraction = extract_rules(&root().join("docs/llpasses"), None, None);
    assert!(extraction.errors.is_empty(), "{:?}", extraction.errors);
    assert_eq!(extraction.rules.len(), 6);
    let passes: BTreeSet<LLPassId> = extraction.rules.iter().map(|r| r.target_pass).collect();
    assert_eq!(passes.len(), 6);
    // The documented vectorize rule carries the expected guard and action.
    let vec_rule = extraction
        .rules
        .iter()
        .find(|r| r.target_pass == LLPassId::VectorizeLegalize)
        .unwrap();
    assert!(vec_rule.guard.innermost);
    assert!(vec_rule.guard.no_loop_carried_dep);
    assert_eq!(vec_rule.guard.trip_multiple_of, Some(4));
    assert_eq!(vec_rule.action, Action::parse("attach vectorize 4").unwrap());
}

#[test]
fn doc_missing_precondition_is_skipped_with_error() {
    let dir = std::env::temp_dir().join(format!("sfz_docerr_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        dir.join("broken.md"),
        "---\npass: TileLoops\nrule: x\ntrigger: y\naction: split 8\n---\n",
    )
    .unwrap();
    let extraction = extract_rules(&dir, None, None);
    assert!(extraction.rules.is_empty());
    assert_eq!(extraction.errors.len(), 1);
    assert!(extraction.errors[0].1.contains("precondition"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn campaign_budget_100_fires_most_ll_passes() {
    let report = run_campaign(&llopt_config(100, 9)).unwrap();
    assert_eq!(report.tests_run, 100);
    let fired_passes: BTreeSet<&str> = report
        .ll_rules_fired
        .iter()
        .map(|rule| match rule.split('.').next().unwrap_or_default() {
            "unroll" => "UnrollExpand",
            "tile" => "TileLoops",
            "vec" => "VectorizeLegalize",
            "reorder" => "ReorderLoops",
            "intr" => "IntrinsicMap",
            "mem" => "MemLatencyHide",
            other => other,
        })
        .collect();
    assert!(
        fired_passes.len() >= 4,
        "only {} passes fired: {fired_passes:?}",
        fired_passes.len()
    );
}

#[test]
fn campaign_budget_zero_is_an_empty_valid_report() {
    let report = run_campaign(&llopt_config(0, 9)).unwrap();
    assert_eq!(report.tests_run, 0);
    assert_eq!(report.verdicts.failures(), 0);
    assert!(!report.content_hash.is_empty());
}

#[test]
fn fixed_seed_reproduces_the_report_hash() {
    let a = run_campaign(&llopt_config(150, 33)).unwrap();
    let b = run_campaign(&llopt_config(150, 33)).unwrap();
    assert_eq!(a.content_hash, b.content_hash);
    let c = run_campaign(&llopt_config(150, 34)).unwrap();
    assert_ne!(a.content_hash, c.content_hash);
}

#[test]
fn worker_count_does_not_change_verdicts_or_coverage() {
    // The report hash covers the config echo (which includes jobs); the
    // verdict-relevant payload must be identical for any worker count.
    let mut one = llopt_config(120, 5);
    one.jobs = 1;
    let mut four = llopt_config(120, 5);
    four.jobs = 4;
    let a = run_campaign(&one).unwrap();
    let b = run_campaign(&four).unwrap();
    assert_eq!(a.verdicts, b.verdicts);
    assert_eq!(a.ll_rules_fired, b.ll_rules_fired);
    assert_eq!(a.failures, b.failures);
    assert_eq!(a.generator, b.generator);
}

#[test]
fn every_emitted_mutant_is_probe_equal() {
    let report = run_campaign(&llopt_config(400, 21)).unwrap();
    assert_eq!(report.generator.mutants_total, 400);
    assert_eq!(
        report.generator.mutants_probe_equal, report.generator.mutants_total,
        "all emitted loop tests are probe-equivalent to their seed"
    );
}

#[test]
fn every_pool_seed_survives_every_single_pass() {
    // Single-pass semantics preservation over the whole seed pool: three
    // random inputs per (seed, pass) pair, exact for integers, standard
    // float tolerance, intrinsic tolerance after IntrinsicMap.
    use rand::SeedableRng;
    use stagefuzz::harmony::seeds::random_loop_inputs;
    use stagefuzz_core::compare::{tensors_close, Tolerance};
    use stagefuzz_core::ll::run_ll_pass;
    use stagefuzz_core::loop_ir::interp::interpret_loop;

    let pools = build_pools(&llopt_config(1, 77)).unwrap();
    assert!(pools.seeds.len() >= 24);
    for seed_program in &pools.seeds {
        for pass in LLPassId::ALL {
            let (out, _) = run_ll_pass(pass, seed_program)
                .unwrap_or_else(|e| panic!("{} on {}: {e}", pass, seed_program.name));
            assert!(
                stagefuzz_core::loop_ir::validate_loop(&out).is_empty(),
                "{} on {} produced an invalid program",
                pass,
                seed_program.name
            );
            let tol = if out.intrinsics_used.is_empty() {
                Tolerance::STANDARD
            } else {
                Tolerance::INTRINSIC
            };
            let mut rng = rand::rngs::StdRng::seed_from_u64(7 + pass as u64);
            for probe in 0..3 {
                let inputs = random_loop_inputs(seed_program, &mut rng);
                let y0 = interpret_loop(seed_program, &inputs).unwrap();
                let y1 = interpret_loop(&out, &inputs).unwrap();
                for (name, v) in &y0 {
                    tensors_close(v, &y1[name], tol).unwrap_or_else(|d| {
                        panic!(
                            "{} on {} probe {probe} output {name}: {}",
                            pass, seed_program.name, d.message
                        )
                    });
                }
            }
        }
    }
}

#[test]
fn rule_guided_mutation_beats_annotation_free_seeds() {
    // Budget-matched comparison: distinct LL rule ids fired by the guided
    // campaign versus bare annotation-stripped seeds, median over 10 trials
    // of 200 tests.
    use rand::{RngExt, SeedableRng};
    use stagefuzz::oracle::{quick_test, Payload, Stage};
    use stagefuzz_core::bugs::BugSet;

    let mut guided_counts = Vec::new();
    let mut baseline_counts = Vec::new();
    for trial in 0..10u64 {
        let guided = run_campaign(&llopt_config(200, 4000 + trial)).unwrap();
        guided_counts.push(guided.ll_rules_fired.len());

        let pools = build_pools(&llopt_config(200, 4000 + trial)).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(4000 + trial);
        let mut fired: BTreeSet<String> = BTreeSet::new();
        for i in 0..200usize {
            let seed = &pools.seeds[rng.random_range(0..pools.seeds.len())];
            let plain = seed.strip_annotations();
            let outcome = quick_test(Stage::LlOpt, Payload::Loop(plain), i as u64, &BugSet::empty());
            assert!(outcome.verdict.is_pass());
            fired.extend(outcome.fired_ll_rules);
        }
        baseline_counts.push(fired.len());
    }
    guided_counts.sort_unstable();
    baseline_counts.sort_unstable();
    let median = |v: &[usize]| v[v.len() / 2];
    assert!(
        median(&guided_counts) > median(&baseline_counts),
        "guided {guided_counts:?} vs baseline {baseline_counts:?}"
    );
}

#[test]
fn provider_failures_never_block_a_campaign() {
    // A provider that always answers garbage: every request becomes a
    // fallback incident, and the campaign still completes cleanly.
    let dir = std::env::temp_dir().join(format!("sfz_prov_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let script = dir.join("garbage_provider.sh");
    std::fs::write(&script, "#!/bin/sh\nwhile read line; do echo not-json; done\n").unwrap();
    let mut cfg = llopt_config(60, 2);
    cfg.provider = Some(format!("sh {}", script.display()));
    let report = run_campaign(&cfg).unwrap();
    assert_eq!(report.tests_run, 60);
    assert_eq!(report.verdicts.failures(), 0);
    assert!(report.config.provider_configured);
    assert!(report.generator.provider_incidents > 0);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn http_provider_seeds_flow_into_the_pool() {
    use std::io::{Read, Write};
    use std::net::TcpListener;

    let canned = "program provided_ew\ninput a: F32[10]\noutput c: F32[10]\nbody:\n  for i in [0, 10):\n    c[i] = a[i] + 1.0\n";
    let body = serde_json::to_string(&serde_json::json!({ "text": canned })).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        // Serve sequential one-shot connections for the pool build.
        for _ in 0..128 {
            let Ok((mut sock, _)) = listener.accept() else {
                break;
            };
            let mut buf = [0u8; 8192];
            let _ = sock.read(&mut buf);
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            let _ = sock.write_all(resp.as_bytes());
        }
    });

    let mut cfg = llopt_config(40, 6);
    cfg.provider = Some(format!("http://{addr}/gen"));
    let pools = build_pools(&cfg).unwrap();
    assert!(
        pools.seeds.iter().any(|s| s.name == "provided_ew"),
        "provider-sourced seed missing from pool"
    );
    let report = run_campaign(&cfg).unwrap();
    assert_eq!(report.tests_run, 40);
    assert_eq!(report.verdicts.failures(), 0);
}

#[test]
fn disputed_templates_are_never_generated() {
    // A conflicting doc disputes the matmul entry; pools must still build
    // and no generated seed may use the disputed template.
    let dir = std::env::temp_dir().join(format!("sfz_disputed_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        dir.join("matmul.md"),
        "---\ntemplate: matmul\nextent-min: 4\nextent-max: 99\ndtypes: F32\nannotations: 0:parallel\n---\n",
    )
    .unwrap();
    let mut cfg = llopt_config(10, 3);
    cfg.templates_dir = dir.clone();
    cfg.seeds_dir = PathBuf::from("/nonexistent");
    let pools = build_pools(&cfg).unwrap();
    for seed in &pools.seeds {
        assert!(
            !seed.name.starts_with("mm_"),
            "disputed matmul template generated seed {}",
            seed.name
        );
    }
    std::fs::remove_dir_all(&dir).ok();
}
