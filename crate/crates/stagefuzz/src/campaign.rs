// SPDX-License-Identifier: Apache-2.0

//! Campaign driver: builds per-stage generator pools, executes tests on a
//! worker pool, aggregates verdicts/coverage/deduplicated failures, and
//! writes reports plus failing-test reproductions.
//!
//! Every test is a pure function of `(campaign seed, test index)` and the
//! read-only pools, so reports are identical across reruns and worker
//! counts; `--jobs` only changes wall time.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use thiserror::Error;

use stagefuzz_core::bugs::BugSet;
use stagefuzz_core::generate::{random_graph, GraphGenConfig};
use stagefuzz_core::graph::text::{parse_graph, serialize_graph};
use stagefuzz_core::graph::validate::validate_graph;
use stagefuzz_core::loop_ir::text::{parse_loop, serialize_loop};
use stagefuzz_core::loop_ir::LoopProgram;
use stagefuzz_core::util::{fnv1a64, hash_hex};

use crate::corpus::{
    cluster_instances, ingest_corpus, prioritize, record_to_json, OperatorInstanceRecord,
};
use crate::harmony::catalog::load_catalog;
use crate::harmony::rules::{mutate, probe_equivalent, MutationRule};
use crate::harmony::seeds::build_seed_pool;
use crate::harmony::{builtin_rules, rules::extract_rules};
use crate::oracle::{dedup_key, diff_test, Payload, Stage, TestCase, VerdictTag};
use crate::provider::{ProviderClient, ProviderSpec};
use crate::report::{
    CampaignReport, ConfigEcho, FailureEntry, GeneratorStats, VerdictCounts,
};
use crate::synth::{capture_patterns, parse_pattern_library, synthesize, Pattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSel {
    Loader,
    HlOpt,
    LlOpt,
    All,
}

impl StageSel {
    pub fn name(self) -> &'static str {
        match self {
            StageSel::Loader => "loader",
            StageSel::HlOpt => "hlopt",
            StageSel::LlOpt => "llopt",
            StageSel::All => "all",
        }
    }
}

impl FromStr for StageSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loader" | "migrate" => Ok(StageSel::Loader),
            "hlopt" | "synthesize" => Ok(StageSel::HlOpt),
            "llopt" | "mutate" => Ok(StageSel::LlOpt),
            "all" => Ok(StageSel::All),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderMode {
    Diversity,
    Random,
    Fifo,
}

impl OrderMode {
    pub fn name(self) -> &'static str {
        match self {
            OrderMode::Diversity => "diversity",
            OrderMode::Random => "random",
            OrderMode::Fifo => "fifo",
        }
    }
}

impl FromStr for OrderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diversity" => Ok(OrderMode::Diversity),
            "random" => Ok(OrderMode::Random),
            "fifo" => Ok(OrderMode::Fifo),
            other => Err(format!("unknown order `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub stage: StageSel,
    pub budget: usize,
    pub seed: u64,
    pub jobs: usize,
    pub order: OrderMode,
    pub bugs: BugSet,
    pub corpus_path: PathBuf,
    pub passtests_dir: PathBuf,
    pub patterns_path: Option<PathBuf>,
    pub no_patterns: bool,
    pub seeds_dir: PathBuf,
    pub llpass_docs_dir: PathBuf,
    pub templates_dir: PathBuf,
    pub provider: Option<String>,
    pub out_dir: Option<PathBuf>,
}

impl CampaignConfig {
    /// Defaults resolved against a repository root.
    pub fn with_root(root: &Path) -> Self {
        CampaignConfig {
            stage: StageSel::All,
            budget: 300,
            seed: 1,
            jobs: 1,
            order: OrderMode::Diversity,
            bugs: BugSet::empty(),
            corpus_path: root.join("corpus/operators.jsonl"),
            passtests_dir: root.join("passtests"),
            patterns_path: None,
            no_patterns: false,
            seeds_dir: root.join("seeds"),
            llpass_docs_dir: root.join("docs/llpasses"),
            templates_dir: root.join("docs/templates"),
            provider: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config error: {0}")]
    Config(String),
}

/// Read-only generator pools shared by all workers.
pub struct Pools {
    pub records: Vec<OperatorInstanceRecord>,
    pub record_order: Vec<usize>,
    pub cluster_count: Option<usize>,
    pub corpus_skipped: usize,
    pub patterns: Vec<Pattern>,
    pub seeds: Vec<LoopProgram>,
    pub rules: Vec<MutationRule>,
    pub provider_incidents: usize,
}

fn stage_of(cfg: &CampaignConfig, index: usize) -> (Stage, usize) {
    match cfg.stage {
        StageSel::Loader => (Stage::Loader, index),
        StageSel::HlOpt => (Stage::HlOpt, index),
        StageSel::LlOpt => (Stage::LlOpt, index),
        StageSel::All => {
            let stage = match index % 3 {
                0 => Stage::Loader,
                1 => Stage::HlOpt,
                _ => Stage::LlOpt,
            };
            (stage, index / 3)
        }
    }
}

fn needs_stage(cfg: &CampaignConfig, stage: Stage) -> bool {
    matches!(
        (cfg.stage, stage),
        (StageSel::All, _)
            | (StageSel::Loader, Stage::Loader)
            | (StageSel::HlOpt, Stage::HlOpt)
            | (StageSel::LlOpt, Stage::LlOpt)
    )
}

/// Builds the generator pools for the configured stages.
pub fn build_pools(cfg: &CampaignConfig) -> Result<Pools, CampaignError> {
    let mut provider_client = match &cfg.provider {
        Some(spec) => Some(ProviderClient::new(
            ProviderSpec::parse(spec).map_err(CampaignError::Config)?,
        )),
        None => None,
    };

    let mut pools = Pools {
        records: Vec::new(),
        record_order: Vec::new(),
        cluster_count: None,
        corpus_skipped: 0,
        patterns: Vec::new(),
        seeds: Vec::new(),
        rules: Vec::new(),
        provider_incidents: 0,
    };

    if needs_stage(cfg, Stage::Loader) {
        let (records, report) = ingest_corpus(&cfg.corpus_path)
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        if records.is_empty() {
            return Err(CampaignError::Config(format!(
                "corpus {} has no usable records",
                cfg.corpus_path.display()
            )));
        }
        pools.corpus_skipped = report.skipped.len();
        pools.record_order = match cfg.order {
            OrderMode::Fifo => (0..records.len()).collect(),
            OrderMode::Random => {
                use rand::seq::SliceRandom;
                let mut order: Vec<usize> = (0..records.len()).collect();
                let mut rng = StdRng::seed_from_u64(cfg.seed);
                order.shuffle(&mut rng);
                order
            }
            OrderMode::Diversity => {
                let clusters = cluster_instances(&records, 0.0);
                pools.cluster_count = Some(clusters.len());
                prioritize(&clusters, cfg.seed)
            }
        };
        pools.records = records;
    }

    if needs_stage(cfg, Stage::HlOpt) && !cfg.no_patterns {
        pools.patterns = match &cfg.patterns_path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CampaignError::Config(format!("patterns {}: {e}", path.display()))
                })?;
                parse_pattern_library(&text).map_err(CampaignError::Config)?
            }
            None => {
                let report = capture_patterns(&cfg.passtests_dir).map_err(|e| {
                    CampaignError::Config(format!(
                        "passtests {}: {e}",
                        cfg.passtests_dir.display()
                    ))
                })?;
                report.patterns
            }
        };
        if pools.patterns.is_empty() {
            return Err(CampaignError::Config(
                "no patterns available; rerun with --no-patterns for the baseline".into(),
            ));
        }
    }

    if needs_stage(cfg, Stage::LlOpt) {
        let templates_dir = cfg.templates_dir.exists().then_some(cfg.templates_dir.as_path());
        let (catalog, _doc_errors) = load_catalog(templates_dir, None);
        let bundled = load_bundled_seeds(&cfg.seeds_dir);
        pools.seeds = build_seed_pool(
            &bundled,
            &catalog,
            (bundled.len() + 24).max(24),
            cfg.seed,
            provider_client.as_mut(),
        );
        if pools.seeds.is_empty() {
            return Err(CampaignError::Config("no loop seeds available".into()));
        }
        pools.rules = if cfg.llpass_docs_dir.exists() {
            let probe = pools.seeds.first().cloned();
            let extraction = extract_rules(
                &cfg.llpass_docs_dir,
                provider_client.as_mut(),
                probe.as_ref(),
            );
            if extraction.rules.is_empty() {
                builtin_rules()
            } else {
                extraction.rules
            }
        } else {
            builtin_rules()
        };
    }

    if let Some(client) = &provider_client {
        pools.provider_incidents = client.incidents.len();
    }
    Ok(pools)
}

fn load_bundled_seeds(dir: &Path) -> Vec<LoopProgram> {
    let Ok(rd) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "lir"))
        .collect();
    files.sort();
    let mut seeds = Vec::new();
    for path in files {
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(p) = parse_loop(&text) {
                if stagefuzz_core::loop_ir::validate_loop(&p).is_empty() {
                    seeds.push(p);
                }
            }
        }
    }
    seeds
}

/// Outcome of one executed test, in plan order.
pub struct TestRecord {
    pub index: usize,
    pub stage: Stage,
    pub verdict: crate::oracle::Verdict,
    pub signature: Option<String>,
    pub fired_hl: BTreeSet<String>,
    pub fired_ll: BTreeSet<String>,
    pub probe_equal: Option<bool>,
    pub generated_valid: Option<bool>,
    pub payload_text: Option<String>,
    pub data_seed: u64,
    pub lineage: String,
}

fn index_hash(seed: u64, index: usize) -> u64 {
    fnv1a64(format!("{seed}:{index}").as_bytes())
}

/// Builds and executes the test at `index`. Pure given the pools.
pub fn run_one(cfg: &CampaignConfig, pools: &Pools, index: usize) -> TestRecord {
    let (stage, sub_index) = stage_of(cfg, index);
    let h = index_hash(cfg.seed, index);
    let mut rng = StdRng::seed_from_u64(h);

    let (payload, lineage, generated_valid, probe_equal) = match stage {
        Stage::Loader => {
            let pos = pools.record_order[sub_index % pools.record_order.len()];
            let record = pools.records[pos].clone();
            let lineage = format!("corpus:{}", record.origin);
            (Payload::Record(record), lineage, None, None)
        }
        Stage::HlOpt => {
            let gen_cfg = GraphGenConfig::default();
            let seed_graph = random_graph(&mut rng, &gen_cfg);
            if cfg.no_patterns || pools.patterns.is_empty() {
                let valid = validate_graph(&seed_graph).is_empty();
                (
                    Payload::Graph(seed_graph),
                    "random".to_string(),
                    Some(valid),
                    None,
                )
            } else {
                let pattern = &pools.patterns[sub_index % pools.patterns.len()];
                match synthesize(pattern, &seed_graph, &mut rng) {
                    Ok(g) => {
                        let valid = validate_graph(&g).is_empty();
                        let lineage = format!("pattern:{}", pattern.source_rule);
                        (Payload::Graph(g), lineage, Some(valid), None)
                    }
                    Err(_) => {
                        let valid = validate_graph(&seed_graph).is_empty();
                        (
                            Payload::Graph(seed_graph),
                            "random:splice-fallback".to_string(),
                            Some(valid),
                            None,
                        )
                    }
                }
            }
        }
        Stage::LlOpt => {
            let seed_program = &pools.seeds[rng.random_range(0..pools.seeds.len())];
            let mut mutant = seed_program.clone();
            let mut applied: Vec<String> = Vec::new();
            let stack_depth = rng.random_range(1usize..=3);
            // One draw per stack level; an inapplicable rule skips the
            // level. Unmutated pass-throughs keep heuristic-triggered
            // transforms (tiling) reachable alongside rule-driven ones.
            for _ in 0..stack_depth {
                let rule = &pools.rules[rng.random_range(0..pools.rules.len())];
                if let Ok(next) = mutate(&mutant, rule, &mut rng) {
                    mutant = next;
                    applied.push(rule.id.clone());
                }
            }
            let mut probe_rng = StdRng::seed_from_u64(h ^ 0x517c_c1b7_2722_0a95);
            let equal = probe_equivalent(seed_program, &mutant, &mut probe_rng, 3);
            // A probe-failed mutant is a generator defect, not a test;
            // fall back to the unmutated seed (trivially probe-equal) and
            // record the incident in the lineage.
            let (mutant, lineage) = if equal {
                let lineage = if applied.is_empty() {
                    "seed:unmutated".to_string()
                } else {
                    format!("rules:{}", applied.join("+"))
                };
                (mutant, lineage)
            } else {
                (seed_program.clone(), "seed:probe-fallback".to_string())
            };
            (Payload::Loop(mutant), lineage, Some(true), Some(true))
        }
    };

    let tc = TestCase {
        id: format!("t{index}"),
        stage,
        payload,
        data_seed: h ^ 0x2545_f491_4f6c_dd1d,
        lineage: lineage.clone(),
    };
    let outcome = diff_test(&tc, &cfg.bugs);
    let signature = (!outcome.verdict.is_pass()).then(|| dedup_key(&outcome.verdict, &tc));
    let payload_text = (!outcome.verdict.is_pass()).then(|| match &tc.payload {
        Payload::Record(r) => record_to_json(r),
        Payload::Graph(g) => serialize_graph(g),
        Payload::Loop(p) => serialize_loop(p),
    });
    TestRecord {
        index,
        stage,
        verdict: outcome.verdict,
        signature,
        fired_hl: outcome.fired_hl_rules,
        fired_ll: outcome.fired_ll_rules,
        probe_equal,
        generated_valid,
        payload_text,
        data_seed: tc.data_seed,
        lineage,
    }
}

/// Runs a complete campaign and returns the sealed report.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    let started = Instant::now();
    let echo = ConfigEcho {
        stage: cfg.stage.name().to_string(),
        budget: cfg.budget,
        seed: cfg.seed,
        jobs: cfg.jobs.max(1),
        order: cfg.order.name().to_string(),
        bugs: cfg.bugs.to_string(),
        provider_configured: cfg.provider.is_some(),
        no_patterns: cfg.no_patterns,
    };
    if cfg.budget == 0 {
        let report = CampaignReport {
            config: echo,
            tests_run: 0,
            verdicts: VerdictCounts::default(),
            hl_rules_fired: Vec::new(),
            ll_rules_fired: Vec::new(),
            failures: Vec::new(),
            generator: GeneratorStats::default(),
            wall_ms: started.elapsed().as_millis() as u64,
            content_hash: String::new(),
        };
        return Ok(finish_report(report, cfg));
    }

    let pools = build_pools(cfg)?;
    let records = execute(cfg, &pools);
    Ok(aggregate(cfg, &pools, records, echo, started))
}

fn execute(cfg: &CampaignConfig, pools: &Pools) -> Vec<TestRecord> {
    let jobs = cfg.jobs.max(1).min(cfg.budget.max(1));
    if jobs <= 1 {
        return (0..cfg.budget).map(|i| run_one(cfg, pools, i)).collect();
    }
    let mut results: Vec<Option<TestRecord>> = Vec::with_capacity(cfg.budget);
    results.resize_with(cfg.budget, || None);
    let chunks: Vec<Vec<usize>> = (0..jobs)
        .map(|w| (w..cfg.budget).step_by(jobs).collect())
        .collect();
    let mut outputs: Vec<Vec<TestRecord>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|i| run_one(cfg, pools, i))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            outputs.push(h.join().expect("worker panicked"));
        }
    });
    for batch in outputs {
        for record in batch {
            let slot = record.index;
            results[slot] = Some(record);
        }
    }
    results.into_iter().map(|r| r.unwrap()).collect()
}

fn aggregate(
    cfg: &CampaignConfig,
    pools: &Pools,
    records: Vec<TestRecord>,
    echo: ConfigEcho,
    started: Instant,
) -> CampaignReport {
    let mut verdicts = VerdictCounts::default();
    let mut hl_rules: BTreeSet<String> = BTreeSet::new();
    let mut ll_rules: BTreeSet<String> = BTreeSet::new();
    let mut failures: BTreeMap<String, FailureEntry> = BTreeMap::new();
    let mut generator = GeneratorStats {
        cluster_count: pools.cluster_count,
        pattern_count: (!pools.patterns.is_empty()).then_some(pools.patterns.len()),
        seed_pool_size: (!pools.seeds.is_empty()).then_some(pools.seeds.len()),
        rule_count: (!pools.rules.is_empty()).then_some(pools.rules.len()),
        provider_incidents: pools.provider_incidents,
        ..Default::default()
    };

    for record in &records {
        match record.verdict.tag {
            VerdictTag::Pass => verdicts.pass += 1,
            VerdictTag::Crash => verdicts.crash += 1,
            VerdictTag::Mismatch => verdicts.mismatch += 1,
            VerdictTag::InvalidRejection => verdicts.invalid_rejection += 1,
            VerdictTag::MissedRejection => verdicts.missed_rejection += 1,
        }
        hl_rules.extend(record.fired_hl.iter().cloned());
        ll_rules.extend(record.fired_ll.iter().cloned());
        if let Some(valid) = record.generated_valid {
            generator.synthesized_total += 1;
            generator.synthesized_valid += valid as usize;
        }
        if let Some(equal) = record.probe_equal {
            generator.mutants_total += 1;
            generator.mutants_probe_equal += equal as usize;
        }
        if let Some(sig) = &record.signature {
            let entry = failures.entry(sig.clone()).or_insert_with(|| {
                let artifact = cfg
                    .out_dir
                    .as_ref()
                    .and_then(|dir| write_artifact(dir, cfg, record, sig).ok());
                FailureEntry {
                    signature: sig.clone(),
                    first_hit_index: record.index,
                    count: 0,
                    artifact,
                }
            });
            entry.count += 1;
        }
    }

    let mut failure_list: Vec<FailureEntry> = failures.into_values().collect();
    failure_list.sort_by_key(|f| f.first_hit_index);

    let report = CampaignReport {
        config: echo,
        tests_run: records.len(),
        verdicts,
        hl_rules_fired: hl_rules.into_iter().collect(),
        ll_rules_fired: ll_rules.into_iter().collect(),
        failures: failure_list,
        generator,
        wall_ms: started.elapsed().as_millis() as u64,
        content_hash: String::new(),
    };
    finish_report(report, cfg)
}

fn finish_report(report: CampaignReport, cfg: &CampaignConfig) -> CampaignReport {
    let sealed = report.seal();
    if let Some(dir) = &cfg.out_dir {
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join("report.json"), sealed.to_json());
    }
    sealed
}

/// Reproduction metadata saved next to each failing payload.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct ArtifactMeta {
    pub stage: String,
    pub data_seed: u64,
    pub bugs: String,
    pub signature: String,
    pub verdict: String,
    pub lineage: String,
    pub payload_file: String,
}

fn write_artifact(
    dir: &Path,
    cfg: &CampaignConfig,
    record: &TestRecord,
    signature: &str,
) -> std::io::Result<String> {
    let failures_dir = dir.join("failures");
    std::fs::create_dir_all(&failures_dir)?;
    let tag = hash_hex(fnv1a64(signature.as_bytes()));
    let ext = match record.stage {
        Stage::Loader => "jsonl",
        Stage::HlOpt => "gr",
        Stage::LlOpt => "lir",
    };
    let payload_file = format!("fail_{tag}.{ext}");
    std::fs::write(
        failures_dir.join(&payload_file),
        record.payload_text.as_deref().unwrap_or_default(),
    )?;
    let meta = ArtifactMeta {
        stage: record.stage.name().to_string(),
        data_seed: record.data_seed,
        bugs: cfg.bugs.to_string(),
        signature: signature.to_string(),
        verdict: record.verdict.tag.name().to_string(),
        lineage: record.lineage.clone(),
        payload_file: payload_file.clone(),
    };
    let meta_file = format!("fail_{tag}.json");
    std::fs::write(
        failures_dir.join(&meta_file),
        serde_json::to_string_pretty(&meta).expect("meta serialization cannot fail"),
    )?;
    Ok(format!("failures/{meta_file}"))
}

/// Re-runs a saved reproduction; returns the replayed verdict tag.
pub fn replay_artifact(meta_path: &Path) -> Result<VerdictTag, String> {
    let meta: ArtifactMeta = serde_json::from_str(
        &std::fs::read_to_string(meta_path).map_err(|e| format!("{}: {e}", meta_path.display()))?,
    )
    .map_err(|e| e.to_string())?;
    let payload_path = meta_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&meta.payload_file);
    let text = std::fs::read_to_string(&payload_path)
        .map_err(|e| format!("{}: {e}", payload_path.display()))?;
    let bugs = BugSet::parse_flags(&meta.bugs)?;
    let (stage, payload) = match meta.stage.as_str() {
        "loader" => {
            let (mut records, report) = crate::corpus::ingest_corpus_text(&text);
            if records.is_empty() {
                return Err(format!("artifact record unusable: {:?}", report.skipped));
            }
            (Stage::Loader, Payload::Record(records.remove(0)))
        }
        "hlopt" => {
            let g = parse_graph(&text).map_err(|e| e.to_string())?;
            (Stage::HlOpt, Payload::Graph(g))
        }
        "llopt" => {
            let p = parse_loop(&text).map_err(|e| e.to_string())?;
            (Stage::LlOpt, Payload::Loop(p))
        }
        other => return Err(format!("unknown artifact stage `{other}`")),
    };
    let tc = TestCase {
        id: "replay".into(),
        stage,
        payload,
        data_seed: meta.data_seed,
        lineage: meta.lineage,
    };
    Ok(diff_test(&tc, &bugs).verdict.tag)
}
