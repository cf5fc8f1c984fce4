// SPDX-License-Identifier: Apache-2.0

//! `stagefuzz` command-line interface.
//!
//! Exit codes: 0 = ran clean, 1 = failures found, 2 = configuration error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use stagefuzz::campaign::{
    replay_artifact, run_campaign, CampaignConfig, CampaignError, OrderMode, StageSel,
};
use stagefuzz::report::CampaignReport;
use stagefuzz_core::bugs::BugSet;

#[derive(Parser)]
#[command(
    name = "stagefuzz",
    about = "Stage-aware differential fuzzing for the bundled reference tensor compiler",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Number of tests to run.
    #[arg(long, default_value_t = 200)]
    budget: usize,
    /// Campaign seed; identical seed and config reproduce the report.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads. Reports are identical for any value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory for report.json and failure reproductions.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeded bugs to enable, e.g. `L1,H2,B4` (also honors STAGEFUZZ_BUGS).
    #[arg(long)]
    bugs: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Migration-based loader testing over an operator corpus.
    Migrate {
        #[command(flatten)]
        common: CommonOpts,
        /// JSONL corpus of operator instance records.
        #[arg(long, default_value = "corpus/operators.jsonl")]
        corpus: PathBuf,
        /// Test ordering: diversity-prioritized, random, or corpus order.
        #[arg(long, default_value = "diversity")]
        order: String,
    },
    /// Optimization-aware graph synthesis against the high-level passes.
    Synthesize {
        #[command(flatten)]
        common: CommonOpts,
        /// Pattern library file; defaults to mining the pass tests.
        #[arg(long)]
        patterns: Option<PathBuf>,
        /// Directory of developer pass tests to mine when no library given.
        #[arg(long, default_value = "passtests")]
        passtests: PathBuf,
        /// Disable pattern guidance (random-generation baseline).
        #[arg(long)]
        no_patterns: bool,
    },
    /// Mutation-based loop-IR testing against the low-level passes.
    Mutate {
        #[command(flatten)]
        common: CommonOpts,
        /// Seed corpus directory of .lir files.
        #[arg(long, default_value = "seeds")]
        seeds: PathBuf,
        /// Pass documentation directory mined for mutation rules.
        #[arg(long, default_value = "docs/llpasses")]
        docs: PathBuf,
        /// Constraint-doc directory cross-checked against the builtin catalog.
        #[arg(long, default_value = "docs/templates")]
        templates: PathBuf,
        /// Suggestion provider: an http:// endpoint or a command line.
        #[arg(long)]
        provider: Option<String>,
    },
    /// Combined campaign across the selected stage(s).
    Fuzz {
        #[command(flatten)]
        common: CommonOpts,
        /// Stage to drive: all, loader, hlopt, or llopt.
        #[arg(long, default_value = "all")]
        stage: String,
        #[arg(long, default_value = "corpus/operators.jsonl")]
        corpus: PathBuf,
        #[arg(long, default_value = "passtests")]
        passtests: PathBuf,
        #[arg(long)]
        patterns: Option<PathBuf>,
        #[arg(long)]
        no_patterns: bool,
        #[arg(long, default_value = "seeds")]
        seeds: PathBuf,
        #[arg(long, default_value = "docs/llpasses")]
        docs: PathBuf,
        #[arg(long, default_value = "docs/templates")]
        templates: PathBuf,
        #[arg(long, default_value = "diversity")]
        order: String,
        #[arg(long)]
        provider: Option<String>,
    },
    /// Pretty-print a saved report; optionally replay its failure artifacts.
    Report {
        /// Path to a report.json or a campaign output directory.
        path: PathBuf,
        /// Re-run every saved reproduction and verify the verdict tag.
        #[arg(long)]
        replay: bool,
    },
    /// Quick built-in health checks over the bundled assets.
    Selftest,
}

fn resolve_bugs(flag: Option<&str>) -> Result<BugSet, String> {
    let mut bugs = match flag {
        Some(s) => BugSet::parse_flags(s)?,
        None => BugSet::empty(),
    };
    if let Ok(env) = std::env::var("STAGEFUZZ_BUGS") {
        for id in BugSet::parse_flags(&env)?.iter() {
            bugs.insert(id);
        }
    }
    Ok(bugs)
}

fn base_config(common: &CommonOpts) -> Result<CampaignConfig, String> {
    let mut cfg = CampaignConfig::with_root(std::path::Path::new("."));
    cfg.budget = common.budget;
    cfg.seed = common.seed;
    cfg.jobs = common.jobs;
    cfg.out_dir = common.out.clone();
    cfg.bugs = resolve_bugs(common.bugs.as_deref())?;
    Ok(cfg)
}

fn finish(report: Result<CampaignReport, CampaignError>) -> ExitCode {
    match report {
        Ok(report) => {
            print!("{}", report.render());
            if report.verdicts.failures() > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}

fn config_err(message: String) -> ExitCode {
    eprintln!("config error: {message}");
    ExitCode::from(2)
}

fn cmd_report(path: PathBuf, replay: bool) -> ExitCode {
    let report_path = if path.is_dir() {
        path.join("report.json")
    } else {
        path.clone()
    };
    let text = match std::fs::read_to_string(&report_path) {
        Ok(t) => t,
        Err(e) => return config_err(format!("{}: {e}", report_path.display())),
    };
    let report = match CampaignReport::from_json(&text) {
        Ok(r) => r,
        Err(e) => return config_err(format!("malformed report: {e}")),
    };
    print!("{}", report.render());
    if !replay {
        return ExitCode::SUCCESS;
    }
    let base = report_path.parent().unwrap_or(std::path::Path::new("."));
    let mut all_match = true;
    for failure in &report.failures {
        let Some(artifact) = &failure.artifact else {
            println!("replay: {} has no saved artifact", failure.signature);
            continue;
        };
        match replay_artifact(&base.join(artifact)) {
            Ok(tag) => {
                let expected = failure
                    .signature
                    .split('|')
                    .nth(2)
                    .unwrap_or_default()
                    .to_string();
                let matched = tag.name() == expected;
                all_match &= matched;
                println!(
                    "replay {}: {} ({})",
                    artifact,
                    tag,
                    if matched { "matches" } else { "DIVERGED" }
                );
            }
            Err(e) => {
                all_match = false;
                println!("replay {artifact}: error {e}");
            }
        }
    }
    if all_match {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_selftest() -> ExitCode {
    use stagefuzz::corpus::ingest_corpus;
    use stagefuzz::regressions;
    use stagefuzz::synth::capture_patterns;
    use stagefuzz_core::bugs::BugId;

    let root = std::path::Path::new(".");
    let mut ok = true;
    let mut check = |name: &str, passed: bool, detail: String| {
        println!("{} {name}: {detail}", if passed { "ok " } else { "FAIL" });
        ok &= passed;
    };

    match ingest_corpus(&root.join("corpus/operators.jsonl")) {
        Ok((records, report)) => {
            check(
                "corpus",
                records.len() >= 500 && report.skipped.is_empty(),
                format!(
                    "{} records, {} skipped",
                    records.len(),
                    report.skipped.len()
                ),
            );
        }
        Err(e) => check("corpus", false, e.to_string()),
    }

    match capture_patterns(&root.join("passtests")) {
        Ok(report) => {
            let passes: std::collections::BTreeSet<_> =
                report.patterns.iter().map(|p| p.source_pass).collect();
            check(
                "patterns",
                report.patterns.len() >= 6 && passes.len() == 6 && report.stale_tests.is_empty(),
                format!(
                    "{} patterns over {} passes, {} stale",
                    report.patterns.len(),
                    passes.len(),
                    report.stale_tests.len()
                ),
            );
        }
        Err(e) => check("patterns", false, e.to_string()),
    }

    let seeds_dir = root.join("seeds");
    let mut seed_count = 0usize;
    let mut seed_ok = true;
    if let Ok(rd) = std::fs::read_dir(&seeds_dir) {
        for entry in rd.filter_map(|e| e.ok()) {
            if entry.path().extension().is_some_and(|e| e == "lir") {
                seed_count += 1;
                let text = std::fs::read_to_string(entry.path()).unwrap_or_default();
                match stagefuzz_core::loop_ir::text::parse_loop(&text) {
                    Ok(p) => seed_ok &= stagefuzz_core::loop_ir::validate_loop(&p).is_empty(),
                    Err(_) => seed_ok = false,
                }
            }
        }
    }
    check(
        "seeds",
        seed_count >= 4 && seed_ok,
        format!("{seed_count} seed files parse and validate"),
    );

    // Every seeded bug must flip its dedicated regression from pass to
    // non-pass.
    let mut flips = 0usize;
    for bug in BugId::ALL {
        let (clean, triggered) = regressions::run_regression(bug);
        if clean && triggered {
            flips += 1;
        } else {
            println!("     bug {bug}: clean={clean} triggered={triggered}");
        }
    }
    check("regressions", flips == 12, format!("{flips}/12 bugs flip"));

    if ok {
        println!("selftest: all checks passed");
        ExitCode::SUCCESS
    } else {
        println!("selftest: FAILURES");
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; bad usage is a config
            // error.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };

    match cli.command {
        Command::Migrate {
            common,
            corpus,
            order,
        } => {
            let mut cfg = match base_config(&common) {
                Ok(c) => c,
                Err(e) => return config_err(e),
            };
            cfg.stage = StageSel::Loader;
            cfg.corpus_path = corpus;
            cfg.order = match OrderMode::from_str(&order) {
                Ok(o) => o,
                Err(e) => return config_err(e),
            };
            finish(run_campaign(&cfg))
        }
        Command::Synthesize {
            common,
            patterns,
            passtests,
            no_patterns,
        } => {
            let mut cfg = match base_config(&common) {
                Ok(c) => c,
                Err(e) => return config_err(e),
            };
            cfg.stage = StageSel::HlOpt;
            cfg.patterns_path = patterns;
            cfg.passtests_dir = passtests;
            cfg.no_patterns = no_patterns;
            finish(run_campaign(&cfg))
        }
        Command::Mutate {
            common,
            seeds,
            docs,
            templates,
            provider,
        } => {
            let mut cfg = match base_config(&common) {
                Ok(c) => c,
                Err(e) => return config_err(e),
            };
            cfg.stage = StageSel::LlOpt;
            cfg.seeds_dir = seeds;
            cfg.llpass_docs_dir = docs;
            cfg.templates_dir = templates;
            cfg.provider = provider;
            finish(run_campaign(&cfg))
        }
        Command::Fuzz {
            common,
            stage,
            corpus,
            passtests,
            patterns,
            no_patterns,
            seeds,
            docs,
            templates,
            order,
            provider,
        } => {
            let mut cfg = match base_config(&common) {
                Ok(c) => c,
                Err(e) => return config_err(e),
            };
            cfg.stage = match StageSel::from_str(&stage) {
                Ok(s) => s,
                Err(e) => return config_err(e),
            };
            cfg.order = match OrderMode::from_str(&order) {
                Ok(o) => o,
                Err(e) => return config_err(e),
            };
            cfg.corpus_path = corpus;
            cfg.passtests_dir = passtests;
            cfg.patterns_path = patterns;
            cfg.no_patterns = no_patterns;
            cfg.seeds_dir = seeds;
            cfg.llpass_docs_dir = docs;
            cfg.templates_dir = templates;
            cfg.provider = provider;
            finish(run_campaign(&cfg))
        }
        Command::Report { path, replay } => cmd_report(path, replay),
        Command::Selftest => cmd_selftest(),
    }
}
