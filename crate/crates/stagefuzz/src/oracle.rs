// SPDX-License-Identifier: Apache-2.0

//! Verdict oracles: per-stage differential testing, crash capture, and
//! failure-signature deduplication.
//!
//! The reference interpreters (graph and loop) are the ground truth; the
//! compiler under test is the loader/optimizer path with seeded bugs
//! threaded through. Every test outcome is a `Verdict`, never a fault.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::rngs::StdRng;
use rand::SeedableRng;

use stagefuzz_core::bugs::BugSet;
use stagefuzz_core::compare::{outputs_close, Tolerance};
use stagefuzz_core::generate::random_inputs;
use stagefuzz_core::graph::interp::interpret_graph;
use stagefuzz_core::graph::validate::validate_graph;
use stagefuzz_core::graph::Graph;
use stagefuzz_core::hl::{run_hl_pipeline_with, OptLevel};
use stagefuzz_core::ll::run_ll_pipeline_with;
use stagefuzz_core::loop_ir::interp::interpret_loop;
use stagefuzz_core::loop_ir::{validate_loop, LoopProgram};
use stagefuzz_core::lower::{lower_graph, output_buffer_names};
use stagefuzz_core::tensor::TensorValue;

use crate::corpus::{materialize_inputs, wrap_instance, OperatorInstanceRecord};
use crate::harmony::seeds::random_loop_inputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Loader,
    HlOpt,
    LlOpt,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Loader => "loader",
            Stage::HlOpt => "hlopt",
            Stage::LlOpt => "llopt",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Test payload per stage.
#[derive(Debug, Clone)]
pub enum Payload {
    Record(OperatorInstanceRecord),
    Graph(Graph),
    Loop(LoopProgram),
}

/// One executable test with provenance.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub id: String,
    pub stage: Stage,
    pub payload: Payload,
    /// Seed for the input-data stream.
    pub data_seed: u64,
    /// Provenance: corpus origin, pattern id, or mutation rule ids.
    pub lineage: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VerdictTag {
    Pass,
    Crash,
    Mismatch,
    InvalidRejection,
    MissedRejection,
}

impl VerdictTag {
    pub fn name(self) -> &'static str {
        match self {
            VerdictTag::Pass => "pass",
            VerdictTag::Crash => "crash",
            VerdictTag::Mismatch => "mismatch",
            VerdictTag::InvalidRejection => "invalid_rejection",
            VerdictTag::MissedRejection => "missed_rejection",
        }
    }
}

impl fmt::Display for VerdictTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one test: tag, the pass/rule context closest to the failure,
/// and divergence metrics for mismatches.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub tag: VerdictTag,
    pub context: String,
    pub message: String,
    pub max_abs: f32,
    pub max_rel: f32,
    pub divergent_index: Option<usize>,
}

impl Verdict {
    pub fn pass() -> Self {
        Verdict {
            tag: VerdictTag::Pass,
            context: String::new(),
            message: String::new(),
            max_abs: 0.0,
            max_rel: 0.0,
            divergent_index: None,
        }
    }

    fn simple(tag: VerdictTag, context: &str, message: String) -> Self {
        Verdict {
            tag,
            context: context.to_string(),
            message,
            max_abs: 0.0,
            max_rel: 0.0,
            divergent_index: None,
        }
    }

    pub fn is_pass(&self) -> bool {
        self.tag == VerdictTag::Pass
    }
}

/// What one differential run produced, including the coverage proxy.
#[derive(Debug, Clone)]
pub struct DiffOutcome {
    pub verdict: Verdict,
    pub fired_hl_rules: BTreeSet<String>,
    pub fired_ll_rules: BTreeSet<String>,
}

impl DiffOutcome {
    fn plain(verdict: Verdict) -> Self {
        DiffOutcome {
            verdict,
            fired_hl_rules: BTreeSet::new(),
            fired_ll_rules: BTreeSet::new(),
        }
    }
}

fn mismatch_from(
    context: &str,
    pos: usize,
    d: stagefuzz_core::compare::Divergence,
) -> Verdict {
    Verdict {
        tag: VerdictTag::Mismatch,
        context: context.to_string(),
        message: format!("output {pos}: {}", d.message),
        max_abs: d.max_abs,
        max_rel: d.max_rel,
        divergent_index: Some(d.index),
    }
}

/// Localizes a high-level failure to the first pass application whose
/// output diverges from the reference outputs (or stops validating or
/// executing), returning that application's last fired rule id.
fn localize_hl(
    g: &Graph,
    inputs: &BTreeMap<String, TensorValue>,
    reference: &[TensorValue],
    bugs: &BugSet,
) -> Option<String> {
    use stagefuzz_core::hl::{run_hl_pass_with, FIXPOINT_CAP, LEVEL2_ORDER};
    let mut current = g.clone();
    for _ in 0..FIXPOINT_CAP {
        let before = current.clone();
        for pass in LEVEL2_ORDER {
            let (next, traces) = match run_hl_pass_with(bugs, pass, &current) {
                Ok(r) => r,
                Err(_) => return Some(pass.name().to_string()),
            };
            let last_rule = traces.iter().rev().find(|t| t.fired).map(|t| t.rule_id.clone());
            if let Some(rule) = last_rule {
                let broken = !validate_graph(&next).is_empty()
                    || match interpret_graph(&next, inputs) {
                        Ok(y) => outputs_close(reference, &y, Tolerance::STANDARD).is_err(),
                        Err(_) => true,
                    };
                if broken {
                    return Some(rule);
                }
            }
            current = next;
        }
        if current == before {
            break;
        }
    }
    None
}

/// Loop-pipeline culprit localization, mirroring `localize_hl`.
fn localize_ll(
    p: &LoopProgram,
    inputs: &BTreeMap<String, TensorValue>,
    reference: &BTreeMap<String, TensorValue>,
    bugs: &BugSet,
) -> Option<String> {
    use stagefuzz_core::ll::{run_ll_pass_with, LL_LEVEL2_ORDER};
    let mut current = p.clone();
    for pass in LL_LEVEL2_ORDER {
        let (next, traces) = match run_ll_pass_with(bugs, pass, &current) {
            Ok(r) => r,
            Err(_) => return Some(pass.name().to_string()),
        };
        let last_rule = traces.iter().rev().find(|t| t.fired).map(|t| t.rule_id.clone());
        if let Some(rule) = last_rule {
            let tol = if next.intrinsics_used.is_empty() {
                Tolerance::STANDARD
            } else {
                Tolerance::INTRINSIC
            };
            let broken = !validate_loop(&next).is_empty()
                || match interpret_loop(&next, inputs) {
                    Ok(y) => reference.iter().any(|(name, v)| match y.get(name) {
                        Some(o) => {
                            stagefuzz_core::compare::tensors_close(v, o, tol).is_err()
                        }
                        None => true,
                    }),
                    Err(_) => true,
                };
            if broken {
                return Some(rule);
            }
        }
        current = next;
    }
    None
}

/// Loader-stage differential: the record's ground-truth validity comes from
/// the reference shape rules (the migrated test's own expectation); the
/// loader under test must agree, and accepted graphs must execute
/// identically under the graph interpreter and the lowered level-0 program.
fn diff_loader(record: &OperatorInstanceRecord, bugs: &BugSet) -> DiffOutcome {
    let kind = record.kind.name();
    let expected_valid = wrap_instance(record, &BugSet::empty()).is_ok();
    let loaded = wrap_instance(record, bugs);
    let g = match (expected_valid, loaded) {
        (true, Err(e)) => {
            return DiffOutcome::plain(Verdict::simple(
                VerdictTag::InvalidRejection,
                kind,
                format!("valid record rejected: {e}"),
            ))
        }
        (false, Ok(_)) => {
            return DiffOutcome::plain(Verdict::simple(
                VerdictTag::MissedRejection,
                kind,
                "shape-invalid record accepted by loader".into(),
            ))
        }
        (false, Err(_)) => return DiffOutcome::plain(Verdict::pass()),
        (true, Ok(g)) => g,
    };
    let inputs = materialize_inputs(record);
    let reference = match interpret_graph(&g, &inputs) {
        Ok(y) => y,
        Err(e) => {
            return DiffOutcome::plain(Verdict::simple(
                VerdictTag::Crash,
                kind,
                format!("graph execution failed: {}", error_class(&e)),
            ))
        }
    };
    let lowered = match lower_graph(&g) {
        Ok(p) => p,
        Err(e) => {
            return DiffOutcome::plain(Verdict::simple(
                VerdictTag::Crash,
                kind,
                format!("lowering failed: {}", error_class(&e)),
            ))
        }
    };
    let loop_out = match interpret_loop(&lowered, &inputs) {
        Ok(y) => y,
        Err(e) => {
            return DiffOutcome::plain(Verdict::simple(
                VerdictTag::Crash,
                kind,
                format!("lowered execution failed: {}", error_class(&e)),
            ))
        }
    };
    let names = output_buffer_names(&g);
    let routed: Vec<TensorValue> = names
        .iter()
        .filter_map(|n| loop_out.get(n).cloned())
        .collect();
    if routed.len() != reference.len() {
        return DiffOutcome::plain(Verdict::simple(
            VerdictTag::Crash,
            kind,
            "lowered program lost an output buffer".into(),
        ));
    }
    match outputs_close(&reference, &routed, Tolerance::STANDARD) {
        Ok(()) => DiffOutcome::plain(Verdict::pass()),
        Err((pos, d)) => DiffOutcome::plain(mismatch_from(kind, pos, d)),
    }
}

/// High-level stage differential: level-0 interpretation against the
/// level-2 graph pipeline under the active bug set.
fn diff_hlopt(g: &Graph, data_seed: u64, bugs: &BugSet) -> DiffOutcome {
    let mut rng = StdRng::seed_from_u64(data_seed);
    let inputs = random_inputs(g, &mut rng, false);
    let reference = match interpret_graph(g, &inputs) {
        Ok(y) => y,
        Err(e) => {
            return DiffOutcome::plain(Verdict::simple(
                VerdictTag::Crash,
                "reference",
                format!("level-0 execution failed: {e}"),
            ))
        }
    };
    let result = match run_hl_pipeline_with(bugs, OptLevel::O2, g) {
        Ok(r) => r,
        Err(e) => {
            let stagefuzz_core::hl::PassError::PassInternal { pass, .. } = &e;
            return DiffOutcome::plain(Verdict::simple(
                VerdictTag::Crash,
                pass.name(),
                e.to_string(),
            ));
        }
    };
    let fired: BTreeSet<String> = result
        .traces
        .iter()
        .filter(|t| t.fired)
        .map(|t| t.rule_id.clone())
        .collect();
    let outcome = |verdict| DiffOutcome {
        verdict,
        fired_hl_rules: fired.clone(),
        fired_ll_rules: BTreeSet::new(),
    };
    // Failures localize to the first pass application that broke the
    // graph, which is what deduplication keys on.
    let culprit = || {
        localize_hl(g, &inputs, &reference, bugs).unwrap_or_else(|| "unlocalized".to_string())
    };
    let violations = validate_graph(&result.graph);
    if !violations.is_empty() {
        return outcome(Verdict::simple(
            VerdictTag::Crash,
            &culprit(),
            "optimized graph fails validation".to_string(),
        ));
    }
    let optimized = match interpret_graph(&result.graph, &inputs) {
        Ok(y) => y,
        Err(e) => {
            let class = error_class(&e);
            return outcome(Verdict::simple(
                VerdictTag::Crash,
                &culprit(),
                format!("optimized execution failed: {class}"),
            ));
        }
    };
    match outputs_close(&reference, &optimized, Tolerance::STANDARD) {
        Ok(()) => outcome(Verdict::pass()),
        Err((pos, d)) => {
            let mut v = mismatch_from(&culprit(), pos, d);
            v.message = format!("output {pos} diverges");
            outcome(v)
        }
    }
}

/// Structural class of an evaluation error, used in dedup messages so node
/// ids and values do not fragment signatures.
fn error_class<E: std::fmt::Display>(e: &E) -> String {
    let text = e.to_string();
    text.split([':', '(']).next().unwrap_or("error").trim().to_string()
}

/// Low-level stage differential: the loop interpreter on the unoptimized
/// program against the level-2 loop pipeline under the active bug set.
fn diff_llopt(p: &LoopProgram, data_seed: u64, bugs: &BugSet) -> DiffOutcome {
    let mut rng = StdRng::seed_from_u64(data_seed);
    let inputs = random_loop_inputs(p, &mut rng);
    let reference = match interpret_loop(p, &inputs) {
        Ok(y) => y,
        Err(e) => {
            return DiffOutcome::plain(Verdict::simple(
                VerdictTag::Crash,
                "reference",
                format!("level-0 execution failed: {e}"),
            ))
        }
    };
    let (optimized, traces) = match run_ll_pipeline_with(bugs, OptLevel::O2, p) {
        Ok(r) => r,
        Err(e) => {
            let context = match &e {
                stagefuzz_core::ll::LlPassError::IllegalTransform { pass, .. }
                | stagefuzz_core::ll::LlPassError::PassInternal { pass, .. } => pass.name(),
            };
            return DiffOutcome::plain(Verdict::simple(VerdictTag::Crash, context, e.to_string()));
        }
    };
    let fired: BTreeSet<String> = traces
        .iter()
        .filter(|t| t.fired)
        .map(|t| t.rule_id.clone())
        .collect();
    let outcome = |verdict| DiffOutcome {
        verdict,
        fired_hl_rules: BTreeSet::new(),
        fired_ll_rules: fired.clone(),
    };
    let culprit = || {
        localize_ll(p, &inputs, &reference, bugs).unwrap_or_else(|| "unlocalized".to_string())
    };
    let violations = validate_loop(&optimized);
    if !violations.is_empty() {
        return outcome(Verdict::simple(
            VerdictTag::Crash,
            &culprit(),
            "optimized program fails validation".to_string(),
        ));
    }
    let optimized_out = match interpret_loop(&optimized, &inputs) {
        Ok(y) => y,
        Err(e) => {
            let class = error_class(&e);
            return outcome(Verdict::simple(
                VerdictTag::Crash,
                &culprit(),
                format!("optimized execution failed: {class}"),
            ));
        }
    };
    let tol = if optimized.intrinsics_used.is_empty() {
        Tolerance::STANDARD
    } else {
        Tolerance::INTRINSIC
    };
    let mut ref_list: Vec<TensorValue> = Vec::new();
    let mut opt_list: Vec<TensorValue> = Vec::new();
    for (name, v) in &reference {
        ref_list.push(v.clone());
        match optimized_out.get(name) {
            Some(o) => opt_list.push(o.clone()),
            None => {
                return outcome(Verdict::simple(
                    VerdictTag::Crash,
                    &culprit(),
                    format!("optimized program lost output `{name}`"),
                ))
            }
        }
    }
    match outputs_close(&ref_list, &opt_list, tol) {
        Ok(()) => outcome(Verdict::pass()),
        Err((pos, d)) => {
            let mut v = mismatch_from(&culprit(), pos, d);
            v.message = format!("output {pos} diverges");
            outcome(v)
        }
    }
}

/// Runs the differential oracle for one test. A panic anywhere inside the
/// compiler under test is contained and reported as a Crash verdict; it
/// must never take down a campaign worker.
pub fn diff_test(tc: &TestCase, bugs: &BugSet) -> DiffOutcome {
    let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match &tc.payload {
        Payload::Record(record) => diff_loader(record, bugs),
        Payload::Graph(g) => diff_hlopt(g, tc.data_seed, bugs),
        Payload::Loop(p) => diff_llopt(p, tc.data_seed, bugs),
    }));
    match run {
        Ok(outcome) => outcome,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "opaque panic".to_string());
            DiffOutcome::plain(Verdict::simple(
                VerdictTag::Crash,
                "panic",
                format!("pass panicked: {}", error_class(&message)),
            ))
        }
    }
}

/// Stable deduplication signature: stage, last fired pass/rule context,
/// verdict tag, and the message with digit runs normalized away.
pub fn dedup_key(v: &Verdict, tc: &TestCase) -> String {
    let mut normalized = String::with_capacity(v.message.len());
    let mut in_digits = false;
    for c in v.message.chars() {
        if c.is_ascii_digit() {
            if !in_digits {
                normalized.push('#');
                in_digits = true;
            }
        } else {
            in_digits = false;
            normalized.push(c);
        }
    }
    format!("{}|{}|{}|{}", tc.stage, v.context, v.tag, normalized)
}

/// Convenience wrapper: runs a payload with no test-case scaffolding.
pub fn quick_test(stage: Stage, payload: Payload, data_seed: u64, bugs: &BugSet) -> DiffOutcome {
    let tc = TestCase {
        id: "adhoc".into(),
        stage,
        payload,
        data_seed,
        lineage: String::new(),
    };
    diff_test(&tc, bugs)
}

/// Input bindings used by the replay path for graph payloads.
pub fn graph_inputs_for_seed(g: &Graph, data_seed: u64) -> BTreeMap<String, TensorValue> {
    let mut rng = StdRng::seed_from_u64(data_seed);
    random_inputs(g, &mut rng, false)
}
