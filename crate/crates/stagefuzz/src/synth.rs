// SPDX-License-Identifier: Apache-2.0

//! Optimization-aware synthesis: extracts trigger patterns from traced pass
//! tests and splices them into seed graphs with validity-restoring fixes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::RngExt;
use thiserror::Error;

use stagefuzz_core::generate::random_value;
use stagefuzz_core::graph::text::{parse_graph_file, ParseError};
use stagefuzz_core::graph::validate::validate_graph;
use stagefuzz_core::graph::{Graph, Node, NodeId, OperatorKind, ParamValue, Params};
use stagefuzz_core::hl::{run_hl_pass, PassId, RewriteTrace};
use stagefuzz_core::tensor::{TensorType, TensorValue};
use stagefuzz_core::util::{fnv1a64, hash_hex};

/// Reference to a pattern-node operand: another pattern node or a typed
/// dangling frontier slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternInput {
    Internal(NodeId),
    Slot(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternNode {
    pub kind: OperatorKind,
    pub params: Params,
    pub inputs: Vec<PatternInput>,
    pub out_type: TensorType,
    pub payload: Option<TensorValue>,
}

/// An optimization-triggering subgraph with a typed dangling-input frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub nodes: BTreeMap<NodeId, PatternNode>,
    pub frontier: Vec<TensorType>,
    pub sinks: Vec<NodeId>,
    pub source_pass: PassId,
    pub source_rule: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SynthError {
    #[error("degenerate pattern: {0}")]
    DegeneratePattern(String),
    #[error("no legal splice point after {0} attempts")]
    SynthesisFailed(usize),
}

impl Pattern {
    /// Canonical single-pattern text block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "pattern source={} rule={}",
            self.source_pass, self.source_rule
        );
        for (k, t) in self.frontier.iter().enumerate() {
            let _ = writeln!(out, "slot {k} type={t}");
        }
        for (id, node) in &self.nodes {
            let inputs: Vec<String> = node
                .inputs
                .iter()
                .map(|i| match i {
                    PatternInput::Internal(n) => n.to_string(),
                    PatternInput::Slot(s) => format!("${s}"),
                })
                .collect();
            let mut params: Vec<String> = Vec::new();
            if let OperatorKind::FusedGroup(_) = &node.kind {
                // Fused patterns never occur (fusion outputs, not inputs),
                // but keep serialization total.
                params.push("chain=?".into());
            }
            for (k, v) in &node.params.0 {
                params.push(format!("{k}={v}"));
            }
            let _ = write!(
                out,
                "node {id} {} inputs=[{}] params={{{}}} type={}",
                node.kind.name(),
                inputs.join(","),
                params.join(","),
                node.out_type
            );
            if let Some(p) = &node.payload {
                let parts: Vec<String> =
                    (0..p.data.len()).map(|i| p.data.get(i).to_string()).collect();
                let _ = write!(out, " data=[{}]", parts.join(","));
            }
            out.push('\n');
        }
        let sinks: Vec<String> = self.sinks.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "sinks=[{}]", sinks.join(","));
        out
    }

    pub fn canonical_hash(&self) -> u64 {
        fnv1a64(self.to_text().as_bytes())
    }

    /// Wraps the pattern with fresh inputs, one per frontier slot; sinks
    /// become graph outputs. Used for fidelity checks and pattern review.
    ///
    /// Dead-node-elimination patterns are the exception: their trigger is
    /// unreachability, so the wrapper observes a keepalive input instead of
    /// the pattern sinks, leaving the pattern dead as captured.
    pub fn to_graph(&self) -> Graph {
        let mut g = Graph::new(&format!("pattern_{}", hash_hex(self.canonical_hash())));
        let mut slot_ids = Vec::with_capacity(self.frontier.len());
        for (k, t) in self.frontier.iter().enumerate() {
            slot_ids.push(g.add_input(&format!("s{k}"), t.clone()));
        }
        let mut idmap: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        for (old_id, node) in &self.nodes {
            let id = g.next_id();
            g.insert(Node {
                id,
                kind: node.kind.clone(),
                params: node.params.clone(),
                inputs: node
                    .inputs
                    .iter()
                    .map(|i| match i {
                        PatternInput::Internal(n) => idmap[n],
                        PatternInput::Slot(s) => slot_ids[*s],
                    })
                    .collect(),
                out_type: node.out_type.clone(),
                payload: node.payload.clone(),
            });
            idmap.insert(*old_id, id);
        }
        if self.source_pass == PassId::DeadNodeElim {
            let keepalive = g.add_input(
                "keepalive",
                stagefuzz_core::tensor::TensorType::new(stagefuzz_core::tensor::DType::F32, vec![1]),
            );
            g.outputs = vec![keepalive];
        } else {
            g.outputs = self.sinks.iter().map(|s| idmap[s]).collect();
        }
        g
    }

    /// True when re-running the source pass on the wrapped pattern fires the
    /// source rule.
    pub fn fidelity_holds(&self) -> bool {
        let g = self.to_graph();
        if !validate_graph(&g).is_empty() {
            return false;
        }
        match run_hl_pass(self.source_pass, &g) {
            Ok((_, traces)) => traces
                .iter()
                .any(|t| t.fired && t.rule_id == self.source_rule),
            Err(_) => false,
        }
    }
}

/// Derives a pattern from one rewrite trace. Node-local rules (ConstFold,
/// AlgebraicSimplify) keep matched nodes plus their immediate non-`Input`
/// producers; region rules keep matched nodes only. Every edge arriving
/// from outside the kept set becomes a typed frontier slot, deduplicated by
/// producer.
pub fn derive_pattern(g: &Graph, trace: &RewriteTrace) -> Result<Pattern, SynthError> {
    if !trace.fired {
        return Err(SynthError::DegeneratePattern("trace did not fire".into()));
    }
    let mut kept: BTreeSet<NodeId> = trace
        .matched_nodes
        .iter()
        .copied()
        .filter(|id| {
            g.nodes
                .get(id)
                .is_some_and(|n| n.kind != OperatorKind::Input)
        })
        .collect();
    let node_local = matches!(trace.pass, PassId::ConstFold | PassId::AlgebraicSimplify);
    if node_local {
        let mut producers = BTreeSet::new();
        for id in &kept {
            for input in &g.nodes[id].inputs {
                if g.nodes[input].kind != OperatorKind::Input {
                    producers.insert(*input);
                }
            }
        }
        kept.extend(producers);
    }
    if kept.is_empty() {
        return Err(SynthError::DegeneratePattern(format!(
            "rule {} matched nothing after derivation",
            trace.rule_id
        )));
    }

    // Renumber internal nodes densely in ascending original-id order.
    let idmap: BTreeMap<NodeId, NodeId> = kept
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, NodeId(i as u32)))
        .collect();
    let mut frontier: Vec<TensorType> = Vec::new();
    let mut slot_of: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut nodes: BTreeMap<NodeId, PatternNode> = BTreeMap::new();
    for old_id in &kept {
        let node = &g.nodes[old_id];
        let inputs = node
            .inputs
            .iter()
            .map(|input| {
                if let Some(mapped) = idmap.get(input) {
                    PatternInput::Internal(*mapped)
                } else {
                    let slot = *slot_of.entry(*input).or_insert_with(|| {
                        frontier.push(g.nodes[input].out_type.clone());
                        frontier.len() - 1
                    });
                    PatternInput::Slot(slot)
                }
            })
            .collect();
        nodes.insert(
            idmap[old_id],
            PatternNode {
                kind: node.kind.clone(),
                params: node.params.clone(),
                inputs,
                out_type: node.out_type.clone(),
                payload: node.payload.clone(),
            },
        );
    }
    let internal_consumed: BTreeSet<NodeId> = nodes
        .values()
        .flat_map(|n| {
            n.inputs.iter().filter_map(|i| match i {
                PatternInput::Internal(id) => Some(*id),
                PatternInput::Slot(_) => None,
            })
        })
        .collect();
    let sinks: Vec<NodeId> = nodes
        .keys()
        .copied()
        .filter(|id| !internal_consumed.contains(id))
        .collect();
    Ok(Pattern {
        nodes,
        frontier,
        sinks,
        source_pass: trace.pass,
        source_rule: trace.rule_id.clone(),
    })
}

/// Outcome of mining a pass-test directory.
#[derive(Debug, Default)]
pub struct CaptureReport {
    pub patterns: Vec<Pattern>,
    pub stale_tests: Vec<String>,
    pub errors: Vec<(String, String)>,
    /// Derivations whose trigger depends on mid-pass state (for example a
    /// fold whose producers were themselves folded); dropped from the
    /// library since re-running the pass on the wrapped pattern cannot fire.
    pub non_transferable: Vec<(String, String)>,
    pub files_processed: usize,
    pub duplicates_dropped: usize,
}

/// Parses the `#expect-pass: <PassId> <rule_id>` header of a pass test.
pub fn parse_expectation(text: &str) -> Option<(PassId, String)> {
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("#expect-pass:") {
            let mut parts = rest.split_whitespace();
            let pass = PassId::from_str(parts.next()?).ok()?;
            let rule = parts.next()?.to_string();
            return Some((pass, rule));
        }
    }
    None
}

/// Runs every pass test under tracing and derives deduplicated patterns
/// from each fired rule of the expected pass. Tests whose expected rule does
/// not fire are flagged stale.
pub fn capture_patterns(passtests_dir: &Path) -> Result<CaptureReport, std::io::Error> {
    let mut report = CaptureReport::default();
    let mut entries: Vec<_> = std::fs::read_dir(passtests_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "gr"))
        .collect();
    entries.sort();
    let mut seen_hashes: BTreeSet<u64> = BTreeSet::new();
    for path in entries {
        let display = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        report.files_processed += 1;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                report.errors.push((display, format!("unreadable: {e}")));
                continue;
            }
        };
        let Some((expected_pass, expected_rule)) = parse_expectation(&text) else {
            report
                .errors
                .push((display, "missing #expect-pass header".into()));
            continue;
        };
        let g = match parse_graph_file(&path) {
            Ok(g) => g,
            Err(e) => {
                report.errors.push((display, fmt_parse_error(&e)));
                continue;
            }
        };
        let v = validate_graph(&g);
        if !v.is_empty() {
            report.errors.push((display, format!("invalid graph: {v}")));
            continue;
        }
        let traces = match run_hl_pass(expected_pass, &g) {
            Ok((_, traces)) => traces,
            Err(e) => {
                report.errors.push((display, e.to_string()));
                continue;
            }
        };
        if !traces
            .iter()
            .any(|t| t.fired && t.rule_id == expected_rule)
        {
            report.stale_tests.push(display.clone());
        }
        for trace in traces.iter().filter(|t| t.fired) {
            match derive_pattern(&g, trace) {
                Ok(pattern) => {
                    if !pattern.fidelity_holds() {
                        report
                            .non_transferable
                            .push((display.clone(), trace.rule_id.clone()));
                        continue;
                    }
                    if seen_hashes.insert(pattern.canonical_hash()) {
                        report.patterns.push(pattern);
                    } else {
                        report.duplicates_dropped += 1;
                    }
                }
                Err(SynthError::DegeneratePattern(reason)) => {
                    report.errors.push((display.clone(), reason));
                }
                Err(e) => report.errors.push((display.clone(), e.to_string())),
            }
        }
    }
    Ok(report)
}

fn fmt_parse_error(e: &ParseError) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Pattern library file (.plib)
// ---------------------------------------------------------------------------

/// Serializes a pattern library: concatenated canonical pattern texts.
pub fn serialize_pattern_library(patterns: &[Pattern]) -> String {
    patterns
        .iter()
        .map(|p| p.to_text())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a pattern library file.
pub fn parse_pattern_library(text: &str) -> Result<Vec<Pattern>, String> {
    let mut patterns = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |block: &[&str], patterns: &mut Vec<Pattern>| -> Result<(), String> {
        if block.is_empty() {
            return Ok(());
        }
        patterns.push(parse_pattern_block(block)?);
        Ok(())
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&current, &mut patterns)?;
            current.clear();
        } else {
            current.push(line);
        }
    }
    flush(&current, &mut patterns)?;
    Ok(patterns)
}

fn parse_pattern_block(lines: &[&str]) -> Result<Pattern, String> {
    let header = lines[0];
    let rest = header
        .strip_prefix("pattern source=")
        .ok_or_else(|| format!("expected pattern header, got `{header}`"))?;
    let (pass_str, rule_part) = rest
        .split_once(" rule=")
        .ok_or_else(|| format!("bad pattern header `{header}`"))?;
    let source_pass = PassId::from_str(pass_str)?;
    let source_rule = rule_part.trim().to_string();

    let mut frontier = Vec::new();
    let mut node_lines = Vec::new();
    let mut sinks = Vec::new();
    for line in &lines[1..] {
        if let Some(rest) = line.strip_prefix("slot ") {
            let (_k, t) = rest
                .split_once(" type=")
                .ok_or_else(|| format!("bad slot line `{line}`"))?;
            frontier.push(parse_type_str(t)?);
        } else if let Some(rest) = line.strip_prefix("sinks=[") {
            let inner = rest.strip_suffix(']').ok_or("bad sinks line")?;
            if !inner.is_empty() {
                for s in inner.split(',') {
                    sinks.push(NodeId(s.parse::<u32>().map_err(|e| e.to_string())?));
                }
            }
        } else if line.starts_with("node ") {
            node_lines.push(*line);
        } else {
            return Err(format!("unexpected pattern line `{line}`"));
        }
    }
    // Reuse the graph text parser for node lines by substituting slot refs
    // with fresh placeholder ids beyond the node id range.
    let slot_base = 10_000u32;
    let mut doctored = String::new();
    for line in &node_lines {
        let mut fixed = line.to_string();
        for k in (0..frontier.len()).rev() {
            fixed = fixed.replace(&format!("${k}"), &(slot_base + k as u32).to_string());
        }
        doctored.push_str(&fixed);
        doctored.push('\n');
    }
    for (k, t) in frontier.iter().enumerate() {
        doctored.push_str(&format!(
            "node {} Input inputs=[] params={{name=s{k}}} type={t}\n",
            slot_base + k as u32
        ));
    }
    doctored.push_str("outputs=[]\n");
    let g = stagefuzz_core::graph::text::parse_graph(&doctored).map_err(|e| e.to_string())?;
    let mut nodes = BTreeMap::new();
    for (id, node) in &g.nodes {
        if id.0 >= slot_base {
            continue;
        }
        nodes.insert(
            *id,
            PatternNode {
                kind: node.kind.clone(),
                params: node.params.clone(),
                inputs: node
                    .inputs
                    .iter()
                    .map(|i| {
                        if i.0 >= slot_base {
                            PatternInput::Slot((i.0 - slot_base) as usize)
                        } else {
                            PatternInput::Internal(*i)
                        }
                    })
                    .collect(),
                out_type: node.out_type.clone(),
                payload: node.payload.clone(),
            },
        );
    }
    Ok(Pattern {
        nodes,
        frontier,
        sinks,
        source_pass,
        source_rule,
    })
}

fn parse_type_str(s: &str) -> Result<TensorType, String> {
    // `F32[2,3]`
    let doctored = format!("node 0 Input inputs=[] params={{name=x}} type={s}\noutputs=[0]\n");
    let g = stagefuzz_core::graph::text::parse_graph(&doctored).map_err(|e| e.to_string())?;
    Ok(g.nodes[&NodeId(0)].out_type.clone())
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

const SPLICE_ATTEMPTS: usize = 16;

/// Resolution strategies for one dangling slot, in order: reuse an
/// exactly-typed node, adapt a compatible node with a single Cast/Reshape,
/// or create a fresh Input/Constant of the required type.
pub fn fix_dangling(
    g: &mut Graph,
    slots: &[TensorType],
    pool: &[NodeId],
    rng: &mut StdRng,
) -> Vec<NodeId> {
    let mut resolved = Vec::with_capacity(slots.len());
    for (k, want) in slots.iter().enumerate() {
        // Strategy 1: exact type reuse.
        let exact: Vec<NodeId> = pool
            .iter()
            .copied()
            .filter(|id| &g.nodes[id].out_type == want)
            .collect();
        if let Some(&pick) = exact.choose(rng) {
            resolved.push(pick);
            continue;
        }
        // Strategy 1b: single adapter node.
        let cast_candidates: Vec<NodeId> = pool
            .iter()
            .copied()
            .filter(|id| {
                let t = &g.nodes[id].out_type;
                t.shape == want.shape && t.dtype != want.dtype
            })
            .collect();
        let reshape_candidates: Vec<NodeId> = pool
            .iter()
            .copied()
            .filter(|id| {
                let t = &g.nodes[id].out_type;
                t.dtype == want.dtype
                    && t.element_count() == want.element_count()
                    && t.shape != want.shape
            })
            .collect();
        if let Some(&src) = cast_candidates.choose(rng) {
            let params = Params::new().with("to", ParamValue::Dtype(want.dtype));
            let id = g.add_op(OperatorKind::Cast, params, vec![src]);
            resolved.push(id);
            continue;
        }
        if let Some(&src) = reshape_candidates.choose(rng) {
            let params = Params::new().with(
                "shape",
                ParamValue::Ints(want.shape.iter().map(|d| *d as i64).collect()),
            );
            let id = g.add_op(OperatorKind::Reshape, params, vec![src]);
            resolved.push(id);
            continue;
        }
        // Strategy 2: fresh source node (always succeeds). Large payloads
        // become inputs to keep constants inline-serializable.
        let id = if want.element_count() <= 64 && rng.random_bool(0.5) {
            g.add_constant(random_value(rng, want, false))
        } else {
            let name = fresh_input_name(g, k);
            g.add_input(&name, want.clone())
        };
        resolved.push(id);
    }
    resolved
}

fn fresh_input_name(g: &Graph, hint: usize) -> String {
    let taken: BTreeSet<String> = g
        .input_nodes()
        .iter()
        .map(|n| n.params.get_str("name").unwrap_or_default().to_string())
        .collect();
    let mut n = hint;
    loop {
        let candidate = format!("syn{n}");
        if !taken.contains(&candidate) {
            return candidate;
        }
        n += 1;
    }
}

/// Tries to make `source`'s value usable where type `want` is expected:
/// exact match, or a single Cast/Reshape adapter.
fn adapt_type(
    g: &mut Graph,
    source: NodeId,
    want: &TensorType,
) -> Option<NodeId> {
    let have = g.nodes[&source].out_type.clone();
    if &have == want {
        return Some(source);
    }
    if have.shape == want.shape {
        let params = Params::new().with("to", ParamValue::Dtype(want.dtype));
        return Some(g.add_op(OperatorKind::Cast, params, vec![source]));
    }
    if have.dtype == want.dtype && have.element_count() == want.element_count() {
        let params = Params::new().with(
            "shape",
            ParamValue::Ints(want.shape.iter().map(|d| *d as i64).collect()),
        );
        return Some(g.add_op(OperatorKind::Reshape, params, vec![source]));
    }
    None
}

/// Splices `pattern` into `seed` at a random synthesis point. The pattern's
/// sinks are always observable: either wired into a consumer edge or added
/// as extra graph outputs.
pub fn synthesize(pattern: &Pattern, seed: &Graph, rng: &mut StdRng) -> Result<Graph, SynthError> {
    for _ in 0..SPLICE_ATTEMPTS {
        if let Some(g) = try_splice(pattern, seed, rng) {
            if validate_graph(&g).is_empty() {
                return Ok(g);
            }
        }
    }
    Err(SynthError::SynthesisFailed(SPLICE_ATTEMPTS))
}

/// True when `have` can stand in for `want` directly or through one
/// Cast/Reshape adapter.
fn adaptable(have: &TensorType, want: &TensorType) -> bool {
    have == want
        || have.shape == want.shape
        || (have.dtype == want.dtype && have.element_count() == want.element_count())
}

fn try_splice(pattern: &Pattern, seed: &Graph, rng: &mut StdRng) -> Option<Graph> {
    let mut g = seed.clone();
    let seed_ids: Vec<NodeId> = g.nodes.keys().copied().collect();

    // Candidate synthesis points per splice mode. Mode 2 wires a pattern
    // sink into an existing consumer edge; mode 1 feeds a seed node's
    // output into one frontier slot. When neither has a type-compatible
    // point, the pattern is grafted alongside the seed and connects only
    // through slot reuse.
    let consumer_candidates: Vec<(NodeId, usize, NodeId)> = seed_ids
        .iter()
        .flat_map(|anchor| {
            let node = &g.nodes[anchor];
            node.inputs
                .iter()
                .enumerate()
                .flat_map(|(pos, src)| {
                    let want = g.nodes[src].out_type.clone();
                    pattern
                        .sinks
                        .iter()
                        .filter(move |sink| {
                            adaptable(&pattern.nodes[sink].out_type, &want)
                        })
                        .map(move |sink| (*anchor, pos, *sink))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let feed_candidates: Vec<(NodeId, usize)> = seed_ids
        .iter()
        .flat_map(|anchor| {
            let have = g.nodes[anchor].out_type.clone();
            pattern
                .frontier
                .iter()
                .enumerate()
                .filter(move |(_, want)| adaptable(&have, want))
                .map(move |(slot, _)| (*anchor, slot))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut slot_assignment: Vec<Option<NodeId>> = vec![None; pattern.frontier.len()];
    let mut consumer_rewire: Option<(NodeId, usize, NodeId)> = None;
    let prefer_feed = rng.random_bool(0.5);
    let use_feed = (prefer_feed && !feed_candidates.is_empty())
        || (!prefer_feed && consumer_candidates.is_empty() && !feed_candidates.is_empty());
    if use_feed {
        let (anchor, slot) = *feed_candidates.choose(rng)?;
        let adapted = adapt_type(&mut g, anchor, &pattern.frontier[slot])?;
        slot_assignment[slot] = Some(adapted);
    } else if let Some(&(anchor, pos, sink)) = consumer_candidates.choose(rng) {
        consumer_rewire = Some((anchor, pos, sink));
    }

    // Remaining slots resolve against seed nodes; in consumer mode the pool
    // excludes the anchor's descendants, which would close a cycle through
    // the pattern.
    let pool: Vec<NodeId> = match consumer_rewire {
        Some((anchor, _, _)) => {
            let forbidden = seed.descendants(anchor);
            seed_ids
                .iter()
                .copied()
                .filter(|id| !forbidden.contains(id))
                .collect()
        }
        None => seed_ids.clone(),
    };
    let unresolved: Vec<(usize, TensorType)> = slot_assignment
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_none())
        .map(|(k, _)| (k, pattern.frontier[k].clone()))
        .collect();
    let slot_types: Vec<TensorType> = unresolved.iter().map(|(_, t)| t.clone()).collect();
    let resolved = fix_dangling(&mut g, &slot_types, &pool, rng);
    for ((k, _), id) in unresolved.into_iter().zip(resolved) {
        slot_assignment[k] = Some(id);
    }

    // Insert pattern nodes with fresh ids.
    let mut idmap: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for (old_id, node) in &pattern.nodes {
        let inputs: Vec<NodeId> = node
            .inputs
            .iter()
            .map(|i| match i {
                PatternInput::Internal(n) => idmap[n],
                PatternInput::Slot(s) => slot_assignment[*s].unwrap(),
            })
            .collect();
        let id = g.next_id();
        g.insert(Node {
            id,
            kind: node.kind.clone(),
            params: node.params.clone(),
            inputs,
            out_type: node.out_type.clone(),
            payload: node.payload.clone(),
        });
        idmap.insert(*old_id, id);
    }

    // Observability: wire the chosen sink into the consumer edge (mode 2);
    // all remaining sinks become extra outputs.
    let mut wired_sink = None;
    if let Some((anchor, pos, sink)) = consumer_rewire {
        let want = g.nodes[&g.nodes[&anchor].inputs[pos]].out_type.clone();
        let adapted = adapt_type(&mut g, idmap[&sink], &want)?;
        g.nodes.get_mut(&anchor).unwrap().inputs[pos] = adapted;
        wired_sink = Some(sink);
    }
    for sink in &pattern.sinks {
        if wired_sink != Some(*sink) {
            g.outputs.push(idmap[sink]);
        }
    }
    Some(g)
}
