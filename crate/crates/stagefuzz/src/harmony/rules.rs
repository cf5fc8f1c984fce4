// SPDX-License-Identifier: Apache-2.0

//! Mutation rules mined from pass documentation: guarded, lightweight IR
//! edits that are semantically inert at optimization level 0 but likely to
//! trigger the targeted low-level pass at level 2.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use thiserror::Error;

use stagefuzz_core::compare::{tensors_close, Tolerance};
use stagefuzz_core::ll::deps::has_loop_carried_dependence;
use stagefuzz_core::ll::{split_loop_stmt, swap_nest_stmt, LLPassId, NameGen};
use stagefuzz_core::loop_ir::interp::interpret_loop;
use stagefuzz_core::loop_ir::{
    collect_loops, replace_at, seq, validate_loop, AllocScope, BinOp, Buffer, Expr,
    LoopAnnotation, LoopProgram, Stmt, StmtPath,
};
use stagefuzz_core::tensor::Scalar;

use super::seeds::random_loop_inputs;

/// Structural predicate over a candidate loop (or store) site.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Guard {
    pub innermost: bool,
    pub const_bounds: bool,
    pub serial_only: bool,
    pub stores_only: bool,
    pub no_loop_carried_dep: bool,
    pub perfect_nest: bool,
    pub has_readonly_load: bool,
    pub trip_multiple_of: Option<i64>,
    pub trip_at_least: Option<i64>,
    pub value_is_mul: bool,
}

impl Guard {
    pub fn parse(spec: &str) -> Result<Guard, String> {
        let mut g = Guard::default();
        for atom in spec.split(',') {
            let atom = atom.trim();
            if atom.is_empty() {
                continue;
            }
            match atom {
                "innermost" => g.innermost = true,
                "const-bounds" => g.const_bounds = true,
                "serial" => g.serial_only = true,
                "stores-only" => g.stores_only = true,
                "no-loop-carried-dep" => g.no_loop_carried_dep = true,
                "perfect-nest" => g.perfect_nest = true,
                "has-readonly-load" => g.has_readonly_load = true,
                "value-is-mul" => g.value_is_mul = true,
                other => {
                    if let Some(rest) = other.strip_prefix("trip%") {
                        let (n, eq) = rest
                            .split_once("==")
                            .ok_or_else(|| format!("bad trip atom `{other}`"))?;
                        if eq.trim() != "0" {
                            return Err(format!("bad trip atom `{other}`"));
                        }
                        g.trip_multiple_of =
                            Some(n.trim().parse().map_err(|_| format!("bad `{other}`"))?);
                    } else if let Some(rest) = other.strip_prefix("trip>=") {
                        g.trip_at_least =
                            Some(rest.trim().parse().map_err(|_| format!("bad `{other}`"))?);
                    } else {
                        return Err(format!("unknown guard atom `{other}`"));
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn render(&self) -> String {
        let mut atoms = Vec::new();
        if self.innermost {
            atoms.push("innermost".to_string());
        }
        if self.const_bounds {
            atoms.push("const-bounds".to_string());
        }
        if self.serial_only {
            atoms.push("serial".to_string());
        }
        if self.stores_only {
            atoms.push("stores-only".to_string());
        }
        if self.no_loop_carried_dep {
            atoms.push("no-loop-carried-dep".to_string());
        }
        if self.perfect_nest {
            atoms.push("perfect-nest".to_string());
        }
        if self.has_readonly_load {
            atoms.push("has-readonly-load".to_string());
        }
        if self.value_is_mul {
            atoms.push("value-is-mul".to_string());
        }
        if let Some(n) = self.trip_multiple_of {
            atoms.push(format!("trip%{n}==0"));
        }
        if let Some(n) = self.trip_at_least {
            atoms.push(format!("trip>={n}"));
        }
        atoms.join(", ")
    }

    fn loop_matches(&self, stmt: &Stmt) -> bool {
        let Stmt::For {
            var,
            lo,
            hi,
            annotation,
            body,
        } = stmt
        else {
            return false;
        };
        if self.serial_only && !annotation.is_serial() {
            return false;
        }
        if self.innermost && !body.is_loop_free() {
            return false;
        }
        let trip = match (lo.const_int(), hi.const_int()) {
            (Some(l), Some(h)) => Some(h - l),
            _ => None,
        };
        if self.const_bounds && trip.is_none() {
            return false;
        }
        if let Some(n) = self.trip_multiple_of {
            match trip {
                Some(t) if t > 0 && t % n == 0 => {}
                _ => return false,
            }
        }
        if let Some(n) = self.trip_at_least {
            match trip {
                Some(t) if t >= n => {}
                _ => return false,
            }
        }
        if self.stores_only {
            let flat_stores = match body.as_ref() {
                Stmt::Store { .. } => true,
                Stmt::Seq(v) => v.iter().all(|s| matches!(s, Stmt::Store { .. })),
                _ => false,
            };
            if !flat_stores {
                return false;
            }
        }
        if self.no_loop_carried_dep && has_loop_carried_dependence(var, body) {
            return false;
        }
        if self.perfect_nest {
            let Stmt::For { lo, hi, .. } = body.as_ref() else {
                return false;
            };
            if lo.mentions_var(var) || hi.mentions_var(var) {
                return false;
            }
        }
        if self.has_readonly_load {
            let stored: std::collections::BTreeSet<&str> =
                body.stores().iter().map(|(b, _)| *b).collect();
            if !body.loads().iter().any(|(b, _)| !stored.contains(b)) {
                return false;
            }
        }
        true
    }
}

/// Annotation attachment or structural edit applied at a matching site.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    AttachUnroll(Vec<u8>),
    AttachVectorize(Vec<u8>),
    AttachPipelined(Vec<u8>),
    AttachParallel,
    SplitLoop { tile: i64 },
    SwapNest,
    /// Stage one read of a read-only buffer through a cache-scope scalar
    /// and mark the loop pipelined: the canonical `MemLatencyHide` trigger.
    StageLoads { depth: u8 },
    /// Append `+ 0.0` to a multiply store value, exposing a
    /// fused-multiply-add candidate without changing comparator-visible
    /// semantics.
    AddZeroToMul,
}

impl Action {
    pub fn parse(spec: &str) -> Result<Action, String> {
        let mut parts = spec.split_whitespace();
        let head = parts.next().ok_or("empty action")?;
        let ints = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<u8>, String> {
            let v: Result<Vec<u8>, _> = parts.map(|p| p.parse::<u8>()).collect();
            v.map_err(|e| format!("bad action arg: {e}"))
        };
        match head {
            "attach" => {
                let what = parts.next().ok_or("attach requires a family")?;
                match what {
                    "unroll" => Ok(Action::AttachUnroll(ints(parts)?)),
                    "vectorize" => Ok(Action::AttachVectorize(ints(parts)?)),
                    "pipelined" => Ok(Action::AttachPipelined(ints(parts)?)),
                    "parallel" => Ok(Action::AttachParallel),
                    other => Err(format!("unknown attach family `{other}`")),
                }
            }
            "split" => {
                let tile = parts
                    .next()
                    .ok_or("split requires a tile size")?
                    .parse()
                    .map_err(|e| format!("bad tile: {e}"))?;
                Ok(Action::SplitLoop { tile })
            }
            "swap" => Ok(Action::SwapNest),
            "stage-loads" => {
                let depth = parts
                    .next()
                    .unwrap_or("2")
                    .parse()
                    .map_err(|e| format!("bad depth: {e}"))?;
                Ok(Action::StageLoads { depth })
            }
            "add-zero-to-mul" => Ok(Action::AddZeroToMul),
            other => Err(format!("unknown action `{other}`")),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Action::AttachUnroll(fs) => format!(
                "attach unroll {}",
                fs.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
            ),
            Action::AttachVectorize(ls) => format!(
                "attach vectorize {}",
                ls.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
            ),
            Action::AttachPipelined(ds) => format!(
                "attach pipelined {}",
                ds.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
            ),
            Action::AttachParallel => "attach parallel".into(),
            Action::SplitLoop { tile } => format!("split {tile}"),
            Action::SwapNest => "swap".into(),
            Action::StageLoads { depth } => format!("stage-loads {depth}"),
            Action::AddZeroToMul => "add-zero-to-mul".into(),
        }
    }

    fn targets_stores(&self) -> bool {
        matches!(self, Action::AddZeroToMul)
    }
}

/// A documented low-level-optimization trigger expressed as a guarded IR
/// transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationRule {
    pub id: String,
    pub target_pass: LLPassId,
    pub guard: Guard,
    pub action: Action,
    pub provenance: String,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MutateError {
    #[error("mutation inapplicable: no site matches rule `{0}`")]
    MutationInapplicable(String),
    #[error("mutation produced an invalid program: {0}")]
    InvalidResult(String),
}

fn attach(annotation: LoopAnnotation, stmt: &Stmt) -> Stmt {
    match stmt {
        Stmt::For {
            var, lo, hi, body, ..
        } => Stmt::For {
            var: var.clone(),
            lo: lo.clone(),
            hi: hi.clone(),
            annotation,
            body: body.clone(),
        },
        other => other.clone(),
    }
}

fn stage_loads(stmt: &Stmt, depth: u8, namer: &mut NameGen, rng: &mut StdRng) -> Option<Stmt> {
    let Stmt::For {
        var, lo, hi, body, ..
    } = stmt
    else {
        return None;
    };
    let stored: std::collections::BTreeSet<String> =
        body.stores().iter().map(|(b, _)| b.to_string()).collect();
    let candidates: Vec<(String, Vec<Expr>)> = body
        .loads()
        .iter()
        .filter(|(b, _)| !stored.contains(*b))
        .map(|(b, idx)| (b.to_string(), idx.to_vec()))
        .collect();
    let (buf, idx) = candidates.choose(rng)?.clone();
    let stage_name = namer.fresh("stage");
    let target = Expr::Load(buf.clone(), idx.clone());
    let staged_body = replace_load(body, &target, &Expr::load(&stage_name, vec![Expr::IntLit(0)]));
    Some(Stmt::For {
        var: var.clone(),
        lo: lo.clone(),
        hi: hi.clone(),
        annotation: LoopAnnotation::Pipelined(depth),
        body: Box::new(seq(vec![
            Stmt::Alloc {
                // Dtype patched by the caller, which knows the buffer table.
                buffer: Buffer::new(&stage_name, stagefuzz_core::tensor::DType::F32, vec![1]),
                scope: AllocScope::Cache,
            },
            Stmt::Store {
                buffer: stage_name.clone(),
                indices: vec![Expr::IntLit(0)],
                value: target,
            },
            staged_body,
        ])),
    })
}

fn replace_load(stmt: &Stmt, target: &Expr, replacement: &Expr) -> Stmt {
    fn in_expr(e: &Expr, target: &Expr, replacement: &Expr) -> Expr {
        if e == target {
            return replacement.clone();
        }
        match e {
            Expr::Load(b, idx) => Expr::Load(
                b.clone(),
                idx.iter().map(|i| in_expr(i, target, replacement)).collect(),
            ),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(in_expr(a, target, replacement)),
                Box::new(in_expr(b, target, replacement)),
            ),
            Expr::Un(op, a) => Expr::Un(*op, Box::new(in_expr(a, target, replacement))),
            Expr::Fma(a, b, c) => Expr::Fma(
                Box::new(in_expr(a, target, replacement)),
                Box::new(in_expr(b, target, replacement)),
                Box::new(in_expr(c, target, replacement)),
            ),
            Expr::Cast(d, a) => Expr::Cast(*d, Box::new(in_expr(a, target, replacement))),
            other => other.clone(),
        }
    }
    match stmt {
        Stmt::Store {
            buffer,
            indices,
            value,
        } => Stmt::Store {
            buffer: buffer.clone(),
            indices: indices
                .iter()
                .map(|i| in_expr(i, target, replacement))
                .collect(),
            value: in_expr(value, target, replacement),
        },
        Stmt::For {
            var,
            lo,
            hi,
            annotation,
            body,
        } => Stmt::For {
            var: var.clone(),
            lo: lo.clone(),
            hi: hi.clone(),
            annotation: *annotation,
            body: Box::new(replace_load(body, target, replacement)),
        },
        Stmt::If { cond, body } => Stmt::If {
            cond: cond.clone(),
            body: Box::new(replace_load(body, target, replacement)),
        },
        Stmt::Seq(v) => Stmt::Seq(
            v.iter()
                .map(|s| replace_load(s, target, replacement))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn store_sites(p: &LoopProgram, guard: &Guard) -> Vec<StmtPath> {
    let mut out = Vec::new();
    fn walk(
        s: &Stmt,
        path: &mut Vec<usize>,
        guard: &Guard,
        p: &LoopProgram,
        out: &mut Vec<StmtPath>,
    ) {
        if let Stmt::Store { buffer, value, .. } = s {
            // The `+ 0.0` action injects an F32 literal, so the matched
            // store must target an F32 buffer.
            let is_f32 = p
                .buffer(buffer)
                .is_some_and(|b| b.dtype == stagefuzz_core::tensor::DType::F32);
            let matched =
                (!guard.value_is_mul || matches!(value, Expr::Bin(BinOp::Mul, ..))) && is_f32;
            if matched {
                out.push(StmtPath(path.clone()));
            }
        }
        for (i, c) in s.children().into_iter().enumerate() {
            path.push(i);
            walk(c, path, guard, p, out);
            path.pop();
        }
    }
    walk(&p.body, &mut Vec::new(), guard, p, &mut out);
    out
}

/// Applies `rule` at a random matching site. The output always validates;
/// semantic inertness at level 0 is checked empirically by the caller's
/// probe inputs.
pub fn mutate(
    p: &LoopProgram,
    rule: &MutationRule,
    rng: &mut StdRng,
) -> Result<LoopProgram, MutateError> {
    let sites: Vec<StmtPath> = if rule.action.targets_stores() {
        store_sites(p, &rule.guard)
    } else {
        collect_loops(&p.body)
            .into_iter()
            .filter(|(_, l)| rule.guard.loop_matches(l))
            .map(|(path, _)| path)
            .collect()
    };
    let Some(site) = sites.choose(rng) else {
        return Err(MutateError::MutationInapplicable(rule.id.clone()));
    };
    let mut namer = NameGen::for_program(p);
    let target = stagefuzz_core::loop_ir::stmt_at(&p.body, site)
        .ok_or_else(|| MutateError::MutationInapplicable(rule.id.clone()))?;
    let replacement: Option<Stmt> = match &rule.action {
        Action::AttachUnroll(fs) => fs
            .choose(rng)
            .map(|f| attach(LoopAnnotation::Unroll(*f), target)),
        Action::AttachVectorize(ls) => ls
            .choose(rng)
            .map(|l| attach(LoopAnnotation::Vectorize(*l), target)),
        Action::AttachPipelined(ds) => ds
            .choose(rng)
            .map(|d| attach(LoopAnnotation::Pipelined(*d), target)),
        Action::AttachParallel => Some(attach(LoopAnnotation::Parallel, target)),
        Action::SplitLoop { tile } => split_loop_stmt(target, *tile, &mut namer, false),
        Action::SwapNest => swap_nest_stmt(target),
        Action::StageLoads { depth } => stage_loads(target, *depth, &mut namer, rng),
        Action::AddZeroToMul => match target {
            Stmt::Store {
                buffer,
                indices,
                value,
            } => Some(Stmt::Store {
                buffer: buffer.clone(),
                indices: indices.clone(),
                value: Expr::add(value.clone(), Expr::Const(Scalar::F32(0.0))),
            }),
            _ => None,
        },
    };
    let Some(replacement) = replacement else {
        return Err(MutateError::MutationInapplicable(format!(
            "{}: action did not apply at matched site",
            rule.id
        )));
    };
    let mut out = p.clone();
    out.body = replace_at(&p.body, site, &|_| replacement.clone());
    // Stage buffers pick up the dtype of the staged source.
    fix_stage_dtypes(&mut out);
    let violations = validate_loop(&out);
    if !violations.is_empty() {
        return Err(MutateError::InvalidResult(violations.join("; ")));
    }
    Ok(out)
}

/// Stage allocs are created before their source buffer's dtype is known;
/// patch them to match the staged load.
fn fix_stage_dtypes(p: &mut LoopProgram) {
    let dtypes: BTreeMap<String, stagefuzz_core::tensor::DType> = p
        .inputs
        .iter()
        .chain(p.outputs.iter())
        .map(|b| (b.name.clone(), b.dtype))
        .collect();
    fn walk(s: &mut Stmt, dtypes: &BTreeMap<String, stagefuzz_core::tensor::DType>) {
        if let Stmt::Seq(v) = s {
            // Pattern: Alloc stage; stage[0] = load(src...); ...
            for i in 0..v.len().saturating_sub(1) {
                let src_dtype = if let Stmt::Store { buffer, value, .. } = &v[i + 1] {
                    match value {
                        Expr::Load(src, _) => dtypes.get(src).map(|d| (buffer.clone(), *d)),
                        _ => None,
                    }
                } else {
                    None
                };
                if let (Stmt::Alloc { buffer, .. }, Some((store_buf, dtype))) =
                    (&mut v[i], src_dtype)
                {
                    if buffer.name == store_buf && buffer.name.starts_with("stage") {
                        buffer.dtype = dtype;
                    }
                }
            }
            for s in v {
                walk(s, dtypes);
            }
        } else {
            match s {
                Stmt::For { body, .. } | Stmt::If { body, .. } => walk(body, dtypes),
                _ => {}
            }
        }
    }
    walk(&mut p.body, &dtypes);
}

/// Empirical semantic-preservation probe: level-0 equality on `n` random
/// integer-valued inputs.
pub fn probe_equivalent(a: &LoopProgram, b: &LoopProgram, rng: &mut StdRng, n: usize) -> bool {
    for _ in 0..n {
        let inputs = random_loop_inputs(a, rng);
        let ya = interpret_loop(a, &inputs);
        let yb = interpret_loop(b, &inputs);
        match (ya, yb) {
            (Ok(ya), Ok(yb)) => {
                if ya.len() != yb.len() {
                    return false;
                }
                for (name, va) in &ya {
                    let Some(vb) = yb.get(name) else {
                        return false;
                    };
                    if tensors_close(va, vb, Tolerance::EXACT).is_err() {
                        return false;
                    }
                }
            }
            (Err(ea), Err(eb)) => {
                if ea != eb {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Rule extraction
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
pub struct RuleExtraction {
    pub rules: Vec<MutationRule>,
    pub errors: Vec<(String, String)>,
    pub rejected: Vec<(String, String)>,
}

fn rule_from_fields(
    file: &str,
    fields: &BTreeMap<String, String>,
) -> Result<MutationRule, String> {
    let get = |key: &str| -> Result<&str, String> {
        fields
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| format!("missing `{key}` field"))
    };
    let target_pass = LLPassId::from_str(get("pass")?)?;
    // Trigger prose is required documentation even though only the guard
    // and action are machine-consumed.
    get("trigger")?;
    let guard = Guard::parse(get("precondition")?)?;
    let action = Action::parse(get("action")?)?;
    Ok(MutationRule {
        id: get("rule")?.to_string(),
        target_pass,
        guard,
        action,
        provenance: file.to_string(),
    })
}

/// Extracts one rule per doc with the deterministic builtin analyzer. When a
/// provider is configured it may propose additional rules, which are
/// accepted only if they parse and pass a 3-input preservation probe on the
/// sample seed.
pub fn extract_rules(
    docs_dir: &Path,
    provider: Option<&mut crate::provider::ProviderClient>,
    probe_seed: Option<&LoopProgram>,
) -> RuleExtraction {
    let mut out = RuleExtraction::default();
    let mut files: Vec<_> = std::fs::read_dir(docs_dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "md"))
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    files.sort();
    let mut doc_digest = String::new();
    for path in &files {
        let display = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                out.errors.push((display, format!("unreadable: {e}")));
                continue;
            }
        };
        let Some(fields) = super::front_matter(&text) else {
            out.errors
                .push((display, "missing front-matter fences".into()));
            continue;
        };
        doc_digest.push_str(&format!("{display}:{fields:?}\n"));
        match rule_from_fields(&display, &fields) {
            Ok(rule) => out.rules.push(rule),
            Err(message) => out.errors.push((display, message)),
        }
    }

    if let Some(client) = provider {
        let req = crate::provider::ProviderRequest {
            op: "rules".into(),
            template: None,
            constraints: serde_json::json!({ "docs": doc_digest }),
            seed: 0,
        };
        if let Some(resp) = client.request(&req) {
            for (i, block) in resp.text.split("\n\n").enumerate() {
                let label = format!("provider-rule-{i}");
                let fields = parse_inline_fields(block);
                match rule_from_fields(&label, &fields) {
                    Ok(rule) => {
                        let accepted = match probe_seed {
                            Some(seed) => {
                                use rand::SeedableRng;
                                let mut rng = StdRng::seed_from_u64(0x5eed);
                                match mutate(seed, &rule, &mut rng) {
                                    Ok(mutant) => {
                                        let mut probe_rng = StdRng::seed_from_u64(0x9e3779b9);
                                        probe_equivalent(seed, &mutant, &mut probe_rng, 3)
                                    }
                                    // A rule the sample seed cannot exercise
                                    // is unproven; reject it.
                                    Err(_) => false,
                                }
                            }
                            None => false,
                        };
                        if accepted {
                            out.rules.push(rule);
                        } else {
                            out.rejected
                                .push((label, "failed semantic-preservation probe".into()));
                        }
                    }
                    Err(message) => out.rejected.push((label, message)),
                }
            }
        }
    }
    out
}

/// `key: value` lines without front-matter fences, as provider responses use.
fn parse_inline_fields(block: &str) -> BTreeMap<String, String> {
    let mut fields = BTreeMap::new();
    for line in block.lines() {
        if let Some((k, v)) = line.split_once(':') {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    fields
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use stagefuzz_core::loop_ir::text::parse_loop;

    fn unroll_rule() -> MutationRule {
        MutationRule {
            id: "docs.unroll.attach".into(),
            target_pass: LLPassId::UnrollExpand,
            guard: Guard::parse("serial, const-bounds, trip>=2").unwrap(),
            action: Action::parse("attach unroll 2 4 8").unwrap(),
            provenance: "test".into(),
        }
    }

    fn simple_loop(trip: usize) -> LoopProgram {
        parse_loop(&format!(
            "program p\ninput a: F32[{trip}]\noutput c: F32[{trip}]\nbody:\n  for i in [0, {trip}):\n    c[i] = a[i] + 1.0\n"
        ))
        .unwrap()
    }

    #[test]
    fn guard_dsl_roundtrip() {
        let g = Guard::parse("innermost, serial, trip%4==0, trip>=8, no-loop-carried-dep").unwrap();
        assert!(g.innermost && g.serial_only && g.no_loop_carried_dep);
        assert_eq!(g.trip_multiple_of, Some(4));
        assert_eq!(g.trip_at_least, Some(8));
        assert_eq!(Guard::parse(&g.render()).unwrap(), g);
    }

    #[test]
    fn action_dsl_roundtrip() {
        for spec in [
            "attach unroll 2 4 8",
            "attach vectorize 4",
            "attach pipelined 2",
            "split 8",
            "swap",
            "stage-loads 2",
            "add-zero-to-mul",
        ] {
            let a = Action::parse(spec).unwrap();
            assert_eq!(Action::parse(&a.render()).unwrap(), a);
        }
    }

    #[test]
    fn unroll_mutation_is_probe_equal() {
        let p = simple_loop(8);
        let rule = unroll_rule();
        let mut rng = StdRng::seed_from_u64(2);
        let mutant = mutate(&p, &rule, &mut rng).unwrap();
        assert!(matches!(
            stagefuzz_core::loop_ir::collect_loops(&mutant.body)[0].1,
            Stmt::For {
                annotation: LoopAnnotation::Unroll(_),
                ..
            }
        ));
        let mut probe_rng = StdRng::seed_from_u64(3);
        assert!(probe_equivalent(&p, &mutant, &mut probe_rng, 3));
    }

    #[test]
    fn vectorize_guard_rejects_dependence() {
        let scan = parse_loop(
            "program s\ninput b: F32[8]\noutput b: F32[8]\nbody:\n  for i in [1, 8):\n    b[i] = b[i - 1] + 1.0\n",
        )
        .unwrap();
        let rule = MutationRule {
            id: "docs.vectorize.attach".into(),
            target_pass: LLPassId::VectorizeLegalize,
            guard: Guard::parse("innermost, serial, stores-only, no-loop-carried-dep, trip%4==0")
                .unwrap(),
            action: Action::parse("attach vectorize 4").unwrap(),
            provenance: "test".into(),
        };
        let mut rng = StdRng::seed_from_u64(2);
        let err = mutate(&scan, &rule, &mut rng).unwrap_err();
        assert!(matches!(err, MutateError::MutationInapplicable(_)));
    }

    #[test]
    fn stage_loads_mutation_is_probe_equal_and_triggers_memlat() {
        let p = simple_loop(8);
        let rule = MutationRule {
            id: "docs.memlat.stage".into(),
            target_pass: LLPassId::MemLatencyHide,
            guard: Guard::parse("serial, has-readonly-load").unwrap(),
            action: Action::parse("stage-loads 2").unwrap(),
            provenance: "test".into(),
        };
        let mut rng = StdRng::seed_from_u64(6);
        let mutant = mutate(&p, &rule, &mut rng).unwrap();
        let mut probe_rng = StdRng::seed_from_u64(7);
        assert!(probe_equivalent(&p, &mutant, &mut probe_rng, 3));
        // The staged loop now matches the double-buffering pass.
        let (out, traces) =
            stagefuzz_core::ll::run_ll_pass(LLPassId::MemLatencyHide, &mutant).unwrap();
        assert!(traces.iter().any(|t| t.rule_id == "mem.double_buffer"));
        let mut probe_rng = StdRng::seed_from_u64(8);
        assert!(probe_equivalent(&mutant, &out, &mut probe_rng, 3));
    }

    #[test]
    fn add_zero_exposes_fma_candidate() {
        let p = parse_loop(
            "program m\ninput a: F32[4]\ninput b: F32[4]\noutput c: F32[4]\nbody:\n  for i in [0, 4):\n    c[i] = a[i] * b[i]\n",
        )
        .unwrap();
        let rule = MutationRule {
            id: "docs.intrinsic.expose".into(),
            target_pass: LLPassId::IntrinsicMap,
            guard: Guard::parse("value-is-mul").unwrap(),
            action: Action::parse("add-zero-to-mul").unwrap(),
            provenance: "test".into(),
        };
        let mut rng = StdRng::seed_from_u64(4);
        let mutant = mutate(&p, &rule, &mut rng).unwrap();
        let mut probe_rng = StdRng::seed_from_u64(5);
        assert!(probe_equivalent(&p, &mutant, &mut probe_rng, 3));
        let (_, traces) = stagefuzz_core::ll::run_ll_pass(LLPassId::IntrinsicMap, &mutant).unwrap();
        assert!(traces.iter().any(|t| t.rule_id == "intr.fma"));
    }

    #[test]
    fn inapplicable_rule_reports_cleanly() {
        let p = simple_loop(3); // trip 3 fails trip>=8 guards etc.
        let rule = MutationRule {
            id: "strict".into(),
            target_pass: LLPassId::TileLoops,
            guard: Guard::parse("serial, trip>=16").unwrap(),
            action: Action::parse("split 8").unwrap(),
            provenance: "test".into(),
        };
        let mut rng = StdRng::seed_from_u64(1);
        assert!(matches!(
            mutate(&p, &rule, &mut rng),
            Err(MutateError::MutationInapplicable(_))
        ));
    }
}
