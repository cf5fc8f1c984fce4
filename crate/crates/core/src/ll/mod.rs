// SPDX-License-Identifier: Apache-2.0

//! Hardware-oriented transformations on loop programs.
//!
//! Every pass is a pure `LoopProgram -> (LoopProgram, traces)` function with
//! a legality check: an illegal site is demoted or skipped, never corrupted.
//! Rewrites happen during a single bottom-up rebuild of the statement tree,
//! so freshly produced loops are never re-visited and trace paths refer to
//! the pre-pass program.

pub mod deps;
mod intrinsic;
mod memlat;
mod reorder;
mod tile;
mod unroll;
mod vectorize;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bugs::BugSet;
use crate::loop_ir::{LoopProgram, StmtPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LLPassId {
    UnrollExpand,
    TileLoops,
    VectorizeLegalize,
    ReorderLoops,
    IntrinsicMap,
    MemLatencyHide,
}

impl LLPassId {
    pub const ALL: [LLPassId; 6] = [
        LLPassId::UnrollExpand,
        LLPassId::TileLoops,
        LLPassId::VectorizeLegalize,
        LLPassId::ReorderLoops,
        LLPassId::IntrinsicMap,
        LLPassId::MemLatencyHide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LLPassId::UnrollExpand => "UnrollExpand",
            LLPassId::TileLoops => "TileLoops",
            LLPassId::VectorizeLegalize => "VectorizeLegalize",
            LLPassId::ReorderLoops => "ReorderLoops",
            LLPassId::IntrinsicMap => "IntrinsicMap",
            LLPassId::MemLatencyHide => "MemLatencyHide",
        }
    }
}

impl fmt::Display for LLPassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LLPassId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LLPassId::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown low-level pass `{s}`"))
    }
}

/// One rewrite firing, anchored at a statement of the pre-pass program.
#[derive(Debug, Clone, PartialEq)]
pub struct LLTrace {
    pub pass: LLPassId,
    pub rule_id: String,
    pub loop_path: StmtPath,
    pub fired: bool,
}

impl LLTrace {
    fn fired(pass: LLPassId, rule_id: &str, loop_path: StmtPath) -> Self {
        Self {
            pass,
            rule_id: rule_id.to_string(),
            loop_path,
            fired: true,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlPassError {
    #[error("illegal transform in {pass}: {message}")]
    IllegalTransform { pass: LLPassId, message: String },
    #[error("internal error in {pass}: {message}")]
    PassInternal { pass: LLPassId, message: String },
}

/// Fresh-name generator seeded with every identifier already used by the
/// program (buffer names and loop variables).
pub struct NameGen {
    used: BTreeSet<String>,
}

impl NameGen {
    pub fn for_program(p: &LoopProgram) -> Self {
        let mut used = p.buffer_names();
        fn walk(s: &crate::loop_ir::Stmt, used: &mut BTreeSet<String>) {
            if let crate::loop_ir::Stmt::For { var, body, .. } = s {
                used.insert(var.clone());
                walk(body, used);
            }
            for c in s.children() {
                walk(c, used);
            }
        }
        walk(&p.body, &mut used);
        Self { used }
    }

    pub fn fresh(&mut self, base: &str) -> String {
        if self.used.insert(base.to_string()) {
            return base.to_string();
        }
        let mut n = 1usize;
        loop {
            let candidate = format!("{base}{n}");
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
            n += 1;
        }
    }
}

/// Runs a single low-level pass with seeded bugs threaded through.
pub fn run_ll_pass_with(
    bugs: &BugSet,
    pass: LLPassId,
    p: &LoopProgram,
) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    match pass {
        LLPassId::UnrollExpand => unroll::run(p, bugs),
        LLPassId::TileLoops => tile::run(p, bugs),
        LLPassId::VectorizeLegalize => vectorize::run(p, bugs),
        LLPassId::ReorderLoops => reorder::run(p),
        LLPassId::IntrinsicMap => intrinsic::run(p, bugs),
        LLPassId::MemLatencyHide => memlat::run(p),
    }
}

pub fn run_ll_pass(pass: LLPassId, p: &LoopProgram) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    run_ll_pass_with(&BugSet::empty(), pass, p)
}

/// Fixed level-2 order, single sweep.
pub const LL_LEVEL2_ORDER: [LLPassId; 6] = [
    LLPassId::TileLoops,
    LLPassId::ReorderLoops,
    LLPassId::VectorizeLegalize,
    LLPassId::UnrollExpand,
    LLPassId::MemLatencyHide,
    LLPassId::IntrinsicMap,
];

/// Runs the loop pipeline at level 0 (identity) or level 2 (full sweep).
pub fn run_ll_pipeline_with(
    bugs: &BugSet,
    level: crate::hl::OptLevel,
    p: &LoopProgram,
) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    match level {
        crate::hl::OptLevel::O0 => Ok((p.clone(), Vec::new())),
        _ => {
            let mut current = p.clone();
            let mut traces = Vec::new();
            for pass in LL_LEVEL2_ORDER {
                let (next, t) = run_ll_pass_with(bugs, pass, &current)?;
                traces.extend(t);
                current = next;
            }
            Ok((current, traces))
        }
    }
}

pub fn run_ll_pipeline(
    level: crate::hl::OptLevel,
    p: &LoopProgram,
) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    run_ll_pipeline_with(&BugSet::empty(), level, p)
}

/// Splits a `For` statement into tiled outer/inner loops plus an optional
/// remainder. Exposed for the mutation engine's structural `split` action.
pub fn split_loop_stmt(
    stmt: &crate::loop_ir::Stmt,
    tile: i64,
    namer: &mut NameGen,
    drop_remainder: bool,
) -> Option<crate::loop_ir::Stmt> {
    tile::split(stmt, tile, namer, drop_remainder)
}

/// Swaps a perfectly nested loop pair, preserving annotations with their
/// loops. Exposed for the mutation engine's `swap` action.
pub fn swap_nest_stmt(stmt: &crate::loop_ir::Stmt) -> Option<crate::loop_ir::Stmt> {
    reorder::swap(stmt)
}
