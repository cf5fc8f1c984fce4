// SPDX-License-Identifier: Apache-2.0

//! Mutation-based low-level testing: constraint-catalog seed generation,
//! documentation-mined mutation rules, and lightweight semantics-preserving
//! mutations targeting the loop passes.

pub mod catalog;
pub mod rules;
pub mod seeds;

use std::collections::BTreeMap;

/// Extracts `key: value` pairs from a `---`-fenced front-matter block.
pub(crate) fn front_matter(text: &str) -> Option<BTreeMap<String, String>> {
    let mut lines = text.lines();
    if lines.next()?.trim() != "---" {
        return None;
    }
    let mut fields = BTreeMap::new();
    for line in lines {
        if line.trim() == "---" {
            return Some(fields);
        }
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(':')?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    None
}

/// The builtin mutation-rule set mirrored by the bundled pass docs; used
/// when no docs directory is available (unit tests, bare checkouts).
pub fn builtin_rules() -> Vec<rules::MutationRule> {
    use rules::{Action, Guard, MutationRule};
    use stagefuzz_core::ll::LLPassId;
    let mk = |id: &str, pass: LLPassId, guard: &str, action: &str| MutationRule {
        id: id.to_string(),
        target_pass: pass,
        guard: Guard::parse(guard).unwrap(),
        action: Action::parse(action).unwrap(),
        provenance: "builtin".to_string(),
    };
    vec![
        mk(
            "docs.unroll.attach",
            LLPassId::UnrollExpand,
            "serial, const-bounds, trip>=2",
            "attach unroll 2 4 8",
        ),
        mk(
            "docs.tile.split",
            LLPassId::TileLoops,
            "serial, const-bounds, trip>=16",
            "split 8",
        ),
        mk(
            "docs.vectorize.attach",
            LLPassId::VectorizeLegalize,
            "innermost, serial, stores-only, const-bounds, trip%4==0, no-loop-carried-dep",
            "attach vectorize 4",
        ),
        mk(
            "docs.reorder.swap",
            LLPassId::ReorderLoops,
            "serial, perfect-nest",
            "swap",
        ),
        mk(
            "docs.memlat.stage",
            LLPassId::MemLatencyHide,
            "serial, has-readonly-load",
            "stage-loads 2",
        ),
        mk(
            "docs.intrinsic.expose",
            LLPassId::IntrinsicMap,
            "value-is-mul",
            "add-zero-to-mul",
        ),
    ]
}
