// SPDX-License-Identifier: Apache-2.0

//! Seeded-bug registry: flag-gated defects injected into the compiler under
//! test. All flags default to off; with an empty set every code path is
//! bit-identical to the reference behavior.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

/// Identifier of one seeded bug. `L*` live in the model-loading stage,
/// `H*` in the high-level graph passes, `B*` in the low-level loop passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BugId {
    L1,
    L2,
    L3,
    L4,
    H1,
    H2,
    H3,
    H4,
    B1,
    B2,
    B3,
    B4,
}

impl BugId {
    pub const ALL: [BugId; 12] = [
        BugId::L1,
        BugId::L2,
        BugId::L3,
        BugId::L4,
        BugId::H1,
        BugId::H2,
        BugId::H3,
        BugId::H4,
        BugId::B1,
        BugId::B2,
        BugId::B3,
        BugId::B4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BugId::L1 => "L1",
            BugId::L2 => "L2",
            BugId::L3 => "L3",
            BugId::L4 => "L4",
            BugId::H1 => "H1",
            BugId::H2 => "H2",
            BugId::H3 => "H3",
            BugId::H4 => "H4",
            BugId::B1 => "B1",
            BugId::B2 => "B2",
            BugId::B3 => "B3",
            BugId::B4 => "B4",
        }
    }

    /// Pipeline stage the bug is injected into.
    pub fn stage(self) -> &'static str {
        match self {
            BugId::L1 | BugId::L2 | BugId::L3 | BugId::L4 => "loader",
            BugId::H1 | BugId::H2 | BugId::H3 | BugId::H4 => "hlopt",
            BugId::B1 | BugId::B2 | BugId::B3 | BugId::B4 => "llopt",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            BugId::L1 => "Conv2D loader ignores asymmetric padding when inferring the output type",
            BugId::L2 => "Cast is dropped by loader type inference when the input dtype is I32",
            BugId::L3 => "Concat negative-axis normalization is off by one in the loader",
            BugId::L4 => "Transpose permutation check accepts duplicate axes",
            BugId::H1 => "ConstFold saturates I8 arithmetic instead of wrapping",
            BugId::H2 => "FuseElementwise fuses across a multi-consumer intermediate",
            BugId::H3 => "CSE treats constants with different payloads as identical",
            BugId::H4 => "LayoutTransform drops the output boundary Transpose",
            BugId::B1 => "UnrollExpand emits wrong remainder-loop start index",
            BugId::B2 => "TileLoops drops the remainder loop",
            BugId::B3 => "VectorizeLegalize skips the loop-carried dependence check",
            BugId::B4 => "IntrinsicMap rewrites a*(b+c) as fma(a,b,c)",
        }
    }
}

impl fmt::Display for BugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BugId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BugId::ALL
            .iter()
            .copied()
            .find(|b| b.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown bug id `{s}`"))
    }
}

/// Set of active seeded bugs, threaded by value through the compiler stages.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BugSet {
    active: BTreeSet<BugId>,
}

impl BugSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self {
            active: BugId::ALL.iter().copied().collect(),
        }
    }

    pub fn from_ids<I: IntoIterator<Item = BugId>>(ids: I) -> Self {
        Self {
            active: ids.into_iter().collect(),
        }
    }

    /// Parses a comma-separated flag list such as `"L1,H2,B4"`.
    pub fn parse_flags(s: &str) -> Result<Self, String> {
        let mut active = BTreeSet::new();
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            active.insert(part.parse::<BugId>()?);
        }
        Ok(Self { active })
    }

    pub fn insert(&mut self, id: BugId) {
        self.active.insert(id);
    }

    pub fn has(&self, id: BugId) -> bool {
        self.active.contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = BugId> + '_ {
        self.active.iter().copied()
    }
}

impl fmt::Display for BugSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.active.iter().map(|b| b.name()).collect();
        f.write_str(&names.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_flags_roundtrip() {
        let set = BugSet::parse_flags("L1, h2,B4").unwrap();
        assert!(set.has(BugId::L1));
        assert!(set.has(BugId::H2));
        assert!(set.has(BugId::B4));
        assert!(!set.has(BugId::B1));
        assert_eq!(set.to_string(), "L1,H2,B4");
    }

    #[test]
    fn parse_rejects_unknown() {
        assert!(BugSet::parse_flags("L9").is_err());
    }

    #[test]
    fn empty_set_is_default() {
        assert!(BugSet::empty().is_empty());
        assert_eq!(BugSet::parse_flags("").unwrap(), BugSet::empty());
    }
}
