// SPDX-License-Identifier: Apache-2.0

//! Stage-aware differential fuzzing framework for the bundled reference
//! tensor compiler: migration-based loader testing, optimization-aware
//! graph synthesis, and mutation-based loop-IR testing, with crash and
//! differential oracles, failure deduplication, and deterministic
//! campaign reports.

pub mod campaign;
pub mod corpus;
pub mod harmony;
pub mod oracle;
pub mod provider;
pub mod regressions;
pub mod report;
pub mod synth;
