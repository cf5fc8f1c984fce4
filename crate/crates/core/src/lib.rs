// SPDX-License-Identifier: Apache-2.0

//! Reference mini tensor compiler used as the system under test by the
//! `stagefuzz` campaign driver.
//!
//! The pipeline mirrors a conventional AI compiler: a computational-graph IR
//! with shape/type inference and a reference interpreter (`graph`), a set of
//! hardware-independent graph passes (`hl`), lowering to a loop-nest IR
//! (`lower`, `loop_ir`), and hardware-oriented loop passes (`ll`). Every
//! stage is pure and deterministic; a [`bugs::BugSet`] threads flag-gated
//! defects through the loader/pass code paths so fuzzer effectiveness is
//! measurable against known ground truth.

pub mod bugs;
pub mod compare;
pub mod generate;
pub mod graph;
pub mod hl;
pub mod ll;
pub mod loop_ir;
pub mod lower;
pub mod tensor;
pub mod util;
