// SPDX-License-Identifier: Apache-2.0

//! Deterministic regression triggers for the seeded-bug registry: one
//! crafted test per bug that is Pass with the bug off and non-Pass with the
//! bug on. These double as the bug-detectability ground truth for the
//! acceptance suite.

use stagefuzz_core::bugs::{BugId, BugSet};
use stagefuzz_core::graph::{Graph, OperatorKind, ParamValue, Params};
use stagefuzz_core::loop_ir::text::parse_loop;
use stagefuzz_core::tensor::{DType, TensorType, TensorValue};

use crate::corpus::ingest_corpus_text;
use crate::oracle::{diff_test, Payload, Stage, TestCase, Verdict};

fn record_payload(line: &str) -> Payload {
    let (mut records, report) = ingest_corpus_text(line);
    assert!(report.skipped.is_empty(), "bad trigger record: {report:?}");
    Payload::Record(records.remove(0))
}

fn loop_payload(text: &str) -> Payload {
    Payload::Loop(parse_loop(text).expect("trigger program parses"))
}

/// The crafted trigger test for one seeded bug.
pub fn trigger_case(bug: BugId) -> TestCase {
    let (stage, payload) = match bug {
        BugId::L1 => (
            Stage::Loader,
            record_payload(
                r#"{"kind":"Conv2D","params":{"stride":[1,1],"pad":[0,2,1,1]},"inputs":[{"shape":[1,1,4,4],"dtype":"F32","src":{"random":11}},{"shape":[1,1,3,3],"dtype":"F32","src":{"random":12}}],"origin":"reg_l1_conv_asym_pad"}"#,
            ),
        ),
        BugId::L2 => (
            Stage::Loader,
            record_payload(
                r#"{"kind":"Cast","params":{"to":"F32"},"inputs":[{"shape":[6],"dtype":"I32","src":{"random":13}}],"origin":"reg_l2_cast_from_i32"}"#,
            ),
        ),
        BugId::L3 => (
            Stage::Loader,
            record_payload(
                r#"{"kind":"Concat","params":{"axis":-1},"inputs":[{"shape":[2,3],"dtype":"F32","src":{"random":14}},{"shape":[2,3],"dtype":"F32","src":{"random":15}}],"origin":"reg_l3_concat_neg_axis"}"#,
            ),
        ),
        BugId::L4 => (
            Stage::Loader,
            record_payload(
                r#"{"kind":"Transpose","params":{"perm":[0,0]},"inputs":[{"shape":[2,3],"dtype":"F32","src":{"random":16}}],"origin":"reg_l4_transpose_dup_perm"}"#,
            ),
        ),
        BugId::H1 => {
            // I8 constant folding: 100 + 100 wraps to -56; saturating
            // fold yields 127.
            let mut g = Graph::new("reg_h1_i8_fold");
            let a = g.add_constant(TensorValue::from_i8(vec![2], vec![100, -100]));
            let b = g.add_constant(TensorValue::from_i8(vec![2], vec![100, -100]));
            let s = g.add_op(OperatorKind::Add, Params::new(), vec![a, b]);
            g.outputs = vec![s];
            (Stage::HlOpt, Payload::Graph(g))
        }
        BugId::H2 => {
            // The Sub intermediate is always negative, so its fused ReLU
            // differs from the raw value the second consumer must observe.
            let mut g = Graph::new("reg_h2_multi_consumer");
            let x = g.add_input("x", TensorType::new(DType::F32, vec![4]));
            let ten = g.add_constant(TensorValue::from_f32(vec![4], vec![10.0; 4]));
            let m = g.add_op(OperatorKind::Sub, Params::new(), vec![x, ten]);
            let r = g.add_op(OperatorKind::Relu, Params::new(), vec![m]);
            let neg = g.add_op(OperatorKind::Neg, Params::new(), vec![m]);
            g.outputs = vec![r, neg];
            (Stage::HlOpt, Payload::Graph(g))
        }
        BugId::H3 => {
            // Two constants with equal types and different payloads.
            let mut g = Graph::new("reg_h3_cse_payload");
            let x = g.add_input("x", TensorType::new(DType::F32, vec![3]));
            let c1 = g.add_constant(TensorValue::from_f32(vec![3], vec![1.0, 1.0, 1.0]));
            let c2 = g.add_constant(TensorValue::from_f32(vec![3], vec![2.0, 2.0, 2.0]));
            let p1 = g.add_op(OperatorKind::Add, Params::new(), vec![x, c1]);
            let p2 = g.add_op(OperatorKind::Mul, Params::new(), vec![x, c2]);
            g.outputs = vec![p1, p2];
            (Stage::HlOpt, Payload::Graph(g))
        }
        BugId::H4 => {
            // Conv feeding a consumer: dropping the output transpose breaks
            // the consumer's declared layout.
            let mut g = Graph::new("reg_h4_layout_boundary");
            let x = g.add_input("x", TensorType::new(DType::F32, vec![1, 2, 4, 4]));
            let w = g.add_input("w", TensorType::new(DType::F32, vec![2, 2, 2, 2]));
            let params = Params::new()
                .with("stride", ParamValue::Ints(vec![1, 1]))
                .with("pad", ParamValue::Ints(vec![0, 0]));
            let c = g.add_op(OperatorKind::Conv2d, params, vec![x, w]);
            let r = g.add_op(OperatorKind::Relu, Params::new(), vec![c]);
            g.outputs = vec![r];
            (Stage::HlOpt, Payload::Graph(g))
        }
        BugId::B1 => (
            Stage::LlOpt,
            loop_payload(
                "program reg_b1\ninput a: F32[10]\noutput c: F32[10]\nbody:\n  for i in [0, 10) @unroll(4):\n    c[i] = a[i] + 1.0\n",
            ),
        ),
        BugId::B2 => (
            Stage::LlOpt,
            loop_payload(
                "program reg_b2\ninput a: F32[18]\noutput c: F32[18]\nbody:\n  for i in [0, 18):\n    c[i] = a[i] * 2.0\n",
            ),
        ),
        BugId::B3 => (
            Stage::LlOpt,
            loop_payload(
                "program reg_b3\ninput b: F32[9]\noutput b: F32[9]\nbody:\n  for i in [1, 9) @vectorize(4):\n    b[i] = b[i - 1] + 1.0\n",
            ),
        ),
        BugId::B4 => (
            Stage::LlOpt,
            loop_payload(
                "program reg_b4\ninput a: F32[4]\ninput b: F32[4]\ninput d: F32[4]\noutput c: F32[4]\nbody:\n  for i in [0, 4):\n    c[i] = a[i] * (b[i] + d[i])\n",
            ),
        ),
    };
    TestCase {
        id: format!("reg_{bug}"),
        stage,
        payload,
        data_seed: 0x5eed ^ (bug as u64),
        lineage: format!("regression:{bug}"),
    }
}

/// Runs one bug's regression with the bug off and on. Returns
/// `(clean_pass, triggered_non_pass)`.
pub fn run_regression(bug: BugId) -> (bool, bool) {
    let tc = trigger_case(bug);
    let clean = diff_test(&tc, &BugSet::empty()).verdict.is_pass();
    let triggered = !diff_test(&tc, &BugSet::from_ids([bug])).verdict.is_pass();
    (clean, triggered)
}

/// Verdict of one bug's trigger under an arbitrary bug set; used by the
/// acceptance harness to compute expected failure signatures.
pub fn trigger_verdict(bug: BugId, bugs: &BugSet) -> (TestCase, Verdict) {
    let tc = trigger_case(bug);
    let verdict = diff_test(&tc, bugs).verdict;
    (tc, verdict)
}
