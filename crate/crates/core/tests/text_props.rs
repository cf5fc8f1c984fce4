// SPDX-License-Identifier: Apache-2.0

//! Property tests over the text formats and pass invariants, driven through
//! the random graph generator.

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use stagefuzz_core::generate::{random_graph, random_inputs, GraphGenConfig};
use stagefuzz_core::graph::infer::infer_shape;
use stagefuzz_core::graph::text::{parse_graph, serialize_graph};
use stagefuzz_core::graph::{OperatorKind, Params};
use stagefuzz_core::hl::{run_hl_pipeline, OptLevel};
use stagefuzz_core::loop_ir::interp::interpret_loop;
use stagefuzz_core::loop_ir::text::{parse_loop, serialize_loop};
use stagefuzz_core::lower::lower_graph;
use stagefuzz_core::tensor::{DType, TensorType};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_text_roundtrip_is_identity(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = random_graph(&mut rng, &GraphGenConfig::default());
        let text = serialize_graph(&g);
        let parsed = parse_graph(&text).unwrap();
        prop_assert_eq!(&parsed, &g);
        // Canonical text is byte-stable under re-serialization.
        prop_assert_eq!(serialize_graph(&parsed), text);
    }

    #[test]
    fn lowered_text_roundtrip_is_identity(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = random_graph(&mut rng, &GraphGenConfig::default());
        let p = lower_graph(&g).unwrap();
        let text = serialize_loop(&p);
        let parsed = parse_loop(&text).unwrap();
        prop_assert_eq!(parsed, p);
    }

    #[test]
    fn annotation_erasure_never_changes_results(seed in any::<u64>()) {
        use stagefuzz_core::compare::{tensors_close, Tolerance};
        let mut rng = StdRng::seed_from_u64(seed);
        let g = random_graph(&mut rng, &GraphGenConfig::default());
        let p = lower_graph(&g).unwrap();
        let stripped = p.strip_annotations();
        let inputs = random_inputs(&g, &mut rng, false);
        let a = interpret_loop(&p, &inputs).unwrap();
        let b = interpret_loop(&stripped, &inputs).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (name, v) in &a {
            // Bit-exact modulo NaN identity.
            prop_assert!(tensors_close(v, &b[name], Tolerance::EXACT).is_ok(), "{}", name);
        }
    }

    #[test]
    fn broadcast_add_mul_shape_commutes(
        a in proptest::collection::vec(1usize..6, 0..4),
        b in proptest::collection::vec(1usize..6, 0..4),
        one_axis in any::<bool>(),
    ) {
        // Optionally pin one axis of `b` to 1 to exercise stretching.
        let mut b = b;
        if one_axis && !b.is_empty() {
            b[0] = 1;
        }
        for kind in [OperatorKind::Add, OperatorKind::Mul] {
            let ta = TensorType::new(DType::F32, a.clone());
            let tb = TensorType::new(DType::F32, b.clone());
            let ab = infer_shape(&kind, &Params::new(), &[ta.clone(), tb.clone()]);
            let ba = infer_shape(&kind, &Params::new(), &[tb, ta]);
            prop_assert_eq!(ab.is_ok(), ba.is_ok());
            if let (Ok(x), Ok(y)) = (ab, ba) {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn level2_pipeline_is_deterministic_and_type_sound(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = random_graph(&mut rng, &GraphGenConfig::default());
        let r1 = run_hl_pipeline(OptLevel::O2, &g).unwrap();
        let r2 = run_hl_pipeline(OptLevel::O2, &g).unwrap();
        // Canonical text equality also covers NaN constant payloads.
        prop_assert_eq!(serialize_graph(&r1.graph), serialize_graph(&r2.graph));
        prop_assert!(r1.fixpoint_reached);
        let inputs = random_inputs(&g, &mut rng, false);
        let outs = stagefuzz_core::graph::interp::interpret_graph(&r1.graph, &inputs).unwrap();
        for (out, id) in outs.iter().zip(r1.graph.outputs.iter()) {
            prop_assert_eq!(&out.ttype, &r1.graph.nodes[id].out_type);
        }
    }
}
