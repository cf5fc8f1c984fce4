// SPDX-License-Identifier: Apache-2.0

//! Regenerates the bundled assets deterministically: the operator corpus,
//! developer pass tests, loop-IR seeds, pass/template docs, and the
//! captured pattern library.
//!
//! Usage: `cargo run -p stagefuzz --bin gen_assets [-- <root>]`

use std::fmt::Write as _;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{RngExt, SeedableRng};

use stagefuzz::corpus::{ingest_corpus_text, record_to_json};
use stagefuzz::synth::{capture_patterns, serialize_pattern_library};
use stagefuzz_core::graph::text::write_graph_file;
use stagefuzz_core::graph::{Graph, OperatorKind, ParamValue, Params};
use stagefuzz_core::tensor::{DType, TensorType, TensorValue};

const CORPUS_SEED: u64 = 0x0c0a_15e5;

fn main() {
    let root_arg = std::env::args().nth(1).unwrap_or_else(|| ".".to_string());
    let root = Path::new(&root_arg);
    write_corpus(root);
    write_passtests(root);
    write_seeds(root);
    write_llpass_docs(root);
    write_template_docs(root);
    write_pattern_library(root);
    println!("assets regenerated under {}", root.display());
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct CorpusBuilder {
    rng: StdRng,
    lines: Vec<String>,
    counter: usize,
}

impl CorpusBuilder {
    fn push_json(&mut self, json: String) {
        // Round-trip through the loader so every bundled line is известно
        // schema-valid at generation time.
        let (records, report) = ingest_corpus_text(&json);
        assert!(
            report.skipped.is_empty() && records.len() == 1,
            "generated record is schema-invalid: {json} {:?}",
            report.skipped
        );
        self.lines.push(record_to_json(&records[0]));
    }

    fn origin(&mut self, kind: &str, tag: &str) -> String {
        self.counter += 1;
        format!("t_{}_{}_{:03}", kind.to_lowercase(), tag, self.counter)
    }

    fn shape(&mut self, rank: usize, max: usize) -> Vec<usize> {
        (0..rank)
            .map(|_| self.rng.random_range(1usize..=max))
            .collect()
    }

    fn data_seed(&mut self) -> u64 {
        self.rng.random_range(1u64..100_000)
    }

    fn input(&mut self, shape: &[usize], dtype: &str) -> String {
        format!(
            r#"{{"shape":{:?},"dtype":"{dtype}","src":{{"random":{}}}}}"#,
            shape,
            self.data_seed()
        )
    }

    fn unary(&mut self, kind: &str, dtype: &str, rank: usize) {
        let shape = self.shape(rank, 8);
        let origin = self.origin(kind, "basic");
        let input = self.input(&shape, dtype);
        self.push_json(format!(
            r#"{{"kind":"{kind}","params":{{}},"inputs":[{input}],"origin":"{origin}"}}"#
        ));
    }

    fn binary_same(&mut self, kind: &str, dtype: &str, rank: usize) {
        let shape = self.shape(rank, 8);
        let origin = self.origin(kind, "pair");
        let a = self.input(&shape, dtype);
        let b = self.input(&shape, dtype);
        self.push_json(format!(
            r#"{{"kind":"{kind}","params":{{}},"inputs":[{a},{b}],"origin":"{origin}"}}"#
        ));
    }

    fn binary_broadcast(&mut self, kind: &str, dtype: &str) {
        let rank = self.rng.random_range(2usize..=3);
        let shape = self.shape(rank, 6);
        let b_shape: Vec<usize> = if self.rng.random_bool(0.5) {
            vec![*shape.last().unwrap()]
        } else {
            let mut s = shape.clone();
            let axis = self.rng.random_range(0..s.len());
            s[axis] = 1;
            s
        };
        let origin = self.origin(kind, "bcast");
        let a = self.input(&shape, dtype);
        let b = self.input(&b_shape, dtype);
        self.push_json(format!(
            r#"{{"kind":"{kind}","params":{{}},"inputs":[{a},{b}],"origin":"{origin}"}}"#
        ));
    }

    fn div_int_inline(&mut self) {
        let n = self.rng.random_range(3usize..=6);
        let divisors: Vec<i64> = (0..n)
            .map(|_| {
                let v = self.rng.random_range(1i64..=6);
                if self.rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let origin = self.origin("Div", "int");
        let a = self.input(&[n], "I32");
        self.push_json(format!(
            r#"{{"kind":"Div","params":{{}},"inputs":[{a},{{"shape":[{n}],"dtype":"I32","src":{{"data":{divisors:?}}}}}],"origin":"{origin}"}}"#
        ));
    }

    fn matmul(&mut self, dtype: &str, valid: bool) {
        let m = self.rng.random_range(1usize..=8);
        let k = self.rng.random_range(1usize..=8);
        let n = self.rng.random_range(1usize..=8);
        let k2 = if valid { k } else { k + self.rng.random_range(1usize..=3) };
        let tag = if valid { "basic" } else { "neg" };
        let origin = self.origin("MatMul", tag);
        let a = self.input(&[m, k], dtype);
        let b = self.input(&[k2, n], dtype);
        self.push_json(format!(
            r#"{{"kind":"MatMul","params":{{}},"inputs":[{a},{b}],"origin":"{origin}"}}"#
        ));
    }

    fn conv(&mut self, pad: &[i64], stride: i64, tag: &str, channel_mismatch: bool) {
        let c = self.rng.random_range(1usize..=3);
        let hw = self.rng.random_range(5usize..=8);
        let o = self.rng.random_range(1usize..=3);
        let kk = self.rng.random_range(2usize..=3);
        let wc = if channel_mismatch { c + 1 } else { c };
        let origin = self.origin("Conv2D", tag);
        let x = self.input(&[1, c, hw, hw], "F32");
        let w = self.input(&[o, wc, kk, kk], "F32");
        self.push_json(format!(
            r#"{{"kind":"Conv2D","params":{{"stride":[{stride},{stride}],"pad":{pad:?}}},"inputs":[{x},{w}],"origin":"{origin}"}}"#
        ));
    }

    fn reshape(&mut self, valid: bool) {
        let rank = self.rng.random_range(1usize..=3);
        let shape = self.shape(rank, 6);
        let count: usize = shape.iter().product();
        let new_shape: Vec<usize> = if valid {
            // Random factorization of the element count.
            let mut dims = Vec::new();
            let mut rest = count;
            while dims.len() < 2 && rest > 1 {
                let divisors: Vec<usize> = (1..=rest).filter(|d| rest.is_multiple_of(*d)).collect();
                let d = *divisors.choose(&mut self.rng).unwrap();
                dims.push(d);
                rest /= d;
            }
            dims.push(rest.max(1));
            dims
        } else {
            vec![count + 1]
        };
        let tag = if valid { "basic" } else { "neg" };
        let origin = self.origin("Reshape", tag);
        let a = self.input(&shape, "F32");
        let dims: Vec<i64> = new_shape.iter().map(|d| *d as i64).collect();
        self.push_json(format!(
            r#"{{"kind":"Reshape","params":{{"shape":{dims:?}}},"inputs":[{a}],"origin":"{origin}"}}"#
        ));
    }

    fn transpose(&mut self, perm_override: Option<Vec<i64>>) {
        let (rank, perm, tag) = match perm_override {
            Some(p) => (p.len(), p, "dup"),
            None => {
                let rank = self.rng.random_range(2usize..=4);
                let mut perm: Vec<i64> = (0..rank as i64).collect();
                use rand::seq::SliceRandom;
                perm.shuffle(&mut self.rng);
                (rank, perm, "basic")
            }
        };
        let shape = self.shape(rank, 6);
        let origin = self.origin("Transpose", tag);
        let a = self.input(&shape, "F32");
        self.push_json(format!(
            r#"{{"kind":"Transpose","params":{{"perm":{perm:?}}},"inputs":[{a}],"origin":"{origin}"}}"#
        ));
    }

    fn concat(&mut self, axis: i64, equal_shapes: bool, valid: bool, tag: &str) {
        let rank = 2usize;
        let shape = self.shape(rank, 6);
        let mut other = shape.clone();
        let norm_axis = if axis < 0 { axis + rank as i64 } else { axis } as usize;
        if !equal_shapes {
            other[norm_axis] = self.rng.random_range(1usize..=6);
        }
        if !valid {
            // Off-axis extent mismatch.
            let off = (norm_axis + 1) % rank;
            other[off] = shape[off] + 1;
        }
        let origin = self.origin("Concat", tag);
        let a = self.input(&shape, "F32");
        let b = self.input(&other, "F32");
        self.push_json(format!(
            r#"{{"kind":"Concat","params":{{"axis":{axis}}},"inputs":[{a},{b}],"origin":"{origin}"}}"#
        ));
    }

    fn reduce(&mut self, dtype: &str) {
        let rank = self.rng.random_range(1usize..=3);
        let shape = self.shape(rank, 6);
        let axis = self.rng.random_range(0..rank) as i64;
        let keepdims = self.rng.random_range(0i64..=1);
        let origin = self.origin("ReduceSum", "basic");
        let a = self.input(&shape, dtype);
        self.push_json(format!(
            r#"{{"kind":"ReduceSum","params":{{"axes":[{axis}],"keepdims":{keepdims}}},"inputs":[{a}],"origin":"{origin}"}}"#
        ));
    }

    fn cast(&mut self, from: &str, to: &str) {
        let rank = self.rng.random_range(1usize..=3);
        let shape = self.shape(rank, 6);
        let origin = self.origin("Cast", "basic");
        let a = self.input(&shape, from);
        self.push_json(format!(
            r#"{{"kind":"Cast","params":{{"to":"{to}"}},"inputs":[{a}],"origin":"{origin}"}}"#
        ));
    }

    fn pad(&mut self) {
        let rank = self.rng.random_range(1usize..=3);
        let shape = self.shape(rank, 5);
        let pads: Vec<i64> = (0..2 * rank)
            .map(|_| self.rng.random_range(0i64..=2))
            .collect();
        let origin = self.origin("Pad", "basic");
        let a = self.input(&shape, "F32");
        self.push_json(format!(
            r#"{{"kind":"Pad","params":{{"pads":{pads:?}}},"inputs":[{a}],"origin":"{origin}"}}"#
        ));
    }
}

fn write_corpus(root: &Path) {
    let mut b = CorpusBuilder {
        rng: StdRng::seed_from_u64(CORPUS_SEED),
        lines: Vec::new(),
        counter: 0,
    };

    for dtype in ["F32", "I32", "I8"] {
        for rank in 1..=4 {
            for _ in 0..5 {
                b.unary("ReLU", dtype, rank);
            }
        }
    }
    for dtype in ["F32", "I32"] {
        for rank in 1..=3 {
            for _ in 0..6 {
                b.unary("Neg", dtype, rank);
            }
        }
    }
    for rank in 1..=3 {
        for _ in 0..8 {
            b.unary("Sigmoid", "F32", rank);
        }
    }
    for kind in ["Add", "Sub", "Mul"] {
        for dtype in ["F32", "I32", "I8"] {
            for rank in 1..=3 {
                for _ in 0..4 {
                    b.binary_same(kind, dtype, rank);
                }
            }
        }
        for _ in 0..8 {
            b.binary_broadcast(kind, "F32");
        }
    }
    for rank in 1..=3 {
        for _ in 0..5 {
            b.binary_same("Div", "F32", rank);
        }
    }
    for _ in 0..4 {
        b.binary_broadcast("Div", "F32");
    }
    for _ in 0..6 {
        b.div_int_inline();
    }
    for dtype in ["F32", "I32"] {
        for _ in 0..18 {
            b.matmul(dtype, true);
        }
    }
    for _ in 0..5 {
        b.matmul("F32", false);
    }
    for _ in 0..14 {
        b.conv(&[0, 0], 1, "basic", false);
    }
    for _ in 0..8 {
        b.conv(&[1, 1], 1, "pad", false);
    }
    for _ in 0..8 {
        b.conv(&[1, 1], 2, "stride", false);
    }
    // Asymmetric-pad records: the loader bug L1 misreads the 4-entry form,
    // so top/bottom asymmetry keeps the misread observable.
    b.conv(&[0, 2, 1, 1], 1, "asym", false);
    b.conv(&[1, 0, 0, 2], 1, "asym", false);
    b.conv(&[2, 0, 1, 0], 1, "asym", false);
    for _ in 0..4 {
        b.conv(&[0, 0], 1, "neg", true);
    }
    for _ in 0..30 {
        b.reshape(true);
    }
    for _ in 0..4 {
        b.reshape(false);
    }
    for _ in 0..30 {
        b.transpose(None);
    }
    b.transpose(Some(vec![0, 0]));
    b.transpose(Some(vec![1, 1, 0]));
    b.transpose(Some(vec![0, 2, 2, 1]));
    for axis in [0i64, 1] {
        for _ in 0..8 {
            b.concat(axis, false, true, "basic");
        }
    }
    // Equal-shape negative-axis records: valid, and the loader bug L3's
    // off-by-one lands on an axis where extents still align.
    for _ in 0..3 {
        b.concat(-1, true, true, "negaxis");
    }
    for _ in 0..3 {
        b.concat(1, false, false, "neg");
    }
    for dtype in ["F32", "I32", "I8"] {
        for _ in 0..10 {
            b.reduce(dtype);
        }
    }
    for from in ["F32", "I32", "I8", "BOOL"] {
        for to in ["F32", "I32", "I8", "BOOL"] {
            if from == to {
                continue;
            }
            b.cast(from, to);
            b.cast(from, to);
            if from == "I32" {
                // Extra I32-source casts keep the L2 surface represented.
                b.cast(from, to);
            }
        }
    }
    for _ in 0..20 {
        b.pad();
    }

    let dir = root.join("corpus");
    std::fs::create_dir_all(&dir).expect("create corpus dir");
    let mut text = b.lines.join("\n");
    text.push('\n');
    std::fs::write(dir.join("operators.jsonl"), text).expect("write corpus");
    println!("corpus: {} records", b.lines.len());
}

// ---------------------------------------------------------------------------
// Pass tests
// ---------------------------------------------------------------------------

fn write_test(dir: &Path, name: &str, expect: &str, g: &Graph) {
    let path = dir.join(name);
    write_graph_file(g, &path).expect("write pass test");
    let body = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("#expect-pass: {expect}\n{body}")).unwrap();
}

fn write_passtests(root: &Path) {
    let dir = root.join("passtests");
    std::fs::create_dir_all(&dir).expect("create passtests dir");
    let t = |d: DType, s: &[usize]| TensorType::new(d, s.to_vec());

    // ConstFold
    {
        let mut g = Graph::new("fold_binary");
        let a = g.add_constant(TensorValue::from_f32(vec![2], vec![2.0, -1.5]));
        let b = g.add_constant(TensorValue::from_f32(vec![2], vec![3.0, 4.0]));
        let m = g.add_op(OperatorKind::Mul, Params::new(), vec![a, b]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![m]);
        g.outputs = vec![r];
        write_test(&dir, "pt01_fold_binary.gr", "ConstFold fold.binary", &g);
    }
    {
        let mut g = Graph::new("fold_unary");
        let a = g.add_constant(TensorValue::from_f32(vec![3], vec![1.5, -2.0, 0.25]));
        let n = g.add_op(OperatorKind::Neg, Params::new(), vec![a]);
        g.outputs = vec![n];
        write_test(&dir, "pt02_fold_unary.gr", "ConstFold fold.unary", &g);
    }
    {
        // I8 payloads chosen so wrapping and saturating folds disagree.
        let mut g = Graph::new("fold_i8_overflow");
        let a = g.add_constant(TensorValue::from_i8(vec![3], vec![100, 90, -120]));
        let b = g.add_constant(TensorValue::from_i8(vec![3], vec![100, 50, -100]));
        let s = g.add_op(OperatorKind::Add, Params::new(), vec![a, b]);
        g.outputs = vec![s];
        write_test(&dir, "pt03_fold_i8_overflow.gr", "ConstFold fold.binary", &g);
    }

    // AlgebraicSimplify
    {
        let mut g = Graph::new("simp_add_zero");
        let x = g.add_input("x", t(DType::F32, &[4]));
        let z = g.add_constant(TensorValue::from_f32(vec![4], vec![0.0; 4]));
        let s = g.add_op(OperatorKind::Add, Params::new(), vec![x, z]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![s]);
        g.outputs = vec![r];
        write_test(&dir, "pt04_simp_add_zero.gr", "AlgebraicSimplify simp.add_zero", &g);
    }
    {
        let mut g = Graph::new("simp_mul_one");
        let x = g.add_input("x", t(DType::I32, &[3]));
        let one = g.add_constant(TensorValue::from_i32(vec![3], vec![1, 1, 1]));
        let m = g.add_op(OperatorKind::Mul, Params::new(), vec![x, one]);
        let n = g.add_op(OperatorKind::Neg, Params::new(), vec![m]);
        g.outputs = vec![n];
        write_test(&dir, "pt05_simp_mul_one.gr", "AlgebraicSimplify simp.mul_one", &g);
    }
    {
        let mut g = Graph::new("simp_transpose_inv");
        let x = g.add_input("x", t(DType::F32, &[2, 5]));
        let p1 = Params::new().with("perm", ParamValue::Ints(vec![1, 0]));
        let t1 = g.add_op(OperatorKind::Transpose, p1, vec![x]);
        let p2 = Params::new().with("perm", ParamValue::Ints(vec![1, 0]));
        let t2 = g.add_op(OperatorKind::Transpose, p2, vec![t1]);
        let n = g.add_op(OperatorKind::Neg, Params::new(), vec![t2]);
        g.outputs = vec![n];
        write_test(
            &dir,
            "pt06_simp_transpose_inv.gr",
            "AlgebraicSimplify simp.transpose_inv",
            &g,
        );
    }

    // FuseElementwise
    {
        let mut g = Graph::new("fuse_chain");
        let x = g.add_input("x", t(DType::F32, &[2, 3]));
        let y = g.add_input("y", t(DType::F32, &[2, 3]));
        let a = g.add_op(OperatorKind::Add, Params::new(), vec![x, y]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![a]);
        g.outputs = vec![r];
        write_test(&dir, "pt07_fuse_chain.gr", "FuseElementwise fuse.chain", &g);
    }
    {
        let mut g = Graph::new("fuse_long_chain");
        let x = g.add_input("x", t(DType::F32, &[6]));
        let y = g.add_input("y", t(DType::F32, &[6]));
        let s = g.add_op(OperatorKind::Sub, Params::new(), vec![x, y]);
        let n = g.add_op(OperatorKind::Neg, Params::new(), vec![s]);
        let sg = g.add_op(OperatorKind::Sigmoid, Params::new(), vec![n]);
        g.outputs = vec![sg];
        write_test(&dir, "pt08_fuse_long_chain.gr", "FuseElementwise fuse.chain", &g);
    }
    {
        let mut g = Graph::new("fuse_self_mul");
        let x = g.add_input("x", t(DType::I8, &[5]));
        let m = g.add_op(OperatorKind::Mul, Params::new(), vec![x, x]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![m]);
        g.outputs = vec![r];
        write_test(&dir, "pt09_fuse_self_mul.gr", "FuseElementwise fuse.chain", &g);
    }

    // CSE
    {
        let mut g = Graph::new("cse_dup_add");
        let x = g.add_input("x", t(DType::F32, &[4]));
        let y = g.add_input("y", t(DType::F32, &[4]));
        let a1 = g.add_op(OperatorKind::Add, Params::new(), vec![x, y]);
        let a2 = g.add_op(OperatorKind::Add, Params::new(), vec![x, y]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![a1]);
        let n = g.add_op(OperatorKind::Neg, Params::new(), vec![a2]);
        g.outputs = vec![r, n];
        write_test(&dir, "pt10_cse_dup_add.gr", "CSE cse.merge", &g);
    }
    {
        let mut g = Graph::new("cse_dup_transpose");
        let x = g.add_input("x", t(DType::I32, &[3, 4]));
        let p = Params::new().with("perm", ParamValue::Ints(vec![1, 0]));
        let t1 = g.add_op(OperatorKind::Transpose, p.clone(), vec![x]);
        let t2 = g.add_op(OperatorKind::Transpose, p, vec![x]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![t1]);
        let n = g.add_op(OperatorKind::Neg, Params::new(), vec![t2]);
        g.outputs = vec![r, n];
        write_test(&dir, "pt11_cse_dup_transpose.gr", "CSE cse.merge", &g);
    }
    {
        let mut g = Graph::new("cse_dup_cast");
        let x = g.add_input("x", t(DType::F32, &[6]));
        let p = Params::new().with("to", ParamValue::Dtype(DType::I32));
        let c1 = g.add_op(OperatorKind::Cast, p.clone(), vec![x]);
        let c2 = g.add_op(OperatorKind::Cast, p, vec![x]);
        let a = g.add_op(OperatorKind::Add, Params::new(), vec![c1, c2]);
        g.outputs = vec![a];
        write_test(&dir, "pt12_cse_dup_cast.gr", "CSE cse.merge", &g);
    }

    // LayoutTransform
    let conv_params = || {
        Params::new()
            .with("stride", ParamValue::Ints(vec![1, 1]))
            .with("pad", ParamValue::Ints(vec![0, 0]))
    };
    {
        let mut g = Graph::new("layout_conv");
        let x = g.add_input("x", t(DType::F32, &[1, 2, 5, 5]));
        let w = g.add_input("w", t(DType::F32, &[2, 2, 3, 3]));
        let c = g.add_op(OperatorKind::Conv2d, conv_params(), vec![x, w]);
        g.outputs = vec![c];
        write_test(&dir, "pt13_layout_conv.gr", "LayoutTransform layout.conv_nhwc", &g);
    }
    {
        let mut g = Graph::new("layout_conv_relu");
        let x = g.add_input("x", t(DType::F32, &[1, 1, 6, 6]));
        let w = g.add_input("w", t(DType::F32, &[2, 1, 2, 2]));
        let c = g.add_op(OperatorKind::Conv2d, conv_params(), vec![x, w]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![c]);
        g.outputs = vec![r];
        write_test(
            &dir,
            "pt14_layout_conv_relu.gr",
            "LayoutTransform layout.conv_nhwc",
            &g,
        );
    }
    {
        let mut g = Graph::new("layout_conv_chain");
        let x = g.add_input("x", t(DType::F32, &[1, 1, 6, 6]));
        let w1 = g.add_input("w1", t(DType::F32, &[1, 1, 2, 2]));
        let w2 = g.add_input("w2", t(DType::F32, &[1, 1, 2, 2]));
        let c1 = g.add_op(OperatorKind::Conv2d, conv_params(), vec![x, w1]);
        let c2 = g.add_op(OperatorKind::Conv2d, conv_params(), vec![c1, w2]);
        g.outputs = vec![c2];
        write_test(
            &dir,
            "pt15_layout_conv_chain.gr",
            "LayoutTransform layout.cancel_transpose",
            &g,
        );
    }

    // DeadNodeElim
    {
        let mut g = Graph::new("dne_dead_branch");
        let x = g.add_input("x", t(DType::F32, &[4]));
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![x]);
        let _dead = g.add_op(OperatorKind::Neg, Params::new(), vec![x]);
        g.outputs = vec![r];
        write_test(&dir, "pt16_dne_dead_branch.gr", "DeadNodeElim dne.unreachable", &g);
    }
    {
        let mut g = Graph::new("dne_dead_chain");
        let x = g.add_input("x", t(DType::I32, &[3]));
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![x]);
        let d1 = g.add_op(OperatorKind::Neg, Params::new(), vec![x]);
        let _d2 = g.add_op(OperatorKind::Add, Params::new(), vec![d1, d1]);
        g.outputs = vec![r];
        write_test(&dir, "pt17_dne_dead_chain.gr", "DeadNodeElim dne.unreachable", &g);
    }
    {
        let mut g = Graph::new("dne_dead_const");
        let x = g.add_input("x", t(DType::F32, &[2]));
        let _c = g.add_constant(TensorValue::from_f32(vec![2], vec![7.0, 8.0]));
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![x]);
        g.outputs = vec![r];
        write_test(&dir, "pt18_dne_dead_const.gr", "DeadNodeElim dne.unreachable", &g);
    }
    {
        let mut g = Graph::new("simp_reshape_id");
        let x = g.add_input("x", t(DType::F32, &[2, 3]));
        let p = Params::new().with("shape", ParamValue::Ints(vec![2, 3]));
        let rs = g.add_op(OperatorKind::Reshape, p, vec![x]);
        let n = g.add_op(OperatorKind::Neg, Params::new(), vec![rs]);
        g.outputs = vec![n];
        write_test(
            &dir,
            "pt19_simp_reshape_id.gr",
            "AlgebraicSimplify simp.reshape_id",
            &g,
        );
    }
    println!("passtests: 19 files");
}

// ---------------------------------------------------------------------------
// Seeds
// ---------------------------------------------------------------------------

fn write_seeds(root: &Path) {
    let dir = root.join("seeds");
    std::fs::create_dir_all(&dir).expect("create seeds dir");
    let seeds: &[(&str, &str)] = &[
        (
            "matmul_16.lir",
            "program matmul_16\n\
             input a: F32[16,16]\n\
             input b: F32[16,16]\n\
             output c: F32[16,16]\n\
             body:\n\
             \x20\x20for i0 in [0, 16):\n\
             \x20\x20\x20\x20for j0 in [0, 16):\n\
             \x20\x20\x20\x20\x20\x20c[i0, j0] = 0.0\n\
             \x20\x20for i in [0, 16) @pipelined(2):\n\
             \x20\x20\x20\x20alloc arow: F32[16] cache\n\
             \x20\x20\x20\x20for jc in [0, 16):\n\
             \x20\x20\x20\x20\x20\x20arow[jc] = a[i, jc]\n\
             \x20\x20\x20\x20for j in [0, 16) @unroll(4):\n\
             \x20\x20\x20\x20\x20\x20for k in [0, 16) @vectorize(4):\n\
             \x20\x20\x20\x20\x20\x20\x20\x20c[i, j] = c[i, j] + arow[k] * b[k, j]\n",
        ),
        (
            "ew_add_64.lir",
            "program ew_add_64\n\
             input a: F32[64]\n\
             input b: F32[64]\n\
             output c: F32[64]\n\
             body:\n\
             \x20\x20for i in [0, 64) @vectorize(4):\n\
             \x20\x20\x20\x20c[i] = a[i] + b[i]\n",
        ),
        (
            "scan_9.lir",
            "program scan_9\n\
             input s: F32[9]\n\
             output s: F32[9]\n\
             body:\n\
             \x20\x20for i in [1, 9) @vectorize(4):\n\
             \x20\x20\x20\x20s[i] = s[i - 1] + 1.0\n",
        ),
        (
            "ew_muladd.lir",
            "program ew_muladd\n\
             input a: F32[12]\n\
             input b: F32[12]\n\
             input d: F32[12]\n\
             output c: F32[12]\n\
             body:\n\
             \x20\x20for i in [0, 12):\n\
             \x20\x20\x20\x20c[i] = a[i] * (b[i] + d[i])\n",
        ),
        (
            "reduce_17.lir",
            "program reduce_17\n\
             input a: I32[17]\n\
             output acc: I32[1]\n\
             body:\n\
             \x20\x20acc[0] = 0\n\
             \x20\x20for i in [0, 17) @unroll(4):\n\
             \x20\x20\x20\x20acc[0] = acc[0] + a[i]\n",
        ),
        (
            "stencil_24.lir",
            "program stencil_24\n\
             input a: F32[24]\n\
             output o: F32[24]\n\
             body:\n\
             \x20\x20o[0] = a[0]\n\
             \x20\x20for i in [1, 23):\n\
             \x20\x20\x20\x20o[i] = a[i - 1] + a[i] + a[i + 1]\n\
             \x20\x20o[23] = a[23]\n",
        ),
    ];
    for (name, text) in seeds {
        let parsed = stagefuzz_core::loop_ir::text::parse_loop(text).expect(name);
        assert!(
            stagefuzz_core::loop_ir::validate_loop(&parsed).is_empty(),
            "{name} is invalid"
        );
        assert_eq!(
            &stagefuzz_core::loop_ir::text::serialize_loop(&parsed),
            text,
            "{name} is not canonical"
        );
        std::fs::write(dir.join(name), text).expect("write seed");
    }
    println!("seeds: {} files", seeds.len());
}

// ---------------------------------------------------------------------------
// Docs
// ---------------------------------------------------------------------------

fn write_llpass_docs(root: &Path) {
    let dir = root.join("docs/llpasses");
    std::fs::create_dir_all(&dir).expect("create docs dir");
    let docs: &[(&str, &str)] = &[
        (
            "unroll.md",
            "---\n\
             pass: UnrollExpand\n\
             rule: docs.unroll.attach\n\
             trigger: loops annotated @unroll(f) are body-replicated, with a remainder loop when the trip count is not a multiple of f\n\
             precondition: serial, const-bounds, trip>=2\n\
             action: attach unroll 2 4 8\n\
             ---\n\
             # Unroll expansion\n\n\
             `UnrollExpand` replicates the body of an `@unroll(f)` loop `f` times,\n\
             substituting the induction variable per copy, and emits a remainder\n\
             loop covering the trailing `trip % f` iterations.\n\n\
             ## Example\n\n\
             Before:\n\n\
             ```\n\
             for i in [0, 10) @unroll(4):\n\
             \x20\x20c[i] = a[i] + 1.0\n\
             ```\n\n\
             After:\n\n\
             ```\n\
             for i_u in [0, 2):\n\
             \x20\x20c[0 + i_u * 4 + 0] = a[0 + i_u * 4 + 0] + 1.0\n\
             \x20\x20c[0 + i_u * 4 + 1] = a[0 + i_u * 4 + 1] + 1.0\n\
             \x20\x20c[0 + i_u * 4 + 2] = a[0 + i_u * 4 + 2] + 1.0\n\
             \x20\x20c[0 + i_u * 4 + 3] = a[0 + i_u * 4 + 3] + 1.0\n\
             for i in [8, 10):\n\
             \x20\x20c[i] = a[i] + 1.0\n\
             ```\n",
        ),
        (
            "tile.md",
            "---\n\
             pass: TileLoops\n\
             rule: docs.tile.split\n\
             trigger: serial loops with a static trip count of at least 16 split into tile-8 outer/inner pairs plus a remainder loop\n\
             precondition: serial, const-bounds, trip>=16\n\
             action: split 8\n\
             ---\n\
             # Loop tiling\n\n\
             `TileLoops` splits long serial loops into an outer loop over tiles\n\
             and an inner loop of eight iterations, preserving iteration order\n\
             exactly. A remainder loop covers `trip % 8` trailing iterations.\n\n\
             ## Example\n\n\
             Before:\n\n\
             ```\n\
             for i in [0, 18):\n\
             \x20\x20c[i] = a[i] * 2.0\n\
             ```\n\n\
             After:\n\n\
             ```\n\
             for i_o in [0, 2):\n\
             \x20\x20for i_t in [0, 8):\n\
             \x20\x20\x20\x20c[0 + i_o * 8 + i_t] = a[0 + i_o * 8 + i_t] * 2.0\n\
             for i in [16, 18):\n\
             \x20\x20c[i] = a[i] * 2.0\n\
             ```\n",
        ),
        (
            "vectorize.md",
            "---\n\
             pass: VectorizeLegalize\n\
             rule: docs.vectorize.attach\n\
             trigger: innermost dependence-free loops annotated @vectorize(l) with trip divisible by l are lane-expanded; all other vectorize annotations demote to serial\n\
             precondition: innermost, serial, stores-only, const-bounds, trip%4==0, no-loop-carried-dep\n\
             action: attach vectorize 4\n\
             ---\n\
             # Vectorize legalization\n\n\
             A kept `@vectorize(l)` loop is rewritten into lane groups: per\n\
             store, all `l` lane values are gathered into a lane buffer before\n\
             any lane writes back. A loop-carried dependence makes that order\n\
             illegal, so dependent loops demote to serial (`vec.demote`).\n\n\
             ## Example\n\n\
             Before:\n\n\
             ```\n\
             for i in [0, 8) @vectorize(4):\n\
             \x20\x20c[i] = a[i] + b[i]\n\
             ```\n\n\
             After:\n\n\
             ```\n\
             for i_g in [0, 2) @vectorize(4):\n\
             \x20\x20alloc vlane0: F32[4] local\n\
             \x20\x20vlane0[0] = a[0 + i_g * 4 + 0] + b[0 + i_g * 4 + 0]\n\
             \x20\x20...\n\
             \x20\x20c[0 + i_g * 4 + 0] = vlane0[0]\n\
             \x20\x20...\n\
             ```\n",
        ),
        (
            "reorder.md",
            "---\n\
             pass: ReorderLoops\n\
             rule: docs.reorder.swap\n\
             trigger: perfectly nested rectangular loop pairs interchange when every stored buffer is accessed through one uniform index vector strided independently by each loop variable\n\
             precondition: serial, perfect-nest\n\
             action: swap\n\
             ---\n\
             # Loop interchange\n\n\
             `ReorderLoops` swaps a perfect `for i { for j { ... } }` pair when\n\
             the store analysis proves distinct iterations write distinct\n\
             elements, so only the visit order changes.\n\n\
             ## Example\n\n\
             Before:\n\n\
             ```\n\
             for i in [0, 4):\n\
             \x20\x20for j in [0, 8):\n\
             \x20\x20\x20\x20c[i, j] = a[i, j] + 1.0\n\
             ```\n\n\
             After:\n\n\
             ```\n\
             for j in [0, 8):\n\
             \x20\x20for i in [0, 4):\n\
             \x20\x20\x20\x20c[i, j] = a[i, j] + 1.0\n\
             ```\n",
        ),
        (
            "memlatency.md",
            "---\n\
             pass: MemLatencyHide\n\
             rule: docs.memlat.stage\n\
             trigger: pipelined loops that stage reads through a cache-scope buffer become double-buffered, prefetching iteration i+1 while computing iteration i\n\
             precondition: serial, has-readonly-load\n\
             action: stage-loads 2\n\
             ---\n\
             # Memory latency hiding\n\n\
             A `@pipelined(d)` loop whose body allocates a cache-scope staging\n\
             buffer, fills it from read-only memory, then computes from it is\n\
             rewritten into prologue + steady-state form with two staging slots.\n\
             The mutation action builds that canonical staged shape: it routes\n\
             one read-only load through a fresh cache scalar and marks the loop\n\
             pipelined.\n\n\
             ## Example\n\n\
             Before:\n\n\
             ```\n\
             for i in [0, 8):\n\
             \x20\x20c[i] = a[i] + 1.0\n\
             ```\n\n\
             After the mutation:\n\n\
             ```\n\
             for i in [0, 8) @pipelined(2):\n\
             \x20\x20alloc stage: F32[1] cache\n\
             \x20\x20stage[0] = a[i]\n\
             \x20\x20c[i] = stage[0] + 1.0\n\
             ```\n",
        ),
        (
            "intrinsic.md",
            "---\n\
             pass: IntrinsicMap\n\
             rule: docs.intrinsic.expose\n\
             trigger: F32 multiply-add expression trees a*b + c map to the single-rounding fma(a, b, c) intrinsic\n\
             precondition: value-is-mul\n\
             action: add-zero-to-mul\n\
             ---\n\
             # Intrinsic mapping\n\n\
             `IntrinsicMap` rewrites `a*b + c` trees (either addend order) into\n\
             `fma(a, b, c)`. Fused multiply-add rounds once, the one sanctioned\n\
             numeric deviation in the pipeline; differential comparisons widen\n\
             to the intrinsic tolerance when it fires. The mutation action\n\
             appends `+ 0.0` to a bare product, exposing an fma candidate\n\
             without changing comparator-visible values.\n\n\
             ## Example\n\n\
             Before:\n\n\
             ```\n\
             c[i] = a[i] * b[i] + d[i]\n\
             ```\n\n\
             After:\n\n\
             ```\n\
             c[i] = fma(a[i], b[i], d[i])\n\
             ```\n",
        ),
    ];
    for (name, text) in docs {
        std::fs::write(dir.join(name), text).expect("write doc");
    }
    println!("llpass docs: {} files", docs.len());
}

fn write_template_docs(root: &Path) {
    use stagefuzz::harmony::catalog::builtin_constraints;
    let dir = root.join("docs/templates");
    std::fs::create_dir_all(&dir).expect("create templates dir");
    let prose: &[(&str, &str)] = &[
        ("elementwise", "One flat loop applying an arithmetic expression per element."),
        ("reduction", "A running sum over one input collapsed into a single accumulator."),
        ("matmul", "The classic i/j/k triple nest with a zero-initialized accumulator."),
        ("conv", "A one-dimensional multi-channel convolution over valid positions."),
        ("stencil", "Neighbor sums with copied boundaries, or an in-place prefix scan."),
    ];
    // Emitted from the builtin source so the two knowledge sources agree and
    // every bundled entry is cross-verified.
    for (template, constraints) in builtin_constraints() {
        let ann_groups: Vec<String> = constraints
            .annotations
            .iter()
            .map(|(depth, fams)| {
                let names: Vec<&str> = fams.iter().map(|f| f.name()).collect();
                if names.is_empty() {
                    format!("{depth}:none")
                } else {
                    format!("{depth}:{}", names.join(","))
                }
            })
            .collect();
        let dtypes: Vec<&str> = constraints.dtypes.iter().map(|d| d.name()).collect();
        let blurb = prose
            .iter()
            .find(|(t, _)| *t == template.name())
            .map(|(_, b)| *b)
            .unwrap_or_default();
        let mut text = String::new();
        let _ = writeln!(text, "---");
        let _ = writeln!(text, "template: {template}");
        let _ = writeln!(text, "extent-min: {}", constraints.extent_min);
        let _ = writeln!(text, "extent-max: {}", constraints.extent_max);
        let _ = writeln!(text, "dtypes: {}", dtypes.join(" "));
        let _ = writeln!(text, "annotations: {}", ann_groups.join(" "));
        let _ = writeln!(text, "---");
        let _ = writeln!(text, "# {template} template\n");
        let _ = writeln!(text, "{blurb}");
        std::fs::write(dir.join(format!("{template}.md")), text).expect("write template doc");
    }
    println!("template docs: 5 files");
}

fn write_pattern_library(root: &Path) {
    let report = capture_patterns(&root.join("passtests")).expect("capture patterns");
    assert!(
        report.errors.is_empty(),
        "pattern capture errors: {:?}",
        report.errors
    );
    assert!(report.stale_tests.is_empty(), "stale: {:?}", report.stale_tests);
    let text = serialize_pattern_library(&report.patterns);
    std::fs::write(root.join("patterns.plib"), text).expect("write pattern library");
    println!("patterns.plib: {} patterns", report.patterns.len());
}
