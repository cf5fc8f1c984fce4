// SPDX-License-Identifier: Apache-2.0

//! Seed generation: diverse valid loop programs drawn from the constraint
//! catalog, per computation template, with catalog-compatible annotations.
//! When a provider is configured its response is used whenever it parses
//! and validates; the builtin generator is the deterministic fallback.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::RngExt;

use stagefuzz_core::loop_ir::text::{parse_loop, serialize_loop};
use stagefuzz_core::loop_ir::{
    for_loop, seq, validate_loop, Buffer, Expr, LoopAnnotation, LoopProgram, Stmt,
};
use stagefuzz_core::tensor::{DType, Scalar, TensorType, TensorValue};

use super::catalog::{AnnFamily, CatalogEntry, ConstraintCatalog, Template};
use crate::provider::{ProviderClient, ProviderRequest};

/// Integer-valued random bindings for every input buffer of a program.
/// Keeping the data on small whole numbers makes fused-multiply-add
/// rewrites exactly representable, so level comparisons stay noise-free.
pub fn random_loop_inputs(p: &LoopProgram, rng: &mut StdRng) -> BTreeMap<String, TensorValue> {
    let mut map = BTreeMap::new();
    for b in &p.inputs {
        let t = TensorType::new(b.dtype, b.extents.clone());
        map.insert(
            b.name.clone(),
            stagefuzz_core::generate::random_value(rng, &t, true),
        );
    }
    map
}

fn pick_annotation(
    entry: &CatalogEntry,
    depth: usize,
    rng: &mut StdRng,
    probability: f64,
) -> LoopAnnotation {
    let Some(allowed) = entry.constraints.annotations.get(&depth) else {
        return LoopAnnotation::Serial;
    };
    if allowed.is_empty() || !rng.random_bool(probability) {
        return LoopAnnotation::Serial;
    }
    let families: Vec<AnnFamily> = allowed.iter().copied().collect();
    match families.choose(rng).copied().unwrap() {
        AnnFamily::Parallel => LoopAnnotation::Parallel,
        AnnFamily::Vectorize => LoopAnnotation::Vectorize(*[2u8, 4, 8].choose(rng).unwrap()),
        AnnFamily::Unroll => LoopAnnotation::Unroll(*[2u8, 4, 8].choose(rng).unwrap()),
        AnnFamily::Pipelined => LoopAnnotation::Pipelined(*[2u8, 3].choose(rng).unwrap()),
    }
}

fn pick_extent(entry: &CatalogEntry, rng: &mut StdRng) -> usize {
    rng.random_range(entry.constraints.extent_min..=entry.constraints.extent_max)
}

fn pick_dtype(entry: &CatalogEntry, rng: &mut StdRng) -> DType {
    let dtypes: Vec<DType> = entry.constraints.dtypes.iter().copied().collect();
    *dtypes.choose(rng).unwrap()
}

fn zero_of(dtype: DType) -> Expr {
    match dtype {
        DType::F32 => Expr::Const(Scalar::F32(0.0)),
        _ => Expr::IntLit(0),
    }
}

/// Random elementwise expression over the given input buffers at index `i`.
/// Multiply-of-sum shapes occur regularly, which keeps the fused
/// multiply-add surface reachable.
fn elementwise_expr(inputs: &[String], dtype: DType, rng: &mut StdRng, depth: usize) -> Expr {
    let leaf = |rng: &mut StdRng| {
        let name = inputs.choose(rng).unwrap().clone();
        Expr::load(&name, vec![Expr::var("i")])
    };
    if depth == 0 {
        return leaf(rng);
    }
    match rng.random_range(0u32..10) {
        0..=2 => Expr::add(
            elementwise_expr(inputs, dtype, rng, depth - 1),
            elementwise_expr(inputs, dtype, rng, depth - 1),
        ),
        3..=4 => Expr::sub(
            elementwise_expr(inputs, dtype, rng, depth - 1),
            elementwise_expr(inputs, dtype, rng, depth - 1),
        ),
        5..=7 => Expr::mul(
            elementwise_expr(inputs, dtype, rng, depth - 1),
            elementwise_expr(inputs, dtype, rng, depth - 1),
        ),
        8 => Expr::Un(
            stagefuzz_core::loop_ir::UnOp::Relu,
            Box::new(elementwise_expr(inputs, dtype, rng, depth - 1)),
        ),
        _ => {
            if dtype == DType::F32 {
                Expr::Un(
                    stagefuzz_core::loop_ir::UnOp::Sigmoid,
                    Box::new(elementwise_expr(inputs, dtype, rng, depth - 1)),
                )
            } else {
                leaf(rng)
            }
        }
    }
}

fn gen_elementwise(entry: &CatalogEntry, rng: &mut StdRng, ordinal: u64) -> LoopProgram {
    let n = pick_extent(entry, rng);
    let dtype = pick_dtype(entry, rng);
    let n_inputs = rng.random_range(1usize..=3);
    let input_names: Vec<String> = (0..n_inputs).map(|k| format!("a{k}")).collect();
    let value = elementwise_expr(&input_names, dtype, rng, 2);
    let body = for_loop(
        "i",
        Expr::IntLit(0),
        Expr::IntLit(n as i64),
        pick_annotation(entry, 0, rng, 0.5),
        Stmt::Store {
            buffer: "out".into(),
            indices: vec![Expr::var("i")],
            value,
        },
    );
    LoopProgram {
        name: format!("ew_{ordinal}"),
        inputs: input_names
            .iter()
            .map(|name| Buffer::new(name, dtype, vec![n]))
            .collect(),
        outputs: vec![Buffer::new("out", dtype, vec![n])],
        body,
        intrinsics_used: Default::default(),
    }
}

fn gen_reduction(entry: &CatalogEntry, rng: &mut StdRng, ordinal: u64) -> LoopProgram {
    let n = pick_extent(entry, rng);
    let dtype = pick_dtype(entry, rng);
    let body = seq(vec![
        Stmt::Store {
            buffer: "acc".into(),
            indices: vec![Expr::IntLit(0)],
            value: zero_of(dtype),
        },
        for_loop(
            "i",
            Expr::IntLit(0),
            Expr::IntLit(n as i64),
            pick_annotation(entry, 0, rng, 0.5),
            Stmt::Store {
                buffer: "acc".into(),
                indices: vec![Expr::IntLit(0)],
                value: Expr::add(
                    Expr::load("acc", vec![Expr::IntLit(0)]),
                    Expr::load("a", vec![Expr::var("i")]),
                ),
            },
        ),
    ]);
    LoopProgram {
        name: format!("red_{ordinal}"),
        inputs: vec![Buffer::new("a", dtype, vec![n])],
        outputs: vec![Buffer::new("acc", dtype, vec![1])],
        body,
        intrinsics_used: Default::default(),
    }
}

fn gen_matmul(entry: &CatalogEntry, rng: &mut StdRng, ordinal: u64) -> LoopProgram {
    let m = pick_extent(entry, rng);
    let k = pick_extent(entry, rng);
    let n = pick_extent(entry, rng);
    let dtype = pick_dtype(entry, rng);
    let acc = Stmt::Store {
        buffer: "c".into(),
        indices: vec![Expr::var("i"), Expr::var("j")],
        value: Expr::add(
            Expr::load("c", vec![Expr::var("i"), Expr::var("j")]),
            Expr::mul(
                Expr::load("a", vec![Expr::var("i"), Expr::var("k")]),
                Expr::load("b", vec![Expr::var("k"), Expr::var("j")]),
            ),
        ),
    };
    let body = for_loop(
        "i",
        Expr::IntLit(0),
        Expr::IntLit(m as i64),
        pick_annotation(entry, 0, rng, 0.4),
        for_loop(
            "j",
            Expr::IntLit(0),
            Expr::IntLit(n as i64),
            pick_annotation(entry, 1, rng, 0.4),
            seq(vec![
                Stmt::Store {
                    buffer: "c".into(),
                    indices: vec![Expr::var("i"), Expr::var("j")],
                    value: zero_of(dtype),
                },
                for_loop(
                    "k",
                    Expr::IntLit(0),
                    Expr::IntLit(k as i64),
                    pick_annotation(entry, 2, rng, 0.4),
                    acc,
                ),
            ]),
        ),
    );
    LoopProgram {
        name: format!("mm_{ordinal}"),
        inputs: vec![
            Buffer::new("a", dtype, vec![m, k]),
            Buffer::new("b", dtype, vec![k, n]),
        ],
        outputs: vec![Buffer::new("c", dtype, vec![m, n])],
        body,
        intrinsics_used: Default::default(),
    }
}

fn gen_conv(entry: &CatalogEntry, rng: &mut StdRng, ordinal: u64) -> LoopProgram {
    let h = pick_extent(entry, rng).max(5);
    let kk = rng.random_range(2usize..=3);
    let c = rng.random_range(1usize..=2);
    let o = rng.random_range(1usize..=2);
    let out_w = h - kk + 1;
    let acc = Stmt::Store {
        buffer: "out".into(),
        indices: vec![Expr::var("oc"), Expr::var("x")],
        value: Expr::add(
            Expr::load("out", vec![Expr::var("oc"), Expr::var("x")]),
            Expr::mul(
                Expr::load(
                    "img",
                    vec![Expr::var("ic"), Expr::add(Expr::var("x"), Expr::var("k"))],
                ),
                Expr::load("w", vec![Expr::var("oc"), Expr::var("ic"), Expr::var("k")]),
            ),
        ),
    };
    let body = for_loop(
        "oc",
        Expr::IntLit(0),
        Expr::IntLit(o as i64),
        pick_annotation(entry, 0, rng, 0.4),
        for_loop(
            "x",
            Expr::IntLit(0),
            Expr::IntLit(out_w as i64),
            pick_annotation(entry, 1, rng, 0.4),
            seq(vec![
                Stmt::Store {
                    buffer: "out".into(),
                    indices: vec![Expr::var("oc"), Expr::var("x")],
                    value: Expr::Const(Scalar::F32(0.0)),
                },
                for_loop(
                    "ic",
                    Expr::IntLit(0),
                    Expr::IntLit(c as i64),
                    LoopAnnotation::Serial,
                    for_loop(
                        "k",
                        Expr::IntLit(0),
                        Expr::IntLit(kk as i64),
                        LoopAnnotation::Serial,
                        acc,
                    ),
                ),
            ]),
        ),
    );
    LoopProgram {
        name: format!("conv_{ordinal}"),
        inputs: vec![
            Buffer::new("img", DType::F32, vec![c, h]),
            Buffer::new("w", DType::F32, vec![o, c, kk]),
        ],
        outputs: vec![Buffer::new("out", DType::F32, vec![o, out_w])],
        body,
        intrinsics_used: Default::default(),
    }
}

fn gen_stencil(entry: &CatalogEntry, rng: &mut StdRng, ordinal: u64) -> LoopProgram {
    let n = pick_extent(entry, rng).max(4);
    let dtype = pick_dtype(entry, rng);
    if rng.random_bool(0.5) {
        // In-place prefix scan: genuinely loop-carried, the vectorizer's
        // dependence check is what protects it.
        let body = for_loop(
            "i",
            Expr::IntLit(1),
            Expr::IntLit(n as i64),
            pick_annotation(entry, 0, rng, 0.5),
            Stmt::Store {
                buffer: "b".into(),
                indices: vec![Expr::var("i")],
                value: Expr::add(
                    Expr::load("b", vec![Expr::sub(Expr::var("i"), Expr::IntLit(1))]),
                    Expr::load("a", vec![Expr::var("i")]),
                ),
            },
        );
        LoopProgram {
            name: format!("scan_{ordinal}"),
            inputs: vec![
                Buffer::new("a", dtype, vec![n]),
                Buffer::new("b", dtype, vec![n]),
            ],
            outputs: vec![Buffer::new("b", dtype, vec![n])],
            body,
            intrinsics_used: Default::default(),
        }
    } else {
        // Independent 3-point stencil with copied boundaries.
        let interior = for_loop(
            "i",
            Expr::IntLit(1),
            Expr::IntLit(n as i64 - 1),
            pick_annotation(entry, 0, rng, 0.5),
            Stmt::Store {
                buffer: "out".into(),
                indices: vec![Expr::var("i")],
                value: Expr::add(
                    Expr::add(
                        Expr::load("a", vec![Expr::sub(Expr::var("i"), Expr::IntLit(1))]),
                        Expr::load("a", vec![Expr::var("i")]),
                    ),
                    Expr::load("a", vec![Expr::add(Expr::var("i"), Expr::IntLit(1))]),
                ),
            },
        );
        let body = seq(vec![
            Stmt::Store {
                buffer: "out".into(),
                indices: vec![Expr::IntLit(0)],
                value: Expr::load("a", vec![Expr::IntLit(0)]),
            },
            interior,
            Stmt::Store {
                buffer: "out".into(),
                indices: vec![Expr::IntLit(n as i64 - 1)],
                value: Expr::load("a", vec![Expr::IntLit(n as i64 - 1)]),
            },
        ]);
        LoopProgram {
            name: format!("stencil_{ordinal}"),
            inputs: vec![Buffer::new("a", dtype, vec![n])],
            outputs: vec![Buffer::new("out", dtype, vec![n])],
            body,
            intrinsics_used: Default::default(),
        }
    }
}

/// Generates one seed from the builtin templates. The catalog entry must be
/// usable (present and undisputed).
pub fn generate_builtin_seed(
    entry: &CatalogEntry,
    template: Template,
    rng: &mut StdRng,
    ordinal: u64,
) -> LoopProgram {
    let p = match template {
        Template::Elementwise => gen_elementwise(entry, rng, ordinal),
        Template::Reduction => gen_reduction(entry, rng, ordinal),
        Template::Matmul => gen_matmul(entry, rng, ordinal),
        Template::Conv => gen_conv(entry, rng, ordinal),
        Template::Stencil => gen_stencil(entry, rng, ordinal),
    };
    debug_assert!(validate_loop(&p).is_empty(), "{:?}", validate_loop(&p));
    p
}

/// Catalog-guided seed generation with an optional provider in front. The
/// provider's program is used only when it parses and validates; otherwise
/// the deterministic builtin path runs and an incident is recorded.
pub fn generate_seed(
    catalog: &ConstraintCatalog,
    template: Template,
    rng: &mut StdRng,
    ordinal: u64,
    provider: Option<&mut ProviderClient>,
) -> Option<LoopProgram> {
    let entry = catalog.usable(template)?;
    if let Some(client) = provider {
        let constraints = serde_json::json!({
            "template": template.name(),
            "extent_min": entry.constraints.extent_min,
            "extent_max": entry.constraints.extent_max,
            "dtypes": entry.constraints.dtypes.iter().map(|d| d.name()).collect::<Vec<_>>(),
        });
        let req = ProviderRequest {
            op: "seed".into(),
            template: Some(template.name().into()),
            constraints,
            seed: ordinal,
        };
        if let Some(resp) = client.request(&req) {
            match parse_loop(&resp.text) {
                Ok(p) if validate_loop(&p).is_empty() => return Some(p),
                Ok(_) => client
                    .incidents
                    .push("provider seed failed validation; fallback used".into()),
                Err(e) => client
                    .incidents
                    .push(format!("provider seed failed to parse ({e}); fallback used")),
            }
        }
    }
    Some(generate_builtin_seed(entry, template, rng, ordinal))
}

/// Builds the campaign seed pool: bundled `.lir` files first, then generated
/// seeds round-robin over templates, deduplicated by canonical hash.
pub fn build_seed_pool(
    bundled: &[LoopProgram],
    catalog: &ConstraintCatalog,
    target: usize,
    seed: u64,
    mut provider: Option<&mut ProviderClient>,
) -> Vec<LoopProgram> {
    use rand::SeedableRng;
    let mut pool = Vec::new();
    let mut hashes = std::collections::BTreeSet::new();
    for p in bundled {
        if hashes.insert(p.canonical_hash()) {
            pool.push(p.clone());
        }
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut ordinal = 0u64;
    let mut stale_attempts = 0usize;
    while pool.len() < target && stale_attempts < target * 4 {
        let template = Template::ALL[(ordinal as usize) % Template::ALL.len()];
        ordinal += 1;
        let Some(p) = generate_seed(catalog, template, &mut rng, ordinal, provider.as_deref_mut())
        else {
            stale_attempts += 1;
            continue;
        };
        if hashes.insert(p.canonical_hash()) {
            pool.push(p);
        } else {
            stale_attempts += 1;
        }
    }
    pool
}

/// Canonical text of every pool seed, for reports and artifacts.
pub fn pool_digest(pool: &[LoopProgram]) -> u64 {
    let joined: String = pool.iter().map(serialize_loop).collect();
    stagefuzz_core::util::fnv1a64(joined.as_bytes())
}
