// SPDX-License-Identifier: Apache-2.0

//! Migration-based loader testing: operator-instance records are ingested
//! from a JSONL corpus, wrapped into single-operator graphs, clustered by
//! signature, and ordered with diversity-aware round-robin prioritization.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use stagefuzz_core::bugs::BugSet;
use stagefuzz_core::generate::random_value;
use stagefuzz_core::graph::infer::infer_shape_with;
use stagefuzz_core::graph::{Graph, OperatorKind, ParamValue, Params};
use stagefuzz_core::tensor::{DType, Scalar, TensorData, TensorType, TensorValue, MAX_RANK};
use stagefuzz_core::util::fnv1a64;

/// Wire form of one corpus line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<RawInputSpec>,
    pub origin: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInputSpec {
    pub shape: Vec<i64>,
    pub dtype: String,
    pub src: RawSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<serde_json::Value>>,
}

/// Where one input tensor's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Random(u64),
    Inline(TensorValue),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub ttype: TensorType,
    pub src: DataSource,
}

/// One schema-validated operator invocation migrated from the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorInstanceRecord {
    pub kind: OperatorKind,
    pub params: Params,
    pub input_specs: Vec<InputSpec>,
    pub origin: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus unreadable: {0}")]
    CorpusUnreadable(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("schema violation: {0}")]
pub struct SchemaViolation(pub String);

pub const MAX_CORPUS_EXTENT: usize = 64;

fn param_from_json(value: &serde_json::Value) -> Result<ParamValue, SchemaViolation> {
    match value {
        serde_json::Value::Number(n) => n
            .as_i64()
            .map(ParamValue::Int)
            .ok_or_else(|| SchemaViolation(format!("non-integer param `{n}`"))),
        serde_json::Value::Array(items) => {
            let mut ints = Vec::with_capacity(items.len());
            for item in items {
                let v = item
                    .as_i64()
                    .ok_or_else(|| SchemaViolation(format!("non-integer list entry `{item}`")))?;
                ints.push(v);
            }
            Ok(ParamValue::Ints(ints))
        }
        serde_json::Value::String(s) => match DType::from_str(s) {
            Ok(d) => Ok(ParamValue::Dtype(d)),
            Err(_) => Ok(ParamValue::Str(s.clone())),
        },
        other => Err(SchemaViolation(format!("unsupported param value `{other}`"))),
    }
}

fn inline_value(
    ttype: &TensorType,
    raw: &[serde_json::Value],
) -> Result<TensorValue, SchemaViolation> {
    if raw.len() != ttype.element_count() {
        return Err(SchemaViolation(format!(
            "inline data has {} elements, type {ttype} requires {}",
            raw.len(),
            ttype.element_count()
        )));
    }
    let mut data = TensorData::zeros(ttype.dtype, raw.len());
    for (i, v) in raw.iter().enumerate() {
        let scalar = match ttype.dtype {
            DType::F32 => v
                .as_f64()
                .map(|f| Scalar::F32(f as f32))
                .ok_or_else(|| SchemaViolation(format!("bad F32 literal `{v}`")))?,
            DType::I32 => v
                .as_i64()
                .map(|x| Scalar::I32(x as i32))
                .ok_or_else(|| SchemaViolation(format!("bad I32 literal `{v}`")))?,
            DType::I8 => v
                .as_i64()
                .map(|x| Scalar::I8(x as i8))
                .ok_or_else(|| SchemaViolation(format!("bad I8 literal `{v}`")))?,
            DType::Bool => v
                .as_bool()
                .map(Scalar::Bool)
                .ok_or_else(|| SchemaViolation(format!("bad BOOL literal `{v}`")))?,
        };
        data.set(i, scalar);
    }
    Ok(TensorValue::new(ttype.clone(), data))
}

/// Validates a raw line into a record. Schema validity is about structure
/// (known kind, parseable params, capped shapes); shape-rule violations are
/// deliberately preserved as negative tests.
pub fn validate_record(raw: &RawRecord) -> Result<OperatorInstanceRecord, SchemaViolation> {
    let kind = OperatorKind::from_base_name(&raw.kind)
        .ok_or_else(|| SchemaViolation(format!("unknown kind `{}`", raw.kind)))?;
    if kind.is_source() {
        return Err(SchemaViolation(format!(
            "source kind `{}` is not an operator record",
            raw.kind
        )));
    }
    let mut params = Params::new();
    for (name, value) in &raw.params {
        params.set(name, param_from_json(value)?);
    }
    let mut input_specs = Vec::with_capacity(raw.inputs.len());
    for spec in &raw.inputs {
        if spec.shape.len() > MAX_RANK {
            return Err(SchemaViolation(format!(
                "rank {} exceeds cap {MAX_RANK}",
                spec.shape.len()
            )));
        }
        let mut shape = Vec::with_capacity(spec.shape.len());
        for &d in &spec.shape {
            if d < 1 || d as usize > MAX_CORPUS_EXTENT {
                return Err(SchemaViolation(format!(
                    "extent {d} outside 1..={MAX_CORPUS_EXTENT}"
                )));
            }
            shape.push(d as usize);
        }
        let dtype = DType::from_str(&spec.dtype).map_err(SchemaViolation)?;
        let ttype = TensorType::new(dtype, shape);
        let src = match (&spec.src.random, &spec.src.data) {
            (Some(seed), None) => DataSource::Random(*seed),
            (None, Some(raw_data)) => DataSource::Inline(inline_value(&ttype, raw_data)?),
            _ => {
                return Err(SchemaViolation(
                    "src must be exactly one of {random, data}".into(),
                ))
            }
        };
        input_specs.push(InputSpec { ttype, src });
    }
    if !kind.arity().accepts(input_specs.len()) {
        return Err(SchemaViolation(format!(
            "{} got {} inputs",
            raw.kind,
            input_specs.len()
        )));
    }
    Ok(OperatorInstanceRecord {
        kind,
        params,
        input_specs,
        origin: raw.origin.clone(),
    })
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub total_lines: usize,
    pub skipped: Vec<(usize, String)>,
}

/// Reads a JSONL corpus, validating each line. Invalid lines are skipped
/// and reported, never fatal.
pub fn ingest_corpus(path: &Path) -> Result<(Vec<OperatorInstanceRecord>, IngestReport), CorpusError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CorpusError::CorpusUnreadable(format!("{}: {e}", path.display())))?;
    Ok(ingest_corpus_text(&text))
}

pub fn ingest_corpus_text(text: &str) -> (Vec<OperatorInstanceRecord>, IngestReport) {
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        report.total_lines += 1;
        let raw: RawRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push((line_no, format!("malformed JSON: {e}")));
                continue;
            }
        };
        match validate_record(&raw) {
            Ok(record) => records.push(record),
            Err(e) => report.skipped.push((line_no, e.to_string())),
        }
    }
    (records, report)
}

/// Serializes a record back to its JSONL wire form.
pub fn record_to_json(r: &OperatorInstanceRecord) -> String {
    let params: BTreeMap<String, serde_json::Value> = r
        .params
        .0
        .iter()
        .map(|(k, v)| {
            let value = match v {
                ParamValue::Int(i) => serde_json::json!(i),
                ParamValue::Ints(is) => serde_json::json!(is),
                ParamValue::Str(s) => serde_json::json!(s),
                ParamValue::Dtype(d) => serde_json::json!(d.name()),
            };
            (k.clone(), value)
        })
        .collect();
    let inputs: Vec<RawInputSpec> = r
        .input_specs
        .iter()
        .map(|spec| RawInputSpec {
            shape: spec.ttype.shape.iter().map(|d| *d as i64).collect(),
            dtype: spec.ttype.dtype.name().to_string(),
            src: match &spec.src {
                DataSource::Random(seed) => RawSource {
                    random: Some(*seed),
                    data: None,
                },
                DataSource::Inline(value) => RawSource {
                    random: None,
                    data: Some(
                        (0..value.data.len())
                            .map(|i| match value.data.get(i) {
                                Scalar::F32(v) => serde_json::json!(v),
                                Scalar::I32(v) => serde_json::json!(v),
                                Scalar::I8(v) => serde_json::json!(v),
                                Scalar::Bool(v) => serde_json::json!(v),
                            })
                            .collect(),
                    ),
                },
            },
        })
        .collect();
    serde_json::to_string(&RawRecord {
        kind: r.kind.name().to_string(),
        params,
        inputs,
        origin: r.origin.clone(),
    })
    .expect("record serialization cannot fail")
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("wrap failed for `{origin}`: {message}")]
pub struct WrapError {
    pub origin: String,
    pub message: String,
}

/// Encapsulates a record into a single-operator graph: one `Input` or
/// `Constant` node per input spec plus the operator node as sole output.
/// The loader's type inference (with seeded bugs) supplies the declared
/// output type; raw record params are stored on the node unchanged.
pub fn wrap_instance(
    r: &OperatorInstanceRecord,
    bugs: &BugSet,
) -> Result<Graph, WrapError> {
    let mut g = Graph::new(&r.origin);
    let mut operands = Vec::with_capacity(r.input_specs.len());
    for (k, spec) in r.input_specs.iter().enumerate() {
        let id = match &spec.src {
            DataSource::Random(_) => g.add_input(&format!("in{k}"), spec.ttype.clone()),
            DataSource::Inline(value) => g.add_constant(value.clone()),
        };
        operands.push(id);
    }
    let in_types: Vec<TensorType> = r.input_specs.iter().map(|s| s.ttype.clone()).collect();
    let out_type = infer_shape_with(bugs, &r.kind, &r.params, &in_types).map_err(|e| WrapError {
        origin: r.origin.clone(),
        message: e.to_string(),
    })?;
    let id = g.next_id();
    g.insert(stagefuzz_core::graph::Node {
        id,
        kind: r.kind.clone(),
        params: r.params.clone(),
        inputs: operands,
        out_type,
        payload: None,
    });
    g.outputs = vec![id];
    Ok(g)
}

/// Materializes input bindings for a wrapped record: `random(seed)` inputs
/// draw deterministically from the seed.
pub fn materialize_inputs(r: &OperatorInstanceRecord) -> BTreeMap<String, TensorValue> {
    let mut map = BTreeMap::new();
    for (k, spec) in r.input_specs.iter().enumerate() {
        if let DataSource::Random(seed) = &spec.src {
            let mut rng = StdRng::seed_from_u64(*seed);
            map.insert(format!("in{k}"), random_value(&mut rng, &spec.ttype, false));
        }
    }
    map
}

// ---------------------------------------------------------------------------
// Diversity-aware prioritization
// ---------------------------------------------------------------------------

pub const PARAM_BUCKETS: u64 = 16;

/// Hash bucket for one param binding. The multiply folds all 64 hash bits
/// into the bucket so small textual edits land in different buckets.
fn param_bucket(name: &str, value: &ParamValue) -> u32 {
    let h = fnv1a64(format!("{name}={value}").as_bytes());
    (h.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 60) as u32 % PARAM_BUCKETS as u32
}

/// Deterministic semantic feature vector: kind one-hot, one hash bucket per
/// param, input ranks, input dtype tags.
pub fn feature_vector(r: &OperatorInstanceRecord) -> Vec<u32> {
    let mut v = Vec::with_capacity(24);
    for name in OperatorKind::BASE_NAMES {
        v.push((name == r.kind.name()) as u32);
    }
    for (name, value) in &r.params.0 {
        v.push(param_bucket(name, value));
    }
    for spec in &r.input_specs {
        v.push(spec.ttype.rank() as u32);
    }
    for spec in &r.input_specs {
        v.push(match spec.ttype.dtype {
            DType::F32 => 0,
            DType::I32 => 1,
            DType::I8 => 2,
            DType::Bool => 3,
        });
    }
    v
}

/// Exact-bucketing cluster signature: kind, param buckets, rank multiset.
pub fn cluster_signature(r: &OperatorInstanceRecord) -> String {
    let buckets: Vec<String> = r
        .params
        .0
        .iter()
        .map(|(name, value)| format!("{name}:{}", param_bucket(name, value)))
        .collect();
    let mut ranks: Vec<usize> = r.input_specs.iter().map(|s| s.ttype.rank()).collect();
    ranks.sort_unstable();
    let ranks: Vec<String> = ranks.iter().map(|r| r.to_string()).collect();
    format!("{}|{}|{}", r.kind.name(), buckets.join(","), ranks.join(","))
}

/// One semantic cluster over record indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub signature: String,
    pub feature: Vec<u32>,
    pub members: Vec<usize>,
}

fn normalized_hamming(a: &[u32], b: &[u32]) -> f64 {
    let len = a.len().max(b.len());
    if len == 0 {
        return 0.0;
    }
    let mut diff = 0usize;
    for i in 0..len {
        let x = a.get(i);
        let y = b.get(i);
        if x != y {
            diff += 1;
        }
    }
    diff as f64 / len as f64
}

/// Partitions records into clusters. With the default threshold of 0.0,
/// clustering is exact signature bucketing; a positive threshold enables
/// single-linkage merging on normalized Hamming distance between feature
/// vectors.
pub fn cluster_instances(records: &[OperatorInstanceRecord], threshold: f64) -> Vec<Cluster> {
    let mut by_signature: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_signature.entry(cluster_signature(r)).or_default().push(i);
    }
    let mut clusters: Vec<Cluster> = by_signature
        .into_iter()
        .map(|(signature, members)| Cluster {
            feature: feature_vector(&records[members[0]]),
            signature,
            members,
        })
        .collect();
    if threshold > 0.0 {
        // Single-linkage union over cluster representatives.
        let mut parent: Vec<usize> = (0..clusters.len()).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                if normalized_hamming(&clusters[i].feature, &clusters[j].feature) <= threshold {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[rj] = ri;
                    }
                }
            }
        }
        let mut merged: BTreeMap<usize, Cluster> = BTreeMap::new();
        for i in 0..clusters.len() {
            let root = find(&mut parent, i);
            let entry = merged.entry(root).or_insert_with(|| Cluster {
                signature: clusters[root].signature.clone(),
                feature: clusters[root].feature.clone(),
                members: Vec::new(),
            });
            entry.members.extend(clusters[i].members.iter().copied());
        }
        clusters = merged.into_values().collect();
        for c in &mut clusters {
            c.members.sort_unstable();
        }
    }
    clusters
}

/// Round-robin prioritization: clusters visited largest-first, members
/// shuffled per-cluster by the seed. The first `clusters.len()` positions
/// cover every distinct signature.
pub fn prioritize(clusters: &[Cluster], rng_seed: u64) -> Vec<usize> {
    let mut ordered: Vec<&Cluster> = clusters.iter().collect();
    ordered.sort_by(|a, b| {
        b.members
            .len()
            .cmp(&a.members.len())
            .then_with(|| a.signature.cmp(&b.signature))
    });
    let mut queues: Vec<Vec<usize>> = ordered
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let mut members = c.members.clone();
            let mut rng = StdRng::seed_from_u64(rng_seed.wrapping_add(ci as u64));
            members.shuffle(&mut rng);
            members
        })
        .collect();
    let total: usize = queues.iter().map(|q| q.len()).sum();
    let qlen = queues.len().max(1);
    let mut out = Vec::with_capacity(total);
    let mut cursor = 0usize;
    while out.len() < total {
        if let Some(idx) = queues[cursor % qlen].pop() {
            out.push(idx);
        }
        cursor += 1;
        // Safety valve; unreachable while any queue still has members.
        if cursor > total * qlen + qlen {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_line(kind: &str) -> String {
        format!(
            r#"{{"kind":"{kind}","params":{{}},"inputs":[{{"shape":[5],"dtype":"F32","src":{{"random":7}}}}],"origin":"t_{kind}"}}"#
        )
    }

    #[test]
    fn unknown_kind_is_skipped() {
        let text = format!("{}\n{}\n", record_line("ReLU"), record_line("Conv3D"));
        let (records, report) = ingest_corpus_text(&text);
        assert_eq!(records.len(), 1);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].1.contains("Conv3D"));
    }

    #[test]
    fn empty_corpus_is_empty_not_fatal() {
        let (records, report) = ingest_corpus_text("");
        assert!(records.is_empty());
        assert_eq!(report.total_lines, 0);
    }

    #[test]
    fn malformed_json_is_skipped() {
        let text = format!("{}\n{{not json\n", record_line("ReLU"));
        let (records, report) = ingest_corpus_text(&text);
        assert_eq!(records.len(), 1);
        assert_eq!(report.skipped.len(), 1);
    }

    #[test]
    fn wrap_relu_makes_two_nodes() {
        let (records, _) = ingest_corpus_text(&record_line("ReLU"));
        let g = wrap_instance(&records[0], &BugSet::empty()).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert!(stagefuzz_core::graph::validate::validate_graph(&g).is_empty());
    }

    #[test]
    fn wrap_conv2d_infers_output() {
        let line = r#"{"kind":"Conv2D","params":{"stride":[1,1],"pad":[1,1]},"inputs":[{"shape":[1,3,8,8],"dtype":"F32","src":{"random":7}},{"shape":[4,3,3,3],"dtype":"F32","src":{"random":8}}],"origin":"t_conv_basic"}"#;
        let (records, report) = ingest_corpus_text(line);
        assert!(report.skipped.is_empty());
        let g = wrap_instance(&records[0], &BugSet::empty()).unwrap();
        assert_eq!(g.nodes.len(), 3);
        let out = &g.nodes[&g.outputs[0]];
        assert_eq!(out.out_type, TensorType::new(DType::F32, vec![1, 4, 8, 8]));
    }

    #[test]
    fn negative_matmul_is_rejected_by_wrap() {
        let line = r#"{"kind":"MatMul","params":{},"inputs":[{"shape":[3,4],"dtype":"F32","src":{"random":1}},{"shape":[5,6],"dtype":"F32","src":{"random":2}}],"origin":"t_mm_neg"}"#;
        let (records, _) = ingest_corpus_text(line);
        assert_eq!(records.len(), 1, "negative records are schema-valid");
        assert!(wrap_instance(&records[0], &BugSet::empty()).is_err());
    }

    #[test]
    fn feature_vectors_are_deterministic_and_discriminating() {
        let (a, _) = ingest_corpus_text(&record_line("ReLU"));
        let (b, _) = ingest_corpus_text(&record_line("ReLU"));
        assert_eq!(feature_vector(&a[0]), feature_vector(&b[0]));
        let rank2 =
            r#"{"kind":"ReLU","params":{},"inputs":[{"shape":[5,2],"dtype":"F32","src":{"random":7}}],"origin":"x"}"#;
        let (c, _) = ingest_corpus_text(rank2);
        let va = feature_vector(&a[0]);
        let vc = feature_vector(&c[0]);
        assert_ne!(va, vc);
        let differing: Vec<usize> = (0..va.len()).filter(|&i| va[i] != vc[i]).collect();
        assert_eq!(differing.len(), 1, "only the rank slot differs");
    }

    #[test]
    fn conv_stride_changes_bucket() {
        let mk = |stride: &str| {
            format!(
                r#"{{"kind":"Conv2D","params":{{"stride":{stride},"pad":[0,0]}},"inputs":[{{"shape":[1,1,4,4],"dtype":"F32","src":{{"random":1}}}},{{"shape":[1,1,2,2],"dtype":"F32","src":{{"random":2}}}}],"origin":"x"}}"#
            )
        };
        let (a, _) = ingest_corpus_text(&mk("[1,1]"));
        let (b, _) = ingest_corpus_text(&mk("[2,2]"));
        assert_ne!(cluster_signature(&a[0]), cluster_signature(&b[0]));
    }

    #[test]
    fn identical_records_form_one_cluster() {
        let text = format!(
            "{}\n{}\n{}\n",
            record_line("ReLU"),
            record_line("ReLU"),
            record_line("ReLU")
        );
        let (records, _) = ingest_corpus_text(&text);
        let clusters = cluster_instances(&records, 0.0);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members.len(), 3);
    }

    #[test]
    fn distinct_kinds_form_distinct_clusters() {
        let text = format!("{}\n{}\n", record_line("ReLU"), record_line("Neg"));
        let (records, _) = ingest_corpus_text(&text);
        let clusters = cluster_instances(&records, 0.0);
        assert!(clusters.len() >= 2);
    }

    #[test]
    fn round_robin_largest_first() {
        // Cluster A has 3 members, cluster B has 1: order A,B,A,A.
        let text = format!(
            "{}\n{}\n{}\n{}\n",
            record_line("ReLU"),
            record_line("ReLU"),
            record_line("ReLU"),
            record_line("Neg")
        );
        let (records, _) = ingest_corpus_text(&text);
        let clusters = cluster_instances(&records, 0.0);
        let order = prioritize(&clusters, 42);
        assert_eq!(order.len(), 4);
        let kind_of = |i: usize| records[order[i]].kind.name();
        assert_eq!(kind_of(0), "ReLU");
        assert_eq!(kind_of(1), "Neg");
        assert_eq!(kind_of(2), "ReLU");
        assert_eq!(kind_of(3), "ReLU");
    }

    #[test]
    fn single_cluster_is_seed_deterministic_permutation() {
        let text = format!("{}\n{}\n{}\n", record_line("ReLU"), record_line("ReLU"), record_line("ReLU"));
        let (records, _) = ingest_corpus_text(&text);
        let clusters = cluster_instances(&records, 0.0);
        let a = prioritize(&clusters, 9);
        let b = prioritize(&clusters, 9);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn prefix_covers_all_signatures() {
        let mut lines = Vec::new();
        for kind in ["ReLU", "Neg", "Sigmoid", "Add"] {
            for _ in 0..3 {
                lines.push(match kind {
                    "Add" => r#"{"kind":"Add","params":{},"inputs":[{"shape":[5],"dtype":"F32","src":{"random":1}},{"shape":[5],"dtype":"F32","src":{"random":2}}],"origin":"a"}"#.to_string(),
                    k => record_line(k),
                });
            }
        }
        let (records, _) = ingest_corpus_text(&lines.join("\n"));
        let clusters = cluster_instances(&records, 0.0);
        let order = prioritize(&clusters, 3);
        let k = clusters.len();
        let prefix_sigs: std::collections::BTreeSet<String> = order[..k]
            .iter()
            .map(|&i| cluster_signature(&records[i]))
            .collect();
        assert_eq!(prefix_sigs.len(), k);
    }

    #[test]
    fn positive_threshold_merges_near_identical_clusters() {
        // Rank-1 and rank-2 ReLU records differ in exactly one feature slot;
        // a permissive Hamming threshold single-links them while Conv2D
        // stays apart.
        let lines = [
            record_line("ReLU"),
            r#"{"kind":"ReLU","params":{},"inputs":[{"shape":[5,2],"dtype":"F32","src":{"random":7}}],"origin":"r2"}"#.to_string(),
            r#"{"kind":"Conv2D","params":{"stride":[1,1],"pad":[0,0]},"inputs":[{"shape":[1,1,4,4],"dtype":"F32","src":{"random":1}},{"shape":[1,1,2,2],"dtype":"F32","src":{"random":2}}],"origin":"c"}"#.to_string(),
        ];
        let (records, _) = ingest_corpus_text(&lines.join("\n"));
        assert_eq!(cluster_instances(&records, 0.0).len(), 3);
        let merged = cluster_instances(&records, 0.1);
        assert_eq!(merged.len(), 2, "one differing slot merges under 10%");
        let total: usize = merged.iter().map(|c| c.members.len()).sum();
        assert_eq!(total, 3, "merging preserves the partition");
    }

    #[test]
    fn record_json_roundtrip() {
        let line = r#"{"kind":"Conv2D","params":{"pad":[1,1],"stride":[1,1]},"inputs":[{"shape":[1,3,8,8],"dtype":"F32","src":{"random":7}},{"shape":[4,3,3,3],"dtype":"I8","src":{"data":[1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3,1,-2,0,3]}}],"origin":"t_conv_basic"}"#;
        let (records, report) = ingest_corpus_text(line);
        assert!(report.skipped.is_empty(), "{:?}", report.skipped);
        let back = record_to_json(&records[0]);
        let (again, _) = ingest_corpus_text(&back);
        assert_eq!(records, again);
    }
}
