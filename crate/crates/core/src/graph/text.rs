// SPDX-License-Identifier: Apache-2.0

//! Canonical line-oriented graph text format.
//!
//! One node per line, nodes in ascending id order, terminated by the output
//! list:
//!
//! ```text
//! # name: demo
//! node 0 Input inputs=[] params={name=x} type=F32[2,3]
//! node 1 Constant inputs=[] params={} type=F32[2,3] data=[1.0,...]
//! node 2 Add inputs=[0,1] params={} type=F32[2,3]
//! outputs=[2]
//! ```
//!
//! Constant payloads of more than 64 elements use a sidecar reference
//! `data=@<relpath>`; the file-level entry points resolve them.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::{
    EwOp, FusedArg, FusedChain, FusedStep, Graph, Node, NodeId, OperatorKind, ParamValue, Params,
};
use crate::tensor::{DType, Scalar, TensorData, TensorType, TensorValue};

/// Inline payload limit, in elements.
pub const INLINE_DATA_LIMIT: usize = 64;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("parse error at line {line}, col {col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

fn err<T>(line: usize, col: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        col,
        message: message.into(),
    })
}

fn fmt_ids(ids: &[NodeId]) -> String {
    let parts: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
    format!("[{}]", parts.join(","))
}

fn fmt_chain(chain: &FusedChain) -> String {
    let steps: Vec<String> = chain
        .steps
        .iter()
        .map(|s| {
            let args: Vec<String> = s
                .args
                .iter()
                .map(|a| match a {
                    FusedArg::Input(i) => format!("i{i}"),
                    FusedArg::Step(j) => format!("s{j}"),
                })
                .collect();
            format!("{}({})", s.op.name(), args.join(","))
        })
        .collect();
    steps.join("|")
}

fn fmt_data(data: &TensorData) -> String {
    let mut out = String::from("[");
    for i in 0..data.len() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}", data.get(i));
    }
    out.push(']');
    out
}

fn fmt_params(node: &Node) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let OperatorKind::FusedGroup(chain) = &node.kind {
        parts.push(format!("chain={}", fmt_chain(chain)));
    }
    for (k, v) in &node.params.0 {
        parts.push(format!("{k}={v}"));
    }
    format!("{{{}}}", parts.join(","))
}

/// Serializes a graph to canonical text with all payloads inline. The
/// on-disk format spills payloads above [`INLINE_DATA_LIMIT`] to sidecar
/// files; use [`write_graph_file`] for that.
pub fn serialize_graph(g: &Graph) -> String {
    let mut out = String::new();
    if !g.name.is_empty() {
        let _ = writeln!(out, "# name: {}", g.name);
    }
    for node in g.nodes.values() {
        let _ = write!(
            out,
            "node {} {} inputs={} params={} type={}",
            node.id,
            node.kind.name(),
            fmt_ids(&node.inputs),
            fmt_params(node),
            node.out_type
        );
        if let Some(payload) = &node.payload {
            let _ = write!(out, " data={}", fmt_data(&payload.data));
        }
        out.push('\n');
    }
    let _ = writeln!(out, "outputs={}", fmt_ids(&g.outputs));
    out
}

struct FieldParser<'a> {
    line: &'a str,
    line_no: usize,
    pos: usize,
}

impl<'a> FieldParser<'a> {
    fn new(line: &'a str, line_no: usize) -> Self {
        Self {
            line,
            line_no,
            pos: 0,
        }
    }

    fn rest(&self) -> &'a str {
        &self.line[self.pos..]
    }

    fn skip_ws(&mut self) {
        while self.rest().starts_with(' ') {
            self.pos += 1;
        }
    }

    fn token(&mut self) -> Result<&'a str, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.line.len() && !self.line[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
        if start == self.pos {
            return err(self.line_no, start + 1, "expected token");
        }
        Ok(&self.line[start..self.pos])
    }

    fn keyed_field(&mut self, key: &str) -> Result<&'a str, ParseError> {
        let col = self.pos + 1;
        let tok = self.token()?;
        match tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')) {
            Some(value) => Ok(value),
            None => err(self.line_no, col, format!("expected `{key}=...`, got `{tok}`")),
        }
    }
}

fn parse_bracket_list(s: &str, line: usize) -> Result<Vec<&str>, ParseError> {
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or(ParseError {
            line,
            col: 1,
            message: format!("expected bracketed list, got `{s}`"),
        })?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    Ok(inner.split(',').collect())
}

fn parse_type(s: &str, line: usize) -> Result<TensorType, ParseError> {
    let open = s.find('[').ok_or(ParseError {
        line,
        col: 1,
        message: format!("expected dtype[dims], got `{s}`"),
    })?;
    let dtype = DType::from_str(&s[..open]).map_err(|m| ParseError {
        line,
        col: 1,
        message: m,
    })?;
    let dims = parse_bracket_list(&s[open..], line)?;
    let mut shape = Vec::with_capacity(dims.len());
    for d in dims {
        let v: usize = d.parse().map_err(|_| ParseError {
            line,
            col: 1,
            message: format!("bad extent `{d}`"),
        })?;
        shape.push(v);
    }
    Ok(TensorType::new(dtype, shape))
}

fn parse_chain(s: &str, line: usize) -> Result<FusedChain, ParseError> {
    let mut steps = Vec::new();
    for seg in s.split('|') {
        let open = seg.find('(').ok_or(ParseError {
            line,
            col: 1,
            message: format!("bad chain step `{seg}`"),
        })?;
        let close = seg.len() - 1;
        if !seg.ends_with(')') {
            return err(line, 1, format!("bad chain step `{seg}`"));
        }
        let op = EwOp::from_str(&seg[..open]).map_err(|m| ParseError {
            line,
            col: 1,
            message: m,
        })?;
        let mut args = Vec::new();
        for a in seg[open + 1..close].split(',') {
            let (tag, idx) = a.split_at(1);
            let idx: usize = idx.parse().map_err(|_| ParseError {
                line,
                col: 1,
                message: format!("bad chain arg `{a}`"),
            })?;
            args.push(match tag {
                "i" => FusedArg::Input(idx),
                "s" => FusedArg::Step(idx),
                _ => return err(line, 1, format!("bad chain arg `{a}`")),
            });
        }
        steps.push(FusedStep { op, args });
    }
    Ok(FusedChain { steps })
}

fn parse_param_value(s: &str, line: usize) -> Result<ParamValue, ParseError> {
    if s.starts_with('[') {
        let parts = parse_bracket_list(s, line)?;
        let mut ints = Vec::with_capacity(parts.len());
        for p in parts {
            let v: i64 = p.parse().map_err(|_| ParseError {
                line,
                col: 1,
                message: format!("bad int `{p}`"),
            })?;
            ints.push(v);
        }
        return Ok(ParamValue::Ints(ints));
    }
    if let Ok(v) = s.parse::<i64>() {
        return Ok(ParamValue::Int(v));
    }
    if let Ok(d) = DType::from_str(s) {
        return Ok(ParamValue::Dtype(d));
    }
    if !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
    {
        return Ok(ParamValue::Str(s.to_string()));
    }
    err(line, 1, format!("bad param value `{s}`"))
}

/// Splits `{k=v,k=[1,2],...}` entries at top-level commas.
fn parse_params(s: &str, line: usize) -> Result<(Params, Option<FusedChain>), ParseError> {
    let inner = s
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or(ParseError {
            line,
            col: 1,
            message: format!("expected braced params, got `{s}`"),
        })?;
    let mut params = Params::new();
    let mut chain = None;
    if inner.is_empty() {
        return Ok((params, chain));
    }
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut entries = Vec::new();
    for (i, c) in inner.char_indices() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                entries.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    entries.push(&inner[start..]);
    for entry in entries {
        let eq = entry.find('=').ok_or(ParseError {
            line,
            col: 1,
            message: format!("expected k=v in params, got `{entry}`"),
        })?;
        let (k, v) = (&entry[..eq], &entry[eq + 1..]);
        if k == "chain" {
            chain = Some(parse_chain(v, line)?);
        } else {
            params.set(k, parse_param_value(v, line)?);
        }
    }
    Ok((params, chain))
}

fn parse_data(s: &str, ttype: &TensorType, line: usize) -> Result<TensorValue, ParseError> {
    let parts = parse_bracket_list(s, line)?;
    if parts.len() != ttype.element_count() {
        return err(
            line,
            1,
            format!(
                "payload has {} elements, type {} requires {}",
                parts.len(),
                ttype,
                ttype.element_count()
            ),
        );
    }
    let mut data = TensorData::zeros(ttype.dtype, parts.len());
    for (i, p) in parts.iter().enumerate() {
        let scalar = match ttype.dtype {
            DType::F32 => p.parse::<f32>().map(Scalar::F32).map_err(|_| ()),
            DType::I32 => p.parse::<i32>().map(Scalar::I32).map_err(|_| ()),
            DType::I8 => p.parse::<i8>().map(Scalar::I8).map_err(|_| ()),
            DType::Bool => p.parse::<bool>().map(Scalar::Bool).map_err(|_| ()),
        }
        .map_err(|_| ParseError {
            line,
            col: 1,
            message: format!("bad {} literal `{p}`", ttype.dtype),
        })?;
        data.set(i, scalar);
    }
    Ok(TensorValue::new(ttype.clone(), data))
}

/// Parses canonical graph text. Sidecar `data=@` references are rejected;
/// use [`parse_graph_file`] for graphs with external payloads.
pub fn parse_graph(text: &str) -> Result<Graph, ParseError> {
    parse_graph_inner(text, None)
}

fn parse_graph_inner(text: &str, base_dir: Option<&Path>) -> Result<Graph, ParseError> {
    let mut g = Graph::new("");
    let mut saw_outputs = false;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(name) = rest.trim().strip_prefix("name:") {
                g.name = name.trim().to_string();
            }
            continue;
        }
        if saw_outputs {
            return err(line_no, 1, "content after outputs list");
        }
        if let Some(list) = line.strip_prefix("outputs=") {
            for id in parse_bracket_list(list, line_no)? {
                let v: u32 = id.parse().map_err(|_| ParseError {
                    line: line_no,
                    col: 1,
                    message: format!("bad output id `{id}`"),
                })?;
                g.outputs.push(NodeId(v));
            }
            saw_outputs = true;
            continue;
        }
        let mut fields = FieldParser::new(line, line_no);
        let head = fields.token()?;
        if head != "node" {
            return err(line_no, 1, format!("expected `node` or `outputs=`, got `{head}`"));
        }
        let id_tok = fields.token()?;
        let id: u32 = id_tok.parse().map_err(|_| ParseError {
            line: line_no,
            col: 1,
            message: format!("bad node id `{id_tok}`"),
        })?;
        let kind_tok = fields.token()?;
        let inputs_raw = fields.keyed_field("inputs")?;
        let params_raw = fields.keyed_field("params")?;
        let type_raw = fields.keyed_field("type")?;
        let mut inputs = Vec::new();
        for t in parse_bracket_list(inputs_raw, line_no)? {
            let v: u32 = t.parse().map_err(|_| ParseError {
                line: line_no,
                col: 1,
                message: format!("bad input id `{t}`"),
            })?;
            inputs.push(NodeId(v));
        }
        let (params, chain) = parse_params(params_raw, line_no)?;
        let kind = if kind_tok == "FusedGroup" {
            match chain {
                Some(chain) => OperatorKind::FusedGroup(chain),
                None => return err(line_no, 1, "FusedGroup requires chain=... param"),
            }
        } else {
            match OperatorKind::from_base_name(kind_tok) {
                Some(k) => k,
                None => return err(line_no, 1, format!("unknown operator kind `{kind_tok}`")),
            }
        };
        let out_type = parse_type(type_raw, line_no)?;
        let mut payload = None;
        fields.skip_ws();
        if !fields.rest().is_empty() {
            let data_raw = fields.keyed_field("data")?;
            if let Some(rel) = data_raw.strip_prefix('@') {
                let Some(base) = base_dir else {
                    return err(line_no, 1, "sidecar data reference requires a file context");
                };
                let path = base.join(rel);
                let content = std::fs::read_to_string(&path).map_err(|e| ParseError {
                    line: line_no,
                    col: 1,
                    message: format!("cannot read sidecar {}: {e}", path.display()),
                })?;
                payload = Some(parse_data(content.trim(), &out_type, line_no)?);
            } else {
                payload = Some(parse_data(data_raw, &out_type, line_no)?);
            }
            fields.skip_ws();
            if !fields.rest().is_empty() {
                return err(line_no, fields.pos + 1, "trailing content on node line");
            }
        }
        if kind == OperatorKind::Constant && payload.is_none() {
            return err(line_no, 1, "Constant requires data=[...]");
        }
        g.insert(Node {
            id: NodeId(id),
            kind,
            params,
            inputs,
            out_type,
            payload,
        });
    }
    if !saw_outputs {
        return err(text.lines().count().max(1), 1, "missing outputs=[...] terminator");
    }
    Ok(g)
}

/// Reads a graph file, resolving sidecar payload references relative to it.
pub fn parse_graph_file(path: &Path) -> Result<Graph, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseError {
        line: 0,
        col: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut g = parse_graph_inner(&text, path.parent())?;
    if g.name.is_empty() {
        g.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(g)
}

/// Writes a graph to a file, spilling oversized constant payloads into
/// sidecar files next to it.
pub fn write_graph_file(g: &Graph, path: &Path) -> std::io::Result<()> {
    let mut text = String::new();
    if !g.name.is_empty() {
        let _ = writeln!(text, "# name: {}", g.name);
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "graph".to_string());
    for node in g.nodes.values() {
        let _ = write!(
            text,
            "node {} {} inputs={} params={} type={}",
            node.id,
            node.kind.name(),
            fmt_ids(&node.inputs),
            fmt_params(node),
            node.out_type
        );
        if let Some(payload) = &node.payload {
            if payload.data.len() <= INLINE_DATA_LIMIT {
                let _ = write!(text, " data={}", fmt_data(&payload.data));
            } else {
                let rel = format!("{stem}.const{}.dat", node.id);
                let sidecar = path.with_file_name(&rel);
                std::fs::write(&sidecar, fmt_data(&payload.data))?;
                let _ = write!(text, " data=@{rel}");
            }
        }
        text.push('\n');
    }
    let _ = writeln!(text, "outputs={}", fmt_ids(&g.outputs));
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Params;
    use crate::tensor::DType;

    fn sample() -> Graph {
        let mut g = Graph::new("demo");
        let a = g.add_input("x", TensorType::new(DType::F32, vec![2, 3]));
        let c = g.add_constant(TensorValue::from_f32(vec![1, 3], vec![1.0, 2.5, -3.0]));
        let s = g.add_op(OperatorKind::Add, Params::new(), vec![a, c]);
        let t = g.add_op(
            OperatorKind::Transpose,
            Params::new().with("perm", ParamValue::Ints(vec![1, 0])),
            vec![s],
        );
        g.outputs = vec![t];
        g
    }

    #[test]
    fn roundtrip_is_identity() {
        let g = sample();
        let text = serialize_graph(&g);
        let parsed = parse_graph(&text).unwrap();
        assert_eq!(parsed, g);
    }

    #[test]
    fn canonical_text_is_byte_stable() {
        let g = sample();
        let text = serialize_graph(&g);
        let again = serialize_graph(&parse_graph(&text).unwrap());
        assert_eq!(text, again);
    }

    #[test]
    fn missing_outputs_is_a_parse_error() {
        let text = "node 0 Input inputs=[] params={name=x} type=F32[2]\n";
        let e = parse_graph(text).unwrap_err();
        assert!(e.message.contains("outputs"));
    }

    #[test]
    fn unknown_kind_is_a_parse_error() {
        let text = "node 0 Conv3D inputs=[] params={} type=F32[2]\noutputs=[0]\n";
        let e = parse_graph(text).unwrap_err();
        assert_eq!(e.line, 1);
        assert!(e.message.contains("Conv3D"));
    }

    #[test]
    fn fused_group_roundtrip() {
        let mut g = Graph::new("fused");
        let a = g.add_input("a", TensorType::new(DType::F32, vec![4]));
        let b = g.add_input("b", TensorType::new(DType::F32, vec![4]));
        let chain = FusedChain {
            steps: vec![
                FusedStep {
                    op: EwOp::Add,
                    args: vec![FusedArg::Input(0), FusedArg::Input(1)],
                },
                FusedStep {
                    op: EwOp::Relu,
                    args: vec![FusedArg::Step(0)],
                },
            ],
        };
        let f = g.add_op(OperatorKind::FusedGroup(chain), Params::new(), vec![a, b]);
        g.outputs = vec![f];
        let text = serialize_graph(&g);
        assert!(text.contains("chain=Add(i0,i1)|ReLU(s0)"));
        assert_eq!(parse_graph(&text).unwrap(), g);
    }

    #[test]
    fn sidecar_payload_roundtrip() {
        let dir = std::env::temp_dir().join(format!("sfz_text_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut g = Graph::new("big");
        let data: Vec<f32> = (0..100).map(|i| i as f32).collect();
        let c = g.add_constant(TensorValue::from_f32(vec![100], data));
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![c]);
        g.outputs = vec![r];
        let path = dir.join("big.gr");
        write_graph_file(&g, &path).unwrap();
        let parsed = parse_graph_file(&path).unwrap();
        assert_eq!(parsed, g);
        std::fs::remove_dir_all(&dir).ok();
    }
}
