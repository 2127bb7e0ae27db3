//! The decomposed transform written out as an explicit operator graph.
//!
//! [`lower`] turns an [`IndexGraph`] into a small DAG over a fixed set of
//! primitive kinds (constants, gather, element-wise multiply, reshape).
//! [`validate`] checks a graph against that whitelist and its structural
//! rules, and [`interpret`] executes a valid graph so it can be compared
//! against [`crate::aggregation::transform`].
//!
//! Gather sources are viewed as `[rows, row_len]` tables whose last row is
//! the zero padding slot. A channel dimension of `-1` in a declared shape
//! means "taken from the bound input".
//!
//! Index constants are not inlined in the JSON form; each `CONST_INDEX` node
//! points at a sidecar index-graph file and names the offset array it uses.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::{BevVolume, DepthStack, FeatureStack};
use crate::error::{Error, Result};
use crate::geometry::GridDims;
use crate::indexgraph::IndexGraph;

pub const GRAPH_VERSION: u32 = 1;
pub const FEATURES_INPUT: &str = "features";
pub const DEPTH_INPUT: &str = "depth";
pub const SPATIAL_FIELD: &str = "spatial_offset";
pub const DEPTH_FIELD: &str = "depth_offset";
pub const DEFAULT_SIDECAR: &str = "index_graph.fblt";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum OpKind {
    Input,
    ConstIndex,
    ConstTensor,
    Gather,
    Mul,
    Reshape,
    Output,
    /// Anything outside the known set; never passes validation.
    Other(String),
}

impl OpKind {
    pub fn as_str(&self) -> &str {
        match self {
            OpKind::Input => "INPUT",
            OpKind::ConstIndex => "CONST_INDEX",
            OpKind::ConstTensor => "CONST_TENSOR",
            OpKind::Gather => "GATHER",
            OpKind::Mul => "MUL",
            OpKind::Reshape => "RESHAPE",
            OpKind::Output => "OUTPUT",
            OpKind::Other(s) => s,
        }
    }

    pub fn is_whitelisted(&self) -> bool {
        !matches!(self, OpKind::Other(_))
    }

    fn produces_index(&self) -> bool {
        matches!(self, OpKind::ConstIndex)
    }
}

impl From<String> for OpKind {
    fn from(s: String) -> Self {
        match s.as_str() {
            "INPUT" => OpKind::Input,
            "CONST_INDEX" => OpKind::ConstIndex,
            "CONST_TENSOR" => OpKind::ConstTensor,
            "GATHER" => OpKind::Gather,
            "MUL" => OpKind::Mul,
            "RESHAPE" => OpKind::Reshape,
            "OUTPUT" => OpKind::Output,
            _ => OpKind::Other(s),
        }
    }
}

impl From<OpKind> for String {
    fn from(k: OpKind) -> Self {
        k.as_str().to_owned()
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a constant's data lives on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub path: String,
    /// `"FBLT"` or `"FBTN"`.
    pub format: String,
    /// Which array inside the file.
    pub field: String,
    /// Hex fingerprint of the index graph, for FBLT sidecars.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<Sidecar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: u32,
    pub kind: OpKind,
    pub inputs: Vec<u32>,
    #[serde(default)]
    pub attrs: NodeAttrs,
}

/// A graph input. `shape` is the gatherable `[rows, row_len]` view including
/// the padding row; `logical_shape` is the stack's own layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSignature {
    pub name: String,
    pub shape: Vec<i64>,
    pub logical_shape: Vec<i64>,
}

/// Constant data bound to a `CONST_*` node.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstValue {
    Index(Vec<u32>),
    Tensor { shape: Vec<usize>, data: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpGraph {
    pub version: u32,
    pub inputs: Vec<InputSignature>,
    pub nodes: Vec<OpNode>,
    pub output: u32,
    #[serde(skip)]
    pub constants: BTreeMap<u32, ConstValue>,
}

fn fingerprint_hex(fp: u64) -> String {
    format!("{fp:016x}")
}

/// Lowers an index graph to `INPUT → GATHER (→ MUL) → RESHAPE → OUTPUT`.
///
/// With depth the graph has 9 nodes (two inputs, two index constants, two
/// gathers, one multiply, reshape, output); without depth it has 5.
pub fn lower(g: &IndexGraph, with_depth: bool) -> OpGraph {
    let l = g.layout();
    let d = g.dims();
    let fp = fingerprint_hex(g.fingerprint());
    let pixels = (l.num_cams * l.img_h * l.img_w) as i64;

    let mut inputs = vec![InputSignature {
        name: FEATURES_INPUT.into(),
        shape: vec![pixels + 1, -1],
        logical_shape: vec![l.num_cams as i64, l.img_h as i64, l.img_w as i64, -1],
    }];
    if with_depth {
        inputs.push(InputSignature {
            name: DEPTH_INPUT.into(),
            shape: vec![pixels * l.depth_bins as i64 + 1, 1],
            logical_shape: vec![l.num_cams as i64, l.depth_bins as i64, l.img_h as i64, l.img_w as i64],
        });
    }

    let mut nodes = Vec::new();
    let mut constants = BTreeMap::new();
    let mut push = |kind: OpKind, inputs: Vec<u32>, attrs: NodeAttrs| -> u32 {
        let id = nodes.len() as u32;
        nodes.push(OpNode { id, kind, inputs, attrs });
        id
    };
    let named = |name: &str| NodeAttrs { name: Some(name.into()), ..Default::default() };
    let index_const = |field: &str| NodeAttrs {
        name: Some(field.into()),
        shape: Some(vec![g.num_voxels() as i64]),
        sidecar: Some(Sidecar {
            path: DEFAULT_SIDECAR.into(),
            format: "FBLT".into(),
            field: field.into(),
            fingerprint: Some(fp.clone()),
        }),
        ..Default::default()
    };
    let gather = NodeAttrs { axis: Some(0), ..Default::default() };

    let feat_in = push(OpKind::Input, vec![], named(FEATURES_INPUT));
    let depth_in = with_depth.then(|| push(OpKind::Input, vec![], named(DEPTH_INPUT)));
    let spatial = push(OpKind::ConstIndex, vec![], index_const(SPATIAL_FIELD));
    constants.insert(spatial, ConstValue::Index(g.spatial_index().to_vec()));
    let depth_idx = with_depth.then(|| push(OpKind::ConstIndex, vec![], index_const(DEPTH_FIELD)));
    if let Some(id) = depth_idx {
        constants.insert(id, ConstValue::Index(g.depth_index().to_vec()));
    }
    let mut flat = push(OpKind::Gather, vec![feat_in, spatial], gather.clone());
    if let (Some(depth_in), Some(depth_idx)) = (depth_in, depth_idx) {
        let weights = push(OpKind::Gather, vec![depth_in, depth_idx], gather);
        flat = push(OpKind::Mul, vec![flat, weights], NodeAttrs::default());
    }
    let reshape = NodeAttrs { shape: Some(vec![d.z as i64, d.h as i64, d.w as i64, -1]), ..Default::default() };
    let vol = push(OpKind::Reshape, vec![flat], reshape);
    let output = push(OpKind::Output, vec![vol], NodeAttrs::default());

    OpGraph { version: GRAPH_VERSION, inputs, nodes, output, constants }
}

impl OpGraph {
    pub fn node(&self, id: u32) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Points every FBLT-backed constant at `path`.
    pub fn set_sidecar_path(&mut self, path: &str) {
        for node in &mut self.nodes {
            if let Some(s) = node.attrs.sidecar.as_mut() {
                if s.format == "FBLT" {
                    s.path = path.to_owned();
                }
            }
        }
    }

    /// Fills `CONST_INDEX` nodes from an index graph, checking each node's
    /// recorded fingerprint.
    pub fn bind_constants(&mut self, g: &IndexGraph) -> Result<()> {
        let fp = fingerprint_hex(g.fingerprint());
        for node in &self.nodes {
            if node.kind != OpKind::ConstIndex {
                continue;
            }
            let Some(sidecar) = node.attrs.sidecar.as_ref() else {
                continue;
            };
            if sidecar.format != "FBLT" {
                return Err(Error::format(format!("node {}: unsupported sidecar format {}", node.id, sidecar.format)));
            }
            if let Some(stored) = &sidecar.fingerprint {
                if *stored != fp {
                    let stored = u64::from_str_radix(stored, 16)
                        .map_err(|_| Error::format(format!("node {}: bad fingerprint {stored:?}", node.id)))?;
                    return Err(Error::Fingerprint { stored, expected: g.fingerprint() });
                }
            }
            let data = match sidecar.field.as_str() {
                SPATIAL_FIELD => g.spatial_index().to_vec(),
                DEPTH_FIELD => g.depth_index().to_vec(),
                other => return Err(Error::format(format!("node {}: unknown index field {other:?}", node.id))),
            };
            self.constants.insert(node.id, ConstValue::Index(data));
        }
        Ok(())
    }
}

/// Deterministic pretty-printed JSON, terminated by a newline.
pub fn export_graph(graph: &OpGraph) -> String {
    let mut s = serde_json::to_string_pretty(graph).expect("graph serialization is infallible");
    s.push('\n');
    s
}

/// Parses the JSON form. Constants are left unbound; see
/// [`OpGraph::bind_constants`].
pub fn parse_graph(text: &str) -> Result<OpGraph> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NotWhitelisted { node: u32, kind: String },
    DuplicateId { node: u32 },
    MissingInput { node: u32, input: u32 },
    NotTopological { node: u32, input: u32 },
    Arity { node: u32, expected: usize, found: usize },
    BadOperand { node: u32, reason: String },
    OutputCount { found: usize },
    OutputMismatch { declared: u32 },
    UnknownInput { node: u32, name: String },
    UnboundConstant { node: u32 },
    IndexOutOfBounds { node: u32, position: usize, value: u32, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    NotWhitelisted,
    DuplicateId,
    MissingInput,
    NotTopological,
    Arity,
    BadOperand,
    OutputCount,
    OutputMismatch,
    UnknownInput,
    UnboundConstant,
    IndexOutOfBounds,
}

impl Violation {
    pub fn kind(&self) -> ViolationKind {
        match self {
            Violation::NotWhitelisted { .. } => ViolationKind::NotWhitelisted,
            Violation::DuplicateId { .. } => ViolationKind::DuplicateId,
            Violation::MissingInput { .. } => ViolationKind::MissingInput,
            Violation::NotTopological { .. } => ViolationKind::NotTopological,
            Violation::Arity { .. } => ViolationKind::Arity,
            Violation::BadOperand { .. } => ViolationKind::BadOperand,
            Violation::OutputCount { .. } => ViolationKind::OutputCount,
            Violation::OutputMismatch { .. } => ViolationKind::OutputMismatch,
            Violation::UnknownInput { .. } => ViolationKind::UnknownInput,
            Violation::UnboundConstant { .. } => ViolationKind::UnboundConstant,
            Violation::IndexOutOfBounds { .. } => ViolationKind::IndexOutOfBounds,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotWhitelisted { node, kind } => write!(f, "node {node}: kind {kind} is not a whitelisted primitive"),
            Violation::DuplicateId { node } => write!(f, "node id {node} appears more than once"),
            Violation::MissingInput { node, input } => write!(f, "node {node}: input {input} does not exist"),
            Violation::NotTopological { node, input } => write!(f, "node {node}: input {input} is not defined before it"),
            Violation::Arity { node, expected, found } => write!(f, "node {node}: expected {expected} inputs, found {found}"),
            Violation::BadOperand { node, reason } => write!(f, "node {node}: {reason}"),
            Violation::OutputCount { found } => write!(f, "graph has {found} OUTPUT nodes, expected 1"),
            Violation::OutputMismatch { declared } => write!(f, "declared output {declared} is not the OUTPUT node"),
            Violation::UnknownInput { node, name } => write!(f, "node {node}: no declared input named {name:?}"),
            Violation::UnboundConstant { node } => write!(f, "node {node}: constant has no bound data"),
            Violation::IndexOutOfBounds { node, position, value, limit } => {
                write!(f, "node {node}: index[{position}] = {value} is out of bounds for {limit} rows")
            }
        }
    }
}

/// Checks whitelist conformance, DAG structure and constant bounds.
pub fn validate(graph: &OpGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut position: HashMap<u32, usize> = HashMap::new();
    for (pos, node) in graph.nodes.iter().enumerate() {
        if position.insert(node.id, pos).is_some() {
            out.push(Violation::DuplicateId { node: node.id });
        }
    }
    let kind_of = |id: u32| position.get(&id).map(|&p| &graph.nodes[p].kind);

    for (pos, node) in graph.nodes.iter().enumerate() {
        if !node.kind.is_whitelisted() {
            out.push(Violation::NotWhitelisted { node: node.id, kind: node.kind.to_string() });
        }
        for &input in &node.inputs {
            match position.get(&input) {
                None => out.push(Violation::MissingInput { node: node.id, input }),
                Some(&p) if p >= pos => out.push(Violation::NotTopological { node: node.id, input }),
                Some(_) => {}
            }
        }
        let expected = match node.kind {
            OpKind::Input | OpKind::ConstIndex | OpKind::ConstTensor => Some(0),
            OpKind::Gather | OpKind::Mul => Some(2),
            OpKind::Reshape | OpKind::Output => Some(1),
            OpKind::Other(_) => None,
        };
        if let Some(expected) = expected {
            if node.inputs.len() != expected {
                out.push(Violation::Arity { node: node.id, expected, found: node.inputs.len() });
                continue;
            }
        }
        match node.kind {
            OpKind::Input => {
                let name = node.attrs.name.clone().unwrap_or_default();
                if !graph.inputs.iter().any(|s| s.name == name) {
                    out.push(Violation::UnknownInput { node: node.id, name });
                }
            }
            OpKind::ConstIndex => match graph.constants.get(&node.id) {
                Some(ConstValue::Index(_)) => {}
                Some(ConstValue::Tensor { .. }) => out.push(Violation::BadOperand {
                    node: node.id,
                    reason: "CONST_INDEX is bound to float data".into(),
                }),
                None => out.push(Violation::UnboundConstant { node: node.id }),
            },
            OpKind::ConstTensor => {
                if !matches!(graph.constants.get(&node.id), Some(ConstValue::Tensor { .. })) {
                    out.push(Violation::UnboundConstant { node: node.id });
                }
            }
            OpKind::Gather => {
                let (src, idx) = (node.inputs[0], node.inputs[1]);
                if kind_of(src).is_some_and(OpKind::produces_index) {
                    out.push(Violation::BadOperand { node: node.id, reason: "gather source is an index".into() });
                }
                match kind_of(idx) {
                    Some(k) if k.produces_index() => {
                        if let (Some(limit), Some(ConstValue::Index(data))) =
                            (gather_rows(graph, &position, src), graph.constants.get(&idx))
                        {
                            if let Some((p, &v)) = data.iter().enumerate().find(|(_, &v)| v as usize >= limit) {
                                out.push(Violation::IndexOutOfBounds { node: idx, position: p, value: v, limit });
                            }
                        }
                    }
                    Some(_) => out.push(Violation::BadOperand {
                        node: node.id,
                        reason: "gather index is not a CONST_INDEX".into(),
                    }),
                    None => {}
                }
            }
            OpKind::Mul | OpKind::Reshape | OpKind::Output => {
                if node.inputs.iter().any(|&i| kind_of(i).is_some_and(OpKind::produces_index)) {
                    out.push(Violation::BadOperand { node: node.id, reason: "operand is an index constant".into() });
                }
                if node.kind == OpKind::Reshape && node.attrs.shape.is_none() {
                    out.push(Violation::BadOperand { node: node.id, reason: "RESHAPE without a target shape".into() });
                }
            }
            OpKind::Other(_) => {}
        }
    }

    let outputs: Vec<u32> = graph.nodes.iter().filter(|n| n.kind == OpKind::Output).map(|n| n.id).collect();
    if outputs.len() != 1 {
        out.push(Violation::OutputCount { found: outputs.len() });
    } else if outputs[0] != graph.output {
        out.push(Violation::OutputMismatch { declared: graph.output });
    }
    out
}

/// Row count of a gather source, when it can be known statically.
fn gather_rows(graph: &OpGraph, position: &HashMap<u32, usize>, src: u32) -> Option<usize> {
    let node = &graph.nodes[*position.get(&src)?];
    match node.kind {
        OpKind::Input => {
            let name = node.attrs.name.as_deref()?;
            let sig = graph.inputs.iter().find(|s| s.name == name)?;
            sig.shape.first().and_then(|&r| usize::try_from(r).ok())
        }
        OpKind::ConstTensor => match graph.constants.get(&src)? {
            ConstValue::Tensor { shape, .. } => shape.first().copied(),
            ConstValue::Index(_) => None,
        },
        _ => None,
    }
}

/// Runtime inputs for [`interpret`].
#[derive(Debug, Clone, Copy)]
pub struct GraphInputs<'a> {
    pub features: &'a FeatureStack,
    pub depth: Option<&'a DepthStack>,
}

enum Value<'a> {
    Index(&'a [u32]),
    Tensor { shape: Vec<usize>, data: Cow<'a, [f32]> },
}

impl<'a> Value<'a> {
    fn share(&self) -> Value<'a> {
        match self {
            Value::Index(i) => Value::Index(i),
            Value::Tensor { shape, data } => Value::Tensor { shape: shape.clone(), data: data.clone() },
        }
    }

    fn rows_view(&self) -> Option<(usize, usize)> {
        match self {
            Value::Tensor { shape, data } => {
                let rows = *shape.first()?;
                Some((rows, data.len().checked_div(rows).unwrap_or(0)))
            }
            Value::Index(_) => None,
        }
    }
}

fn matches_declared(declared: &[i64], actual: &[usize]) -> bool {
    declared.len() == actual.len() && declared.iter().zip(actual).all(|(&d, &a)| d < 0 || d as usize == a)
}

/// Executes a graph. Refuses graphs that do not validate.
pub fn interpret(graph: &OpGraph, inputs: GraphInputs<'_>) -> Result<BevVolume> {
    let violations = validate(graph);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::config(format!("graph failed validation: {}", list.join("; "))));
    }

    let mut values: HashMap<u32, Value<'_>> = HashMap::new();
    for node in &graph.nodes {
        let value = match &node.kind {
            OpKind::Input => {
                let name = node.attrs.name.as_deref().unwrap_or_default();
                let sig = graph.inputs.iter().find(|s| s.name == name).expect("validated");
                let (logical, rows, row_len, data) = match name {
                    FEATURES_INPUT => {
                        let f = inputs.features;
                        (f.shape().to_vec(), f.padded_rows(), f.channels(), f.padded())
                    }
                    DEPTH_INPUT => {
                        let d = inputs.depth.ok_or_else(|| Error::arg("graph needs a depth stack"))?;
                        (d.shape().to_vec(), d.padded().len(), 1, d.padded())
                    }
                    other => return Err(Error::arg(format!("no runtime binding for input {other:?}"))),
                };
                if !matches_declared(&sig.shape, &[rows, row_len]) || !matches_declared(&sig.logical_shape, &logical) {
                    return Err(Error::config(format!(
                        "input {name:?} has shape {logical:?}, graph declares {:?}",
                        sig.logical_shape
                    )));
                }
                Value::Tensor { shape: vec![rows, row_len], data: Cow::Borrowed(data) }
            }
            OpKind::ConstIndex => match &graph.constants[&node.id] {
                ConstValue::Index(data) => Value::Index(data),
                ConstValue::Tensor { .. } => unreachable!("validated"),
            },
            OpKind::ConstTensor => match &graph.constants[&node.id] {
                ConstValue::Tensor { shape, data } => Value::Tensor { shape: shape.clone(), data: Cow::Borrowed(data) },
                ConstValue::Index(_) => unreachable!("validated"),
            },
            OpKind::Gather => {
                let (src, idx) = (&values[&node.inputs[0]], &values[&node.inputs[1]]);
                let (Some((rows, row_len)), Value::Index(idx)) = (src.rows_view(), idx) else {
                    return Err(Error::config(format!("node {}: malformed gather operands", node.id)));
                };
                let Value::Tensor { data: src, .. } = src else { unreachable!() };
                let mut out = Vec::with_capacity(idx.len() * row_len);
                for &i in idx.iter() {
                    let i = i as usize;
                    if i >= rows {
                        return Err(Error::config(format!("node {}: index {i} out of {rows} rows", node.id)));
                    }
                    out.extend_from_slice(&src[i * row_len..(i + 1) * row_len]);
                }
                Value::Tensor { shape: vec![idx.len(), row_len], data: Cow::Owned(out) }
            }
            OpKind::Mul => {
                let (a, b) = (&values[&node.inputs[0]], &values[&node.inputs[1]]);
                let (Some((ra, ca)), Some((rb, cb))) = (a.rows_view(), b.rows_view()) else {
                    return Err(Error::config(format!("node {}: MUL operands must be tensors", node.id)));
                };
                let (Value::Tensor { data: a, shape }, Value::Tensor { data: b, .. }) = (a, b) else { unreachable!() };
                if ra != rb || !(cb == 1 || cb == ca) {
                    return Err(Error::config(format!(
                        "node {}: cannot multiply [{ra}, {ca}] by [{rb}, {cb}]",
                        node.id
                    )));
                }
                let mut out = a.to_vec();
                for (r, row) in out.chunks_mut(ca.max(1)).enumerate() {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v *= if cb == 1 { b[r] } else { b[r * cb + c] };
                    }
                }
                Value::Tensor { shape: shape.clone(), data: Cow::Owned(out) }
            }
            OpKind::Reshape => {
                let Some(Value::Tensor { data, .. }) = values.get(&node.inputs[0]).map(Value::share) else {
                    return Err(Error::config(format!("node {}: RESHAPE of an index", node.id)));
                };
                let target = node.attrs.shape.as_deref().expect("validated");
                let shape = resolve_shape(target, data.len())
                    .ok_or_else(|| Error::config(format!("node {}: cannot reshape {} values to {target:?}", node.id, data.len())))?;
                Value::Tensor { shape, data }
            }
            OpKind::Output => {
                let Some(Value::Tensor { shape, data }) = values.get(&node.inputs[0]).map(Value::share) else {
                    return Err(Error::config(format!("node {}: output is not a tensor", node.id)));
                };
                let [z, h, w, c] = shape[..] else {
                    return Err(Error::config(format!("output has rank {}, expected 4", shape.len())));
                };
                return BevVolume::new(GridDims::new(z, h, w), c, data.into_owned());
            }
            OpKind::Other(_) => unreachable!("validated"),
        };
        values.insert(node.id, value);
    }
    Err(Error::config("graph has no reachable OUTPUT"))
}

fn resolve_shape(target: &[i64], len: usize) -> Option<Vec<usize>> {
    let known: usize = target.iter().filter(|&&d| d >= 0).map(|&d| d as usize).product();
    let wildcards = target.iter().filter(|&&d| d < 0).count();
    let fill = match wildcards {
        0 => 1,
        1 if known > 0 && len.is_multiple_of(known) => len / known,
        _ => return None,
    };
    let shape: Vec<usize> = target.iter().map(|&d| if d < 0 { fill } else { d as usize }).collect();
    (shape.iter().product::<usize>() == len).then_some(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::transform;
    use crate::geometry::{CameraModel, DepthBinning, VoxelGrid};
    use crate::indexgraph::build_index_graph;

    const IDENTITY: [[f64; 4]; 4] =
        [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

    fn graph(origin_z: f64) -> IndexGraph {
        let k = [[10.0, 0.0, 4.0], [0.0, 10.0, 3.0], [0.0, 0.0, 1.0]];
        let cam = CameraModel::new(0, k, IDENTITY, 8, 6).unwrap();
        let grid = VoxelGrid::new([-2.0, -2.0, origin_z], [1.0; 3], GridDims::new(2, 4, 4)).unwrap();
        build_index_graph(&grid, &[cam], &DepthBinning::new(1.0, 21.0, 4).unwrap()).unwrap()
    }

    fn stacks() -> (FeatureStack, DepthStack) {
        let f = FeatureStack::new(1, 6, 8, 3, (0..144).map(|i| i as f32 * 0.5 - 7.0).collect()).unwrap();
        let d = DepthStack::new(1, 4, 6, 8, (0..192).map(|i| (i % 9) as f32 / 8.0).collect()).unwrap();
        (f, d)
    }

    fn kinds(g: &OpGraph) -> Vec<OpKind> {
        g.nodes.iter().map(|n| n.kind.clone()).collect()
    }

    #[test]
    fn structure_without_depth() {
        let og = lower(&graph(2.0), false);
        assert_eq!(
            kinds(&og),
            vec![OpKind::Input, OpKind::ConstIndex, OpKind::Gather, OpKind::Reshape, OpKind::Output]
        );
        assert!(validate(&og).is_empty());
    }

    #[test]
    fn structure_with_depth() {
        let og = lower(&graph(2.0), true);
        let k = kinds(&og);
        assert_eq!(k.len(), 9);
        assert_eq!(k.iter().filter(|&k| *k == OpKind::Gather).count(), 2);
        assert_eq!(k.iter().filter(|&k| *k == OpKind::Mul).count(), 1);
        assert!(validate(&og).is_empty());
    }

    #[test]
    fn interpreter_matches_transform() {
        let g = graph(2.0);
        let (f, d) = stacks();
        let with = interpret(&lower(&g, true), GraphInputs { features: &f, depth: Some(&d) }).unwrap();
        assert!(with.bit_eq(&transform(&f, Some(&d), &g).unwrap()));
        let without = interpret(&lower(&g, false), GraphInputs { features: &f, depth: None }).unwrap();
        assert!(without.bit_eq(&transform(&f, None, &g).unwrap()));
    }

    #[test]
    fn empty_graph_interprets_to_zeros() {
        let g = graph(-10.0);
        let (f, d) = stacks();
        let vol = interpret(&lower(&g, true), GraphInputs { features: &f, depth: Some(&d) }).unwrap();
        assert!(vol.as_slice().iter().all(|&v| v.to_bits() == 0));
    }

    #[test]
    fn custom_kind_is_one_violation() {
        let mut og = lower(&graph(2.0), true);
        let mul = og.nodes.iter_mut().find(|n| n.kind == OpKind::Mul).unwrap();
        mul.kind = OpKind::Other("CUSTOM".into());
        let v = validate(&og);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].kind(), ViolationKind::NotWhitelisted);
        let (f, d) = stacks();
        assert!(interpret(&og, GraphInputs { features: &f, depth: Some(&d) }).is_err());
    }

    #[test]
    fn index_past_padding_is_one_violation() {
        let g = graph(2.0);
        let mut og = lower(&g, false);
        let padded_len = g.layout().feature_pad() + 1;
        let Some(ConstValue::Index(idx)) = og.constants.get_mut(&1) else { panic!() };
        idx[3] = padded_len as u32 + 1;
        let v = validate(&og);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(
            v[0],
            Violation::IndexOutOfBounds { node: 1, position: 3, value: padded_len as u32 + 1, limit: padded_len }
        );
    }

    #[test]
    fn structural_violations() {
        let mut og = lower(&graph(2.0), false);
        og.nodes.swap(2, 3);
        let kinds: Vec<_> = validate(&og).iter().map(Violation::kind).collect();
        assert!(kinds.contains(&ViolationKind::NotTopological));

        let mut og = lower(&graph(2.0), false);
        og.nodes.pop();
        assert_eq!(validate(&og).iter().map(Violation::kind).collect::<Vec<_>>(), vec![ViolationKind::OutputCount]);

        let mut og = lower(&graph(2.0), false);
        og.nodes[2].inputs.push(42);
        let kinds: Vec<_> = validate(&og).iter().map(Violation::kind).collect();
        assert_eq!(kinds, vec![ViolationKind::MissingInput, ViolationKind::Arity]);

        let mut og = lower(&graph(2.0), false);
        og.constants.clear();
        assert_eq!(
            validate(&og).iter().map(Violation::kind).collect::<Vec<_>>(),
            vec![ViolationKind::UnboundConstant]
        );
    }

    #[test]
    fn json_round_trip_and_binding() {
        let g = graph(2.0);
        let og = lower(&g, true);
        let text = export_graph(&og);
        assert_eq!(text, export_graph(&lower(&g, true)));
        let mut parsed = parse_graph(&text).unwrap();
        assert!(parsed.constants.is_empty());
        parsed.bind_constants(&g).unwrap();
        assert_eq!(parsed, og);
        assert!(!export_graph(&lower(&g, false)).contains("\"MUL\""));
    }

    #[test]
    fn binding_rejects_other_graphs() {
        let mut parsed = parse_graph(&export_graph(&lower(&graph(2.0), false))).unwrap();
        assert!(matches!(parsed.bind_constants(&graph(3.0)), Err(Error::Fingerprint { .. })));
    }

    #[test]
    fn unknown_kind_survives_json() {
        let mut og = lower(&graph(2.0), false);
        og.nodes[2].kind = OpKind::Other("CUSTOM".into());
        let parsed = parse_graph(&export_graph(&og)).unwrap();
        assert_eq!(parsed.nodes[2].kind, OpKind::Other("CUSTOM".into()));
    }

    #[test]
    fn reshape_wildcard() {
        assert_eq!(resolve_shape(&[2, 3, -1], 12), Some(vec![2, 3, 2]));
        assert_eq!(resolve_shape(&[2, 3, -1], 13), None);
        assert_eq!(resolve_shape(&[2, -1, -1], 12), None);
        assert_eq!(resolve_shape(&[4, 3], 12), Some(vec![4, 3]));
    }
}
