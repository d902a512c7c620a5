//! Network graphs, their on-disk bundle format, target layers and ablation masks.

mod bundle;
mod mask;

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Layer, LayerKind, Scalar};

pub use bundle::{
    load_model, save_model, BlobEntry, Manifest, NodeEntry, BUNDLE_FORMAT, BUNDLE_VERSION, MANIFEST_FILE, WEIGHTS_FILE,
};
pub use mask::{enumerate_filters, AblationMask, FilterId, TargetLayer, TargetLayerSet};

/// Reserved node id that refers to the network input.
pub const INPUT: &str = "input";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported bundle: {0}")]
    Unsupported(String),
    #[error("node `{node}`: unknown layer kind `{kind}`")]
    UnknownLayerKind { node: String, kind: String },
    #[error("node `{node}`: invalid parameters: {message}")]
    InvalidParams { node: String, message: String },
    #[error("missing blob `{blob}`: {reason}")]
    MissingBlob { blob: String, reason: String },
    #[error("node `{node}`: blob `{blob}` expected shape {expected:?}, found {actual:?}")]
    ShapeMismatch { node: String, blob: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("graph contains a cycle through {nodes:?}")]
    Cycle { nodes: Vec<String> },
    #[error("invalid graph:\n{0}")]
    Invalid(ValidationReport),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` cannot be a target layer: {reason}")]
    InvalidTarget { node: String, reason: String },
    #[error("ablation mask entry ({node}, {channel}): {reason}")]
    InvalidMask { node: String, channel: usize, reason: String },
}

/// Descriptive metadata carried by a bundle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub architecture: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub label_semantics: String,
    /// Node after which the original network was cut, for per-layer regressors.
    #[serde(default)]
    pub cut_point: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    pub id: String,
    pub layer: Layer<T>,
    pub inputs: Vec<String>,
}

impl<T> Node<T> {
    pub fn new(id: impl Into<String>, layer: Layer<T>, inputs: &[&str]) -> Self {
        Self { id: id.into(), layer, inputs: inputs.iter().map(|s| s.to_string()).collect() }
    }
}

/// Unvalidated graph description, as parsed from a manifest or assembled in code.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDef<T> {
    pub nodes: Vec<Node<T>>,
    pub output: String,
    pub input_shape: [usize; 3],
    pub metadata: Metadata,
    /// Default target layers recorded with the bundle.
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(String),
    ReservedId(String),
    UnknownInput { node: String, input: String },
    Cycle { nodes: Vec<String> },
    OutOfOrder { node: String, input: String },
    Arity { node: String, expected: usize, actual: usize },
    Params { node: String, message: String },
    AddShapeMismatch { node: String, left: Vec<usize>, right: Vec<usize> },
    Shape { node: String, message: String },
    MissingOutput(String),
    OutputNotSigmoid(String),
    OutputNotScalar { node: String, shape: Vec<usize> },
    BadTarget { node: String, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate node id `{id}`"),
            Violation::ReservedId(id) => write!(f, "node id `{id}` is reserved"),
            Violation::UnknownInput { node, input } => write!(f, "node `{node}` reads unknown input `{input}`"),
            Violation::Cycle { nodes } => write!(f, "cycle through {nodes:?}"),
            Violation::OutOfOrder { node, input } => {
                write!(f, "node `{node}` reads `{input}`, which is listed after it")
            }
            Violation::Arity { node, expected, actual } => {
                write!(f, "node `{node}` takes {expected} input(s), {actual} given")
            }
            Violation::Params { node, message } => write!(f, "node `{node}`: {message}"),
            Violation::AddShapeMismatch { node, left, right } => {
                write!(f, "add node `{node}` joins mismatched shapes {left:?} and {right:?}")
            }
            Violation::Shape { node, message } => write!(f, "node `{node}`: {message}"),
            Violation::MissingOutput(id) => write!(f, "output node `{id}` does not exist"),
            Violation::OutputNotSigmoid(id) => write!(f, "output node `{id}` is not a sigmoid"),
            Violation::OutputNotScalar { node, shape } => {
                write!(f, "output node `{node}` produces shape {shape:?}, expected [1]")
            }
            Violation::BadTarget { node, reason } => write!(f, "target `{node}`: {reason}"),
        }
    }
}

/// Invariant violations found by [`validate_graph`]; empty iff the graph is runnable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

fn check_layer_params<T: Scalar>(layer: &Layer<T>) -> Result<(), String> {
    let r = match layer {
        Layer::Conv2d(c) => c.check(),
        Layer::Linear(l) => l.check(),
        Layer::MaxPool2d(p) => p.check("maxpool2d"),
        Layer::AvgPool2d(p) => p.check("avgpool2d"),
        _ => Ok(()),
    };
    r.map_err(|e| e.to_string())
}

/// Returns the ids left over by Kahn's algorithm, i.e. nodes on or behind a cycle.
fn cyclic_nodes<T>(nodes: &[Node<T>], index: &HashMap<&str, usize>) -> Vec<String> {
    let mut indegree = vec![0usize; nodes.len()];
    let mut consumers = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for inp in &n.inputs {
            if let Some(&j) = index.get(inp.as_str()) {
                indegree[i] += 1;
                consumers[j].push(i);
            }
        }
    }
    let mut queue: VecDeque<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut done = vec![false; nodes.len()];
    while let Some(i) = queue.pop_front() {
        done[i] = true;
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    nodes.iter().zip(&done).filter(|(_, &d)| !d).map(|(n, _)| n.id.clone()).collect()
}

/// Checks every structural and shape invariant of a graph description.
pub fn validate_graph<T: Scalar>(def: &GraphDef<T>) -> ValidationReport {
    analyze(def).0
}

/// Validation plus the inferred output shape of every node (when inferable).
fn analyze<T: Scalar>(def: &GraphDef<T>) -> (ValidationReport, Vec<Option<Vec<usize>>>) {
    let mut v = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, n) in def.nodes.iter().enumerate() {
        if n.id == INPUT {
            v.push(Violation::ReservedId(n.id.clone()));
        } else if index.insert(n.id.as_str(), i).is_some() {
            v.push(Violation::DuplicateId(n.id.clone()));
        }
    }
    for n in &def.nodes {
        for inp in &n.inputs {
            if inp != INPUT && !index.contains_key(inp.as_str()) {
                v.push(Violation::UnknownInput { node: n.id.clone(), input: inp.clone() });
            }
        }
        if n.inputs.len() != n.layer.arity() {
            v.push(Violation::Arity { node: n.id.clone(), expected: n.layer.arity(), actual: n.inputs.len() });
        }
        if let Err(message) = check_layer_params(&n.layer) {
            v.push(Violation::Params { node: n.id.clone(), message });
        }
    }
    let cyclic = cyclic_nodes(&def.nodes, &index);
    if !cyclic.is_empty() {
        v.push(Violation::Cycle { nodes: cyclic });
    } else {
        for (i, n) in def.nodes.iter().enumerate() {
            for inp in &n.inputs {
                if index.get(inp.as_str()).is_some_and(|&j| j >= i) {
                    v.push(Violation::OutOfOrder { node: n.id.clone(), input: inp.clone() });
                }
            }
        }
    }

    let mut shapes: Vec<Option<Vec<usize>>> = vec![None; def.nodes.len()];
    if v.is_empty() {
        let input_shape = def.input_shape.to_vec();
        for (i, n) in def.nodes.iter().enumerate() {
            let ins: Option<Vec<&[usize]>> =
                n.inputs
                    .iter()
                    .map(|inp| {
                        if inp == INPUT {
                            Some(input_shape.as_slice())
                        } else {
                            shapes[index[inp.as_str()]].as_deref()
                        }
                    })
                    .collect();
            let Some(ins) = ins else { continue };
            match n.layer.output_shape(&ins) {
                Ok(s) => shapes[i] = Some(s),
                Err(e) => v.push(match (&n.layer, &ins[..]) {
                    (Layer::Add, [a, b]) => {
                        Violation::AddShapeMismatch { node: n.id.clone(), left: a.to_vec(), right: b.to_vec() }
                    }
                    _ => Violation::Shape { node: n.id.clone(), message: e.to_string() },
                }),
            }
        }
    }

    match index.get(def.output.as_str()) {
        None => v.push(Violation::MissingOutput(def.output.clone())),
        Some(&i) => {
            if def.nodes[i].layer.kind() != LayerKind::Sigmoid {
                v.push(Violation::OutputNotSigmoid(def.output.clone()));
            }
            if let Some(s) = &shapes[i] {
                if s.as_slice() != [1] {
                    v.push(Violation::OutputNotScalar { node: def.output.clone(), shape: s.clone() });
                }
            }
        }
    }
    for t in &def.targets {
        match index.get(t.as_str()) {
            None => v.push(Violation::BadTarget { node: t.clone(), reason: "not in graph".into() }),
            Some(&i) => {
                if let Some(s) = &shapes[i] {
                    if s.len() != 3 {
                        v.push(Violation::BadTarget {
                            node: t.clone(),
                            reason: format!("output shape {s:?} has no channel axis"),
                        });
                    }
                }
            }
        }
    }
    (ValidationReport { violations: v }, shapes)
}

/// A validated, immutable network graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    def: GraphDef<T>,
    index: HashMap<String, usize>,
    shapes: Vec<Vec<usize>>,
    output: usize,
    logit: Option<usize>,
}

impl<T: Scalar> ModelGraph<T> {
    pub fn new(def: GraphDef<T>) -> Result<Self, ModelError> {
        let (report, shapes) = analyze(&def);
        if let Some(Violation::Cycle { nodes }) =
            report.violations.iter().find(|v| matches!(v, Violation::Cycle { .. }))
        {
            return Err(ModelError::Cycle { nodes: nodes.clone() });
        }
        if !report.is_empty() {
            return Err(ModelError::Invalid(report));
        }
        let index: HashMap<String, usize> = def.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        let output = index[&def.output];
        let logit = match def.nodes[output].inputs[0].as_str() {
            INPUT => None,
            id => Some(index[id]),
        };
        Ok(Self {
            shapes: shapes.into_iter().map(|s| s.expect("validated graph has all shapes")).collect(),
            def,
            index,
            output,
            logit,
        })
    }

    pub fn def(&self) -> &GraphDef<T> {
        &self.def
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.def.nodes
    }

    pub fn metadata(&self) -> &Metadata {
        &self.def.metadata
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.def.input_shape
    }

    pub fn default_targets(&self) -> &[String] {
        &self.def.targets
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<usize, ModelError> {
        self.node_index(id).ok_or_else(|| ModelError::UnknownNode(id.to_string()))
    }

    pub fn output_shape_of(&self, idx: usize) -> &[usize] {
        &self.shapes[idx]
    }

    pub fn output_index(&self) -> usize {
        self.output
    }

    /// Node feeding the final sigmoid, `None` if the sigmoid reads the input directly.
    pub fn logit_index(&self) -> Option<usize> {
        self.logit
    }

    /// Position of a node input: `None` for the network input.
    pub(crate) fn input_slots(&self, idx: usize) -> impl Iterator<Item = Option<usize>> + '_ {
        self.def.nodes[idx].inputs.iter().map(|inp| if inp == INPUT { None } else { Some(self.index[inp]) })
    }

    /// Whether every path from the input to the output passes through `idx`.
    pub fn dominates_output(&self, idx: usize) -> bool {
        if idx == self.output {
            return true;
        }
        // Forward reachability from the input with `idx` removed.
        let mut reached = vec![false; self.def.nodes.len()];
        for i in 0..self.def.nodes.len() {
            if i == idx {
                continue;
            }
            reached[i] = self.input_slots(i).any(|s| match s {
                None => true,
                Some(j) => reached[j],
            });
        }
        !reached[self.output]
    }

    /// Indices of nodes the output depends on, ascending.
    pub(crate) fn output_ancestors(&self) -> Vec<bool> {
        let mut needed = vec![false; self.def.nodes.len()];
        needed[self.output] = true;
        for i in (0..=self.output).rev() {
            if needed[i] {
                let slots: Vec<_> = self.input_slots(i).flatten().collect();
                for j in slots {
                    needed[j] = true;
                }
            }
        }
        needed
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            def: GraphDef {
                nodes: self
                    .def
                    .nodes
                    .iter()
                    .map(|n| Node { id: n.id.clone(), layer: n.layer.cast(), inputs: n.inputs.clone() })
                    .collect(),
                output: self.def.output.clone(),
                input_shape: self.def.input_shape,
                metadata: self.def.metadata.clone(),
                targets: self.def.targets.clone(),
            },
            index: self.index.clone(),
            shapes: self.shapes.clone(),
            output: self.output,
            logit: self.logit,
        }
    }

    /// Distinct channel-count-carrying nodes, for diagnostics.
    pub fn conv_nodes(&self) -> impl Iterator<Item = &Node<T>> {
        self.def.nodes.iter().filter(|n| n.layer.kind() == LayerKind::Conv2d)
    }

    /// Ids reachable by following consumers from `idx`.
    pub(crate) fn descendants(&self, idx: usize) -> HashSet<usize> {
        let mut out = HashSet::new();
        out.insert(idx);
        for i in idx + 1..self.def.nodes.len() {
            if self.input_slots(i).flatten().any(|j| out.contains(&j)) {
                out.insert(i);
            }
        }
        out
    }
}
