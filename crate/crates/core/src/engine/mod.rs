//! Graph execution: full forward passes with masks and captures, resumption
//! from a cached activation, and corpus-level prediction.

mod corpus;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{AblationMask, ModelError, ModelGraph};
use crate::tensor::{ArgmaxIndices, Scalar, Tensor, TensorError};

pub use corpus::{
    predict_corpus, predict_images, write_corpus, Corpus, CorpusEntry, CorpusManifest, PredictionTable, CORPUS_FORMAT,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("input shape {actual:?} does not match the graph input {expected:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("node `{node}`: {source}")]
    Layer {
        node: String,
        #[source]
        source: TensorError,
    },
    #[error("cannot resume from `{node}`: {reason}")]
    InvalidResume { node: String, reason: String },
    #[error("node `{0}` was not captured by the forward pass")]
    NotCaptured(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("image `{image_id}`: {reason}")]
    Image { image_id: String, reason: String },
    #[error("prediction table: {0}")]
    Table(String),
}

/// Result of a full forward pass, including everything a backward sweep needs.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    /// Post-sigmoid output.
    pub prediction: T,
    /// Pre-sigmoid value feeding the output node.
    pub logit: T,
    /// Post-mask activations of the requested nodes.
    pub captures: BTreeMap<String, Tensor<T>>,
    pub(crate) values: Vec<Tensor<T>>,
    pub(crate) argmax: Vec<Option<ArgmaxIndices>>,
    pub(crate) input: Tensor<T>,
    pub(crate) masked: Vec<Vec<usize>>,
}

impl<T: Scalar> ForwardPass<T> {
    /// Post-mask activation of any node in the pass.
    pub fn value(&self, idx: usize) -> &Tensor<T> {
        &self.values[idx]
    }
}

/// Masked channels per node index.
fn masked_channels<T: Scalar>(graph: &ModelGraph<T>, mask: &AblationMask) -> Result<Vec<Vec<usize>>, EngineError> {
    mask.validate(graph)?;
    let mut out = vec![Vec::new(); graph.nodes().len()];
    for f in mask.iter() {
        out[graph.require(&f.node)?].push(f.channel);
    }
    Ok(out)
}

fn zero_channels<T: Scalar>(t: &mut Tensor<T>, channels: &[usize]) {
    for &c in channels {
        t.channel_mut(c).fill(T::zero());
    }
}

fn check_input<T: Scalar>(graph: &ModelGraph<T>, input: &Tensor<T>) -> Result<(), EngineError> {
    if input.shape() != graph.input_shape() {
        return Err(EngineError::InputShape { expected: graph.input_shape().to_vec(), actual: input.shape().to_vec() });
    }
    Ok(())
}

fn eval_node<T: Scalar>(
    graph: &ModelGraph<T>,
    idx: usize,
    input: &Tensor<T>,
    values: &[Option<Tensor<T>>],
) -> Result<(Tensor<T>, Option<ArgmaxIndices>), EngineError> {
    let node = &graph.nodes()[idx];
    let ins: Vec<&Tensor<T>> = graph
        .input_slots(idx)
        .map(|s| match s {
            None => input,
            Some(j) => values[j].as_ref().expect("inputs evaluated before consumers"),
        })
        .collect();
    node.layer.forward(&ins).map_err(|source| EngineError::Layer { node: node.id.clone(), source })
}

/// Index of the last consumer of every node; the output counts as consumed at the end.
fn last_uses<T: Scalar>(graph: &ModelGraph<T>) -> Vec<usize> {
    let n = graph.nodes().len();
    let mut last: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in graph.input_slots(i).flatten() {
            last[j] = last[j].max(i);
        }
    }
    last[graph.output_index()] = n;
    last
}

fn scalar_of<T: Scalar>(t: &Tensor<T>) -> T {
    t.data()[0]
}

/// Runs every node in order. `patch` replaces one node's output (before masking).
fn run<T: Scalar>(
    graph: &ModelGraph<T>,
    input: &Tensor<T>,
    mask: &AblationMask,
    capture: &[&str],
    patch: Option<(usize, &Tensor<T>)>,
) -> Result<ForwardPass<T>, EngineError> {
    check_input(graph, input)?;
    let masked = masked_channels(graph, mask)?;
    let capture_idx: BTreeSet<usize> = capture.iter().map(|id| graph.require(id)).collect::<Result<_, _>>()?;
    let n = graph.nodes().len();
    let mut values: Vec<Option<Tensor<T>>> = vec![None; n];
    let mut argmax = vec![None; n];
    for i in 0..n {
        let (mut y, am) = match patch {
            Some((p, v)) if p == i => {
                if v.shape() != graph.output_shape_of(i) {
                    return Err(EngineError::Layer {
                        node: graph.nodes()[i].id.clone(),
                        source: crate::tensor::shape_mismatch(
                            "patch",
                            format!("{:?}", graph.output_shape_of(i)),
                            v.shape(),
                        ),
                    });
                }
                (v.clone(), None)
            }
            _ => eval_node(graph, i, input, &values)?,
        };
        zero_channels(&mut y, &masked[i]);
        values[i] = Some(y);
        argmax[i] = am;
    }
    let values: Vec<Tensor<T>> = values.into_iter().map(|v| v.expect("all nodes evaluated")).collect();
    let out = graph.output_index();
    let logit = graph.logit_index().map_or_else(|| T::nan(), |l| scalar_of(&values[l]));
    Ok(ForwardPass {
        prediction: scalar_of(&values[out]),
        logit,
        captures: capture_idx.into_iter().map(|i| (graph.nodes()[i].id.clone(), values[i].clone())).collect(),
        values,
        argmax,
        input: input.clone(),
        masked,
    })
}

/// Full forward pass with an ablation mask, capturing the listed nodes.
pub fn forward<T: Scalar>(
    graph: &ModelGraph<T>,
    input: &Tensor<T>,
    mask: &AblationMask,
    capture: &[&str],
) -> Result<ForwardPass<T>, EngineError> {
    run(graph, input, mask, capture, None)
}

/// Forward pass in which `node`'s output is replaced by `activation`, then masked.
/// Works at any node, including ones that do not dominate the output.
pub fn forward_patched<T: Scalar>(
    graph: &ModelGraph<T>,
    input: &Tensor<T>,
    node: &str,
    activation: &Tensor<T>,
    mask: &AblationMask,
) -> Result<ForwardPass<T>, EngineError> {
    let idx = graph.require(node)?;
    run(graph, input, mask, &[], Some((idx, activation)))
}

/// Prediction only; intermediate tensors are released after their last use.
pub fn predict<T: Scalar>(graph: &ModelGraph<T>, input: &Tensor<T>, mask: &AblationMask) -> Result<T, EngineError> {
    check_input(graph, input)?;
    let masked = masked_channels(graph, mask)?;
    let last = last_uses(graph);
    let n = graph.nodes().len();
    let mut values: Vec<Option<Tensor<T>>> = vec![None; n];
    for i in 0..n {
        let (mut y, _) = eval_node(graph, i, input, &values)?;
        zero_channels(&mut y, &masked[i]);
        values[i] = Some(y);
        for j in graph.input_slots(i).flatten() {
            if last[j] == i {
                values[j] = None;
            }
        }
    }
    Ok(scalar_of(values[graph.output_index()].as_ref().expect("output evaluated")))
}

/// Precomputed schedule for resuming evaluation at a node that dominates the output.
#[derive(Debug, Clone)]
pub struct ResumePlan {
    node: String,
    start: usize,
    /// Nodes after `start` that lie on a path to the output, ascending.
    steps: Vec<usize>,
    last: Vec<usize>,
}

impl ResumePlan {
    pub fn new<T: Scalar>(graph: &ModelGraph<T>, node: &str) -> Result<Self, EngineError> {
        let start = graph.require(node)?;
        if !graph.dominates_output(start) {
            return Err(EngineError::InvalidResume {
                node: node.to_string(),
                reason: "the output is reachable without passing through it".into(),
            });
        }
        let needed = graph.output_ancestors();
        let downstream = graph.descendants(start);
        let steps: Vec<usize> =
            (start + 1..graph.nodes().len()).filter(|i| needed[*i] && downstream.contains(i)).collect();
        Ok(Self { node: node.to_string(), start, steps, last: last_uses(graph) })
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    /// Prediction with `mask` applied to `cached` (the unmasked activation at the resume node).
    pub fn run<T: Scalar>(
        &self,
        graph: &ModelGraph<T>,
        cached: &Tensor<T>,
        mask: &AblationMask,
    ) -> Result<T, EngineError> {
        if let Some(f) = mask.iter().find(|f| f.node != self.node) {
            return Err(EngineError::InvalidResume {
                node: self.node.clone(),
                reason: format!("mask entry {f} lies outside the resume node"),
            });
        }
        mask.validate(graph)?;
        if cached.shape() != graph.output_shape_of(self.start) {
            return Err(EngineError::InvalidResume {
                node: self.node.clone(),
                reason: format!(
                    "cached activation shaped {:?}, node produces {:?}",
                    cached.shape(),
                    graph.output_shape_of(self.start)
                ),
            });
        }
        let channels: Vec<usize> = mask.channels_of(&self.node).collect();
        let mut values: Vec<Option<Tensor<T>>> = vec![None; graph.nodes().len()];
        let mut start = cached.clone();
        zero_channels(&mut start, &channels);
        values[self.start] = Some(start);
        // The network input is never read: dominance guarantees every step's inputs are downstream.
        let dummy = Tensor::zeros(&[0]);
        for &i in &self.steps {
            let (y, _) = eval_node(graph, i, &dummy, &values)?;
            values[i] = Some(y);
            for j in graph.input_slots(i).flatten() {
                if self.last[j] == i {
                    values[j] = None;
                }
            }
        }
        let out = graph.output_index();
        Ok(scalar_of(values[out].as_ref().expect("output evaluated")))
    }
}

/// Resumes evaluation at `node` from its cached unmasked activation.
pub fn forward_from<T: Scalar>(
    graph: &ModelGraph<T>,
    node: &str,
    cached: &Tensor<T>,
    mask: &AblationMask,
) -> Result<T, EngineError> {
    ResumePlan::new(graph, node)?.run(graph, cached, mask)
}
