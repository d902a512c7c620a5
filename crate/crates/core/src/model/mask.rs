use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelGraph};
use crate::tensor::Scalar;

/// One channel of one node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FilterId {
    pub node: String,
    pub channel: usize,
}

impl FilterId {
    pub fn new(node: impl Into<String>, channel: usize) -> Self {
        Self { node: node.into(), channel }
    }
}

impl fmt::Display for FilterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.node, self.channel)
    }
}

/// Channels whose post-node activation is forced to zero. Passed per call;
/// never stored in the graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationMask {
    entries: BTreeSet<FilterId>,
}

impl AblationMask {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(node: impl Into<String>, channel: usize) -> Self {
        Self::from_iter([FilterId::new(node, channel)])
    }

    pub fn insert(&mut self, filter: FilterId) -> bool {
        self.entries.insert(filter)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FilterId> {
        self.entries.iter()
    }

    /// Masked channels of `node`, ascending.
    pub fn channels_of<'a>(&'a self, node: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.entries.iter().filter(move |f| f.node == node).map(|f| f.channel)
    }

    /// Distinct nodes touched by the mask.
    pub fn nodes(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|f| f.node.as_str()).collect()
    }

    /// Checks that every entry names an existing node with a channel axis and an in-range channel.
    pub fn validate<T: Scalar>(&self, graph: &ModelGraph<T>) -> Result<(), ModelError> {
        for f in &self.entries {
            let invalid = |reason: String| ModelError::InvalidMask { node: f.node.clone(), channel: f.channel, reason };
            let idx = graph.node_index(&f.node).ok_or_else(|| invalid("node not in graph".into()))?;
            match graph.output_shape_of(idx) {
                [c, _, _] if f.channel < *c => {}
                [c, _, _] => return Err(invalid(format!("node has {c} channels"))),
                s => return Err(invalid(format!("output shape {s:?} has no channel axis"))),
            }
        }
        Ok(())
    }
}

impl FromIterator<FilterId> for AblationMask {
    fn from_iter<I: IntoIterator<Item = FilterId>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

/// A target layer and its filter count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetLayer {
    pub node_id: String,
    pub filters: usize,
    #[serde(skip)]
    pub(crate) index: usize,
}

/// Target layers in topological order, without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TargetLayerSet {
    layers: Vec<TargetLayer>,
}

impl TargetLayerSet {
    /// Any node with a CHW output qualifies; its filter count is the channel count.
    pub fn new<T: Scalar, S: AsRef<str>>(graph: &ModelGraph<T>, ids: &[S]) -> Result<Self, ModelError> {
        let mut layers = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let index = graph.require(id)?;
            let filters = match graph.output_shape_of(index) {
                [c, _, _] => *c,
                s => {
                    return Err(ModelError::InvalidTarget {
                        node: id.to_string(),
                        reason: format!("output shape {s:?} has no channel axis"),
                    })
                }
            };
            layers.push(TargetLayer { node_id: id.to_string(), filters, index });
        }
        layers.sort_by_key(|l| l.index);
        layers.dedup_by_key(|l| l.index);
        Ok(Self { layers })
    }

    /// The targets recorded in the bundle.
    pub fn from_graph<T: Scalar>(graph: &ModelGraph<T>) -> Result<Self, ModelError> {
        Self::new(graph, graph.default_targets())
    }

    pub fn layers(&self) -> &[TargetLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.node_id.as_str())
    }

    pub fn total_filters(&self) -> usize {
        self.layers.iter().map(|l| l.filters).sum()
    }
}

/// Every filter of every target: layers in topological order, channels ascending.
pub fn enumerate_filters<T: Scalar>(
    graph: &ModelGraph<T>,
    targets: &TargetLayerSet,
) -> Result<Vec<FilterId>, ModelError> {
    let mut out = Vec::with_capacity(targets.total_filters());
    for l in targets.layers() {
        if graph.node_index(&l.node_id) != Some(l.index) {
            return Err(ModelError::UnknownNode(l.node_id.clone()));
        }
        out.extend((0..l.filters).map(|c| FilterId::new(l.node_id.clone(), c)));
    }
    Ok(out)
}
