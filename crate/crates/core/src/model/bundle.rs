//! Model bundle: a directory holding `model.json` (the manifest) and
//! `weights.bin` (concatenated little-endian f32 blobs).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{GraphDef, Metadata, ModelError, ModelGraph, Node};
use crate::tensor::{BatchNorm2d, Conv2d, Layer, LayerKind, Linear, Pool2d, Scalar, Tensor};

pub const BUNDLE_FORMAT: &str = "o2b-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub input_shape: [usize; 3],
    pub output: String,
    #[serde(default)]
    pub targets: Vec<String>,
    pub metadata: Metadata,
    pub blobs: Vec<BlobEntry>,
    pub nodes: Vec<NodeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into `weights.bin`.
    pub offset: u64,
    /// Length in bytes.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: String,
    pub kind: String,
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "is_empty_object")]
    pub params: Value,
    /// Weight role (`weight`, `bias`, `scale`, `shift`) to blob name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub weights: BTreeMap<String, String>,
}

fn is_empty_object(v: &Value) -> bool {
    v.is_null() || v.as_object().is_some_and(|m| m.is_empty())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvParams {
    in_channels: usize,
    out_channels: usize,
    kernel_size: [usize; 2],
    stride: usize,
    padding: usize,
    bias: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    in_features: usize,
    out_features: usize,
    bias: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolParams {
    kernel_size: usize,
    stride: usize,
    #[serde(default)]
    padding: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdaptiveParams {
    output_size: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchNormParams {
    num_features: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

fn read_file(path: &Path) -> Result<Vec<u8>, ModelError> {
    fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

/// Blob table plus the raw bytes of `weights.bin`.
struct BlobStore {
    entries: HashMap<String, BlobEntry>,
    bytes: Option<Vec<u8>>,
}

impl BlobStore {
    fn fetch(&self, node: &str, name: &str, expected: &[usize]) -> Result<Vec<f32>, ModelError> {
        let entry = self.entries.get(name).ok_or_else(|| ModelError::MissingBlob {
            blob: name.to_string(),
            reason: format!("referenced by node `{node}` but not declared in the manifest"),
        })?;
        let bytes = self.bytes.as_ref().ok_or_else(|| ModelError::MissingBlob {
            blob: name.to_string(),
            reason: format!("{WEIGHTS_FILE} is absent"),
        })?;
        if entry.dtype != "f32" {
            return Err(ModelError::Unsupported(format!(
                "blob `{name}` has dtype {}, only f32 is supported",
                entry.dtype
            )));
        }
        let end = entry.offset.checked_add(entry.length).filter(|&e| e <= bytes.len() as u64);
        let Some(end) = end else {
            return Err(ModelError::MissingBlob {
                blob: name.to_string(),
                reason: format!(
                    "bytes {}..{} lie beyond the end of {WEIGHTS_FILE} ({} bytes)",
                    entry.offset,
                    entry.offset.saturating_add(entry.length),
                    bytes.len()
                ),
            });
        };
        let declared = entry.shape.iter().product::<usize>();
        if entry.shape != expected || entry.length != (declared * 4) as u64 {
            let actual = if entry.length == (declared * 4) as u64 {
                entry.shape.clone()
            } else {
                vec![entry.length as usize / 4]
            };
            return Err(ModelError::ShapeMismatch {
                node: node.to_string(),
                blob: name.to_string(),
                expected: expected.to_vec(),
                actual,
            });
        }
        Ok(bytes[entry.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn parse_params<P: DeserializeOwned>(node: &NodeEntry) -> Result<P, ModelError> {
    let v = if node.params.is_null() { Value::Object(Default::default()) } else { node.params.clone() };
    serde_json::from_value(v).map_err(|e| ModelError::InvalidParams { node: node.id.clone(), message: e.to_string() })
}

fn check_roles(node: &NodeEntry, allowed: &[&str]) -> Result<(), ModelError> {
    if let Some(role) = node.weights.keys().find(|r| !allowed.contains(&r.as_str())) {
        return Err(ModelError::InvalidParams {
            node: node.id.clone(),
            message: format!("unexpected weight role `{role}`"),
        });
    }
    Ok(())
}

fn role<'a>(node: &'a NodeEntry, role: &str) -> Result<&'a str, ModelError> {
    node.weights.get(role).map(String::as_str).ok_or_else(|| ModelError::InvalidParams {
        node: node.id.clone(),
        message: format!("missing `{role}` weight reference"),
    })
}

fn tensor(node: &str, data: Vec<f32>, shape: Vec<usize>) -> Result<Tensor<f32>, ModelError> {
    Tensor::new(shape, data).map_err(|e| ModelError::InvalidParams { node: node.to_string(), message: e.to_string() })
}

fn params_err(node: &str) -> impl Fn(crate::tensor::TensorError) -> ModelError + '_ {
    move |e| ModelError::InvalidParams { node: node.to_string(), message: e.to_string() }
}

fn build_layer(node: &NodeEntry, blobs: &BlobStore) -> Result<Layer<f32>, ModelError> {
    let kind: LayerKind =
        node.kind.parse().map_err(|kind| ModelError::UnknownLayerKind { node: node.id.clone(), kind })?;
    let id = node.id.as_str();
    let layer = match kind {
        LayerKind::Conv2d => {
            let p: ConvParams = parse_params(node)?;
            check_roles(node, &["weight", "bias"])?;
            let shape = vec![p.out_channels, p.in_channels, p.kernel_size[0], p.kernel_size[1]];
            let weight = tensor(id, blobs.fetch(id, role(node, "weight")?, &shape)?, shape)?;
            let bias = if p.bias {
                Some(blobs.fetch(id, role(node, "bias")?, &[p.out_channels])?)
            } else {
                check_roles(node, &["weight"])?;
                None
            };
            Layer::Conv2d(Conv2d::new(weight, bias, p.stride, p.padding).map_err(params_err(id))?)
        }
        LayerKind::Linear => {
            let p: LinearParams = parse_params(node)?;
            check_roles(node, &["weight", "bias"])?;
            let shape = vec![p.out_features, p.in_features];
            let weight = tensor(id, blobs.fetch(id, role(node, "weight")?, &shape)?, shape)?;
            let bias = if p.bias {
                Some(blobs.fetch(id, role(node, "bias")?, &[p.out_features])?)
            } else {
                check_roles(node, &["weight"])?;
                None
            };
            Layer::Linear(Linear::new(weight, bias).map_err(params_err(id))?)
        }
        LayerKind::BatchNorm2d => {
            let p: BatchNormParams = parse_params(node)?;
            check_roles(node, &["scale", "shift"])?;
            let scale = blobs.fetch(id, role(node, "scale")?, &[p.num_features])?;
            let shift = blobs.fetch(id, role(node, "shift")?, &[p.num_features])?;
            Layer::BatchNorm2d(BatchNorm2d::new(scale, shift).map_err(params_err(id))?)
        }
        LayerKind::MaxPool2d | LayerKind::AvgPool2d => {
            let p: PoolParams = parse_params(node)?;
            check_roles(node, &[])?;
            let pool = Pool2d::new(p.kernel_size, p.stride, p.padding).map_err(params_err(id))?;
            if kind == LayerKind::MaxPool2d {
                Layer::MaxPool2d(pool)
            } else {
                Layer::AvgPool2d(pool)
            }
        }
        LayerKind::AdaptiveAvgPool2d => {
            let p: AdaptiveParams = parse_params(node)?;
            check_roles(node, &[])?;
            Layer::AdaptiveAvgPool2d { out_h: p.output_size[0], out_w: p.output_size[1] }
        }
        LayerKind::Relu | LayerKind::Flatten | LayerKind::Sigmoid | LayerKind::Add => {
            let _: NoParams = parse_params(node)?;
            check_roles(node, &[])?;
            match kind {
                LayerKind::Relu => Layer::Relu,
                LayerKind::Flatten => Layer::Flatten,
                LayerKind::Sigmoid => Layer::Sigmoid,
                _ => Layer::Add,
            }
        }
    };
    Ok(layer)
}

/// Parses a manifest and its blobs into a graph description without validating it.
pub fn parse_bundle(manifest: &Manifest, weights: Option<Vec<u8>>) -> Result<GraphDef<f32>, ModelError> {
    if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
        return Err(ModelError::Unsupported(format!(
            "format `{}` version {} (expected `{BUNDLE_FORMAT}` version {BUNDLE_VERSION})",
            manifest.format, manifest.version
        )));
    }
    let blobs =
        BlobStore { entries: manifest.blobs.iter().map(|b| (b.name.clone(), b.clone())).collect(), bytes: weights };
    let nodes = manifest
        .nodes
        .iter()
        .map(|n| Ok(Node { id: n.id.clone(), layer: build_layer(n, &blobs)?, inputs: n.inputs.clone() }))
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(GraphDef {
        nodes,
        output: manifest.output.clone(),
        input_shape: manifest.input_shape,
        metadata: manifest.metadata.clone(),
        targets: manifest.targets.clone(),
    })
}

/// Loads and fully validates a model bundle directory.
pub fn load_model(bundle: impl AsRef<Path>) -> Result<ModelGraph<f32>, ModelError> {
    let dir = bundle.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = read_file(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|source| ModelError::Manifest { path: manifest_path.clone(), source })?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let weights = if weights_path.exists() { Some(read_file(&weights_path)?) } else { None };
    ModelGraph::new(parse_bundle(&manifest, weights)?)
}

struct BlobWriter {
    entries: Vec<BlobEntry>,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn push<T: Scalar>(&mut self, name: String, shape: Vec<usize>, data: &[T]) -> String {
        let offset = self.bytes.len() as u64;
        for v in data {
            self.bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        self.entries.push(BlobEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape,
            offset,
            length: self.bytes.len() as u64 - offset,
        });
        name
    }
}

fn to_value<P: Serialize>(p: P) -> Value {
    serde_json::to_value(p).expect("parameter structs serialize")
}

/// Builds the manifest and weight bytes for a graph. Weights are stored as f32.
pub fn encode_bundle<T: Scalar>(graph: &ModelGraph<T>) -> (Manifest, Vec<u8>) {
    let mut w = BlobWriter { entries: Vec::new(), bytes: Vec::new() };
    let nodes = graph
        .nodes()
        .iter()
        .map(|n| {
            let mut weights = BTreeMap::new();
            let params = match &n.layer {
                Layer::Conv2d(c) => {
                    let (kh, kw) = c.kernel();
                    let shape = c.weight.shape().to_vec();
                    weights.insert("weight".into(), w.push(format!("{}.weight", n.id), shape, c.weight.data()));
                    if let Some(b) = &c.bias {
                        weights.insert("bias".into(), w.push(format!("{}.bias", n.id), vec![b.len()], b));
                    }
                    to_value(ConvParams {
                        in_channels: c.in_channels(),
                        out_channels: c.out_channels(),
                        kernel_size: [kh, kw],
                        stride: c.stride,
                        padding: c.padding,
                        bias: c.bias.is_some(),
                    })
                }
                Layer::Linear(l) => {
                    let shape = l.weight.shape().to_vec();
                    weights.insert("weight".into(), w.push(format!("{}.weight", n.id), shape, l.weight.data()));
                    if let Some(b) = &l.bias {
                        weights.insert("bias".into(), w.push(format!("{}.bias", n.id), vec![b.len()], b));
                    }
                    to_value(LinearParams {
                        in_features: l.in_features(),
                        out_features: l.out_features(),
                        bias: l.bias.is_some(),
                    })
                }
                Layer::BatchNorm2d(bn) => {
                    let c = bn.channels();
                    weights.insert("scale".into(), w.push(format!("{}.scale", n.id), vec![c], &bn.scale));
                    weights.insert("shift".into(), w.push(format!("{}.shift", n.id), vec![c], &bn.shift));
                    to_value(BatchNormParams { num_features: c })
                }
                Layer::MaxPool2d(p) | Layer::AvgPool2d(p) => {
                    to_value(PoolParams { kernel_size: p.kernel, stride: p.stride, padding: p.padding })
                }
                Layer::AdaptiveAvgPool2d { out_h, out_w } => to_value(AdaptiveParams { output_size: [*out_h, *out_w] }),
                Layer::Relu | Layer::Flatten | Layer::Sigmoid | Layer::Add => Value::Object(Default::default()),
            };
            NodeEntry {
                id: n.id.clone(),
                kind: n.layer.kind().as_str().into(),
                inputs: n.inputs.clone(),
                params,
                weights,
            }
        })
        .collect();
    let def = graph.def();
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        input_shape: def.input_shape,
        output: def.output.clone(),
        targets: def.targets.clone(),
        metadata: def.metadata.clone(),
        blobs: w.entries,
        nodes,
    };
    (manifest, w.bytes)
}

/// Writes `graph` as a bundle directory, creating it if needed.
pub fn save_model<T: Scalar>(graph: &ModelGraph<T>, bundle: impl AsRef<Path>) -> Result<(), ModelError> {
    let dir = bundle.as_ref();
    let io = |path: PathBuf| move |source| ModelError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let (manifest, bytes) = encode_bundle(graph);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, text).map_err(io(mpath.clone()))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(io(wpath.clone()))?;
    Ok(())
}
