//! Reverse-mode gradients to a target layer and per-filter Grad-CAM maps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{forward, EngineError, ForwardPass};
use crate::model::{AblationMask, ModelGraph};
use crate::tensor::{bilinear_upsample_plane, shape_mismatch, Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum CamError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("node `{node}` cannot be differentiated: {reason}")]
    InvalidTarget { node: String, reason: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Gradient of the pre-sigmoid logit with respect to the (post-mask) activation of `target`.
/// Masked channels receive zero gradient; residual branches sum.
pub fn backward_to_layer<T: Scalar>(
    graph: &ModelGraph<T>,
    pass: &ForwardPass<T>,
    target: &str,
) -> Result<Tensor<T>, CamError> {
    if !pass.captures.contains_key(target) {
        return Err(EngineError::NotCaptured(target.to_string()).into());
    }
    let t = graph.require(target).map_err(EngineError::from)?;
    let invalid = |reason: &str| CamError::InvalidTarget { node: target.to_string(), reason: reason.to_string() };
    let l = graph.logit_index().ok_or_else(|| invalid("the output reads the network input directly"))?;
    if t > l {
        return Err(invalid("it lies after the logit"));
    }
    let n = graph.nodes().len();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
    grads[l] = Some(Tensor::full(graph.output_shape_of(l), T::one()));
    for i in (t + 1..=l).rev() {
        let Some(mut g) = grads[i].take() else { continue };
        for &c in &pass.masked[i] {
            g.channel_mut(c).fill(T::zero());
        }
        let slots: Vec<Option<usize>> = graph.input_slots(i).collect();
        let ins: Vec<&Tensor<T>> = slots.iter().map(|s| s.map_or(&pass.input, |j| &pass.values[j])).collect();
        let node = &graph.nodes()[i];
        let gin = node
            .layer
            .backward(&g, &ins, &pass.values[i], pass.argmax[i].as_ref())
            .map_err(|source| EngineError::Layer { node: node.id.clone(), source })?;
        for (slot, gi) in slots.into_iter().zip(gin) {
            let Some(j) = slot.filter(|&j| j >= t) else { continue };
            match &mut grads[j] {
                Some(acc) => acc.add_assign(&gi),
                empty => *empty = Some(gi),
            }
        }
    }
    let mut g = grads[t].take().unwrap_or_else(|| Tensor::zeros(graph.output_shape_of(t)));
    for &c in &pass.masked[t] {
        g.channel_mut(c).fill(T::zero());
    }
    Ok(g)
}

/// How a map was normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamStatus {
    /// Min-max scaled to `[0, 1]`.
    Normal,
    /// Constant positive raw map; defined as all ones.
    Constant,
    /// All-zero raw map; left at zero.
    Zero,
}

impl CamStatus {
    pub fn is_degenerate(self) -> bool {
        self != CamStatus::Normal
    }
}

/// Normalized Grad-CAM map of one channel at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCamMap<T> {
    pub image_id: String,
    pub node_id: String,
    pub channel: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `height x width`, values in `[0, 1]`.
    pub map: Vec<T>,
    pub status: CamStatus,
}

impl<T: Scalar> FilterCamMap<T> {
    pub fn at(&self, y: usize, x: usize) -> T {
        self.map[y * self.width + x]
    }
}

/// Channel weights: the spatial mean of each gradient channel.
pub fn channel_weights<T: Scalar>(gradient: &Tensor<T>) -> Result<Vec<T>, TensorError> {
    let (c, h, w) = gradient.dims3("channel_weights")?;
    let n = T::of((h * w) as f64);
    Ok((0..c).map(|ch| gradient.channel(ch).iter().copied().sum::<T>() / n).collect())
}

/// Min-max normalization with the degenerate-map conventions. Input must be non-negative.
pub fn normalize_map<T: Scalar>(values: &mut [T]) -> CamStatus {
    let (lo, hi) = values.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || hi <= T::zero() {
        values.fill(T::zero());
        CamStatus::Zero
    } else if hi == lo {
        values.fill(T::one());
        CamStatus::Constant
    } else {
        let span = hi - lo;
        for v in values.iter_mut() {
            *v = (*v - lo) / span;
        }
        CamStatus::Normal
    }
}

/// `relu(weight * activation)` for one channel, upsampled and normalized.
pub fn filter_cam_plane<T: Scalar>(
    activation: &[T],
    weight: T,
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> (Vec<T>, CamStatus) {
    let raw: Vec<T> = activation.iter().map(|&a| (weight * a).max(T::zero())).collect();
    let mut up = bilinear_upsample_plane(&raw, h, w, out_h, out_w);
    let status = normalize_map(&mut up);
    (up, status)
}

fn check_pair<T: Scalar>(activation: &Tensor<T>, gradient: &Tensor<T>) -> Result<(usize, usize, usize), TensorError> {
    let dims = activation.dims3("per_filter_cam")?;
    if gradient.shape() != activation.shape() {
        return Err(shape_mismatch(
            "per_filter_cam",
            format!("gradient shaped like the activation {:?}", activation.shape()),
            gradient.shape(),
        ));
    }
    Ok(dims)
}

/// One normalized map per channel of the target activation.
pub fn per_filter_cam<T: Scalar>(
    image_id: &str,
    node_id: &str,
    activation: &Tensor<T>,
    gradient: &Tensor<T>,
    (out_h, out_w): (usize, usize),
) -> Result<Vec<FilterCamMap<T>>, TensorError> {
    let (c, h, w) = check_pair(activation, gradient)?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::InvalidParams {
            op: "per_filter_cam",
            reason: format!("output size {out_h}x{out_w}"),
        });
    }
    let alphas = channel_weights(gradient)?;
    Ok((0..c)
        .map(|ch| {
            let (map, status) = filter_cam_plane(activation.channel(ch), alphas[ch], (h, w), (out_h, out_w));
            FilterCamMap {
                image_id: image_id.to_string(),
                node_id: node_id.to_string(),
                channel: ch,
                height: out_h,
                width: out_w,
                map,
                status,
            }
        })
        .collect())
}

/// Unrectified per-channel terms `alpha_c * A_c` at layer resolution.
pub fn weighted_activations<T: Scalar>(activation: &Tensor<T>, gradient: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    check_pair(activation, gradient)?;
    let alphas = channel_weights(gradient)?;
    let plane = activation.len() / alphas.len().max(1);
    let data = activation.data().iter().enumerate().map(|(i, &a)| alphas[i / plane] * a).collect();
    Ok(Tensor::from_raw(activation.shape().to_vec(), data))
}

/// Forward, backward and per-filter maps for one image at one target layer.
/// Maps are produced at the network input resolution.
pub fn image_cams<T: Scalar>(
    graph: &ModelGraph<T>,
    image_id: &str,
    image: &Tensor<T>,
    target: &str,
) -> Result<Vec<FilterCamMap<T>>, CamError> {
    let pass = forward(graph, image, &AblationMask::empty(), &[target])?;
    let grad = backward_to_layer(graph, &pass, target)?;
    let [_, h, w] = graph.input_shape();
    Ok(per_filter_cam(image_id, target, &pass.captures[target], &grad, (h, w))?)
}

/// Sidecar describing a CAM dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamDumpHeader {
    pub image_id: String,
    pub node_id: String,
    pub filters: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: String,
    pub status: Vec<CamStatus>,
}

fn dump_stem(image_id: &str, node_id: &str) -> String {
    format!("{image_id}__{node_id}")
}

/// Writes `maps` (one image, one layer, channels in order) as `<image>__<node>.bin` plus `.json`.
pub fn write_cam_dump(dir: impl AsRef<Path>, maps: &[FilterCamMap<f32>]) -> Result<PathBuf, CamError> {
    let dir = dir.as_ref();
    let first =
        maps.first().ok_or_else(|| CamError::Io { path: dir.to_path_buf(), message: "no maps to dump".into() })?;
    let header = CamDumpHeader {
        image_id: first.image_id.clone(),
        node_id: first.node_id.clone(),
        filters: maps.len(),
        height: first.height,
        width: first.width,
        dtype: "f32".into(),
        status: maps.iter().map(|m| m.status).collect(),
    };
    let bytes: Vec<u8> = maps.iter().flat_map(|m| m.map.iter().flat_map(|v| v.to_le_bytes())).collect();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: std::io::Error| CamError::Io { path, message: e.to_string() }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let stem = dump_stem(&header.image_id, &header.node_id);
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes).map_err(io(&bin))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&header).expect("header serializes") + "\n";
    fs::write(&json, text).map_err(io(&json))?;
    Ok(bin)
}

/// Reads a dump written by [`write_cam_dump`], given the path of its `.bin` file.
pub fn read_cam_dump(bin: impl AsRef<Path>) -> Result<Vec<FilterCamMap<f32>>, CamError> {
    let bin = bin.as_ref();
    let err = |path: &Path, message: String| CamError::Io { path: path.to_path_buf(), message };
    let json = bin.with_extension("json");
    let text = fs::read(&json).map_err(|e| err(&json, e.to_string()))?;
    let h: CamDumpHeader = serde_json::from_slice(&text).map_err(|e| err(&json, e.to_string()))?;
    let bytes = fs::read(bin).map_err(|e| err(bin, e.to_string()))?;
    let plane = h.height * h.width;
    if h.dtype != "f32" || h.status.len() != h.filters || bytes.len() != h.filters * plane * 4 {
        return Err(err(bin, "dump does not match its sidecar".into()));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(values
        .chunks(plane.max(1))
        .take(h.filters)
        .zip(&h.status)
        .enumerate()
        .map(|(channel, (map, &status))| FilterCamMap {
            image_id: h.image_id.clone(),
            node_id: h.node_id.clone(),
            channel,
            height: h.height,
            width: h.width,
            map: map.to_vec(),
            status,
        })
        .collect())
}
