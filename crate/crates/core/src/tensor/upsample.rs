use super::{Scalar, Tensor, TensorError};

/// Source sample positions and blend weights along one axis, half-pixel
/// centers: `src = (i + 0.5) * in / out - 0.5`, clamped to `[0, in - 1]`.
fn axis_taps(size_in: usize, size_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = size_in as f64 / size_out as f64;
    (0..size_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (size_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(size_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a single row-major `h x w` plane.
pub fn bilinear_upsample_plane<T: Scalar>(plane: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    debug_assert_eq!(plane.len(), h * w);
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &rows {
        let (fy, gy) = (T::of(fy), T::of(1.0 - fy));
        for &(x0, x1, fx) in &cols {
            let (fx, gx) = (T::of(fx), T::of(1.0 - fx));
            let top = plane[y0 * w + x0] * gx + plane[y0 * w + x1] * fx;
            let bottom = plane[y1 * w + x0] * gx + plane[y1 * w + x1] * fx;
            out.push(top * gy + bottom * fy);
        }
    }
    out
}

/// Resizes every channel of a CHW tensor to `out_h x out_w`.
pub fn bilinear_upsample<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>, TensorError> {
    let (c, h, w) = input.dims3("bilinear_upsample")?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(TensorError::InvalidParams {
            op: "bilinear_upsample",
            reason: format!("cannot resize {h}x{w} to {out_h}x{out_w}"),
        });
    }
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        data.extend(bilinear_upsample_plane(input.channel(ch), h, w, out_h, out_w));
    }
    Ok(Tensor::from_raw(vec![c, out_h, out_w], data))
}
