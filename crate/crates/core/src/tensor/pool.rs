use super::conv::out_extent;
use super::{shape_mismatch, Scalar, Tensor, TensorError};

/// Square pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self, TensorError> {
        let p = Self { kernel, stride, padding };
        p.check("pool2d")?;
        Ok(p)
    }

    pub(crate) fn check(&self, op: &'static str) -> Result<(), TensorError> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(TensorError::InvalidParams {
                op,
                reason: format!("degenerate window: kernel {} stride {}", self.kernel, self.stride),
            });
        }
        if 2 * self.padding > self.kernel {
            return Err(TensorError::InvalidParams {
                op,
                reason: format!("padding {} exceeds half the window {}", self.padding, self.kernel),
            });
        }
        Ok(())
    }

    pub fn output_shape(&self, op: &'static str, input: &[usize]) -> Result<Vec<usize>, TensorError> {
        self.check(op)?;
        let [c, h, w] = input[..] else {
            return Err(shape_mismatch(op, "a rank-3 CHW input", input));
        };
        match (
            out_extent(h, self.kernel, self.stride, self.padding),
            out_extent(w, self.kernel, self.stride, self.padding),
        ) {
            (Some(oh), Some(ow)) => Ok(vec![c, oh, ow]),
            _ => Err(shape_mismatch(op, format!("spatial size of at least {}", self.kernel), input)),
        }
    }

    /// In-bounds input rows (or columns) covered by output position `o`.
    #[inline]
    fn span(&self, o: usize, size: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.padding as isize;
        let end = start + self.kernel as isize;
        (start.max(0) as usize, (end.max(0) as usize).min(size))
    }
}

/// Flat input index of the winning element for every max-pool output cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxIndices {
    pub input_shape: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Max pooling. Ties go to the smallest row-major index in the window.
pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    pool: &Pool2d,
) -> Result<(Tensor<T>, ArgmaxIndices), TensorError> {
    let out_shape = pool.output_shape("maxpool2d", input.shape())?;
    let (c, h, w) = input.dims3("maxpool2d")?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            let (y0, y1) = pool.span(oy, h);
            for ox in 0..ow {
                let (x0, x1) = pool.span(ox, w);
                let mut best = base + y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * w + ix;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                indices.push(best);
            }
        }
    }
    Ok((Tensor::from_raw(out_shape, out), ArgmaxIndices { input_shape: input.shape().to_vec(), indices }))
}

/// Routes each output gradient to its saved argmax position.
pub fn maxpool2d_backward<T: Scalar>(grad_out: &Tensor<T>, argmax: &ArgmaxIndices) -> Result<Tensor<T>, TensorError> {
    if grad_out.len() != argmax.indices.len() {
        return Err(shape_mismatch(
            "maxpool2d backward",
            format!("{} gradient elements", argmax.indices.len()),
            grad_out.shape(),
        ));
    }
    let n: usize = argmax.input_shape.iter().product();
    let mut grad_in = vec![T::zero(); n];
    for (&idx, &g) in argmax.indices.iter().zip(grad_out.data()) {
        let slot = grad_in.get_mut(idx).ok_or(TensorError::IndexOutOfRange {
            op: "maxpool2d backward",
            index: idx,
            len: n,
        })?;
        *slot = *slot + g;
    }
    Ok(Tensor::from_raw(argmax.input_shape.clone(), grad_in))
}

/// Average pooling; padded cells count towards the divisor.
pub fn avgpool2d_forward<T: Scalar>(input: &Tensor<T>, pool: &Pool2d) -> Result<Tensor<T>, TensorError> {
    let out_shape = pool.output_shape("avgpool2d", input.shape())?;
    let (c, h, w) = input.dims3("avgpool2d")?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let div = T::of((pool.kernel * pool.kernel) as f64);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            let (y0, y1) = pool.span(oy, h);
            for ox in 0..ow {
                let (x0, x1) = pool.span(ox, w);
                let mut acc = T::zero();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        acc = acc + x[base + iy * w + ix];
                    }
                }
                out.push(acc / div);
            }
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

pub fn avgpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    pool: &Pool2d,
) -> Result<Tensor<T>, TensorError> {
    let out_shape = pool.output_shape("avgpool2d backward", input_shape)?;
    if grad_out.shape() != out_shape.as_slice() {
        return Err(shape_mismatch("avgpool2d backward", format!("{out_shape:?}"), grad_out.shape()));
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let div = T::of((pool.kernel * pool.kernel) as f64);
    let g = grad_out.data();
    let mut grad_in = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            let (y0, y1) = pool.span(oy, h);
            for ox in 0..ow {
                let (x0, x1) = pool.span(ox, w);
                let share = g[(ch * oh + oy) * ow + ox] / div;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * w + ix;
                        grad_in[idx] = grad_in[idx] + share;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(input_shape.to_vec(), grad_in))
}

/// Bin `[floor(o*n/out), ceil((o+1)*n/out))`, the usual adaptive pooling rule.
#[inline]
fn adaptive_bin(o: usize, out: usize, size: usize) -> (usize, usize) {
    let start = o * size / out;
    let end = ((o + 1) * size).div_ceil(out);
    (start, end)
}

pub fn adaptive_avgpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>, TensorError> {
    let (c, h, w) = input.dims3("adaptive_avgpool2d")?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(TensorError::InvalidParams {
            op: "adaptive_avgpool2d",
            reason: format!("cannot pool {h}x{w} to {out_h}x{out_w}"),
        });
    }
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..out_h {
            let (y0, y1) = adaptive_bin(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1) = adaptive_bin(ox, out_w, w);
                let mut acc = T::zero();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        acc = acc + x[base + iy * w + ix];
                    }
                }
                out.push(acc / T::of(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, out_h, out_w], out))
}

pub fn adaptive_avgpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>, TensorError> {
    let (c, out_h, out_w) = grad_out.dims3("adaptive_avgpool2d backward")?;
    let [ic, h, w] = input_shape[..] else {
        return Err(shape_mismatch("adaptive_avgpool2d backward", "a rank-3 input shape", input_shape));
    };
    if ic != c {
        return Err(shape_mismatch("adaptive_avgpool2d backward", format!("{c} channels"), input_shape));
    }
    let g = grad_out.data();
    let mut grad_in = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..out_h {
            let (y0, y1) = adaptive_bin(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1) = adaptive_bin(ox, out_w, w);
                let share = g[(ch * out_h + oy) * out_w + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * w + ix;
                        grad_in[idx] = grad_in[idx] + share;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(input_shape.to_vec(), grad_in))
}
