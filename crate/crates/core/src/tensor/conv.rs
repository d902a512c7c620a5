use super::{shape_mismatch, Scalar, Tensor, TensorError};

/// 2-D convolution (cross-correlation) with square stride and padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `(out_channels, in_channels, kernel_h, kernel_w)`.
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Vec<T>>, stride: usize, padding: usize) -> Result<Self, TensorError> {
        let conv = Self { weight, bias, stride, padding };
        conv.check()?;
        Ok(conv)
    }

    pub(crate) fn check(&self) -> Result<(), TensorError> {
        let s = self.weight.shape();
        if s.len() != 4 || s.contains(&0) {
            return Err(shape_mismatch("conv2d", "a non-empty (O, I, KH, KW) kernel", s));
        }
        if self.stride == 0 {
            return Err(TensorError::InvalidParams { op: "conv2d", reason: "stride must be at least 1".into() });
        }
        if let Some(b) = &self.bias {
            if b.len() != s[0] {
                return Err(shape_mismatch("conv2d bias", format!("[{}]", s[0]), &[b.len()]));
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Output shape for a CHW input of the given shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, TensorError> {
        let [c, h, w] = input[..] else {
            return Err(shape_mismatch("conv2d", "a rank-3 CHW input", input));
        };
        if c != self.in_channels() {
            return Err(shape_mismatch("conv2d", format!("{} input channels", self.in_channels()), input));
        }
        let (kh, kw) = self.kernel();
        let oh = out_extent(h, kh, self.stride, self.padding);
        let ow = out_extent(w, kw, self.stride, self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(vec![self.out_channels(), oh, ow]),
            _ => Err(shape_mismatch(
                "conv2d",
                format!("spatial size of at least {kh}x{kw} after padding {}", self.padding),
                input,
            )),
        }
    }
}

/// Standard sliding-window output extent, `None` if the window does not fit.
pub(crate) fn out_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Output positions `o` for which `o * stride + k - padding` lands in `0..size`.
#[inline]
fn valid_range(out: usize, size: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    // o * stride + k >= padding  and  o * stride + k < size + padding
    let lo = if k >= padding { 0 } else { (padding - k).div_ceil(stride) };
    let hi = if size + padding > k { ((size + padding - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, conv: &Conv2d<T>) -> Result<Tensor<T>, TensorError> {
    let out_shape = conv.output_shape(input.shape())?;
    let (cin, h, w) = input.dims3("conv2d")?;
    let (cout, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (kh, kw) = conv.kernel();
    let (s, p) = (conv.stride, conv.padding);
    let x = input.data();
    let wt = conv.weight.data();

    let mut out = vec![T::zero(); cout * oh * ow];
    for (oc, plane) in out.chunks_mut(oh * ow).enumerate() {
        if let Some(b) = &conv.bias {
            plane.fill(b[oc]);
        }
        for ic in 0..cin {
            let xc = &x[ic * h * w..(ic + 1) * h * w];
            for ki in 0..kh {
                let (r0, r1) = valid_range(oh, h, ki, s, p);
                for kj in 0..kw {
                    let wv = wt[((oc * cin + ic) * kh + ki) * kw + kj];
                    let (c0, c1) = valid_range(ow, w, kj, s, p);
                    for orow in r0..r1 {
                        let irow = orow * s + ki - p;
                        let xr = &xc[irow * w..(irow + 1) * w];
                        let pr = &mut plane[orow * ow..(orow + 1) * ow];
                        for ocol in c0..c1 {
                            pr[ocol] = pr[ocol] + wv * xr[ocol * s + kj - p];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

/// Gradient with respect to the convolution input (transposed convolution).
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    conv: &Conv2d<T>,
) -> Result<Tensor<T>, TensorError> {
    let expected = conv.output_shape(input_shape)?;
    if grad_out.shape() != expected.as_slice() {
        return Err(shape_mismatch("conv2d backward", format!("{expected:?}"), grad_out.shape()));
    }
    let (cin, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (cout, oh, ow) = (expected[0], expected[1], expected[2]);
    let (kh, kw) = conv.kernel();
    let (s, p) = (conv.stride, conv.padding);
    let g = grad_out.data();
    let wt = conv.weight.data();

    let mut grad_in = vec![T::zero(); cin * h * w];
    for oc in 0..cout {
        let gp = &g[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..cin {
            let gi = &mut grad_in[ic * h * w..(ic + 1) * h * w];
            for ki in 0..kh {
                let (r0, r1) = valid_range(oh, h, ki, s, p);
                for kj in 0..kw {
                    let wv = wt[((oc * cin + ic) * kh + ki) * kw + kj];
                    let (c0, c1) = valid_range(ow, w, kj, s, p);
                    for orow in r0..r1 {
                        let irow = orow * s + ki - p;
                        for ocol in c0..c1 {
                            let idx = irow * w + ocol * s + kj - p;
                            gi[idx] = gi[idx] + wv * gp[orow * ow + ocol];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(input_shape.to_vec(), grad_in))
}
