use std::fmt;
use std::str::FromStr;

use super::{
    adaptive_avgpool2d_backward, adaptive_avgpool2d_forward, avgpool2d_backward, avgpool2d_forward,
    conv2d_backward_input, conv2d_forward, linear_backward_input, linear_forward, maxpool2d_backward,
    maxpool2d_forward, pointwise_backward, pointwise_forward, shape_mismatch, ArgmaxIndices, BatchNorm2d, Conv2d,
    Linear, Pointwise, Pool2d, Scalar, Tensor, TensorError,
};

/// Layer kinds understood by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Relu,
    MaxPool2d,
    AvgPool2d,
    AdaptiveAvgPool2d,
    BatchNorm2d,
    Linear,
    Flatten,
    Sigmoid,
    Add,
}

impl LayerKind {
    pub const ALL: [LayerKind; 10] = [
        LayerKind::Conv2d,
        LayerKind::Relu,
        LayerKind::MaxPool2d,
        LayerKind::AvgPool2d,
        LayerKind::AdaptiveAvgPool2d,
        LayerKind::BatchNorm2d,
        LayerKind::Linear,
        LayerKind::Flatten,
        LayerKind::Sigmoid,
        LayerKind::Add,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::AvgPool2d => "avgpool2d",
            LayerKind::AdaptiveAvgPool2d => "adaptive_avgpool2d",
            LayerKind::BatchNorm2d => "batchnorm2d",
            LayerKind::Linear => "linear",
            LayerKind::Flatten => "flatten",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Add => "add",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| s.to_string())
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Relu,
    MaxPool2d(Pool2d),
    AvgPool2d(Pool2d),
    AdaptiveAvgPool2d {
        out_h: usize,
        out_w: usize,
    },
    BatchNorm2d(BatchNorm2d<T>),
    Linear(Linear<T>),
    Flatten,
    Sigmoid,
    /// Element-wise sum of two equally shaped inputs (residual join).
    Add,
}

fn one<'a, T: ?Sized>(inputs: &[&'a T], op: &'static str) -> Result<&'a T, TensorError> {
    match inputs {
        [x] => Ok(x),
        _ => Err(TensorError::InvalidParams { op, reason: format!("expects 1 input, got {}", inputs.len()) }),
    }
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::AvgPool2d(_) => LayerKind::AvgPool2d,
            Layer::AdaptiveAvgPool2d { .. } => LayerKind::AdaptiveAvgPool2d,
            Layer::BatchNorm2d(_) => LayerKind::BatchNorm2d,
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Sigmoid => LayerKind::Sigmoid,
            Layer::Add => LayerKind::Add,
        }
    }

    pub fn arity(&self) -> usize {
        if matches!(self, Layer::Add) {
            2
        } else {
            1
        }
    }

    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>, TensorError> {
        if let Layer::Add = self {
            return match inputs {
                [a, b] if a == b => Ok(a.to_vec()),
                [a, b] => Err(shape_mismatch("add", format!("both branches shaped {a:?}"), b)),
                _ => Err(TensorError::InvalidParams {
                    op: "add",
                    reason: format!("expects 2 inputs, got {}", inputs.len()),
                }),
            };
        }
        let x = one(inputs, self.kind().as_str())?;
        match self {
            Layer::Conv2d(c) => c.output_shape(x),
            Layer::Relu | Layer::Sigmoid => Ok(x.to_vec()),
            Layer::MaxPool2d(p) => p.output_shape("maxpool2d", x),
            Layer::AvgPool2d(p) => p.output_shape("avgpool2d", x),
            Layer::AdaptiveAvgPool2d { out_h, out_w } => match x {
                [c, h, w] if *h > 0 && *w > 0 && *out_h > 0 && *out_w > 0 => Ok(vec![*c, *out_h, *out_w]),
                _ => Err(shape_mismatch("adaptive_avgpool2d", "a non-empty CHW input", x)),
            },
            Layer::BatchNorm2d(bn) => bn.check_input(x).map(|_| x.to_vec()),
            Layer::Linear(l) => l.output_shape(x),
            Layer::Flatten => Ok(vec![x.iter().product()]),
            Layer::Add => unreachable!(),
        }
    }

    /// Runs the layer. Max pooling also returns its argmax bookkeeping.
    pub fn forward(&self, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, Option<ArgmaxIndices>), TensorError> {
        if let Layer::Add = self {
            let [a, b] = inputs else {
                return Err(TensorError::InvalidParams {
                    op: "add",
                    reason: format!("expects 2 inputs, got {}", inputs.len()),
                });
            };
            self.output_shape(&[a.shape(), b.shape()])?;
            let mut out = (*a).clone();
            out.add_assign(b);
            return Ok((out, None));
        }
        let x = one(inputs, self.kind().as_str())?;
        let y = match self {
            Layer::Conv2d(c) => conv2d_forward(x, c)?,
            Layer::Relu => pointwise_forward(x, Pointwise::Relu)?,
            Layer::Sigmoid => pointwise_forward(x, Pointwise::Sigmoid)?,
            Layer::BatchNorm2d(bn) => pointwise_forward(x, Pointwise::BatchNorm(bn))?,
            Layer::MaxPool2d(p) => {
                let (y, idx) = maxpool2d_forward(x, p)?;
                return Ok((y, Some(idx)));
            }
            Layer::AvgPool2d(p) => avgpool2d_forward(x, p)?,
            Layer::AdaptiveAvgPool2d { out_h, out_w } => adaptive_avgpool2d_forward(x, *out_h, *out_w)?,
            Layer::Linear(l) => linear_forward(x, l)?,
            Layer::Flatten => Tensor::from_raw(vec![x.len()], x.data().to_vec()),
            Layer::Add => unreachable!(),
        };
        Ok((y, None))
    }

    /// Gradients with respect to each input, given the forward inputs and output.
    pub fn backward(
        &self,
        grad_out: &Tensor<T>,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        argmax: Option<&ArgmaxIndices>,
    ) -> Result<Vec<Tensor<T>>, TensorError> {
        if grad_out.shape() != output.shape() {
            return Err(shape_mismatch(
                "backward",
                format!("gradient shaped like the output {:?}", output.shape()),
                grad_out.shape(),
            ));
        }
        if let Layer::Add = self {
            return Ok(vec![grad_out.clone(), grad_out.clone()]);
        }
        let x = one(inputs, self.kind().as_str())?;
        let g = match self {
            Layer::Conv2d(c) => conv2d_backward_input(grad_out, x.shape(), c)?,
            Layer::Relu => pointwise_backward(grad_out, x, Pointwise::Relu)?,
            Layer::Sigmoid => pointwise_backward(grad_out, output, Pointwise::Sigmoid)?,
            Layer::BatchNorm2d(bn) => pointwise_backward(grad_out, x, Pointwise::BatchNorm(bn))?,
            Layer::MaxPool2d(_) => {
                let idx = argmax.ok_or(TensorError::InvalidParams {
                    op: "maxpool2d backward",
                    reason: "missing argmax bookkeeping".into(),
                })?;
                maxpool2d_backward(grad_out, idx)?
            }
            Layer::AvgPool2d(p) => avgpool2d_backward(grad_out, x.shape(), p)?,
            Layer::AdaptiveAvgPool2d { .. } => adaptive_avgpool2d_backward(grad_out, x.shape())?,
            Layer::Linear(l) => linear_backward_input(grad_out, l)?,
            Layer::Flatten => Tensor::from_raw(x.shape().to_vec(), grad_out.data().to_vec()),
            Layer::Add => unreachable!(),
        };
        Ok(vec![g])
    }

    /// Number of output channels for layers that define filters.
    pub fn filter_count(&self) -> Option<usize> {
        match self {
            Layer::Conv2d(c) => Some(c.out_channels()),
            _ => None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let vec = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                weight: c.weight.cast(),
                bias: c.bias.as_ref().map(vec),
                stride: c.stride,
                padding: c.padding,
            }),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool2d(p) => Layer::MaxPool2d(*p),
            Layer::AvgPool2d(p) => Layer::AvgPool2d(*p),
            Layer::AdaptiveAvgPool2d { out_h, out_w } => Layer::AdaptiveAvgPool2d { out_h: *out_h, out_w: *out_w },
            Layer::BatchNorm2d(bn) => Layer::BatchNorm2d(BatchNorm2d { scale: vec(&bn.scale), shift: vec(&bn.shift) }),
            Layer::Linear(l) => Layer::Linear(Linear { weight: l.weight.cast(), bias: l.bias.as_ref().map(vec) }),
            Layer::Flatten => Layer::Flatten,
            Layer::Sigmoid => Layer::Sigmoid,
            Layer::Add => Layer::Add,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in LayerKind::ALL {
            assert_eq!(k.as_str().parse::<LayerKind>().unwrap(), k);
        }
        assert!("dropout".parse::<LayerKind>().is_err());
    }

    #[test]
    fn add_requires_equal_shapes() {
        let l = Layer::<f64>::Add;
        assert!(l.output_shape(&[&[1, 2, 2], &[1, 2, 2]]).is_ok());
        assert!(l.output_shape(&[&[1, 2, 2], &[2, 2, 2]]).is_err());
        assert!(l.output_shape(&[&[1, 2, 2]]).is_err());
    }

    #[test]
    fn flatten_backward_restores_shape() {
        let x = Tensor::new(vec![2, 1, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = Layer::Flatten.forward(&[&x]).unwrap();
        assert_eq!(y.shape(), &[4]);
        let g = Layer::Flatten.backward(&y, &[&x], &y, None).unwrap();
        assert_eq!(g[0], x);
    }
}
