use super::{shape_mismatch, Scalar, Tensor, TensorError};

/// Inference-mode batch norm folded into a per-channel affine map:
/// `scale = gamma / sqrt(var + eps)`, `shift = beta - mean * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(scale: Vec<T>, shift: Vec<T>) -> Result<Self, TensorError> {
        if scale.len() != shift.len() || scale.is_empty() {
            return Err(shape_mismatch("batchnorm2d", format!("shift of length {}", scale.len()), &[shift.len()]));
        }
        Ok(Self { scale, shift })
    }

    /// Folds training-time parameters into the inference affine map.
    pub fn fold(gamma: &[T], beta: &[T], mean: &[T], var: &[T], eps: T) -> Result<Self, TensorError> {
        let n = gamma.len();
        if [beta.len(), mean.len(), var.len()].iter().any(|&l| l != n) {
            return Err(TensorError::InvalidParams {
                op: "batchnorm2d",
                reason: "gamma, beta, mean and var lengths differ".into(),
            });
        }
        let scale: Vec<T> = (0..n).map(|c| gamma[c] / (var[c] + eps).sqrt()).collect();
        let shift = (0..n).map(|c| beta[c] - mean[c] * scale[c]).collect();
        Self::new(scale, shift)
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub(crate) fn check_input(&self, input: &[usize]) -> Result<(), TensorError> {
        match input {
            [c, _, _] if *c == self.channels() => Ok(()),
            _ => Err(shape_mismatch("batchnorm2d", format!("CHW input with {} channels", self.channels()), input)),
        }
    }
}

/// Element-wise layers.
#[derive(Debug, Clone, Copy)]
pub enum Pointwise<'a, T> {
    Relu,
    Sigmoid,
    BatchNorm(&'a BatchNorm2d<T>),
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn pointwise_forward<T: Scalar>(input: &Tensor<T>, kind: Pointwise<'_, T>) -> Result<Tensor<T>, TensorError> {
    let data = match kind {
        Pointwise::Relu => input.data().iter().map(|&v| v.max(T::zero())).collect(),
        Pointwise::Sigmoid => input.data().iter().map(|&v| sigmoid(v)).collect(),
        Pointwise::BatchNorm(bn) => {
            bn.check_input(input.shape())?;
            let plane = input.shape()[1] * input.shape()[2];
            input
                .data()
                .chunks(plane.max(1))
                .enumerate()
                .flat_map(|(c, ch)| ch.iter().map(move |&v| bn.scale[c] * v + bn.shift[c]))
                .collect()
        }
    };
    Ok(Tensor::from_raw(input.shape().to_vec(), data))
}

/// `saved` is the forward input for relu and batch norm, the forward output
/// for sigmoid. The relu derivative at exactly zero is zero.
pub fn pointwise_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    saved: &Tensor<T>,
    kind: Pointwise<'_, T>,
) -> Result<Tensor<T>, TensorError> {
    if grad_out.shape() != saved.shape() {
        return Err(shape_mismatch("pointwise backward", format!("{:?}", saved.shape()), grad_out.shape()));
    }
    let g = grad_out.data();
    let s = saved.data();
    let data = match kind {
        Pointwise::Relu => g.iter().zip(s).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect(),
        Pointwise::Sigmoid => g.iter().zip(s).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
        Pointwise::BatchNorm(bn) => {
            bn.check_input(saved.shape())?;
            let plane = saved.shape()[1] * saved.shape()[2];
            g.chunks(plane.max(1)).enumerate().flat_map(|(c, ch)| ch.iter().map(move |&v| v * bn.scale[c])).collect()
        }
    };
    Ok(Tensor::from_raw(grad_out.shape().to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        assert_eq!(pointwise_forward(&v(&[-1.0, 0.0, 2.0]), Pointwise::Relu).unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(pointwise_forward(&v(&[0.0]), Pointwise::Sigmoid).unwrap().data(), &[0.5]);
        let g = pointwise_backward(&v(&[1.0]), &v(&[0.5]), Pointwise::Sigmoid).unwrap();
        assert_eq!(g.data(), &[0.25]);
    }

    #[test]
    fn identity_batchnorm() {
        let bn = BatchNorm2d::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, -2.0, 3.0, 4.5]).unwrap();
        assert_eq!(pointwise_forward(&x, Pointwise::BatchNorm(&bn)).unwrap(), x);
    }

    #[test]
    fn batchnorm_fold_matches_definition() {
        let bn = BatchNorm2d::fold(&[2.0], &[1.0], &[3.0], &[3.0], 1.0).unwrap();
        assert_eq!(bn.scale, vec![1.0]);
        assert_eq!(bn.shift, vec![-2.0]);
    }

    #[test]
    fn relu_backward_kills_non_positive_inputs() {
        let g = pointwise_backward(&v(&[1.0, 1.0, 1.0]), &v(&[-3.0, -0.1, -2.0]), Pointwise::Relu).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
        let g = pointwise_backward(&v(&[5.0, 5.0]), &v(&[0.0, 1e-9]), Pointwise::Relu).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0]);
    }

    #[test]
    fn batchnorm_channel_mismatch() {
        let bn = BatchNorm2d::new(vec![1.0], vec![0.0]).unwrap();
        assert!(pointwise_forward(&Tensor::<f64>::zeros(&[2, 2, 2]), Pointwise::BatchNorm(&bn)).is_err());
    }

    #[test]
    fn backward_shape_mismatch() {
        assert!(pointwise_backward(&v(&[1.0]), &v(&[1.0, 2.0]), Pointwise::Relu).is_err());
    }
}
