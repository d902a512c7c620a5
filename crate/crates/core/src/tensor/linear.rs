use super::{shape_mismatch, Scalar, Tensor, TensorError};

/// Fully connected layer, weight laid out `(out_features, in_features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Vec<T>>) -> Result<Self, TensorError> {
        let l = Self { weight, bias };
        l.check()?;
        Ok(l)
    }

    pub(crate) fn check(&self) -> Result<(), TensorError> {
        let s = self.weight.shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(shape_mismatch("linear", "a non-empty (out, in) weight", s));
        }
        if let Some(b) = &self.bias {
            if b.len() != s[0] {
                return Err(shape_mismatch("linear bias", format!("[{}]", s[0]), &[b.len()]));
            }
        }
        Ok(())
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, TensorError> {
        if input != [self.in_features()] {
            return Err(shape_mismatch("linear", format!("[{}]", self.in_features()), input));
        }
        Ok(vec![self.out_features()])
    }
}

pub fn linear_forward<T: Scalar>(input: &Tensor<T>, lin: &Linear<T>) -> Result<Tensor<T>, TensorError> {
    let shape = lin.output_shape(input.shape())?;
    let n_in = lin.in_features();
    let x = input.data();
    let out = lin
        .weight
        .data()
        .chunks(n_in)
        .enumerate()
        .map(|(o, row)| {
            let init = lin.bias.as_ref().map_or(T::zero(), |b| b[o]);
            row.iter().zip(x).fold(init, |acc, (&w, &v)| acc + w * v)
        })
        .collect();
    Ok(Tensor::from_raw(shape, out))
}

/// `W^T · grad_out`.
pub fn linear_backward_input<T: Scalar>(grad_out: &Tensor<T>, lin: &Linear<T>) -> Result<Tensor<T>, TensorError> {
    if grad_out.shape() != [lin.out_features()] {
        return Err(shape_mismatch("linear backward", format!("[{}]", lin.out_features()), grad_out.shape()));
    }
    let n_in = lin.in_features();
    let mut grad_in = vec![T::zero(); n_in];
    for (row, &g) in lin.weight.data().chunks(n_in).zip(grad_out.data()) {
        for (gi, &w) in grad_in.iter_mut().zip(row) {
            *gi = *gi + w * g;
        }
    }
    Ok(Tensor::from_raw(vec![n_in], grad_in))
}
