use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub fn relu_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if x.dims() != grad_out.dims() {
        return Err(Error::Shape(format!(
            "relu grad_out {} vs input {}",
            grad_out.dims(),
            x.dims()
        )));
    }
    let mut g = grad_out.clone();
    g.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(g, &v)| {
            if v <= T::zero() {
                *g = T::zero();
            }
        });
    Ok(g)
}
