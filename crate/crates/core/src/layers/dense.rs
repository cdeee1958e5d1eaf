use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Dims4, Tensor4};

/// Fully connected layer over the flattened `(c, h, w)` sample, taken in
/// layout order. Weights are `(out_dim, in_dim, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar = f64> {
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T: Scalar> {
    pub grad_x: Tensor4<T>,
    pub grad_weights: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weights: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let d = weights.dims();
        if d.h != 1 || d.w != 1 {
            return Err(Error::Shape(format!("dense weights must be (out, in, 1, 1), got {d}")));
        }
        if bias.len() != d.n {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} outputs",
                bias.len(),
                d.n
            )));
        }
        Ok(Dense { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.dims().c
    }

    pub fn out_dim(&self) -> usize {
        self.weights.dims().n
    }

    fn check_input(&self, x: Dims4) -> Result<()> {
        if x.sample_len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "dense expects {} inputs per sample, got {x}",
                self.in_dim()
            )));
        }
        Ok(())
    }
}

/// Returns `(n, out_dim, 1, 1)`.
pub fn dense_forward<T: Scalar>(x: &Tensor4<T>, layer: &Dense<T>) -> Result<Tensor4<T>> {
    layer.check_input(x.dims())?;
    let n = x.dims().n;
    let (i, o) = (layer.in_dim(), layer.out_dim());
    let mut y = Tensor4::zeros(Dims4::new(n, o, 1, 1))?;
    for row in y.data_mut().chunks_mut(o) {
        row.copy_from_slice(&layer.bias);
    }
    gemm(
        T::one(),
        MatRef::new(x.data(), n, i),
        MatRef::new(layer.weights.data(), o, i).t(),
        T::one(),
        y.data_mut(),
    );
    Ok(y)
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor4<T>,
    layer: &Dense<T>,
    grad_out: &Tensor4<T>,
) -> Result<DenseGrads<T>> {
    layer.check_input(x.dims())?;
    let n = x.dims().n;
    let (i, o) = (layer.in_dim(), layer.out_dim());
    if grad_out.dims() != Dims4::new(n, o, 1, 1) {
        return Err(Error::Shape(format!(
            "dense grad_out is {}, expected ({n}, {o}, 1, 1)",
            grad_out.dims()
        )));
    }
    let go = MatRef::new(grad_out.data(), n, o);
    let mut grad_weights = Tensor4::zeros(layer.weights.dims())?;
    gemm(T::one(), go.t(), MatRef::new(x.data(), n, i), T::zero(), grad_weights.data_mut());
    let mut grad_x = Tensor4::zeros(x.dims())?;
    gemm(T::one(), go, MatRef::new(layer.weights.data(), o, i), T::zero(), grad_x.data_mut());
    let mut grad_bias = vec![T::zero(); o];
    for row in grad_out.data().chunks(o) {
        grad_bias.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    Ok(DenseGrads {
        grad_x,
        grad_weights,
        grad_bias,
    })
}
