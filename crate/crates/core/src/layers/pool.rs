use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub window: usize,
    pub stride: usize,
}

impl MaxPool {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("empty pooling window".into()));
        }
        if stride == 0 {
            return Err(Error::Config("pooling stride must be >= 1".into()));
        }
        Ok(MaxPool { window, stride })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 {
            return Err(Error::Config("empty pooling window".into()));
        }
        if h < self.window || w < self.window {
            return Err(Error::Shape(format!(
                "pooling window {} exceeds input {h}x{w}",
                self.window
            )));
        }
        Ok((
            (h - self.window) / self.stride + 1,
            (w - self.window) / self.stride + 1,
        ))
    }
}

/// Forward max-pooling. Returns the output and, per output element, the flat
/// input index it was taken from. Ties go to the first maximum in raster order.
pub fn maxpool_forward<T: Scalar>(x: &Tensor4<T>, pool: &MaxPool) -> Result<(Tensor4<T>, Vec<usize>)> {
    let d = x.dims();
    let (oh, ow) = pool.output_hw(d.h, d.w)?;
    let mut out = Tensor4::zeros(Dims4::new(d.n, d.c, oh, ow))?;
    let mut argmax = vec![0usize; out.len()];
    let src = x.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for i in 0..oh {
            for j in 0..ow {
                let (r0, c0) = (i * pool.stride, j * pool.stride);
                let mut best = base + r0 * d.w + c0;
                for r in r0..r0 + pool.window {
                    for c in c0..c0 + pool.window {
                        let idx = base + r * d.w + c;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                dst[o] = src[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to its cached argmax position.
pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    argmax: &[usize],
    input_dims: Dims4,
) -> Result<Tensor4<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "pool grad_out has {} elements, argmax cache {}",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut gx = Tensor4::zeros(input_dims)?;
    let dst = gx.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        let slot = dst
            .get_mut(idx)
            .ok_or_else(|| Error::Shape(format!("argmax {idx} outside input {input_dims}")))?;
        *slot += g;
    }
    Ok(gx)
}
