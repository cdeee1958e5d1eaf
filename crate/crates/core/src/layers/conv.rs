use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{Dims4, Tensor4};

/// 2-D cross-correlation (no kernel flip) with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Scalar = f64> {
    /// `(out_c, in_c, kh, kw)`
    pub kernels: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    pub grad_x: Tensor4<T>,
    pub grad_kernels: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(kernels: Tensor4<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        if bias.len() != kernels.dims().n {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                kernels.dims().n
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be >= 1".into()));
        }
        Ok(Conv2d {
            kernels,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dims().c
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dims().n
    }

    /// `floor((in + 2 pad - k) / stride) + 1` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let kd = self.kernels.dims();
        conv_output_hw(h, w, kd.h, kd.w, self.stride, self.padding)
    }

    fn geometry(&self, x: Dims4) -> Result<Geometry> {
        if x.c != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                x.c
            )));
        }
        let (oh, ow) = self.output_hw(x.h, x.w)?;
        let kd = self.kernels.dims();
        Ok(Geometry {
            c: x.c,
            h: x.h,
            w: x.w,
            kh: kd.h,
            kw: kd.w,
            oh,
            ow,
            stride: self.stride,
            pad: self.padding,
        })
    }
}

pub fn conv_output_hw(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    let axis = |len: usize, k: usize, name: &str| {
        let padded = len + 2 * pad;
        if k == 0 || padded < k {
            return Err(Error::Shape(format!(
                "kernel {name} {k} does not fit padded input {name} {padded}"
            )));
        }
        Ok((padded - k) / stride + 1)
    };
    Ok((axis(h, kh, "height")?, axis(w, kw, "width")?))
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input row/col hit by output `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let pos = o * self.stride + k;
        if pos < self.pad || pos - self.pad >= len {
            None
        } else {
            Some(pos - self.pad)
        }
    }
}

/// Samples per GEMM. Fixed so that results do not depend on the thread count.
const CHUNK: usize = 16;

/// Unfolds one sample `(c, h, w)` into columns `offset..offset + oh*ow` of a
/// `(c*kh*kw, stride)` row-major matrix.
fn im2col<T: Scalar>(g: &Geometry, sample: &[T], col: &mut [T], stride: usize, offset: usize) {
    let p = g.col_cols();
    for ci in 0..g.c {
        let plane = &sample[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * stride + offset;
                let dst = &mut col[row..row + p];
                for oi in 0..g.oh {
                    let out = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    let Some(ii) = g.src(oi, ki, g.h) else {
                        out.fill(T::zero());
                        continue;
                    };
                    let src_row = &plane[ii * g.w..(ii + 1) * g.w];
                    if g.stride == 1 && g.pad == 0 {
                        out.copy_from_slice(&src_row[kj..kj + g.ow]);
                    } else {
                        for (oj, o) in out.iter_mut().enumerate() {
                            *o = g.src(oj, kj, g.w).map_or(T::zero(), |jj| src_row[jj]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a sample.
fn col2im<T: Scalar>(g: &Geometry, col: &[T], stride: usize, offset: usize, sample: &mut [T]) {
    let p = g.col_cols();
    sample.fill(T::zero());
    for ci in 0..g.c {
        let plane = &mut sample[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * stride + offset;
                let src = &col[row..row + p];
                for oi in 0..g.oh {
                    let Some(ii) = g.src(oi, ki, g.h) else {
                        continue;
                    };
                    let vals = &src[oi * g.ow..(oi + 1) * g.ow];
                    let dst_row = &mut plane[ii * g.w..(ii + 1) * g.w];
                    if g.stride == 1 && g.pad == 0 {
                        for (d, &v) in dst_row[kj..kj + g.ow].iter_mut().zip(vals) {
                            *d += v;
                        }
                    } else {
                        for (oj, &v) in vals.iter().enumerate() {
                            if let Some(jj) = g.src(oj, kj, g.w) {
                                dst_row[jj] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, layer: &Conv2d<T>) -> Result<Tensor4<T>> {
    let g = layer.geometry(x.dims())?;
    let out_c = layer.out_channels();
    let mut out = Tensor4::zeros(Dims4::new(x.dims().n, out_c, g.oh, g.ow))?;
    let k = g.col_rows();
    let p = g.col_cols();
    let weights = MatRef::new(layer.kernels.data(), out_c, k);
    let in_len = x.dims().sample_len();
    out.data_mut()
        .par_chunks_mut(CHUNK * out_c * p)
        .zip(x.data().par_chunks(CHUNK * in_len))
        .for_each(|(dst, src)| {
            let m = src.len() / in_len;
            let mut col = vec![T::zero(); k * m * p];
            for (s, sample) in src.chunks(in_len).enumerate() {
                im2col(&g, sample, &mut col, m * p, s * p);
            }
            let mut prod = vec![T::zero(); out_c * m * p];
            gemm(T::one(), weights, MatRef::new(&col, k, m * p), T::zero(), &mut prod);
            for (o, row) in prod.chunks(m * p).enumerate() {
                let b = layer.bias[o];
                for (s, vals) in row.chunks(p).enumerate() {
                    let d = &mut dst[(s * out_c + o) * p..(s * out_c + o + 1) * p];
                    d.iter_mut().zip(vals).for_each(|(d, &v)| *d = v + b);
                }
            }
        });
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    layer: &Conv2d<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let (grad_x, grad_kernels, grad_bias) = conv2d_backward_impl(x, layer, grad_out, true)?;
    Ok(ConvGrads {
        grad_x: grad_x.expect("requested"),
        grad_kernels,
        grad_bias,
    })
}

/// Backward pass; skips the input gradient when `need_grad_x` is false.
///
/// Parameter gradients are computed per fixed-size chunk of samples and
/// reduced in chunk order, so the result does not depend on the thread count.
#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_backward_impl<T: Scalar>(
    x: &Tensor4<T>,
    layer: &Conv2d<T>,
    grad_out: &Tensor4<T>,
    need_grad_x: bool,
) -> Result<(Option<Tensor4<T>>, Tensor4<T>, Vec<T>)> {
    let g = layer.geometry(x.dims())?;
    let out_c = layer.out_channels();
    let expected = Dims4::new(x.dims().n, out_c, g.oh, g.ow);
    if grad_out.dims() != expected {
        return Err(Error::Shape(format!(
            "conv grad_out is {}, forward output was {expected}",
            grad_out.dims()
        )));
    }
    let k = g.col_rows();
    let p = g.col_cols();
    let in_len = x.dims().sample_len();
    let weights = MatRef::new(layer.kernels.data(), out_c, k);

    let mut grad_x = if need_grad_x {
        Some(Tensor4::zeros(x.dims())?)
    } else {
        None
    };

    let n = x.dims().n;
    let work = |c: usize, gx: Option<&mut [T]>| {
        let first = c * CHUNK;
        let m = CHUNK.min(n - first);
        let mp = m * p;
        let mut col = vec![T::zero(); k * mp];
        let mut go = vec![T::zero(); out_c * mp];
        for s in 0..m {
            im2col(&g, x.sample(first + s), &mut col, mp, s * p);
            for (o, vals) in grad_out.sample(first + s).chunks(p).enumerate() {
                go[o * mp + s * p..o * mp + (s + 1) * p].copy_from_slice(vals);
            }
        }
        let mut gw = vec![T::zero(); out_c * k];
        gemm(T::one(), MatRef::new(&go, out_c, mp), MatRef::new(&col, k, mp).t(), T::zero(), &mut gw);
        let gb: Vec<T> = go.chunks(mp).map(|row| row.iter().copied().sum()).collect();
        if let Some(gx) = gx {
            gemm(T::one(), weights.t(), MatRef::new(&go, out_c, mp), T::zero(), &mut col);
            for (s, sample) in gx.chunks_mut(in_len).enumerate() {
                col2im(&g, &col, mp, s * p, sample);
            }
        }
        (gw, gb)
    };
    let per_chunk: Vec<(Vec<T>, Vec<T>)> = match grad_x.as_mut() {
        Some(gx) => gx
            .data_mut()
            .par_chunks_mut(CHUNK * in_len)
            .enumerate()
            .map(|(c, chunk)| work(c, Some(chunk)))
            .collect(),
        None => (0..n.div_ceil(CHUNK)).into_par_iter().map(|c| work(c, None)).collect(),
    };

    let mut grad_kernels = Tensor4::zeros(layer.kernels.dims())?;
    let mut grad_bias = vec![T::zero(); out_c];
    for (gw, gb) in &per_chunk {
        grad_kernels
            .data_mut()
            .iter_mut()
            .zip(gw)
            .for_each(|(a, &b)| *a += b);
        grad_bias.iter_mut().zip(gb).for_each(|(a, &b)| *a += b);
    }
    Ok((grad_x, grad_kernels, grad_bias))
}
