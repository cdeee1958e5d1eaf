//! Dense rank-4 tensors in `(n, c, h, w)` row-major layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{DType, Scalar};

/// Magic bytes opening a tensor dump.
pub const DUMP_MAGIC: &[u8; 4] = b"PRT4";
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims4 { n, c, h, w }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Flat element count, or an error if it does not fit in `usize`.
    pub fn checked_len(&self) -> Result<usize> {
        self.as_array()
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::DimOverflow(self.as_array()))
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per sample (`c * h * w`).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Dims4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// A spatial window of one sample, spanning every channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub sample: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Region {
    pub fn new(sample: usize, rows: Range<usize>, cols: Range<usize>) -> Self {
        Region { sample, rows, cols }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f64> {
    dims: Dims4,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: Dims4) -> Result<Self> {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: Dims4, value: T) -> Result<Self> {
        let len = dims.checked_len()?;
        Ok(Tensor4 {
            dims,
            data: vec![value; len],
        })
    }

    /// Wraps external data, rejecting a wrong length or any NaN/Inf.
    pub fn from_vec(dims: Dims4, data: Vec<T>) -> Result<Self> {
        let len = dims.checked_len()?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "dims {dims} need {len} elements, got {}",
                data.len()
            )));
        }
        if let Some((index, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: v.as_f64(),
            });
        }
        Ok(Tensor4 { dims, data })
    }

    /// I.i.d. normal samples drawn in layout order from `rng`.
    pub fn gaussian(dims: Dims4, mean: f64, stddev: f64, rng: &mut Rng) -> Result<Self> {
        if stddev.is_nan() || stddev < 0.0 {
            return Err(Error::Config(format!("stddev must be >= 0, got {stddev}")));
        }
        let len = dims.checked_len()?;
        let data = (0..len)
            .map(|_| T::from_f64(rng.normal(mean, stddev)))
            .collect();
        Ok(Tensor4 { dims, data })
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let d = self.dims;
        debug_assert!(n < d.n && c < d.c && h < d.h && w < d.w);
        ((n * d.c + c) * d.h + h) * d.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.dims.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.dims.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Same data, new dims of equal length.
    pub fn reshape(self, dims: Dims4) -> Result<Self> {
        if dims.checked_len()? != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {dims}",
                self.dims
            )));
        }
        Ok(Tensor4 {
            dims,
            data: self.data,
        })
    }

    /// Copies samples `range` into a new tensor.
    pub fn slice_samples(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.dims.n || range.start > range.end {
            return Err(Error::OutOfBounds(format!(
                "samples {range:?} of {}",
                self.dims
            )));
        }
        let len = self.dims.sample_len();
        let dims = Dims4::new(range.len(), self.dims.c, self.dims.h, self.dims.w);
        Ok(Tensor4 {
            dims,
            data: self.data[range.start * len..range.end * len].to_vec(),
        })
    }

    /// Gathers the listed samples, in order, into a new tensor.
    pub fn gather_samples(&self, indices: &[usize]) -> Result<Self> {
        let len = self.dims.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.dims.n {
                return Err(Error::OutOfBounds(format!("sample {i} of {}", self.dims)));
            }
            data.extend_from_slice(self.sample(i));
        }
        let dims = Dims4::new(indices.len(), self.dims.c, self.dims.h, self.dims.w);
        Ok(Tensor4 { dims, data })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same(other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!("{} vs {}", self.dims, other.dims)));
        }
        Ok(())
    }

    /// Σ|x| over `region`, across all channels.
    pub fn l1_reduce(&self, region: &Region) -> Result<T> {
        self.reduce_region(region, |v| v.abs())
    }

    /// Σx² over `region`, across all channels.
    pub fn l2sq_reduce(&self, region: &Region) -> Result<T> {
        self.reduce_region(region, |v| v * v)
    }

    fn reduce_region(&self, region: &Region, term: impl Fn(T) -> T) -> Result<T> {
        let d = self.dims;
        if region.sample >= d.n
            || region.rows.end > d.h
            || region.cols.end > d.w
            || region.rows.start > region.rows.end
            || region.cols.start > region.cols.end
        {
            return Err(Error::OutOfBounds(format!("{region:?} in {d}")));
        }
        let plane = d.plane_len();
        let base = region.sample * d.sample_len();
        let mut terms = Vec::with_capacity(d.c * region.rows.len() * region.cols.len());
        for ch in 0..d.c {
            let chan = base + ch * plane;
            for r in region.rows.clone() {
                let row = chan + r * d.w;
                terms.extend(self.data[row + region.cols.start..row + region.cols.end].iter().map(|&v| term(v)));
            }
        }
        Ok(order_independent_sum(&mut terms))
    }

    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.data.len() * T::DTYPE.size());
        buf.extend_from_slice(DUMP_MAGIC);
        for d in self.dims.as_array() {
            let d = u32::try_from(d).map_err(|_| {
                std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32")
            })?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.push(T::DTYPE.tag());
        for &v in &self.data {
            v.write_le(&mut buf);
        }
        out.write_all(&buf)
    }

    /// Parses a dump, converting the stored element type to `T` if needed.
    pub fn read_dump<R: Read>(mut input: R, origin: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(origin, e))?;
        Self::from_dump_bytes(&bytes, origin)
    }

    pub fn from_dump_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(origin, "truncated tensor header"));
        }
        if &bytes[..4] != DUMP_MAGIC {
            return Err(Error::format(origin, "bad tensor magic, expected PRT4"));
        }
        let dim = |i: usize| {
            let o = 4 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
        };
        let dims = Dims4::new(dim(0), dim(1), dim(2), dim(3));
        let dtype = DType::from_tag(bytes[HEADER_LEN - 1])
            .ok_or_else(|| Error::format(origin, format!("unknown dtype tag {}", bytes[HEADER_LEN - 1])))?;
        let len = dims.checked_len()?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != len * dtype.size() {
            return Err(Error::format(
                origin,
                format!(
                    "payload holds {} bytes, dims {dims} with {:?} need {}",
                    payload.len(),
                    dtype,
                    len * dtype.size()
                ),
            ));
        }
        let data: Vec<T> = match dtype {
            DType::F64 => payload
                .chunks_exact(8)
                .map(|b| T::from_f64(f64::read_le(b)))
                .collect(),
            DType::F32 => payload
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::read_le(b) as f64))
                .collect(),
        };
        Tensor4::from_vec(dims, data).map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_dump(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_dump(BufReader::new(file), path)
    }
}

/// Sums after sorting the terms, so the result depends only on the multiset
/// of values and not on their arrangement.
pub(crate) fn order_independent_sum<T: Scalar>(terms: &mut [T]) -> T {
    terms.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    terms.iter().fold(T::zero(), |acc, &v| acc + v)
}
