//! MNIST IDX files and the rotated / translated variants built from them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Dims4, Tensor4};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const DIGIT_SIZE: usize = 28;
pub const TRANSLATION_CANVAS: usize = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    /// `(n, 1, h, w)` with pixels in `[0, 1]`.
    pub images: Tensor4<f32>,
    pub labels: Vec<u8>,
}

impl MnistSet {
    pub fn new(images: Tensor4<f32>, labels: Vec<u8>) -> Result<Self> {
        if images.dims().n != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.dims().n,
                labels.len()
            )));
        }
        if images.dims().c != 1 {
            return Err(Error::Shape(format!("expected one channel, got {}", images.dims())));
        }
        Ok(MnistSet { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> (usize, usize) {
        (self.images.dims().h, self.images.dims().w)
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// First `n` samples (or all if fewer).
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        MnistSet::new(self.images.slice_samples(0..n)?, self.labels[..n].to_vec())
    }

    pub fn plane(&self, i: usize) -> &[f32] {
        self.images.sample(i)
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    let gz = path.extension().is_some_and(|e| e == "gz");
    let res = if gz {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut bytes)
    } else {
        BufReader::new(file).read_to_end(&mut bytes)
    };
    res.map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], word: usize) -> u32 {
    u32::from_be_bytes(bytes[4 * word..4 * word + 4].try_into().expect("4 bytes"))
}

/// Decodes an IDX3 image file into `(n, 1, rows, cols)` scaled by 1/255.
pub fn decode_idx_images(bytes: &[u8], origin: &Path) -> Result<Tensor4<f32>> {
    if bytes.len() >= 4 && be_u32(bytes, 0) != IMAGE_MAGIC {
        let magic = be_u32(bytes, 0);
        return Err(Error::format(
            origin,
            format!("bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x} for images"),
        ));
    }
    if bytes.len() < 16 {
        return Err(Error::format(origin, "truncated IDX image header"));
    }
    let (n, rows, cols) = (be_u32(bytes, 1) as usize, be_u32(bytes, 2) as usize, be_u32(bytes, 3) as usize);
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(origin, "image count times size overflows"))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::format(
            origin,
            format!("truncated payload: header promises {need} pixel bytes, found {}", payload.len()),
        ));
    }
    let data = payload[..need].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor4::from_vec(Dims4::new(n, 1, rows, cols), data)
}

pub fn decode_idx_labels(bytes: &[u8], origin: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(Error::format(origin, "truncated IDX label header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            origin,
            format!("bad magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x} for labels"),
        ));
    }
    let n = be_u32(bytes, 1) as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::format(
            origin,
            format!("truncated payload: header promises {n} labels, found {}", payload.len()),
        ));
    }
    Ok(payload[..n].to_vec())
}

/// Reads a pair of IDX files (optionally gzip-compressed, by `.gz` suffix).
pub fn parse_idx(images_path: &Path, labels_path: &Path) -> Result<MnistSet> {
    let images = decode_idx_images(&read_all(images_path)?, images_path)?;
    let labels = decode_idx_labels(&read_all(labels_path)?, labels_path)?;
    if images.dims().n != labels.len() {
        return Err(Error::format(
            labels_path,
            format!(
                "count mismatch: {} images in {} but {} labels",
                images.dims().n,
                images_path.display(),
                labels.len()
            ),
        ));
    }
    MnistSet::new(images, labels)
}

/// Encodes images as IDX3, mapping `v` to `round(255 v)`.
pub fn encode_idx_images(images: &Tensor4<f32>) -> Vec<u8> {
    let d = images.dims();
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGE_MAGIC, d.n as u32, d.h as u32, d.w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// IDX1 label file: magic, count, then one byte per label.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rotates a square-or-rectangular plane about its center by `angle_deg`
/// (counter-clockwise on screen), using inverse mapping with bilinear
/// interpolation and a zero background.
pub fn rotate_image(img: &[f32], h: usize, w: usize, angle_deg: f64) -> Vec<f32> {
    assert_eq!(img.len(), h * w, "plane size mismatch");
    if angle_deg == 0.0 {
        return img.to_vec();
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            // Inverse of a screen-space CCW rotation (rows grow downward).
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            out[r * w + c] = bilinear(img, h, w, sy, sx);
        }
    }
    out
}

/// Shifts a plane by a fractional `(dy, dx)` pixel offset, zero-filled.
pub fn shift_image(img: &[f32], h: usize, w: usize, dy: f64, dx: f64) -> Vec<f32> {
    assert_eq!(img.len(), h * w, "plane size mismatch");
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = bilinear(img, h, w, r as f64 - dy, c as f64 - dx);
        }
    }
    out
}

fn bilinear(img: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let px = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
            0.0
        } else {
            img[r as usize * w + c as usize] as f64
        }
    };
    let v = (1.0 - fy) * ((1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1.0))
        + fy * ((1.0 - fx) * px(y0 + 1.0, x0) + fx * px(y0 + 1.0, x0 + 1.0));
    v as f32
}

/// Copies a `h x w` digit onto a zero `canvas x canvas` plane at `(row, col)`.
pub fn translate_image(
    img: &[f32],
    h: usize,
    w: usize,
    canvas: usize,
    offset: (usize, usize),
) -> Result<Vec<f32>> {
    assert_eq!(img.len(), h * w, "plane size mismatch");
    if canvas < h || canvas < w || offset.0 > canvas - h || offset.1 > canvas - w {
        return Err(Error::Config(format!(
            "offset {offset:?} places a {h}x{w} digit outside a {canvas}x{canvas} canvas"
        )));
    }
    let mut out = vec![0.0f32; canvas * canvas];
    for r in 0..h {
        let dst = (offset.0 + r) * canvas + offset.1;
        out[dst..dst + w].copy_from_slice(&img[r * w..(r + 1) * w]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformSpec {
    /// Angle drawn from `U[-max_degrees, max_degrees]`.
    Rotation { max_degrees: f64 },
    /// Digit placed uniformly over all integer offsets of the canvas.
    Translation { canvas: usize },
}

impl TransformSpec {
    pub fn rotation() -> Self {
        TransformSpec::Rotation { max_degrees: 90.0 }
    }

    pub fn translation() -> Self {
        TransformSpec::Translation {
            canvas: TRANSLATION_CANVAS,
        }
    }

    pub fn output_side(&self, h: usize, w: usize) -> (usize, usize) {
        match *self {
            TransformSpec::Rotation { .. } => (h, w),
            TransformSpec::Translation { canvas } => (canvas, canvas),
        }
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        match *self {
            TransformSpec::Rotation { max_degrees } if !(0.0..=90.0).contains(&max_degrees) => Err(
                Error::Config(format!("rotation range {max_degrees} outside [0, 90] degrees")),
            ),
            TransformSpec::Translation { canvas } if canvas < h || canvas < w => Err(Error::Config(
                format!("canvas {canvas} smaller than {h}x{w} digits"),
            )),
            _ => Ok(()),
        }
    }
}

/// What was drawn for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Distortion {
    Angle(f64),
    Offset(usize, usize),
}

/// One transformed copy of every image. Image `i` draws from
/// `Rng::new(seed ^ i)`, so the result is independent of thread count.
pub fn make_distorted_set(set: &MnistSet, spec: &TransformSpec, seed: u64) -> Result<(MnistSet, Vec<Distortion>)> {
    let (h, w) = set.side();
    spec.validate(h, w)?;
    let (oh, ow) = spec.output_side(h, w);
    let root = Rng::new(seed);
    let planes: Vec<(Vec<f32>, Distortion)> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = root.derive(i as u64);
            let img = set.plane(i);
            match *spec {
                TransformSpec::Rotation { max_degrees } => {
                    let angle = rng.uniform(-max_degrees, max_degrees);
                    (rotate_image(img, h, w, angle), Distortion::Angle(angle))
                }
                TransformSpec::Translation { canvas } => {
                    let r = rng.below(canvas - h + 1);
                    let c = rng.below(canvas - w + 1);
                    let plane = translate_image(img, h, w, canvas, (r, c)).expect("offset drawn in range");
                    (plane, Distortion::Offset(r, c))
                }
            }
        })
        .collect();
    let mut data = Vec::with_capacity(set.len() * oh * ow);
    let mut drawn = Vec::with_capacity(set.len());
    for (plane, d) in planes {
        data.extend_from_slice(&plane);
        drawn.push(d);
    }
    let images = Tensor4::from_vec(Dims4::new(set.len(), 1, oh, ow), data)?;
    Ok((MnistSet::new(images, set.labels.clone())?, drawn))
}

/// Writes `<stem>.prt4` and `<stem>-labels.idx1` into `dir`.
pub fn save_set(set: &MnistSet, dir: &Path, stem: &str) -> Result<()> {
    set.images.save(&dir.join(format!("{stem}.prt4")))?;
    write_bytes(&dir.join(format!("{stem}-labels.idx1")), &encode_idx_labels(&set.labels))
}

pub fn load_set(dir: &Path, stem: &str) -> Result<MnistSet> {
    let images = Tensor4::<f32>::load(&dir.join(format!("{stem}.prt4")))?;
    let lpath = dir.join(format!("{stem}-labels.idx1"));
    let labels = decode_idx_labels(&read_all(&lpath)?, &lpath)?;
    if labels.len() != images.dims().n {
        return Err(Error::format(
            &lpath,
            format!("{} labels for {} images", labels.len(), images.dims().n),
        ));
    }
    MnistSet::new(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(h: usize, w: usize) -> Vec<f32> {
        let mut img = vec![0.0; h * w];
        for (r, c) in [(13, 13), (13, 14), (14, 13), (14, 14)] {
            img[r * w + c] = 1.0;
        }
        img
    }

    #[test]
    fn idx_roundtrip_bit_exact() {
        let raw: Vec<u8> = (0..2 * 9).map(|i| (i * 13 % 256) as u8).collect();
        let mut file = Vec::new();
        for v in [IMAGE_MAGIC, 2, 3, 3] {
            file.extend_from_slice(&v.to_be_bytes());
        }
        file.extend_from_slice(&raw);
        let imgs = decode_idx_images(&file, Path::new("mem")).unwrap();
        assert_eq!(imgs.dims(), Dims4::new(2, 1, 3, 3));
        assert_eq!(encode_idx_images(&imgs), file);

        let labels = encode_idx_labels(&[7, 0]);
        assert_eq!(decode_idx_labels(&labels, Path::new("mem")).unwrap(), vec![7, 0]);
    }

    #[test]
    fn idx_errors() {
        let p = Path::new("mem");
        let labels = encode_idx_labels(&[1, 2, 3]);
        let err = decode_idx_images(&labels, p).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        assert!(decode_idx_labels(&labels[..9], p).unwrap_err().to_string().contains("truncated"));
        let mut imgs = Vec::new();
        for v in [IMAGE_MAGIC, 1, 2, 2] {
            imgs.extend_from_slice(&v.to_be_bytes());
        }
        imgs.extend_from_slice(&[0, 0, 0]);
        assert!(decode_idx_images(&imgs, p).is_err());
    }

    #[test]
    fn rotation_zero_is_identity() {
        let img: Vec<f32> = (0..28 * 28).map(|i| (i % 17) as f32 / 17.0).collect();
        assert_eq!(rotate_image(&img, 28, 28, 0.0), img);
    }

    #[test]
    fn rotation_there_and_back() {
        let img = blob(28, 28);
        let back = rotate_image(&rotate_image(&img, 28, 28, 90.0), 28, 28, -90.0);
        for (a, b) in img.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_direction_is_counter_clockwise() {
        // A pixel right of center moves above center after +90 degrees.
        let mut img = vec![0.0; 5 * 5];
        img[2 * 5 + 4] = 1.0;
        let r = rotate_image(&img, 5, 5, 90.0);
        assert!((r[2] - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn translation_copies_verbatim() {
        let img: Vec<f32> = (0..28 * 28).map(|i| ((i * 7) % 255) as f32 / 255.0).collect();
        let centered = translate_image(&img, 28, 28, 42, (7, 7)).unwrap();
        assert_eq!(centered[7 * 42 + 7], img[0]);
        assert_eq!(centered[34 * 42 + 34], img[27 * 28 + 27]);
        let corner = translate_image(&img, 28, 28, 42, (0, 0)).unwrap();
        assert!(corner[28 * 42..].iter().all(|&v| v == 0.0));
        assert!((0..28).all(|r| corner[r * 42 + 28..r * 42 + 42].iter().all(|&v| v == 0.0)));
        let s_in: f64 = img.iter().map(|&v| v as f64).sum();
        let s_out: f64 = corner.iter().map(|&v| v as f64).sum();
        assert_eq!(s_in, s_out);
        assert!(translate_image(&img, 28, 28, 42, (15, 0)).is_err());
    }

    #[test]
    fn shift_by_whole_pixels() {
        let img = blob(28, 28);
        let s = shift_image(&img, 28, 28, 2.0, -3.0);
        assert!((s[15 * 28 + 10] - 1.0).abs() < 1e-6);
        assert!(s[13 * 28 + 13].abs() < 1e-6);
    }
}
