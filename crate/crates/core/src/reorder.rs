//! Patch reordering: hierarchical, energy-ranked permutation of feature-map
//! patches.
//!
//! A feature map is tiled into a pyramid of non-overlapping patches. Level 0
//! splits the map into a `g0h x g0w` grid, level 1 splits every level-0 patch
//! into a `g1h x g1w` grid, and so on. At every level the children of each
//! parent are ranked by energy (Σ|x| or Σx² over the patch window across all
//! channels) and written back into the parent's raster slots in descending
//! order, the highest-energy child landing top-left. Children move rigidly, so
//! the whole operation is a single spatial permutation shared by every
//! channel. The backward pass routes each output gradient back to the pixel it
//! was copied from.
//!
//! When a map is not divisible by the grid, the [`RemainderPolicy`] decides:
//! `Strict` refuses, `FixedMargin` uses floor-sized patches and leaves the
//! trailing rows and columns of each parent where they are. Margin pixels
//! belong to no child at that level, so they never contribute to that level's
//! energies; inside a parent they travel with the parent.
//!
//! Ties are broken by original raster index, so constant inputs map to the
//! identity permutation.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Region, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderPolicy {
    Strict,
    #[default]
    FixedMargin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchReorderConfig {
    /// Per-level `(rows, cols)` grid, coarsest first.
    pub grids: Vec<(usize, usize)>,
    pub norm: Norm,
    #[serde(default)]
    pub remainder: RemainderPolicy,
}

impl PatchReorderConfig {
    pub fn new(grids: Vec<(usize, usize)>, norm: Norm, remainder: RemainderPolicy) -> Result<Self> {
        let cfg = PatchReorderConfig {
            grids,
            norm,
            remainder,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `levels` repetitions of an `n x n` grid with L1 energy and fixed margins.
    pub fn pyramid(n: usize, levels: usize) -> Self {
        PatchReorderConfig {
            grids: vec![(n, n); levels],
            norm: Norm::L1,
            remainder: RemainderPolicy::FixedMargin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::Config("patch reorder needs at least one level".into()));
        }
        if self.grids.iter().any(|&(gh, gw)| gh == 0 || gw == 0) {
            return Err(Error::Config("patch grid dimensions must be >= 1".into()));
        }
        if self.grids.iter().all(|&(gh, gw)| gh == 1 && gw == 1) {
            return Err(Error::Config(
                "at least one patch grid dimension must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

/// A rectangular window in spatial coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Window {
    pub fn region(&self, sample: usize) -> Region {
        Region::new(
            sample,
            self.row..self.row + self.height,
            self.col..self.col + self.width,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LevelGeom {
    grid: (usize, usize),
    patch: (usize, usize),
}

/// Patch layout for a given map size and configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    height: usize,
    width: usize,
    levels: Vec<LevelGeom>,
}

pub fn partition(height: usize, width: usize, config: &PatchReorderConfig) -> Result<Hierarchy> {
    config.validate()?;
    let mut parent = (height, width);
    let mut levels = Vec::with_capacity(config.grids.len());
    for (k, &(gh, gw)) in config.grids.iter().enumerate() {
        if config.remainder == RemainderPolicy::Strict {
            for (axis, extent, grid) in [("height", parent.0, gh), ("width", parent.1, gw)] {
                if extent % grid != 0 {
                    return Err(Error::Divisibility {
                        level: k + 1,
                        axis,
                        extent,
                        grid,
                    });
                }
            }
        }
        let patch = (parent.0 / gh, parent.1 / gw);
        if patch.0 == 0 || patch.1 == 0 {
            return Err(Error::Config(format!(
                "level {}: a {}x{} map cannot hold a {gh}x{gw} patch grid",
                k + 1,
                parent.0,
                parent.1
            )));
        }
        levels.push(LevelGeom {
            grid: (gh, gw),
            patch,
        });
        parent = patch;
    }
    Ok(Hierarchy {
        height,
        width,
        levels,
    })
}

impl Hierarchy {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn grid(&self, level: usize) -> (usize, usize) {
        self.levels[level].grid
    }

    pub fn patch_size(&self, level: usize) -> (usize, usize) {
        self.levels[level].patch
    }

    pub fn children_per_parent(&self, level: usize) -> usize {
        let (gh, gw) = self.levels[level].grid;
        gh * gw
    }

    /// Region tiled by level-0 patches; everything outside is fixed margin.
    pub fn core(&self) -> Window {
        let g = self.levels[0];
        Window {
            row: 0,
            col: 0,
            height: g.grid.0 * g.patch.0,
            width: g.grid.1 * g.patch.1,
        }
    }

    /// The whole map, which is the single parent of level 0.
    pub fn root(&self) -> Window {
        Window {
            row: 0,
            col: 0,
            height: self.height,
            width: self.width,
        }
    }

    /// Children of `parent` at `level`, in raster order.
    pub fn children(&self, level: usize, parent: &Window) -> Vec<Window> {
        let g = self.levels[level];
        let mut out = Vec::with_capacity(g.grid.0 * g.grid.1);
        for i in 0..g.grid.0 {
            for j in 0..g.grid.1 {
                out.push(Window {
                    row: parent.row + i * g.patch.0,
                    col: parent.col + j * g.patch.1,
                    height: g.patch.0,
                    width: g.patch.1,
                });
            }
        }
        out
    }

    /// Parents at `level`: the root for level 0, otherwise every level-`k-1`
    /// patch in parent-major raster order.
    pub fn parents(&self, level: usize) -> Vec<Window> {
        let mut parents = vec![self.root()];
        for k in 0..level {
            parents = parents.iter().flat_map(|p| self.children(k, p)).collect();
        }
        parents
    }

    /// Child windows at `level`, grouped by parent.
    pub fn windows(&self, level: usize) -> Vec<Vec<Window>> {
        self.parents(level)
            .iter()
            .map(|p| self.children(level, p))
            .collect()
    }
}

/// Patch energies of one sample, indexed `(level, parent, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMap<T: Scalar = f64> {
    grids: Vec<(usize, usize)>,
    /// Per level, parent-major then raster order.
    values: Vec<Vec<T>>,
}

impl<T: Scalar> EnergyMap<T> {
    pub fn num_levels(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, level: usize, parent: usize, row: usize, col: usize) -> T {
        let (gh, gw) = self.grids[level];
        assert!(row < gh && col < gw, "patch ({row}, {col}) outside {gh}x{gw} grid");
        self.values[level][parent * gh * gw + row * gw + col]
    }

    /// Energies of the children of `parent` at `level`, raster order.
    pub fn siblings(&self, level: usize, parent: usize) -> &[T] {
        let (gh, gw) = self.grids[level];
        let k = gh * gw;
        &self.values[level][parent * k..(parent + 1) * k]
    }

    pub fn num_parents(&self, level: usize) -> usize {
        let (gh, gw) = self.grids[level];
        self.values[level].len() / (gh * gw)
    }

    /// Smallest gap between any two sibling energies, relative to the larger
    /// of the two. Zero means a tie somewhere in the hierarchy.
    pub fn min_relative_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for level in 0..self.num_levels() {
            for p in 0..self.num_parents(level) {
                let s = self.siblings(level, p);
                for i in 0..s.len() {
                    for j in i + 1..s.len() {
                        let (a, b) = (s[i].as_f64(), s[j].as_f64());
                        let scale = a.abs().max(b.abs());
                        let rel = if scale == 0.0 { 0.0 } else { (a - b).abs() / scale };
                        gap = gap.min(rel);
                    }
                }
            }
        }
        gap
    }
}

fn patch_energy<T: Scalar>(x: &Tensor4<T>, sample: usize, win: &Window, norm: Norm) -> T {
    let region = win.region(sample);
    let e = match norm {
        Norm::L1 => x.l1_reduce(&region),
        Norm::L2 => x.l2sq_reduce(&region),
    };
    e.expect("hierarchy windows lie inside the map")
}

fn check_hierarchy<T: Scalar>(x: &Tensor4<T>, hierarchy: &Hierarchy) -> Result<()> {
    let d = x.dims();
    if d.h != hierarchy.height || d.w != hierarchy.width {
        return Err(Error::Shape(format!(
            "hierarchy built for {}x{}, tensor is {d}",
            hierarchy.height, hierarchy.width
        )));
    }
    Ok(())
}

/// Energies of every patch of sample `n`.
pub fn sample_energies<T: Scalar>(
    x: &Tensor4<T>,
    n: usize,
    hierarchy: &Hierarchy,
    norm: Norm,
) -> Result<EnergyMap<T>> {
    check_hierarchy(x, hierarchy)?;
    if n >= x.dims().n {
        return Err(Error::OutOfBounds(format!("sample {n} of {}", x.dims())));
    }
    let mut values = Vec::with_capacity(hierarchy.num_levels());
    for level in 0..hierarchy.num_levels() {
        values.push(
            hierarchy
                .windows(level)
                .iter()
                .flatten()
                .map(|w| patch_energy(x, n, w, norm))
                .collect(),
        );
    }
    Ok(EnergyMap {
        grids: hierarchy.levels.iter().map(|l| l.grid).collect(),
        values,
    })
}

/// Energies of every patch of every sample.
pub fn compute_energies<T: Scalar>(
    x: &Tensor4<T>,
    hierarchy: &Hierarchy,
    norm: Norm,
) -> Result<Vec<EnergyMap<T>>> {
    check_hierarchy(x, hierarchy)?;
    (0..x.dims().n)
        .into_par_iter()
        .map(|n| sample_energies(x, n, hierarchy, norm))
        .collect()
}

/// `order[slot]` is the raster index of the patch placed in raster `slot`:
/// descending energy, ties by original index.
pub fn rank_patches<T: Scalar>(energies: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..energies.len()).collect();
    order.sort_by(|&a, &b| {
        energies[b]
            .partial_cmp(&energies[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Per-sample spatial permutations produced by a forward pass.
///
/// `source(n)[p]` is the flat `h * w` index that output pixel `p` of sample
/// `n` was read from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationRecord {
    height: usize,
    width: usize,
    sources: Vec<Vec<u32>>,
}

impl PermutationRecord {
    pub fn identity(samples: usize, height: usize, width: usize) -> Self {
        let id: Vec<u32> = (0..(height * width) as u32).collect();
        PermutationRecord {
            height,
            width,
            sources: vec![id; samples],
        }
    }

    pub fn from_sources(height: usize, width: usize, sources: Vec<Vec<u32>>) -> Result<Self> {
        let rec = PermutationRecord {
            height,
            width,
            sources,
        };
        for n in 0..rec.samples() {
            if !rec.is_bijection(n) {
                return Err(Error::RecordMismatch(format!("sample {n} is not a permutation")));
            }
        }
        Ok(rec)
    }

    pub fn samples(&self) -> usize {
        self.sources.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn source(&self, n: usize) -> &[u32] {
        &self.sources[n]
    }

    pub fn is_bijection(&self, n: usize) -> bool {
        let len = self.height * self.width;
        let src = &self.sources[n];
        if src.len() != len {
            return false;
        }
        let mut seen = vec![false; len];
        for &s in src {
            let s = s as usize;
            if s >= len || seen[s] {
                return false;
            }
            seen[s] = true;
        }
        true
    }

    /// Composed `(row, col)` displacement `source - target` of each output pixel.
    pub fn offsets(&self, n: usize) -> Vec<(isize, isize)> {
        let w = self.width;
        self.sources[n]
            .iter()
            .enumerate()
            .map(|(p, &s)| {
                let s = s as usize;
                (
                    (s / w) as isize - (p / w) as isize,
                    (s % w) as isize - (p % w) as isize,
                )
            })
            .collect()
    }

    /// Debug dump: u32 LE `samples, height, width`, then each sample's
    /// target-to-source array as u32 LE.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(12 + 4 * self.samples() * self.height * self.width);
        for v in [self.samples(), self.height, self.width] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for src in &self.sources {
            for &s in src {
                buf.extend_from_slice(&s.to_le_bytes());
            }
        }
        out.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut input: R, origin: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
        if bytes.len() < 12 {
            return Err(Error::format(origin, "truncated permutation header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let (n, h, w) = (word(0) as usize, word(1) as usize, word(2) as usize);
        if bytes.len() != 12 + 4 * n * h * w {
            return Err(Error::format(origin, "permutation payload length does not match header"));
        }
        let sources = (0..n)
            .map(|s| (0..h * w).map(|p| word(3 + s * h * w + p)).collect())
            .collect();
        PermutationRecord::from_sources(h, w, sources).map_err(|e| Error::format(origin, e.to_string()))
    }
}

/// Builds the target-to-source map of one sample from its energies.
fn build_sources<T: Scalar>(hierarchy: &Hierarchy, energies: &EnergyMap<T>) -> Vec<u32> {
    let w = hierarchy.width;
    let mut src: Vec<u32> = (0..(hierarchy.height * w) as u32).collect();
    let root = hierarchy.root();
    place(hierarchy, energies, 0, &root, &root, 0, &mut src);
    src
}

/// Fills `target` from `source` rigidly, then reorders its children.
fn place<T: Scalar>(
    hierarchy: &Hierarchy,
    energies: &EnergyMap<T>,
    level: usize,
    target: &Window,
    source: &Window,
    source_index: usize,
    src: &mut [u32],
) {
    let w = hierarchy.width;
    for r in 0..target.height {
        for c in 0..target.width {
            src[(target.row + r) * w + target.col + c] = ((source.row + r) * w + source.col + c) as u32;
        }
    }
    if level == hierarchy.num_levels() {
        return;
    }
    let order = rank_patches(energies.siblings(level, source_index));
    let targets = hierarchy.children(level, target);
    let sources = hierarchy.children(level, source);
    let per_parent = order.len();
    for (slot, &from) in order.iter().enumerate() {
        place(
            hierarchy,
            energies,
            level + 1,
            &targets[slot],
            &sources[from],
            source_index * per_parent + from,
            src,
        );
    }
}

/// Applies `sources` to every channel of every sample.
fn permute<T: Scalar>(x: &Tensor4<T>, record: &PermutationRecord) -> Result<Tensor4<T>> {
    let d = x.dims();
    let plane = d.plane_len();
    let mut z = Tensor4::zeros(d)?;
    z.data_mut()
        .par_chunks_mut(d.sample_len())
        .zip(x.data().par_chunks(d.sample_len()))
        .enumerate()
        .for_each(|(n, (dst, src_sample))| {
            let map = record.source(n);
            for (dst_plane, src_plane) in dst.chunks_mut(plane).zip(src_sample.chunks(plane)) {
                for (o, &s) in dst_plane.iter_mut().zip(map) {
                    *o = src_plane[s as usize];
                }
            }
        });
    Ok(z)
}

/// Reorders the patches of every sample independently.
pub fn pr_forward<T: Scalar>(
    x: &Tensor4<T>,
    config: &PatchReorderConfig,
) -> Result<(Tensor4<T>, PermutationRecord)> {
    let d = x.dims();
    let hierarchy = partition(d.h, d.w, config)?;
    let (z, record, _) = pr_forward_with(x, &hierarchy, config.norm)?;
    Ok((z, record))
}

/// Forward pass on a prebuilt hierarchy, also returning the energies the
/// ranking was based on.
pub fn pr_forward_with<T: Scalar>(
    x: &Tensor4<T>,
    hierarchy: &Hierarchy,
    norm: Norm,
) -> Result<(Tensor4<T>, PermutationRecord, Vec<EnergyMap<T>>)> {
    let energies = compute_energies(x, hierarchy, norm)?;
    let sources = energies
        .par_iter()
        .map(|e| build_sources(hierarchy, e))
        .collect();
    let record = PermutationRecord {
        height: hierarchy.height,
        width: hierarchy.width,
        sources,
    };
    let z = permute(x, &record)?;
    Ok((z, record, energies))
}

/// Routes each output gradient back to the input pixel it was read from.
pub fn pr_backward<T: Scalar>(grad_z: &Tensor4<T>, record: &PermutationRecord) -> Result<Tensor4<T>> {
    let d = grad_z.dims();
    if d.n != record.samples() || d.h != record.height || d.w != record.width {
        return Err(Error::RecordMismatch(format!(
            "gradient {d} vs record of {} samples at {}x{}",
            record.samples(),
            record.height,
            record.width
        )));
    }
    let plane = d.plane_len();
    let mut gx = Tensor4::zeros(d)?;
    gx.data_mut()
        .par_chunks_mut(d.sample_len())
        .zip(grad_z.data().par_chunks(d.sample_len()))
        .enumerate()
        .for_each(|(n, (dst, src))| {
            let map = record.source(n);
            for (dst_plane, src_plane) in dst.chunks_mut(plane).zip(src.chunks(plane)) {
                for (&g, &s) in src_plane.iter().zip(map) {
                    dst_plane[s as usize] = g;
                }
            }
        });
    Ok(gx)
}
