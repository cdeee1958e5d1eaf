use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const HISTOGRAM_BINS: usize = 40;
pub const DEFAULT_MAX_PAIRS: usize = 2_000_000;

/// Cosine similarities between rows of a weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyHistogram {
    pub rows: usize,
    pub cols: usize,
    /// `HISTOGRAM_BINS + 1` edges spanning [-1, 1].
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// `log10(1 + count)` per bin.
    pub log_counts: Vec<f64>,
    /// Pairs that entered the histogram.
    pub pairs: u64,
    /// Pairs dropped because a row had zero norm.
    pub zero_norm_pairs: u64,
    /// True when pairs were sampled rather than enumerated.
    pub sampled: bool,
    pub mean_abs_cos: f64,
}

impl RedundancyHistogram {
    pub fn csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count,log10_count\n");
        for b in 0..self.counts.len() {
            s += &format!(
                "{},{},{},{}\n",
                self.edges[b],
                self.edges[b + 1],
                self.counts[b],
                self.log_counts[b]
            );
        }
        s
    }
}

fn bin_of(cos: f64) -> usize {
    let b = ((cos + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor();
    (b.max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Histogram of cosine similarity over unordered pairs of rows of a
/// row-major `rows x cols` matrix. All pairs are used when there are at most
/// `max_pairs` of them, otherwise `max_pairs` pairs are drawn with
/// replacement from `rng`.
pub fn weight_redundancy(
    weights: &[f64],
    rows: usize,
    cols: usize,
    max_pairs: usize,
    rng: &mut Rng,
) -> Result<RedundancyHistogram> {
    if rows < 2 || cols == 0 {
        return Err(Error::Shape(format!("redundancy needs at least 2 non-empty rows, got {rows}x{cols}")));
    }
    if weights.len() != rows * cols {
        return Err(Error::Shape(format!("{} weights for a {rows}x{cols} matrix", weights.len())));
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    let row = |i: usize| &weights[i * cols..(i + 1) * cols];
    let norms: Vec<f64> = (0..rows).map(|i| row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let total = rows * (rows - 1) / 2;
    let sampled = total > max_pairs;
    let pairs: Box<dyn Iterator<Item = (usize, usize)>> = if sampled {
        let mut draws = Vec::with_capacity(max_pairs);
        for _ in 0..max_pairs {
            let i = rng.below(rows);
            let mut j = rng.below(rows - 1);
            if j >= i {
                j += 1;
            }
            draws.push((i.min(j), i.max(j)));
        }
        Box::new(draws.into_iter())
    } else {
        Box::new((0..rows).flat_map(move |i| (i + 1..rows).map(move |j| (i, j))))
    };

    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let (mut used, mut zero, mut abs_sum) = (0u64, 0u64, 0.0f64);
    for (i, j) in pairs {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            zero += 1;
            continue;
        }
        let dot: f64 = row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum();
        let cos = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
        counts[bin_of(cos)] += 1;
        abs_sum += cos.abs();
        used += 1;
    }
    let edges = (0..=HISTOGRAM_BINS)
        .map(|b| -1.0 + 2.0 * b as f64 / HISTOGRAM_BINS as f64)
        .collect();
    Ok(RedundancyHistogram {
        rows,
        cols,
        edges,
        log_counts: counts.iter().map(|&c| (1.0 + c as f64).log10()).collect(),
        counts,
        pairs: used,
        zero_norm_pairs: zero,
        sampled,
        mean_abs_cos: if used == 0 { f64::NAN } else { abs_sum / used as f64 },
    })
}
