//! Deterministic reductions over replicate-indexed values.
//!
//! Replicates are processed in fixed-size chunks; each chunk is reduced with
//! Welford's update and chunk accumulators are merged pairwise in chunk order.
//! The result depends only on the replicate values, never on how many worker
//! threads evaluated the chunks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub(crate) const CHUNK: usize = 4096;

/// A Monte Carlo sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self {
            mean,
            std_error: 0.0,
        }
    }

    /// True when `value` lies within `k` standard errors of the mean. A small
    /// absolute floor keeps exact (zero-variance) estimates comparable.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error + 1e-12 * (1.0 + value.abs())
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Accumulator {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    #[inline]
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(a: Accumulator, b: Accumulator) -> Accumulator {
        if a.count == 0.0 {
            return b;
        }
        if b.count == 0.0 {
            return a;
        }
        let count = a.count + b.count;
        let delta = b.mean - a.mean;
        Accumulator {
            count,
            mean: a.mean + delta * b.count / count,
            m2: a.m2 + b.m2 + delta * delta * a.count * b.count / count,
        }
    }

    fn finish(self) -> Estimate {
        let std_error = if self.count > 1.0 {
            (self.m2 / (self.count - 1.0) / self.count).max(0.0).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean: self.mean,
            std_error,
        }
    }
}

fn tree_merge(parts: &[Accumulator]) -> Accumulator {
    match parts.len() {
        0 => Accumulator::default(),
        1 => parts[0],
        len => {
            let (left, right) = parts.split_at(len / 2);
            Accumulator::merge(tree_merge(left), tree_merge(right))
        }
    }
}

/// Mean and standard error of `f(k)` over `k in 0..len`.
pub fn estimate<F>(len: usize, f: F) -> Estimate
where
    F: Fn(usize) -> f64 + Sync,
{
    let parts: Vec<Accumulator> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Accumulator::default();
            for k in chunk * CHUNK..((chunk + 1) * CHUNK).min(len) {
                acc.push(f(k));
            }
            acc
        })
        .collect();
    tree_merge(&parts).finish()
}

/// Sample mean of `f(k)` over `k in 0..len`.
pub fn mean<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    estimate(len, f).mean
}

/// Vector-valued version of [`estimate`]: `f(k, out)` writes `width` values
/// for replicate `k`.
pub fn estimate_many<F>(len: usize, width: usize, f: F) -> Vec<Estimate>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let parts: Vec<Vec<Accumulator>> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut accs = vec![Accumulator::default(); width];
            let mut buf = vec![0.0; width];
            for k in chunk * CHUNK..((chunk + 1) * CHUNK).min(len) {
                f(k, &mut buf);
                for (acc, &x) in accs.iter_mut().zip(&buf) {
                    acc.push(x);
                }
            }
            accs
        })
        .collect();
    (0..width)
        .map(|j| {
            let column: Vec<Accumulator> = parts.iter().map(|p| p[j]).collect();
            tree_merge(&column).finish()
        })
        .collect()
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Pearson correlation of two equally long slices.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
