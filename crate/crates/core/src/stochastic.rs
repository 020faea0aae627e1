//! Random generation and demand models, and the seeded sample sets that every
//! expectation in the crate is estimated over.
//!
//! Each replicate `k` of a [`SampleSet`] is drawn from its own ChaCha8 stream
//! (`seed`, stream `k`), so a replicate is a pure function of `(seed, k)` and
//! generation can be parallelised without changing the output. Within a
//! replicate the demand is drawn first, then the shared component (for the
//! additive model), then producers in index order. A sample set with `n`
//! producers is therefore a column prefix of the one with `n + 1` producers
//! under the same seed, which gives common random numbers across market sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

/// Grid resolution used when integrating continuous distributions.
pub const MOMENT_GRID: usize = 20_000;
const CONVOLUTION_GRID: usize = 2_000;
const SUPPORT_EPS: f64 = 1e-12;

/// A univariate distribution specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    TruncatedNormal {
        mean: f64,
        sd: f64,
        lo: f64,
        hi: f64,
    },
    PointMass {
        value: f64,
    },
    /// Equiprobable stored values, sampled by uniform bootstrap.
    Empirical {
        values: Vec<f64>,
    },
    /// Finite support with explicit probabilities.
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

impl Distribution {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Distribution::Uniform { lo, hi }
    }

    pub fn point_mass(value: f64) -> Self {
        Distribution::PointMass { value }
    }

    pub fn truncated_normal(mean: f64, sd: f64, lo: f64, hi: f64) -> Self {
        Distribution::TruncatedNormal { mean, sd, lo, hi }
    }

    pub fn empirical(values: Vec<f64>) -> Self {
        Distribution::Empirical { values }
    }

    pub fn discrete(values: Vec<f64>, probs: Vec<f64>) -> Self {
        Distribution::Discrete { values, probs }
    }

    /// Checks internal consistency (ordering, finiteness, probabilities).
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        match self {
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad(format!("uniform requires lo < hi, got ({lo}, {hi})"));
                }
            }
            Distribution::TruncatedNormal { mean, sd, lo, hi } => {
                if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                    return bad(format!("truncated normal requires sd > 0, got {sd}"));
                }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad(format!("truncated normal requires lo < hi, got ({lo}, {hi})"));
                }
                let a = (lo - mean) / sd;
                let b = (hi - mean) / sd;
                let mass = if a > 0.0 {
                    std_normal_cdf(-a) - std_normal_cdf(-b)
                } else {
                    std_normal_cdf(b) - std_normal_cdf(a)
                };
                if !(mass > 0.0) {
                    return bad("truncated normal has no mass on [lo, hi]".into());
                }
            }
            Distribution::PointMass { value } => {
                if !value.is_finite() {
                    return bad("point mass must be finite".into());
                }
            }
            Distribution::Empirical { values } => {
                if values.is_empty() {
                    return bad("empirical distribution has no values".into());
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("empirical distribution has non-finite values".into());
                }
            }
            Distribution::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return bad("discrete distribution needs matching, non-empty values and probs".into());
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("discrete distribution has non-finite values".into());
                }
                if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return bad("discrete probabilities must be non-negative".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("discrete probabilities sum to {total}, not 1"));
                }
            }
        }
        Ok(())
    }

    /// Validates a per-producer output distribution: support inside `[0, 1]`.
    pub fn validate_unit(&self) -> Result<()> {
        self.validate()?;
        let (lo, hi) = self.support();
        if lo < -SUPPORT_EPS || hi > 1.0 + SUPPORT_EPS {
            return Err(Error::InvalidDistribution(format!(
                "generation support [{lo}, {hi}] is not inside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Closed support bounds (smallest and largest attainable value).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Distribution::Uniform { lo, hi } | Distribution::TruncatedNormal { lo, hi, .. } => {
                (*lo, *hi)
            }
            Distribution::PointMass { value } => (*value, *value),
            Distribution::Empirical { values } => min_max(values.iter().copied()),
            Distribution::Discrete { values, probs } => min_max(
                values
                    .iter()
                    .zip(probs)
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(v, _)| *v),
            ),
        }
    }

    /// True when the distribution puts all mass on one value.
    pub fn is_degenerate(&self) -> bool {
        let (lo, hi) = self.support();
        lo == hi
    }

    /// Inverse CDF at `u in [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * u,
            Distribution::TruncatedNormal { mean, sd, lo, hi } => {
                let a = (lo - mean) / sd;
                let b = (hi - mean) / sd;
                // Work in the upper tail when the range sits right of the mean
                // so the CDF differences keep their precision.
                let x = if a > 0.0 {
                    let sa = std_normal_cdf(-a);
                    let sb = std_normal_cdf(-b);
                    -std_normal_quantile(sa - u * (sa - sb))
                } else {
                    let fa = std_normal_cdf(a);
                    let fb = std_normal_cdf(b);
                    std_normal_quantile(fa + u * (fb - fa))
                };
                (mean + sd * x).clamp(*lo, *hi)
            }
            Distribution::PointMass { value } => *value,
            Distribution::Empirical { values } => {
                let idx = ((u * values.len() as f64) as usize).min(values.len() - 1);
                values[idx]
            }
            Distribution::Discrete { values, probs } => {
                let mut cumulative = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    cumulative += p;
                    if u < cumulative {
                        return *v;
                    }
                }
                // Rounding left u above the accumulated total.
                values
                    .iter()
                    .zip(probs)
                    .rev()
                    .find(|(_, p)| **p > 0.0)
                    .map(|(v, _)| *v)
                    .unwrap_or(values[values.len() - 1])
            }
        }
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::PointMass { value } => *value,
            _ => self.quantile(rng.random::<f64>()),
        }
    }

    /// Weighted points representing the distribution: stored values for the
    /// empirical and discrete kinds, `m` quantile midpoints otherwise.
    pub fn discretize(&self, m: usize) -> Vec<(f64, f64)> {
        match self {
            Distribution::PointMass { value } => vec![(*value, 1.0)],
            Distribution::Empirical { values } => {
                let w = 1.0 / values.len() as f64;
                values.iter().map(|v| (*v, w)).collect()
            }
            Distribution::Discrete { values, probs } => {
                values.iter().copied().zip(probs.iter().copied()).collect()
            }
            _ => {
                let w = 1.0 / m as f64;
                (0..m)
                    .map(|j| (self.quantile((j as f64 + 0.5) / m as f64), w))
                    .collect()
            }
        }
    }

    /// Discretisation with at most roughly `m` points, compressing large
    /// empirical supports by quantiles.
    fn discretize_compact(&self, m: usize) -> Vec<(f64, f64)> {
        match self {
            Distribution::Empirical { values } if values.len() > m => {
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                let compact = Distribution::Empirical { values: sorted };
                let w = 1.0 / m as f64;
                (0..m)
                    .map(|j| (compact.quantile((j as f64 + 0.5) / m as f64), w))
                    .collect()
            }
            _ => self.discretize(m),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::PointMass { value } => *value,
            _ => weighted_moments(&self.discretize(MOMENT_GRID)).mean,
        }
    }

    pub fn moments(&self) -> Moments {
        weighted_moments(&self.discretize(MOMENT_GRID))
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Mean, variance and centred third absolute moment `E|Z - mu|^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub abs_third: f64,
}

fn weighted_moments(points: &[(f64, f64)]) -> Moments {
    let total: f64 = points.iter().map(|(_, w)| w).sum();
    let mean = points.iter().map(|(v, w)| v * w).sum::<f64>() / total;
    let mut variance = 0.0;
    let mut abs_third = 0.0;
    for (v, w) in points {
        let dev = (v - mean).abs();
        variance += w * dev * dev;
        abs_third += w * dev * dev * dev;
    }
    Moments {
        mean,
        variance: variance / total,
        abs_third: abs_third / total,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationKind {
    IidParametric,
    AdditiveCorrelated,
    Empirical,
    Independent,
}

/// The random normalised output `Z_i` of every producer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenerationModel {
    /// All producers draw independently from one distribution.
    Iid { distribution: Distribution },
    /// `Z_i = individual_i + shared`, one shared draw per replicate and
    /// independent individual draws.
    AdditiveCorrelated {
        shared: Distribution,
        individual: Distribution,
    },
    /// Independent producers with their own marginals (one per producer).
    Independent { marginals: Vec<Distribution> },
}

impl GenerationModel {
    pub fn iid(distribution: Distribution) -> Self {
        GenerationModel::Iid { distribution }
    }

    pub fn additive(shared: Distribution, individual: Distribution) -> Self {
        GenerationModel::AdditiveCorrelated { shared, individual }
    }

    pub fn kind(&self) -> GenerationKind {
        match self {
            GenerationModel::Iid {
                distribution: Distribution::Empirical { .. },
            } => GenerationKind::Empirical,
            GenerationModel::Iid { .. } => GenerationKind::IidParametric,
            GenerationModel::AdditiveCorrelated { .. } => GenerationKind::AdditiveCorrelated,
            GenerationModel::Independent { .. } => GenerationKind::Independent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GenerationModel::Iid { distribution } => distribution.validate_unit(),
            GenerationModel::AdditiveCorrelated { shared, individual } => {
                shared.validate_unit()?;
                individual.validate_unit()?;
                let (_, shared_hi) = shared.support();
                let (_, individual_hi) = individual.support();
                if shared_hi + individual_hi > 1.0 + SUPPORT_EPS {
                    return Err(Error::InvalidDistribution(format!(
                        "additive components can reach {} > 1",
                        shared_hi + individual_hi
                    )));
                }
                Ok(())
            }
            GenerationModel::Independent { marginals } => {
                if marginals.is_empty() {
                    return Err(Error::InvalidDistribution(
                        "independent model has no marginals".into(),
                    ));
                }
                marginals.iter().try_for_each(Distribution::validate_unit)
            }
        }
    }

    /// True when every producer's marginal law is the same, so payments
    /// and first-order conditions are exchangeable across producers.
    pub fn is_exchangeable(&self) -> bool {
        match self {
            GenerationModel::Iid { .. } | GenerationModel::AdditiveCorrelated { .. } => true,
            GenerationModel::Independent { marginals } => {
                marginals.windows(2).all(|w| w[0] == w[1])
            }
        }
    }

    /// The deterministic-producer baseline: every `Z_i` is exactly 1.
    pub fn is_unit_point_mass(&self) -> bool {
        matches!(
            self,
            GenerationModel::Iid {
                distribution: Distribution::PointMass { value }
            } if *value == 1.0
        )
    }

    fn check_producers(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::ZeroProducers);
        }
        if let GenerationModel::Independent { marginals } = self {
            if marginals.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: marginals.len(),
                });
            }
        }
        Ok(())
    }

    #[inline]
    fn fill_row<R: Rng + ?Sized>(&self, rng: &mut R, row: &mut [f64]) {
        match self {
            GenerationModel::Iid { distribution } => {
                for z in row.iter_mut() {
                    *z = distribution.draw(rng);
                }
            }
            GenerationModel::AdditiveCorrelated { shared, individual } => {
                let common = shared.draw(rng);
                for z in row.iter_mut() {
                    *z = (individual.draw(rng) + common).min(1.0);
                }
            }
            GenerationModel::Independent { marginals } => {
                for (z, dist) in row.iter_mut().zip(marginals) {
                    *z = dist.draw(rng);
                }
            }
        }
    }
}

/// Mean, variance and third absolute central moment of a producer's output.
pub fn moments(model: &GenerationModel) -> Result<Moments> {
    model.validate()?;
    match model {
        GenerationModel::Iid { distribution } => Ok(distribution.moments()),
        GenerationModel::AdditiveCorrelated { shared, individual } => {
            let a = shared.discretize_compact(CONVOLUTION_GRID);
            let b = individual.discretize_compact(CONVOLUTION_GRID);
            let mut sum = Vec::with_capacity(a.len() * b.len());
            for (va, wa) in &a {
                for (vb, wb) in &b {
                    sum.push((va + vb, wa * wb));
                }
            }
            Ok(weighted_moments(&sum))
        }
        GenerationModel::Independent { marginals } => {
            if model.is_exchangeable() {
                Ok(marginals[0].moments())
            } else {
                Err(Error::InvalidDistribution(
                    "moments of a heterogeneous model are per producer".into(),
                ))
            }
        }
    }
}

/// Bounded, strictly positive random demand `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandModel(Distribution);

impl DemandModel {
    pub fn new(distribution: Distribution) -> Result<Self> {
        let model = DemandModel(distribution);
        model.validate()?;
        Ok(model)
    }

    pub fn fixed(d: f64) -> Result<Self> {
        Self::new(Distribution::point_mass(d))
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(Distribution::uniform(lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        self.0.validate()?;
        if self.d_min() <= 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "demand must be bounded away from zero, D_min = {}",
                self.d_min()
            )));
        }
        Ok(())
    }

    pub fn distribution(&self) -> &Distribution {
        &self.0
    }

    pub fn d_min(&self) -> f64 {
        self.0.support().0
    }

    pub fn d_max(&self) -> f64 {
        self.0.support().1
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    /// Fixed demand value, if the demand is deterministic.
    pub fn fixed_value(&self) -> Option<f64> {
        match self.0 {
            Distribution::PointMass { value } => Some(value),
            _ => None,
        }
    }
}

/// Seeded joint draws of `(Z_1..Z_n, D)`, immutable once generated.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    n: usize,
    r: usize,
    seed: u64,
    z: Vec<f64>,
    d: Vec<f64>,
}

/// Generator for replicate `k`: ChaCha8 keyed by `seed`, stream `k`.
pub fn replicate_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

const ROWS_PER_TASK: usize = 1024;

impl SampleSet {
    /// Builds a sample set from a per-replicate draw function. `draw` fills
    /// one row of producer outputs and returns the demand.
    pub fn from_draws<F>(n: usize, r: usize, seed: u64, draw: F) -> Result<Self>
    where
        F: Fn(&mut ChaCha8Rng, &mut [f64]) -> f64 + Sync,
    {
        if n == 0 {
            return Err(Error::ZeroProducers);
        }
        if r == 0 {
            return Err(Error::ZeroReplicates);
        }
        let mut z = vec![0.0; n * r];
        let mut d = vec![0.0; r];
        z.par_chunks_mut(n * ROWS_PER_TASK)
            .zip(d.par_chunks_mut(ROWS_PER_TASK))
            .enumerate()
            .for_each(|(task, (zs, ds))| {
                for (offset, (row, dk)) in zs.chunks_mut(n).zip(ds.iter_mut()).enumerate() {
                    let mut rng = replicate_rng(seed, task * ROWS_PER_TASK + offset);
                    *dk = draw(&mut rng, row);
                }
            });
        Ok(SampleSet { n, r, seed, z, d })
    }

    /// Assembles a sample set from explicit rows (used by tests and data-driven
    /// callers).
    pub fn from_rows(z_rows: Vec<Vec<f64>>, d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::ZeroReplicates);
        }
        let n = z_rows.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::ZeroProducers);
        }
        if z_rows.len() != d.len() {
            return Err(Error::DimensionMismatch {
                expected: d.len(),
                found: z_rows.len(),
            });
        }
        let mut z = Vec::with_capacity(n * d.len());
        for row in &z_rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            z.extend_from_slice(row);
        }
        Ok(SampleSet {
            n,
            r: d.len(),
            seed: 0,
            z,
            d,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn replicates(&self) -> usize {
        self.r
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Copy of the replicates in `range`, keeping the seed.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.r {
            return Err(Error::ZeroReplicates);
        }
        Ok(SampleSet {
            n: self.n,
            r: range.len(),
            seed: self.seed,
            z: self.z[range.start * self.n..range.end * self.n].to_vec(),
            d: self.d[range].to_vec(),
        })
    }

    /// Producer outputs of replicate `k`.
    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.z[k * self.n..(k + 1) * self.n]
    }

    #[inline]
    pub fn z(&self, k: usize, i: usize) -> f64 {
        self.z[k * self.n + i]
    }

    #[inline]
    pub fn d(&self, k: usize) -> f64 {
        self.d[k]
    }

    pub fn demands(&self) -> &[f64] {
        &self.d
    }

    /// Column `i` of the z-matrix.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.r).map(|k| self.z(k, i)).collect()
    }

    pub fn mean_demand(&self) -> f64 {
        crate::stats::mean(self.r, |k| self.d[k])
    }
}

/// Draws `r` replicates of `n` producer outputs and the demand.
pub fn sample(
    generation: &GenerationModel,
    demand: &DemandModel,
    n: usize,
    r: usize,
    seed: u64,
) -> Result<SampleSet> {
    generation.validate()?;
    generation.check_producers(n)?;
    demand.validate()?;
    let demand = demand.distribution();
    SampleSet::from_draws(n, r, seed, |rng, row| {
        let d = demand.draw(rng);
        generation.fill_row(rng, row);
        d
    })
}

/// Reads an empirical distribution from a single-column numeric text file.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_empirical<R: std::io::BufRead>(reader: R) -> Result<Distribution> {
    let mut values = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let field = line.trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        let v: f64 = field.parse().map_err(|_| Error::Parse {
            line: k as u64 + 1,
            message: format!("not a number: '{field}'"),
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::EmptyFile);
    }
    let d = Distribution::empirical(values);
    d.validate()?;
    Ok(d)
}

pub fn load_empirical(path: &std::path::Path) -> Result<Distribution> {
    read_empirical(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_uniform() -> GenerationModel {
        GenerationModel::iid(Distribution::uniform(0.0, 1.0))
    }

    #[test]
    fn degenerate_models_sample_constants() {
        let s = sample(
            &GenerationModel::iid(Distribution::point_mass(1.0)),
            &DemandModel::fixed(5.0).unwrap(),
            3,
            4,
            11,
        )
        .unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.replicates(), 4);
        for k in 0..4 {
            assert_eq!(s.row(k), &[1.0, 1.0, 1.0]);
            assert_eq!(s.d(k), 5.0);
        }
    }

    #[test]
    fn uniform_column_means_within_three_standard_errors() {
        let s = sample(&unit_uniform(), &DemandModel::fixed(1.0).unwrap(), 2, 1_000_000, 3).unwrap();
        for i in 0..2 {
            let m = crate::stats::mean(s.replicates(), |k| s.z(k, i));
            assert!((m - 0.5).abs() <= 0.00087, "column {i} mean {m}");
        }
    }

    #[test]
    fn additive_columns_have_half_correlation() {
        let model = GenerationModel::additive(
            Distribution::uniform(0.0, 0.5),
            Distribution::uniform(0.0, 0.5),
        );
        let s = sample(&model, &DemandModel::fixed(1.0).unwrap(), 3, 1_000_000, 5).unwrap();
        let c0 = s.column(0);
        for i in 1..3 {
            let rho = crate::stats::pearson(&c0, &s.column(i));
            assert!((rho - 0.5).abs() <= 0.01, "corr(0,{i}) = {rho}");
        }
    }

    #[test]
    fn iid_columns_uncorrelated() {
        let s = sample(&unit_uniform(), &DemandModel::uniform(0.5, 1.5).unwrap(), 3, 1_000_000, 8).unwrap();
        let cols: Vec<Vec<f64>> = (0..3).map(|i| s.column(i)).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let rho = crate::stats::pearson(&cols[i], &cols[j]);
                assert!(rho.abs() <= 0.01, "corr({i},{j}) = {rho}");
            }
            let rho_d = crate::stats::pearson(&cols[i], s.demands());
            assert!(rho_d.abs() <= 0.01);
        }
    }

    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j) = (0, 0);
        let mut stat: f64 = 0.0;
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            stat = stat.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        stat
    }

    #[test]
    fn additive_columns_are_exchangeable() {
        let model = GenerationModel::additive(
            Distribution::truncated_normal(0.3, 0.1, 0.0, 0.6),
            Distribution::uniform(0.0, 0.4),
        );
        let r = 100_000;
        let s = sample(&model, &DemandModel::fixed(1.0).unwrap(), 3, r, 21).unwrap();
        // Two-sample KS critical value at the 1% level.
        let critical = 1.628 * ((2 * r) as f64 / (r as f64 * r as f64)).sqrt();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let stat = ks_statistic(s.column(i), s.column(j));
            assert!(stat < critical, "KS({i},{j}) = {stat} >= {critical}");
        }
    }

    #[test]
    fn samples_respect_supports() {
        let model = GenerationModel::additive(
            Distribution::uniform(0.0, 0.3),
            Distribution::truncated_normal(0.5, 0.3, 0.0, 0.7),
        );
        let demand = DemandModel::uniform(0.75, 1.25).unwrap();
        let s = sample(&model, &demand, 4, 50_000, 2).unwrap();
        for k in 0..s.replicates() {
            assert!(s.row(k).iter().all(|z| (0.0..=1.0).contains(z)));
            assert!((0.75..=1.25).contains(&s.d(k)));
        }
    }

    #[test]
    fn sampling_is_deterministic_and_thread_independent() {
        let model = unit_uniform();
        let demand = DemandModel::uniform(0.75, 1.25).unwrap();
        let a = sample(&model, &demand, 3, 10_000, 99).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| sample(&model, &demand, 3, 10_000, 99).unwrap());
        assert_eq!(a, b);
        let c = sample(&model, &demand, 3, 10_000, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fewer_producers_give_column_prefix() {
        let model = unit_uniform();
        let demand = DemandModel::uniform(0.75, 1.25).unwrap();
        let small = sample(&model, &demand, 2, 500, 4).unwrap();
        let large = sample(&model, &demand, 5, 800, 4).unwrap();
        for k in 0..500 {
            assert_eq!(small.d(k), large.d(k));
            assert_eq!(small.row(k), &large.row(k)[..2]);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let demand = DemandModel::fixed(1.0).unwrap();
        let outside = GenerationModel::iid(Distribution::uniform(0.5, 1.5));
        assert!(matches!(
            sample(&outside, &demand, 1, 1, 0),
            Err(Error::InvalidDistribution(_))
        ));
        let too_wide = GenerationModel::additive(
            Distribution::uniform(0.0, 0.6),
            Distribution::uniform(0.0, 0.6),
        );
        assert!(too_wide.validate().is_err());
        assert!(DemandModel::uniform(0.0, 1.0).is_err());
        assert!(DemandModel::fixed(-2.0).is_err());
        assert!(matches!(
            sample(&unit_uniform(), &demand, 2, 0, 0),
            Err(Error::ZeroReplicates)
        ));
        assert!(Distribution::discrete(vec![0.0, 1.0], vec![0.3, 0.3]).validate().is_err());
    }

    #[test]
    fn moments_of_uniform() {
        let m = moments(&unit_uniform()).unwrap();
        assert!((m.mean - 0.5).abs() < 1e-9);
        assert!((m.variance - 1.0 / 12.0).abs() < 1e-8);
        // E|U - 1/2|^3 = 1/32
        assert!((m.abs_third - 1.0 / 32.0).abs() < 1e-8);
    }

    #[test]
    fn moments_of_point_mass_and_empirical() {
        let m = moments(&GenerationModel::iid(Distribution::point_mass(1.0))).unwrap();
        assert_eq!((m.mean, m.variance, m.abs_third), (1.0, 0.0, 0.0));
        let e = moments(&GenerationModel::iid(Distribution::empirical(vec![0.0, 0.5, 1.0]))).unwrap();
        assert!((e.mean - 0.5).abs() < 1e-15);
        assert!((e.variance - 1.0 / 6.0).abs() < 1e-15);
        assert!((e.abs_third - 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn moments_of_additive_sum() {
        let model = GenerationModel::additive(
            Distribution::uniform(0.0, 0.5),
            Distribution::uniform(0.0, 0.5),
        );
        let m = moments(&model).unwrap();
        assert!((m.mean - 0.5).abs() < 1e-9);
        assert!((m.variance - 2.0 * 0.25 / 12.0).abs() < 1e-6);
    }

    #[test]
    fn truncated_normal_moments_match_quadrature() {
        // Independent check: trapezoid rule on the truncated density.
        let (mu, sd, lo, hi) = (0.7, 0.2, 0.0, 1.0);
        let density = |x: f64| (-(x - mu) * (x - mu) / (2.0 * sd * sd)).exp();
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for j in 0..=steps {
            let x = lo + j as f64 * h;
            let w = if j == 0 || j == steps { 0.5 } else { 1.0 };
            let f = density(x) * w;
            z += f;
            m1 += f * x;
            m2 += f * x * x;
        }
        let mean = m1 / z;
        let var = m2 / z - mean * mean;
        let m = Distribution::truncated_normal(mu, sd, lo, hi).moments();
        assert!((m.mean - mean).abs() < 1e-6, "{} vs {mean}", m.mean);
        assert!((m.variance - var).abs() < 1e-6, "{} vs {var}", m.variance);
    }

    #[test]
    fn truncated_normal_far_in_tail_stays_in_range() {
        let dist = Distribution::truncated_normal(0.0, 0.05, 0.6, 0.9);
        dist.validate_unit().unwrap();
        for j in 0..100 {
            let x = dist.quantile(j as f64 / 100.0);
            assert!((0.6..=0.9).contains(&x));
        }
        assert!(dist.quantile(0.5) < 0.62);
    }

    #[test]
    fn discrete_quantile_follows_probabilities() {
        let dist = Distribution::discrete(vec![0.0, 0.5, 1.0], vec![0.2, 0.0, 0.8]);
        assert_eq!(dist.quantile(0.1), 0.0);
        assert_eq!(dist.quantile(0.2), 1.0);
        assert_eq!(dist.quantile(0.999_999_999_999), 1.0);
        assert_eq!(dist.support(), (0.0, 1.0));
    }

    #[test]
    fn serde_round_trip_of_models() {
        let model = GenerationModel::additive(
            Distribution::truncated_normal(0.2, 0.1, 0.0, 0.4),
            Distribution::empirical(vec![0.1, 0.2]),
        );
        let text = serde_json::to_string(&model).unwrap();
        assert!(text.contains("\"kind\":\"additive-correlated\""));
        let back: GenerationModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
        let demand: DemandModel =
            serde_json::from_str(r#"{"kind":"uniform","lo":0.75,"hi":1.25}"#).unwrap();
        assert_eq!(demand.d_min(), 0.75);
        assert_eq!(demand.d_max(), 1.25);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn draws_stay_in_support(
                a in 0.0f64..0.5,
                width in 0.01f64..0.5,
                mu in 0.0f64..1.0,
                sd in 0.01f64..0.5,
                seed in any::<u64>(),
            ) {
                let model = GenerationModel::additive(
                    Distribution::uniform(a * 0.5, a * 0.5 + width * 0.5),
                    Distribution::truncated_normal(mu, sd, 0.0, 0.5),
                );
                let demand = DemandModel::uniform(0.5, 2.0).unwrap();
                let s = sample(&model, &demand, 3, 200, seed).unwrap();
                for k in 0..s.replicates() {
                    prop_assert!(s.row(k).iter().all(|z| (0.0..=1.0).contains(z)));
                    prop_assert!((0.5..=2.0).contains(&s.d(k)));
                }
            }

            #[test]
            fn quantile_is_monotone(u in 0.0f64..1.0, v in 0.0f64..1.0, mu in -0.5f64..1.5, sd in 0.01f64..1.0) {
                let dist = Distribution::truncated_normal(mu, sd, 0.0, 1.0);
                prop_assume!(dist.validate().is_ok());
                let (lo, hi) = if u < v { (u, v) } else { (v, u) };
                prop_assert!(dist.quantile(lo) <= dist.quantile(hi) + 1e-12);
            }
        }
    }

    #[test]
    fn empirical_file_round_trip() {
        let text = "# output\n0.25\n\n0.5\n0.75\n";
        let d = read_empirical(text.as_bytes()).unwrap();
        assert_eq!(d, Distribution::empirical(vec![0.25, 0.5, 0.75]));
        assert!(matches!(read_empirical("0.1\nx\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_empirical("".as_bytes()), Err(Error::EmptyFile)));
    }

    #[test]
    fn subset_keeps_rows() {
        let s = sample(&GenerationModel::iid(Distribution::uniform(0.0, 1.0)), &DemandModel::fixed(1.0).unwrap(), 3, 50, 4).unwrap();
        let sub = s.subset(10..20).unwrap();
        assert_eq!(sub.replicates(), 10);
        assert_eq!(sub.row(0), s.row(10));
        assert!(s.subset(40..60).is_err());
    }
}
