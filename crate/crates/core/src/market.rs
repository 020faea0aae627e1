//! Payments, costs and first-order conditions of the capacity game, estimated
//! as sample means over a fixed [`SampleSet`].
//!
//! The grid price is normalised to 1, so every monetary quantity is in units
//! of energy bought at the grid price.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, Estimate};
use crate::stochastic::{self, DemandModel, GenerationModel, SampleSet};

/// Producers, their per-unit investment costs and the random environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    costs: Vec<f64>,
    generation: GenerationModel,
    demand: DemandModel,
}

impl MarketInstance {
    pub fn new(costs: Vec<f64>, generation: GenerationModel, demand: DemandModel) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::ZeroProducers);
        }
        if let Some(bad) = costs.iter().find(|g| !(g.is_finite() && **g > 0.0 && **g < 1.0)) {
            return Err(Error::InvalidInstance(format!(
                "investment costs must lie in (0, 1), got {bad}"
            )));
        }
        generation.validate()?;
        demand.validate()?;
        if let GenerationModel::Independent { marginals } = &generation {
            if marginals.len() != costs.len() {
                return Err(Error::DimensionMismatch {
                    expected: costs.len(),
                    found: marginals.len(),
                });
            }
        }
        Ok(Self {
            costs,
            generation,
            demand,
        })
    }

    pub fn symmetric(
        n: usize,
        gamma: f64,
        generation: GenerationModel,
        demand: DemandModel,
    ) -> Result<Self> {
        Self::new(vec![gamma; n], generation, demand)
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cost(&self, i: usize) -> f64 {
        self.costs[i]
    }

    pub fn generation(&self) -> &GenerationModel {
        &self.generation
    }

    pub fn demand(&self) -> &DemandModel {
        &self.demand
    }

    pub fn is_symmetric(&self) -> bool {
        self.costs.windows(2).all(|w| w[0] == w[1])
    }

    /// The shared cost of a symmetric instance.
    pub fn common_cost(&self) -> Result<f64> {
        if self.is_symmetric() {
            Ok(self.costs[0])
        } else {
            Err(Error::AsymmetricInstance)
        }
    }

    pub fn gamma_min(&self) -> f64 {
        self.costs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn gamma_max(&self) -> f64 {
        self.costs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Draws a sample set for this instance.
    pub fn sample(&self, replicates: usize, seed: u64) -> Result<SampleSet> {
        stochastic::sample(&self.generation, &self.demand, self.n(), replicates, seed)
    }

    /// Zero-profit-at-entry deterministic game: `Z_i = 1` and fixed demand.
    pub fn is_deterministic(&self) -> bool {
        self.generation.is_unit_point_mass() && self.demand.fixed_value().is_some()
    }
}

/// Installed capacities `C_i >= 0`, one per producer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CapacityProfile(Vec<f64>);

impl CapacityProfile {
    pub fn new(capacities: Vec<f64>) -> Result<Self> {
        if let Some(bad) = capacities.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidCapacity(format!(
                "capacities must be finite and non-negative, got {bad}"
            )));
        }
        Ok(Self(capacities))
    }

    pub fn symmetric(n: usize, capacity: f64) -> Result<Self> {
        Self::new(vec![capacity; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Copy of the profile with producer `i` moved to `capacity`.
    pub fn with_capacity(&self, i: usize, capacity: f64) -> Result<Self> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.len(),
            });
        }
        let mut next = self.0.clone();
        next[i] = capacity;
        Self::new(next)
    }

    /// Index of the largest capacity; ties go to the highest index.
    pub fn largest_index(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.0.iter().enumerate() {
            if c >= self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_min_ratio(&self) -> f64 {
        let max = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.0.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }
}

impl TryFrom<Vec<f64>> for CapacityProfile {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<CapacityProfile> for Vec<f64> {
    fn from(value: CapacityProfile) -> Self {
        value.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Frequency of `0 <= D - sum_{i != N} C_i Z_i <= C_N Z_N`.
    pub atom_event_probability: f64,
    /// Total payments minus total investment cost.
    pub markup: f64,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Capacities together with everything the market pays and costs at them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub capacities: CapacityProfile,
    pub payments: Vec<f64>,
    pub payment_std_errors: Vec<f64>,
    pub profits: Vec<f64>,
    pub social_cost: f64,
    /// `None` when nothing is paid (no producer entered).
    pub efficiency: Option<f64>,
    pub efficiency_std_error: f64,
    /// Marginal top-price revenue minus cost, per producer.
    pub foc_residuals: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl EquilibriumReport {
    pub fn total_capacity(&self) -> f64 {
        self.capacities.total()
    }

    pub fn total_payment(&self) -> f64 {
        self.payments.iter().sum()
    }
}

fn check_dims(c: &CapacityProfile, s: &SampleSet) -> Result<()> {
    if c.len() != s.n() {
        return Err(Error::DimensionMismatch {
            expected: s.n(),
            found: c.len(),
        });
    }
    Ok(())
}

fn check_instance(inst: &MarketInstance, s: &SampleSet) -> Result<()> {
    if inst.n() != s.n() {
        return Err(Error::DimensionMismatch {
            expected: s.n(),
            found: inst.n(),
        });
    }
    Ok(())
}

fn check_capacity(cap: f64) -> Result<()> {
    if !(cap.is_finite() && cap >= 0.0) {
        return Err(Error::InvalidCapacity(format!(
            "capacity must be finite and non-negative, got {cap}"
        )));
    }
    Ok(())
}

#[inline]
fn supplied(row: &[f64], c: &[f64]) -> f64 {
    row.iter().zip(c).map(|(z, c)| z * c).sum()
}

/// `E (D - sum_i Z_i C_i)^+` with its standard error.
pub fn shortfall_cost_estimate(c: &CapacityProfile, s: &SampleSet) -> Result<Estimate> {
    check_dims(c, s)?;
    let caps = c.as_slice();
    Ok(stats::estimate(s.replicates(), |k| {
        (s.d(k) - supplied(s.row(k), caps)).max(0.0)
    }))
}

/// Expected energy bought from the grid: `E (D - sum_i Z_i C_i)^+`.
pub fn shortfall_cost(c: &CapacityProfile, s: &SampleSet) -> Result<f64> {
    Ok(shortfall_cost_estimate(c, s)?.mean)
}

/// Planner objective: investment plus expected shortfall.
pub fn social_cost(c: &CapacityProfile, inst: &MarketInstance, s: &SampleSet) -> Result<f64> {
    Ok(social_cost_estimate(c, inst, s)?.mean)
}

pub fn social_cost_estimate(
    c: &CapacityProfile,
    inst: &MarketInstance,
    s: &SampleSet,
) -> Result<Estimate> {
    check_instance(inst, s)?;
    let shortfall = shortfall_cost_estimate(c, s)?;
    let investment: f64 = inst.costs().iter().zip(c.as_slice()).map(|(g, c)| g * c).sum();
    Ok(Estimate {
        mean: investment + shortfall.mean,
        std_error: shortfall.std_error,
    })
}

/// Expected payment to the largest producer `N`:
/// `E min{(D - sum_{j != N} Z_j C_j)^+, Z_N C_N}`.
pub fn payment_largest_estimate(c: &CapacityProfile, s: &SampleSet) -> Result<Estimate> {
    check_dims(c, s)?;
    let top = c.largest_index();
    let caps = c.as_slice();
    if caps[top] == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    Ok(stats::estimate(s.replicates(), |k| {
        largest_payment_at(s.row(k), s.d(k), caps, top)
    }))
}

pub fn payment_largest(c: &CapacityProfile, s: &SampleSet) -> Result<f64> {
    Ok(payment_largest_estimate(c, s)?.mean)
}

#[inline]
fn largest_payment_at(row: &[f64], d: f64, caps: &[f64], top: usize) -> f64 {
    let rest: f64 = row
        .iter()
        .zip(caps)
        .enumerate()
        .filter(|(j, _)| *j != top)
        .map(|(_, (z, c))| z * c)
        .sum();
    (d - rest).max(0.0).min(caps[top] * row[top])
}

struct PaymentMeans {
    top: usize,
    top_payment: f64,
    /// `G_i = E min(Z_i, D / C_i)`, zero where `C_i = 0`.
    g: Vec<f64>,
    payments: Vec<f64>,
}

fn payment_means(c: &CapacityProfile, s: &SampleSet) -> PaymentMeans {
    let n = c.len();
    let caps = c.as_slice();
    let top = c.largest_index();
    if caps[top] == 0.0 {
        return PaymentMeans {
            top,
            top_payment: 0.0,
            g: vec![0.0; n],
            payments: vec![0.0; n],
        };
    }
    let means = stats::estimate_many(s.replicates(), n + 1, |k, out| {
        let row = s.row(k);
        let d = s.d(k);
        out[0] = largest_payment_at(row, d, caps, top);
        for i in 0..n {
            out[i + 1] = if caps[i] > 0.0 {
                row[i].min(d / caps[i])
            } else {
                0.0
            };
        }
    });
    let top_payment = means[0].mean;
    let g: Vec<f64> = means[1..].iter().map(|e| e.mean).collect();
    let denom = caps[top] * g[top];
    let payments = if denom > 0.0 && top_payment > 0.0 {
        (0..n)
            .map(|i| {
                if i == top {
                    top_payment
                } else {
                    top_payment * caps[i] * g[i] / denom
                }
            })
            .collect()
    } else {
        vec![0.0; n]
    };
    PaymentMeans {
        top,
        top_payment,
        g,
        payments,
    }
}

/// Expected payment to every producer at the pricing equilibrium, in the
/// original producer order.
pub fn payments_all(c: &CapacityProfile, s: &SampleSet) -> Result<Vec<f64>> {
    check_dims(c, s)?;
    Ok(payment_means(c, s).payments)
}

/// [`payments_all`] with delta-method standard errors for the ratio form.
pub fn payments_all_estimates(c: &CapacityProfile, s: &SampleSet) -> Result<Vec<Estimate>> {
    check_dims(c, s)?;
    let pm = payment_means(c, s);
    let n = c.len();
    if pm.top_payment == 0.0 || pm.payments.iter().all(|p| *p == 0.0) {
        return Ok(pm.payments.iter().map(|p| Estimate::exact(*p)).collect());
    }
    let caps = c.as_slice();
    let top = pm.top;
    let g_top = pm.g[top];
    let influence = stats::estimate_many(s.replicates(), n, |k, out| {
        let row = s.row(k);
        let d = s.d(k);
        let a = largest_payment_at(row, d, caps, top) - pm.top_payment;
        let g_top_dev = row[top].min(d / caps[top]) - g_top;
        for i in 0..n {
            out[i] = if i == top {
                a
            } else if caps[i] > 0.0 && pm.g[i] > 0.0 {
                let g_dev = row[i].min(d / caps[i]) - pm.g[i];
                pm.payments[i] * (a / pm.top_payment + g_dev / pm.g[i] - g_top_dev / g_top)
            } else {
                0.0
            };
        }
    });
    Ok(pm
        .payments
        .iter()
        .zip(&influence)
        .map(|(p, inf)| Estimate {
            mean: *p,
            std_error: inf.std_error,
        })
        .collect())
}

/// Payment minus investment for producer `i`.
pub fn producer_profit(
    i: usize,
    c: &CapacityProfile,
    inst: &MarketInstance,
    s: &SampleSet,
) -> Result<f64> {
    if i >= c.len() {
        return Err(Error::IndexOutOfRange { index: i, n: c.len() });
    }
    check_instance(inst, s)?;
    Ok(payments_all(c, s)?[i] - inst.cost(i) * c.get(i))
}

/// Market efficiency: total investment cost over total payment.
pub fn efficiency(c: &CapacityProfile, inst: &MarketInstance, s: &SampleSet) -> Result<f64> {
    check_instance(inst, s)?;
    let paid: f64 = payments_all(c, s)?.iter().sum();
    if paid <= 0.0 {
        return Err(Error::ZeroTotalPayment);
    }
    let invested: f64 = inst.costs().iter().zip(c.as_slice()).map(|(g, c)| g * c).sum();
    Ok(invested / paid)
}

/// Symmetric equilibrium condition at common capacity `cap`:
/// `E[1{(D - cap sum_{j != i} Z_j)^+ >= cap Z_i} Z_i] - gamma`, averaged over `i`.
pub fn foc_residual_symmetric_estimate(
    cap: f64,
    inst: &MarketInstance,
    s: &SampleSet,
) -> Result<Estimate> {
    let gamma = inst.common_cost()?;
    check_instance(inst, s)?;
    check_capacity(cap)?;
    let n = s.n() as f64;
    Ok(stats::estimate(s.replicates(), |k| {
        let row = s.row(k);
        let d = s.d(k);
        let total: f64 = row.iter().sum();
        let mut hit = 0.0;
        for &z in row {
            let leftover = (d - cap * (total - z)).max(0.0);
            if leftover >= cap * z {
                hit += z;
            }
        }
        hit / n - gamma
    }))
}

pub fn foc_residual_symmetric(cap: f64, inst: &MarketInstance, s: &SampleSet) -> Result<f64> {
    Ok(foc_residual_symmetric_estimate(cap, inst, s)?.mean)
}

/// Planner stationarity along the symmetric ray:
/// `E[1(D >= cap sum_i Z_i) sum_i Z_i] - gamma N`.
pub fn planner_foc_residual_symmetric_estimate(
    cap: f64,
    inst: &MarketInstance,
    s: &SampleSet,
) -> Result<Estimate> {
    let gamma = inst.common_cost()?;
    check_instance(inst, s)?;
    check_capacity(cap)?;
    let target = gamma * s.n() as f64;
    Ok(stats::estimate(s.replicates(), |k| {
        let total: f64 = s.row(k).iter().sum();
        let covered = if s.d(k) >= cap * total { total } else { 0.0 };
        covered - target
    }))
}

pub fn planner_foc_residual_symmetric(
    cap: f64,
    inst: &MarketInstance,
    s: &SampleSet,
) -> Result<f64> {
    Ok(planner_foc_residual_symmetric_estimate(cap, inst, s)?.mean)
}

/// Per-producer marginal revenue at the top price minus cost:
/// `E[1{(D - sum_{j != i} C_j Z_j)^+ >= C_i Z_i} Z_i] - gamma_i`.
pub fn foc_residuals(c: &CapacityProfile, inst: &MarketInstance, s: &SampleSet) -> Result<Vec<f64>> {
    check_dims(c, s)?;
    check_instance(inst, s)?;
    let n = c.len();
    let caps = c.as_slice();
    let means = stats::estimate_many(s.replicates(), n, |k, out| {
        let row = s.row(k);
        let d = s.d(k);
        let total = supplied(row, caps);
        for i in 0..n {
            let own = caps[i] * row[i];
            let leftover = (d - (total - own)).max(0.0);
            out[i] = if leftover >= own { row[i] } else { 0.0 };
        }
    });
    Ok(means
        .iter()
        .zip(inst.costs())
        .map(|(m, g)| m.mean - g)
        .collect())
}

/// Analytic equilibrium of the deterministic game (`Z_i = 1`, fixed demand):
/// symmetric capacities `d / n` and efficiency `gamma`.
pub fn deterministic_baseline(gamma: f64, d: f64, n: usize) -> Result<(CapacityProfile, f64)> {
    if n == 0 {
        return Err(Error::ZeroProducers);
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInstance(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidInstance(format!("demand must be positive, got {d}")));
    }
    Ok((CapacityProfile::symmetric(n, d / n as f64)?, gamma))
}

/// Payment per producer at a symmetric profile, averaging the largest-producer
/// formula over every choice of producer. Unbiased when outputs are
/// exchangeable, with far lower variance than a single column.
pub fn payment_symmetric_estimate(cap: f64, s: &SampleSet) -> Result<Estimate> {
    check_capacity(cap)?;
    if cap == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let n = s.n() as f64;
    Ok(stats::estimate(s.replicates(), |k| {
        let row = s.row(k);
        let d = s.d(k);
        let total: f64 = row.iter().sum();
        let paid: f64 = row
            .iter()
            .map(|&z| (d - cap * (total - z)).max(0.0).min(cap * z))
            .sum();
        paid / n
    }))
}

/// Frequency of the event `0 <= D - sum_{i != N} C_i Z_i <= C_N Z_N` for the
/// largest producer `N`. With one producer this is `D <= C Z`.
pub fn atom_event_probability(c: &CapacityProfile, s: &SampleSet) -> Result<f64> {
    check_dims(c, s)?;
    let top = c.largest_index();
    let caps = c.as_slice();
    Ok(stats::mean(s.replicates(), |k| {
        let row = s.row(k);
        let rest: f64 = row
            .iter()
            .zip(caps)
            .enumerate()
            .filter(|(j, _)| *j != top)
            .map(|(_, (z, c))| z * c)
            .sum();
        let leftover = s.d(k) - rest;
        if leftover >= 0.0 && leftover <= caps[top] * row[top] {
            1.0
        } else {
            0.0
        }
    }))
}

/// Full report for an arbitrary profile, using [`payments_all`].
pub fn evaluate_profile(
    c: &CapacityProfile,
    inst: &MarketInstance,
    s: &SampleSet,
) -> Result<EquilibriumReport> {
    check_dims(c, s)?;
    check_instance(inst, s)?;
    let estimates = payments_all_estimates(c, s)?;
    let payments: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let payment_std_errors: Vec<f64> = estimates.iter().map(|e| e.std_error).collect();
    let total_se = estimates.iter().map(|e| e.std_error).sum::<f64>();
    build_report(c.clone(), inst, s, payments, payment_std_errors, total_se, None)
}

pub(crate) fn build_report(
    capacities: CapacityProfile,
    inst: &MarketInstance,
    s: &SampleSet,
    payments: Vec<f64>,
    payment_std_errors: Vec<f64>,
    total_payment_se: f64,
    note: Option<String>,
) -> Result<EquilibriumReport> {
    let invested: f64 = inst
        .costs()
        .iter()
        .zip(capacities.as_slice())
        .map(|(g, c)| g * c)
        .sum();
    let paid: f64 = payments.iter().sum();
    let profits = payments
        .iter()
        .zip(inst.costs().iter().zip(capacities.as_slice()))
        .map(|(p, (g, c))| p - g * c)
        .collect();
    let (efficiency, efficiency_std_error) = if paid > 0.0 {
        let xi = invested / paid;
        (Some(xi), xi * total_payment_se / paid)
    } else {
        (None, 0.0)
    };
    Ok(EquilibriumReport {
        social_cost: social_cost(&capacities, inst, s)?,
        foc_residuals: foc_residuals(&capacities, inst, s)?,
        diagnostics: Diagnostics {
            atom_event_probability: atom_event_probability(&capacities, s)?,
            markup: paid - invested,
            replicates: s.replicates(),
            seed: s.seed(),
            note,
        },
        capacities,
        payments,
        payment_std_errors,
        profits,
        efficiency,
        efficiency_std_error,
    })
}

/// Payment credited to a producer that deviates unilaterally.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaymentRule {
    /// The deviator bids the top price and sells into the leftover demand:
    /// `E min{(D - sum_{j != i} C_j Z_j)^+, x Z_i}` for every `x`.
    #[default]
    TopPrice,
    /// [`payments_all`]: top-price payment when the deviator is largest,
    /// otherwise the largest producer's payment scaled by the `C G` ratio.
    Proportional,
}

/// Profit of producer `i` as a function of its own capacity, with the other
/// capacities held fixed. Caches the others' supply per replicate so each
/// evaluation is a single pass over the replicates.
pub struct UnilateralProfit<'a> {
    s: &'a SampleSet,
    i: usize,
    rule: PaymentRule,
    gamma: f64,
    caps: Vec<f64>,
    /// `sum_{j != i} C_j Z_j` per replicate.
    rest: Vec<f64>,
    /// Largest other producer (highest index on ties) and its `G`.
    rival: Option<(usize, f64)>,
}

impl<'a> UnilateralProfit<'a> {
    pub fn new(
        i: usize,
        c: &CapacityProfile,
        inst: &MarketInstance,
        s: &'a SampleSet,
        rule: PaymentRule,
    ) -> Result<Self> {
        check_dims(c, s)?;
        check_instance(inst, s)?;
        if i >= c.len() {
            return Err(Error::IndexOutOfRange { index: i, n: c.len() });
        }
        let caps = c.as_slice().to_vec();
        let rest: Vec<f64> = (0..s.replicates())
            .map(|k| {
                s.row(k)
                    .iter()
                    .zip(&caps)
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, (z, c))| z * c)
                    .sum()
            })
            .collect();
        let mut rival: Option<usize> = None;
        for j in (0..caps.len()).filter(|&j| j != i) {
            if rival.is_none_or(|r| caps[j] >= caps[r]) {
                rival = Some(j);
            }
        }
        let rival = rival.map(|r| {
            let g = if caps[r] > 0.0 {
                stats::mean(s.replicates(), |k| s.z(k, r).min(s.d(k) / caps[r]))
            } else {
                0.0
            };
            (r, g)
        });
        Ok(Self {
            s,
            i,
            rule,
            gamma: inst.cost(i),
            caps,
            rest,
            rival,
        })
    }

    pub fn payment(&self, x: f64) -> f64 {
        let s = self.s;
        let i = self.i;
        let own_is_top = match self.rival {
            _ if self.rule == PaymentRule::TopPrice => true,
            None => true,
            Some((r, _)) => x > self.caps[r] || (x == self.caps[r] && i > r),
        };
        if own_is_top {
            if x == 0.0 {
                return 0.0;
            }
            return stats::mean(s.replicates(), |k| {
                (s.d(k) - self.rest[k]).max(0.0).min(x * s.z(k, i))
            });
        }
        let (r, g_rival) = self.rival.expect("rival exists when not top");
        let c_top = self.caps[r];
        if x == 0.0 || c_top == 0.0 || g_rival == 0.0 {
            return 0.0;
        }
        let means = stats::estimate_many(s.replicates(), 2, |k, out| {
            let z_top = s.z(k, r);
            let z_own = s.z(k, i);
            let d = s.d(k);
            let others = self.rest[k] - c_top * z_top + x * z_own;
            out[0] = (d - others).max(0.0).min(c_top * z_top);
            out[1] = z_own.min(d / x);
        });
        means[0].mean * x * means[1].mean / (c_top * g_rival)
    }

    pub fn profit(&self, x: f64) -> f64 {
        self.payment(x) - self.gamma * x
    }
}
