//! Symmetric Nash equilibria, planner optima, unilateral-deviation checks and
//! an exact enumeration oracle for small discrete instances.
//!
//! Every solve works on one fixed [`SampleSet`], so all candidate capacities
//! are compared on common random numbers. Sample-level first-order residuals
//! are step functions of capacity; roots are found by bisection on signs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    self, build_report, payment_symmetric_estimate, CapacityProfile, EquilibriumReport,
    MarketInstance, PaymentRule, UnilateralProfit,
};
use crate::stats;
use crate::stochastic::{DemandModel, Distribution, GenerationModel, SampleSet};

pub const DEFAULT_REPLICATES: usize = 200_000;
/// Points in the local best-response grid.
pub const LOCAL_GRID_POINTS: usize = 41;
/// Joint outcome limit for exact enumeration.
pub const MAX_OUTCOMES: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SolveSettings {
    /// Flag threshold for the first-order residual at a returned root.
    pub residual_tolerance: f64,
    /// Relative width at which bisection stops.
    pub capacity_tolerance: f64,
    pub max_bisection_iterations: usize,
    /// Sweep cap for coordinate descent and best-response dynamics.
    pub max_coordinate_sweeps: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Deviation payment used by equilibrium verification.
    pub payment_rule: PaymentRule,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-3,
            capacity_tolerance: 1e-3,
            max_bisection_iterations: 60,
            max_coordinate_sweeps: 200,
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            payment_rule: PaymentRule::TopPrice,
        }
    }
}

impl SolveSettings {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_payment_rule(mut self, rule: PaymentRule) -> Self {
        self.payment_rule = rule;
        self
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.residual_tolerance) || !positive(self.capacity_tolerance) {
            return Err(Error::InvalidSettings("tolerances must be positive".into()));
        }
        if self.max_bisection_iterations == 0 || self.max_coordinate_sweeps == 0 {
            return Err(Error::InvalidSettings("iteration limits must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::ZeroReplicates);
        }
        Ok(())
    }
}

/// Root of a non-increasing function with `f(lo) > 0 >= f(hi)`.
fn bisect<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    relative_tolerance: f64,
    absolute_floor: f64,
    max_iterations: usize,
) -> Result<f64> {
    for _ in 0..max_iterations {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= (relative_tolerance * mid).max(absolute_floor) {
            break;
        }
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

const NO_ENTRY_NOTE: &str = "investment cost is at least the mean output: no incentive to enter the market";

/// Symmetric Nash equilibrium of a symmetric instance, drawing its own
/// samples from `settings`.
pub fn solve_symmetric_equilibrium(
    inst: &MarketInstance,
    settings: &SolveSettings,
) -> Result<EquilibriumReport> {
    settings.validate()?;
    inst.common_cost()?;
    if inst.is_deterministic() {
        return deterministic_report(inst, settings);
    }
    let s = inst.sample(settings.replicates, settings.seed)?;
    solve_symmetric_equilibrium_with_samples(inst, &s, settings)
}

/// Closed-form equilibrium when outputs are exactly 1 and demand is fixed.
fn deterministic_report(inst: &MarketInstance, settings: &SolveSettings) -> Result<EquilibriumReport> {
    let gamma = inst.common_cost()?;
    let d = inst.demand().fixed_value().expect("deterministic instance has fixed demand");
    let (capacities, _) = market::deterministic_baseline(gamma, d, inst.n())?;
    // A single replicate represents the whole (degenerate) distribution.
    let s = inst.sample(1, settings.seed)?;
    let payments = capacities.as_slice().to_vec();
    let n = inst.n();
    let mut report = build_report(
        capacities,
        inst,
        &s,
        payments,
        vec![0.0; n],
        0.0,
        Some("deterministic producers: analytic equilibrium C = D / N".into()),
    )?;
    report.efficiency = Some(gamma);
    Ok(report)
}

/// [`solve_symmetric_equilibrium`] on a caller-supplied sample set.
///
/// The efficiency standard error comes from batch means: the root and the
/// payments share one sample, so the payment-only error would overstate it.
pub fn solve_symmetric_equilibrium_with_samples(
    inst: &MarketInstance,
    s: &SampleSet,
    settings: &SolveSettings,
) -> Result<EquilibriumReport> {
    settings.validate()?;
    let gamma = inst.common_cost()?;
    let n = inst.n();
    let Some(cap) = symmetric_root(inst, s, settings)? else {
        return build_report(
            CapacityProfile::zeros(n),
            inst,
            s,
            vec![0.0; n],
            vec![0.0; n],
            0.0,
            Some(NO_ENTRY_NOTE.into()),
        );
    };
    let mut note = None;
    let at_root = market::foc_residual_symmetric(cap, inst, s)?;
    if at_root.abs() > settings.residual_tolerance {
        note = Some(format!(
            "first-order residual {at_root:.3e} at the root exceeds the tolerance {:.1e} \
             (sample residual is a step function)",
            settings.residual_tolerance
        ));
    }
    let pay = payment_symmetric_estimate(cap, s)?;
    let mut report = build_report(
        CapacityProfile::symmetric(n, cap)?,
        inst,
        s,
        vec![pay.mean; n],
        vec![pay.std_error; n],
        n as f64 * pay.std_error,
        note,
    )?;
    if let Some(se) = batch_efficiency_std_error(inst, s, settings, gamma)? {
        report.efficiency_std_error = se;
    }
    Ok(report)
}

/// Root of the sample first-order residual, or `None` when entering never
/// pays.
fn symmetric_root(inst: &MarketInstance, s: &SampleSet, settings: &SolveSettings) -> Result<Option<f64>> {
    let gamma = inst.common_cost()?;
    let n = inst.n();
    let residual = |cap: f64| market::foc_residual_symmetric(cap, inst, s);
    let at_zero = residual(0.0)?;
    if at_zero <= 0.0 {
        return Ok(None);
    }
    let upper = s.mean_demand() / gamma;
    let at_upper = residual(upper)?;
    if at_upper > 0.0 {
        return Err(Error::BracketFailure {
            upper,
            lo_residual: at_zero,
            hi_residual: at_upper,
        });
    }
    // The residual's slope in C grows with n, so the bracket shrinks as 1/n.
    bisect(
        residual,
        0.0,
        upper,
        settings.capacity_tolerance / n as f64,
        upper * 1e-12,
        settings.max_bisection_iterations,
    )
    .map(Some)
}

/// Number of batches for batch-means efficiency errors.
pub const EFFICIENCY_BATCHES: usize = 20;
const MIN_BATCH_REPLICATES: usize = 1000;

fn batch_efficiency_std_error(
    inst: &MarketInstance,
    s: &SampleSet,
    settings: &SolveSettings,
    gamma: f64,
) -> Result<Option<f64>> {
    let size = s.replicates() / EFFICIENCY_BATCHES;
    if size < MIN_BATCH_REPLICATES {
        return Ok(None);
    }
    let mut xis = Vec::with_capacity(EFFICIENCY_BATCHES);
    for b in 0..EFFICIENCY_BATCHES {
        let batch = s.subset(b * size..(b + 1) * size)?;
        let Some(cap) = symmetric_root(inst, &batch, settings)? else {
            return Ok(None);
        };
        let pay = payment_symmetric_estimate(cap, &batch)?.mean;
        if pay <= 0.0 {
            return Ok(None);
        }
        xis.push(gamma * cap / pay);
    }
    Ok(Some(stats::estimate(xis.len(), |b| xis[b]).std_error))
}

fn require_exchangeable(inst: &MarketInstance) -> Result<f64> {
    let gamma = inst.common_cost()?;
    if !inst.generation().is_exchangeable() {
        return Err(Error::InvalidInstance(
            "symmetric reduction needs identically distributed producers".into(),
        ));
    }
    Ok(gamma)
}

/// Planner optimum along the symmetric ray.
pub fn solve_social_planner_symmetric(
    inst: &MarketInstance,
    settings: &SolveSettings,
) -> Result<CapacityProfile> {
    settings.validate()?;
    require_exchangeable(inst)?;
    let s = inst.sample(settings.replicates, settings.seed)?;
    solve_social_planner_symmetric_with_samples(inst, &s, settings)
}

pub fn solve_social_planner_symmetric_with_samples(
    inst: &MarketInstance,
    s: &SampleSet,
    settings: &SolveSettings,
) -> Result<CapacityProfile> {
    settings.validate()?;
    let gamma = require_exchangeable(inst)?;
    let n = inst.n();
    let residual = |cap: f64| market::planner_foc_residual_symmetric(cap, inst, s);
    let at_zero = residual(0.0)?;
    if at_zero <= 0.0 {
        return Ok(CapacityProfile::zeros(n));
    }
    let upper = s.mean_demand() / (gamma * n as f64);
    let at_upper = residual(upper)?;
    if at_upper > 0.0 {
        return Err(Error::BracketFailure {
            upper,
            lo_residual: at_zero,
            hi_residual: at_upper,
        });
    }
    let cap = bisect(
        residual,
        0.0,
        upper,
        settings.capacity_tolerance / n as f64,
        upper * 1e-12,
        settings.max_bisection_iterations,
    )?;
    CapacityProfile::symmetric(n, cap)
}

/// Planner optimum over all profiles by coordinate descent.
pub fn solve_social_planner_general(
    inst: &MarketInstance,
    settings: &SolveSettings,
) -> Result<CapacityProfile> {
    settings.validate()?;
    let s = inst.sample(settings.replicates, settings.seed)?;
    solve_social_planner_general_with_samples(inst, &s, settings)
}

pub fn solve_social_planner_general_with_samples(
    inst: &MarketInstance,
    s: &SampleSet,
    settings: &SolveSettings,
) -> Result<CapacityProfile> {
    settings.validate()?;
    if inst.n() != s.n() {
        return Err(Error::DimensionMismatch {
            expected: s.n(),
            found: inst.n(),
        });
    }
    let n = inst.n();
    let r = s.replicates();
    let mean_d = s.mean_demand();
    let mut caps: Vec<f64> = if inst.is_symmetric() && inst.generation().is_exchangeable() {
        solve_social_planner_symmetric_with_samples(inst, s, settings)?.into()
    } else {
        inst.costs().iter().map(|g| mean_d / (g * n as f64)).collect()
    };
    let mut supply: Vec<f64> = (0..r)
        .map(|k| s.row(k).iter().zip(&caps).map(|(z, c)| z * c).sum())
        .collect();
    let scale = mean_d / inst.gamma_max();
    for _ in 0..settings.max_coordinate_sweeps {
        let mut largest_change: f64 = 0.0;
        for i in 0..n {
            let gamma = inst.cost(i);
            let old = caps[i];
            let supply_ref = &supply;
            // Derivative of social cost in C_i, non-decreasing in x.
            let derivative = |x: f64| -> Result<f64> {
                Ok(gamma
                    - stats::mean(r, |k| {
                        let z = s.z(k, i);
                        let others = supply_ref[k] - old * z;
                        if s.d(k) >= others + x * z {
                            z
                        } else {
                            0.0
                        }
                    }))
            };
            let new = if derivative(0.0)? >= 0.0 {
                0.0
            } else {
                let upper = mean_d / gamma;
                bisect(
                    |x| derivative(x).map(|v| -v),
                    0.0,
                    upper,
                    0.1 * settings.capacity_tolerance,
                    upper * 1e-12,
                    settings.max_bisection_iterations,
                )?
            };
            if new != old {
                for (k, t) in supply.iter_mut().enumerate() {
                    *t += (new - old) * s.z(k, i);
                }
                caps[i] = new;
            }
            let change = (new - old).abs() / old.max(new).max(1e-9 * scale);
            largest_change = largest_change.max(change);
        }
        if largest_change < settings.capacity_tolerance {
            return CapacityProfile::new(caps);
        }
    }
    Err(Error::IterationLimitExceeded {
        iterations: settings.max_coordinate_sweeps,
    })
}

/// Producer `i`'s profit across candidate capacities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestResponseCurve {
    pub producer: usize,
    /// `(capacity, profit)` in grid order.
    pub points: Vec<(f64, f64)>,
    pub argmax: f64,
    pub max_profit: f64,
}

pub fn best_response_sweep(
    i: usize,
    c: &CapacityProfile,
    inst: &MarketInstance,
    grid: &[f64],
    s: &SampleSet,
    rule: PaymentRule,
) -> Result<BestResponseCurve> {
    if i >= c.len() {
        return Err(Error::IndexOutOfRange { index: i, n: c.len() });
    }
    if grid.is_empty() {
        return Err(Error::InvalidCapacity("capacity grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidCapacity(format!(
            "grid capacities must be finite and non-negative, got {bad}"
        )));
    }
    let eval = UnilateralProfit::new(i, c, inst, s, rule)?;
    let points: Vec<(f64, f64)> = grid.iter().map(|&x| (x, eval.profit(x))).collect();
    let (argmax, max_profit) = points
        .iter()
        .copied()
        .fold((grid[0], f64::NEG_INFINITY), |best, p| if p.1 > best.1 { p } else { best });
    Ok(BestResponseCurve {
        producer: i,
        points,
        argmax,
        max_profit,
    })
}

/// Evenly spaced grid of `points` values on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|j| lo + (hi - lo) * j as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// The local deviation grid used by [`verify_equilibrium`].
pub fn local_grid(c_i: f64, gamma_i: f64, mean_demand: f64) -> Vec<f64> {
    if c_i > 0.0 {
        linear_grid(0.5 * c_i, 1.5 * c_i, LOCAL_GRID_POINTS)
    } else {
        linear_grid(0.0, mean_demand / gamma_i, LOCAL_GRID_POINTS)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Best local-grid profit minus current profit, per producer.
    pub gains: Vec<f64>,
    /// Grid capacity attaining the best profit, per producer.
    pub best_deviations: Vec<f64>,
    pub max_gain: f64,
    pub epsilon: f64,
    pub is_equilibrium: bool,
    pub payments: Vec<f64>,
    pub payment_std_errors: Vec<f64>,
}

/// Checks every producer for a profitable unilateral deviation on its local
/// grid; `epsilon = max(3 standard errors, 1e-3 * total payment)`.
pub fn verify_equilibrium(
    c: &CapacityProfile,
    inst: &MarketInstance,
    settings: &SolveSettings,
) -> Result<VerificationReport> {
    settings.validate()?;
    let s = inst.sample(settings.replicates, settings.seed)?;
    verify_equilibrium_with_samples(c, inst, &s, settings.payment_rule)
}

pub fn verify_equilibrium_with_samples(
    c: &CapacityProfile,
    inst: &MarketInstance,
    s: &SampleSet,
    rule: PaymentRule,
) -> Result<VerificationReport> {
    let estimates = market::payments_all_estimates(c, s)?;
    let total: f64 = estimates.iter().map(|e| e.mean).sum();
    let worst_se = estimates.iter().map(|e| e.std_error).fold(0.0, f64::max);
    let epsilon = (3.0 * worst_se).max(1e-3 * total);
    let mean_d = s.mean_demand();
    let mut gains = Vec::with_capacity(c.len());
    let mut best_deviations = Vec::with_capacity(c.len());
    for i in 0..c.len() {
        let grid = local_grid(c.get(i), inst.cost(i), mean_d);
        let eval = UnilateralProfit::new(i, c, inst, s, rule)?;
        let current = eval.profit(c.get(i));
        let curve = best_response_sweep(i, c, inst, &grid, s, rule)?;
        let gain = (curve.max_profit - current).max(0.0);
        gains.push(gain);
        best_deviations.push(if gain > 0.0 { curve.argmax } else { c.get(i) });
    }
    let max_gain = gains.iter().copied().fold(0.0, f64::max);
    Ok(VerificationReport {
        is_equilibrium: max_gain <= epsilon,
        gains,
        best_deviations,
        max_gain,
        epsilon,
        payments: estimates.iter().map(|e| e.mean).collect(),
        payment_std_errors: estimates.iter().map(|e| e.std_error).collect(),
    })
}

/// Maximiser of a producer's profit on `[0, upper]`: grid search followed by
/// golden-section refinement. The search starts on
/// the local grid around `current` and widens to `[0, upper]` when the best
/// point sits on the local grid's edge.
fn best_response(eval: &UnilateralProfit<'_>, current: f64, upper: f64, tolerance: f64) -> f64 {
    let scan = |grid: &[f64]| {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, &x) in grid.iter().enumerate() {
            let p = eval.profit(x);
            if p > best.1 {
                best = (j, p);
            }
        }
        best
    };
    let mut grid = if current > 0.0 {
        linear_grid(0.5 * current, (1.5 * current).min(upper), LOCAL_GRID_POINTS)
    } else {
        linear_grid(0.0, upper, LOCAL_GRID_POINTS)
    };
    let (mut j, mut best_p) = scan(&grid);
    if current > 0.0 && (j == 0 || j == grid.len() - 1) {
        grid = linear_grid(0.0, upper, LOCAL_GRID_POINTS);
        (j, best_p) = scan(&grid);
    }
    let best_x = grid[j];
    let step = grid[1] - grid[0];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = (best_x - step).max(0.0);
    let mut b = (best_x + step).min(upper);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut p1 = eval.profit(x1);
    let mut p2 = eval.profit(x2);
    while b - a > tolerance * b.max(1e-12) {
        if p1 < p2 {
            a = x1;
            x1 = x2;
            p1 = p2;
            x2 = a + inv_phi * (b - a);
            p2 = eval.profit(x2);
        } else {
            b = x2;
            x2 = x1;
            p2 = p1;
            x1 = b - inv_phi * (b - a);
            p1 = eval.profit(x1);
        }
    }
    let refined = 0.5 * (a + b);
    if eval.profit(refined) >= best_p {
        refined
    } else {
        best_x
    }
}

/// Gauss-Seidel best-response dynamics from `start` under
/// `settings.payment_rule`. Produces candidate
/// (possibly asymmetric) equilibria for [`verify_equilibrium`]; convergence
/// is not guaranteed in general.
pub fn best_response_dynamics(
    inst: &MarketInstance,
    start: &CapacityProfile,
    s: &SampleSet,
    settings: &SolveSettings,
) -> Result<CapacityProfile> {
    settings.validate()?;
    let mean_d = s.mean_demand();
    let mut c = start.clone();
    for _ in 0..settings.max_coordinate_sweeps {
        let mut largest_change: f64 = 0.0;
        for i in 0..c.len() {
            let eval = UnilateralProfit::new(i, &c, inst, s, settings.payment_rule)?;
            let upper = mean_d / inst.cost(i);
            let next = best_response(&eval, c.get(i), upper, 0.1 * settings.capacity_tolerance);
            let old = c.get(i);
            largest_change = largest_change.max((next - old).abs() / old.max(next).max(1e-12));
            c = c.with_capacity(i, next)?;
        }
        if largest_change < settings.capacity_tolerance {
            return Ok(c);
        }
    }
    Err(Error::IterationLimitExceeded {
        iterations: settings.max_coordinate_sweeps,
    })
}

/// Finite-support random variable for exact enumeration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteLaw {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl FiniteLaw {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Self {
        Self { values, probs }
    }

    pub fn equiprobable(values: Vec<f64>) -> Self {
        let p = 1.0 / values.len() as f64;
        let probs = vec![p; values.len()];
        Self { values, probs }
    }

    fn distribution(&self) -> Distribution {
        Distribution::discrete(self.values.clone(), self.probs.clone())
    }
}

/// Independent producers and demand with finite supports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub outputs: Vec<FiniteLaw>,
    pub demand: FiniteLaw,
    pub costs: Vec<f64>,
}

impl DiscreteInstance {
    pub fn new(outputs: Vec<FiniteLaw>, demand: FiniteLaw, costs: Vec<f64>) -> Result<Self> {
        let inst = Self {
            outputs,
            demand,
            costs,
        };
        inst.market_instance()?;
        if inst.demand.values.iter().any(|d| *d <= 0.0) {
            return Err(Error::InvalidDistribution("demand support must be positive".into()));
        }
        inst.check_outcomes()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.outputs.len()
    }

    pub fn outcome_count(&self) -> u128 {
        self.outputs
            .iter()
            .chain(std::iter::once(&self.demand))
            .map(|law| law.values.len() as u128)
            .product()
    }

    fn check_outcomes(&self) -> Result<()> {
        let outcomes = self.outcome_count();
        if outcomes > MAX_OUTCOMES {
            return Err(Error::OutcomeExplosion {
                outcomes,
                limit: MAX_OUTCOMES,
            });
        }
        Ok(())
    }

    /// The same instance as a sampled market.
    pub fn market_instance(&self) -> Result<MarketInstance> {
        let marginals = self.outputs.iter().map(FiniteLaw::distribution).collect();
        MarketInstance::new(
            self.costs.clone(),
            GenerationModel::Independent { marginals },
            DemandModel::new(self.demand.distribution())?,
        )
    }

    pub fn sample(&self, replicates: usize, seed: u64) -> Result<SampleSet> {
        self.market_instance()?.sample(replicates, seed)
    }
}

/// Exact expectations over the joint outcome grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleExpectations {
    pub shortfall: f64,
    pub largest_payment: f64,
    pub payments: Vec<f64>,
    pub social_cost: f64,
}

/// Enumerates every joint outcome of a [`DiscreteInstance`] and evaluates the
/// market formulas exactly.
pub fn oracle_expectations(d: &DiscreteInstance, c: &CapacityProfile) -> Result<OracleExpectations> {
    d.check_outcomes()?;
    let n = d.n();
    if c.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: c.len(),
        });
    }
    let caps = c.as_slice();
    let mut top = 0;
    for i in 0..n {
        if caps[i] >= caps[top] {
            top = i;
        }
    }
    let mut laws: Vec<&FiniteLaw> = d.outputs.iter().collect();
    laws.push(&d.demand);
    let mut digits = vec![0usize; n + 1];
    let mut shortfall = 0.0;
    let mut largest_payment = 0.0;
    'outer: loop {
        let mut weight = 1.0;
        for (law, &j) in laws.iter().zip(&digits) {
            weight *= law.probs[j];
        }
        let demand = d.demand.values[digits[n]];
        let mut supply = 0.0;
        let mut others = 0.0;
        for i in 0..n {
            let out = caps[i] * d.outputs[i].values[digits[i]];
            supply += out;
            if i != top {
                others += out;
            }
        }
        let own = caps[top] * d.outputs[top].values[digits[top]];
        shortfall += weight * (demand - supply).max(0.0);
        largest_payment += weight * (demand - others).max(0.0).min(own);
        for (digit, law) in digits.iter_mut().zip(&laws) {
            *digit += 1;
            if *digit < law.values.len() {
                continue 'outer;
            }
            *digit = 0;
        }
        break;
    }
    // G_i only involves the pair (Z_i, D), which are independent.
    let g = |i: usize| -> f64 {
        if caps[i] == 0.0 {
            return 0.0;
        }
        let zi = &d.outputs[i];
        let mut total = 0.0;
        for (z, pz) in zi.values.iter().zip(&zi.probs) {
            for (dv, pd) in d.demand.values.iter().zip(&d.demand.probs) {
                total += pz * pd * z.min(dv / caps[i]);
            }
        }
        total
    };
    let g_top = g(top);
    let payments: Vec<f64> = (0..n)
        .map(|i| {
            if caps[top] == 0.0 || g_top == 0.0 {
                0.0
            } else if i == top {
                largest_payment
            } else {
                largest_payment * caps[i] * g(i) / (caps[top] * g_top)
            }
        })
        .collect();
    let investment: f64 = d.costs.iter().zip(caps).map(|(g, c)| g * c).sum();
    Ok(OracleExpectations {
        shortfall,
        largest_payment,
        payments,
        social_cost: investment + shortfall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> GenerationModel {
        GenerationModel::iid(Distribution::uniform(0.0, 1.0))
    }

    fn one_player() -> MarketInstance {
        MarketInstance::symmetric(1, 0.25, uniform(), DemandModel::fixed(1.0).unwrap()).unwrap()
    }

    fn two_player() -> MarketInstance {
        MarketInstance::symmetric(2, 0.25, uniform(), DemandModel::uniform(0.75, 1.25).unwrap())
            .unwrap()
    }

    fn settings(seed: u64) -> SolveSettings {
        SolveSettings::default().with_seed(seed)
    }

    #[test]
    fn settings_validation() {
        assert!(SolveSettings::default().validate().is_ok());
        let mut bad = SolveSettings::default();
        bad.capacity_tolerance = 0.0;
        assert!(matches!(bad.validate(), Err(Error::InvalidSettings(_))));
        let bad = SolveSettings::default().with_replicates(0);
        assert!(matches!(bad.validate(), Err(Error::ZeroReplicates)));
        let json = serde_json::to_string(&SolveSettings::default()).unwrap();
        let back: SolveSettings = serde_json::from_str(&json).unwrap();
        assert_eq!(back, SolveSettings::default());
        let partial: SolveSettings = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.replicates, DEFAULT_REPLICATES);
    }

    #[test]
    fn bisect_finds_linear_root() {
        let root = bisect(|x| Ok(1.0 - x), 0.0, 4.0, 1e-9, 0.0, 100).unwrap();
        assert!((root - 1.0).abs() < 1e-8);
    }

    #[test]
    fn one_player_closed_form() {
        let report = solve_symmetric_equilibrium(&one_player(), &settings(1)).unwrap();
        let c = report.capacities.get(0);
        assert!((c - 2f64.sqrt()).abs() < 0.02, "{c}");
        assert!((report.payments[0] - 0.64645).abs() < 0.01);
        assert!((report.profits[0] - 0.29289).abs() < 0.01);
        assert!((report.efficiency.unwrap() - 0.5469).abs() < 0.01);
        assert!((report.diagnostics.atom_event_probability - 0.2929).abs() < 0.01);
    }

    #[test]
    fn no_entry_when_cost_exceeds_mean_output() {
        let inst = MarketInstance::symmetric(3, 0.6, uniform(), DemandModel::fixed(1.0).unwrap())
            .unwrap();
        let report = solve_symmetric_equilibrium(&inst, &settings(2)).unwrap();
        assert!(report.capacities.as_slice().iter().all(|c| *c == 0.0));
        assert!(report.diagnostics.note.as_deref().unwrap().contains("no incentive"));
        assert!(report.efficiency.is_none());
        let planner = solve_social_planner_symmetric(&inst, &settings(2)).unwrap();
        assert_eq!(planner.total(), 0.0);
    }

    #[test]
    fn two_player_equilibrium_and_planner_agree() {
        let inst = two_player();
        let set = settings(3);
        let s = inst.sample(set.replicates, set.seed).unwrap();
        let ne = solve_symmetric_equilibrium_with_samples(&inst, &s, &set).unwrap();
        let c = ne.capacities.get(0);
        assert!((c - 0.86).abs() < 0.03, "{c}");
        assert!((ne.total_capacity() - 1.71).abs() < 0.05);
        let planner = solve_social_planner_symmetric_with_samples(&inst, &s, &set).unwrap();
        assert!((planner.get(0) - c).abs() <= 0.02 * c);
        assert!(2.0 * c <= s.mean_demand() / 0.25);
    }

    #[test]
    fn asymmetric_instance_is_rejected() {
        let inst = MarketInstance::new(vec![0.2, 0.3], uniform(), DemandModel::fixed(1.0).unwrap())
            .unwrap();
        assert!(matches!(
            solve_symmetric_equilibrium(&inst, &settings(0)),
            Err(Error::AsymmetricInstance)
        ));
        assert!(matches!(
            solve_social_planner_symmetric(&inst, &settings(0)),
            Err(Error::AsymmetricInstance)
        ));
    }

    #[test]
    fn deterministic_analytic_path() {
        let gen = GenerationModel::iid(Distribution::point_mass(1.0));
        let inst = MarketInstance::symmetric(5, 0.15, gen, DemandModel::fixed(5.0).unwrap()).unwrap();
        let report = solve_symmetric_equilibrium(&inst, &settings(0)).unwrap();
        assert_eq!(report.efficiency, Some(0.15));
        assert!(report.capacities.as_slice().iter().all(|c| *c == 1.0));
        let planner = solve_social_planner_general(&inst, &settings(0).with_replicates(10)).unwrap();
        assert!((planner.total() - 5.0).abs() < 5e-3);
    }

    #[test]
    fn general_planner_stays_symmetric() {
        let inst = MarketInstance::symmetric(3, 0.25, uniform(), DemandModel::uniform(0.75, 1.25).unwrap())
            .unwrap();
        let set = settings(4).with_replicates(50_000);
        let c = solve_social_planner_general(&inst, &set).unwrap();
        assert!(c.max_min_ratio() <= 1.05, "{c:?}");
    }

    #[test]
    fn general_planner_matches_symmetric_cost() {
        let inst = two_player();
        let set = settings(5).with_replicates(50_000);
        let s = inst.sample(set.replicates, set.seed).unwrap();
        let general = solve_social_planner_general_with_samples(&inst, &s, &set).unwrap();
        let symmetric = solve_social_planner_symmetric_with_samples(&inst, &s, &set).unwrap();
        let a = market::social_cost(&general, &inst, &s).unwrap();
        let b = market::social_cost(&symmetric, &inst, &s).unwrap();
        assert!(a <= b + 1e-4, "{a} vs {b}");
    }

    #[test]
    fn general_planner_from_asymmetric_start() {
        let inst = MarketInstance::new(vec![0.2, 0.3], uniform(), DemandModel::fixed(1.0).unwrap())
            .unwrap();
        let set = settings(6).with_replicates(50_000);
        let s = inst.sample(set.replicates, set.seed).unwrap();
        let c = solve_social_planner_general_with_samples(&inst, &s, &set).unwrap();
        let base = market::social_cost(&c, &inst, &s).unwrap();
        for i in 0..2 {
            for factor in [0.95, 1.05] {
                let moved = c.with_capacity(i, c.get(i) * factor).unwrap();
                assert!(market::social_cost(&moved, &inst, &s).unwrap() >= base - 1e-9);
            }
        }
        assert!(c.as_slice().iter().copied().fold(f64::INFINITY, f64::min) <= s.mean_demand() / (0.2 * 2.0) + 1e-3);
    }

    #[test]
    fn sweep_on_one_player_grid() {
        let inst = one_player();
        let s = inst.sample(200_000, 7).unwrap();
        let grid = [1.0, 1.2, 2f64.sqrt(), 1.6, 1.8];
        let c = CapacityProfile::new(vec![1.0]).unwrap();
        let curve = best_response_sweep(0, &c, &inst, &grid, &s, PaymentRule::TopPrice).unwrap();
        assert_eq!(curve.argmax, 2f64.sqrt());
        let zero = best_response_sweep(0, &c, &inst, &[0.0], &s, PaymentRule::TopPrice).unwrap();
        assert_eq!(zero.points, vec![(0.0, 0.0)]);
        assert!(best_response_sweep(1, &c, &inst, &grid, &s, PaymentRule::TopPrice).is_err());
        assert!(best_response_sweep(0, &c, &inst, &[], &s, PaymentRule::TopPrice).is_err());
        assert!(best_response_sweep(0, &c, &inst, &[-1.0], &s, PaymentRule::TopPrice).is_err());
    }

    #[test]
    fn verification_accepts_equilibrium_and_rejects_deviations() {
        let inst = two_player();
        let set = settings(8);
        let s = inst.sample(set.replicates, set.seed).unwrap();
        let ne = solve_symmetric_equilibrium_with_samples(&inst, &s, &set).unwrap();
        let ok = verify_equilibrium_with_samples(&ne.capacities, &inst, &s, PaymentRule::TopPrice).unwrap();
        assert!(ok.is_equilibrium, "{ok:?}");
        let doubled = CapacityProfile::symmetric(2, 2.0 * ne.capacities.get(0)).unwrap();
        let bad = verify_equilibrium_with_samples(&doubled, &inst, &s, PaymentRule::TopPrice).unwrap();
        assert!(!bad.is_equilibrium);
        let zero = verify_equilibrium_with_samples(&CapacityProfile::zeros(2), &inst, &s, PaymentRule::TopPrice).unwrap();
        assert!(!zero.is_equilibrium);
        assert!(zero.max_gain > 0.0);
    }

    #[test]
    fn best_response_dynamics_reach_symmetric_equilibrium() {
        let inst = two_player();
        let set = settings(9).with_replicates(100_000);
        let s = inst.sample(set.replicates, set.seed).unwrap();
        let start = CapacityProfile::new(vec![0.5, 1.2]).unwrap();
        let c = best_response_dynamics(&inst, &start, &s, &set).unwrap();
        assert!((c.get(0) - 0.86).abs() < 0.03 && (c.get(1) - 0.86).abs() < 0.03, "{c:?}");
        let v = verify_equilibrium_with_samples(&c, &inst, &s, PaymentRule::TopPrice).unwrap();
        assert!(v.is_equilibrium, "{v:?}");
    }

    /// Under the proportional rule a smaller producer gains by shading below
    /// the symmetric root; dynamics settle on an asymmetric profile instead.
    #[test]
    fn proportional_rule_has_asymmetric_fixed_point() {
        let inst = two_player();
        let set = settings(9)
            .with_replicates(100_000)
            .with_payment_rule(PaymentRule::Proportional);
        let s = inst.sample(set.replicates, set.seed).unwrap();
        let ne = solve_symmetric_equilibrium_with_samples(&inst, &s, &set).unwrap();
        let sym = verify_equilibrium_with_samples(&ne.capacities, &inst, &s, PaymentRule::Proportional)
            .unwrap();
        assert!(!sym.is_equilibrium);
        assert!(sym.best_deviations.iter().all(|x| *x < ne.capacities.get(0)));
        let start = CapacityProfile::new(vec![0.5, 1.2]).unwrap();
        let c = best_response_dynamics(&inst, &start, &s, &set).unwrap();
        assert!(c.max_min_ratio() > 1.1, "{c:?}");
        let v = verify_equilibrium_with_samples(&c, &inst, &s, PaymentRule::Proportional).unwrap();
        assert!(v.is_equilibrium, "{v:?}");
    }

    fn three_point_instance() -> DiscreteInstance {
        let z = FiniteLaw::equiprobable(vec![0.0, 0.5, 1.0]);
        DiscreteInstance::new(vec![z.clone(), z], FiniteLaw::new(vec![1.0], vec![1.0]), vec![0.2, 0.2])
            .unwrap()
    }

    /// Hand enumeration of the nine equally likely outcomes with `C = (1, 1)`.
    #[test]
    fn oracle_three_point_values() {
        let d = three_point_instance();
        let c = CapacityProfile::new(vec![1.0, 1.0]).unwrap();
        let o = oracle_expectations(&d, &c).unwrap();
        let mut short = 0.0;
        let mut top = 0.0;
        for z1 in [0.0, 0.5, 1.0] {
            for z2 in [0.0, 0.5, 1.0] {
                short += (1.0f64 - z1 - z2).max(0.0) / 9.0;
                top += (1.0f64 - z1).max(0.0).min(z2) / 9.0;
            }
        }
        assert!((short - 2.0 / 9.0).abs() < 1e-15);
        assert!((top - 5.0 / 18.0).abs() < 1e-15);
        assert!((o.shortfall - 2.0 / 9.0).abs() < 1e-12);
        assert!((o.largest_payment - 5.0 / 18.0).abs() < 1e-12);
        assert!((o.payments[0] - 5.0 / 18.0).abs() < 1e-12);
        assert!((o.social_cost - (0.4 + 2.0 / 9.0)).abs() < 1e-12);

        let zero = oracle_expectations(&d, &CapacityProfile::zeros(2)).unwrap();
        assert!((zero.shortfall - 1.0).abs() < 1e-12);
        assert_eq!(zero.payments, vec![0.0, 0.0]);
    }

    #[test]
    fn oracle_rejects_large_grids() {
        let z = FiniteLaw::equiprobable((0..10).map(|v| v as f64 / 10.0).collect());
        let ok = DiscreteInstance::new(vec![z.clone(); 6], FiniteLaw::new(vec![1.0], vec![1.0]), vec![0.2; 6]);
        assert_eq!(ok.unwrap().outcome_count(), MAX_OUTCOMES);
        let err = DiscreteInstance::new(vec![z; 7], FiniteLaw::new(vec![1.0], vec![1.0]), vec![0.2; 7]);
        assert!(matches!(err, Err(Error::OutcomeExplosion { .. })));
    }

    #[test]
    fn sampled_discrete_matches_oracle() {
        let d = three_point_instance();
        let c = CapacityProfile::new(vec![0.7, 1.3]).unwrap();
        let o = oracle_expectations(&d, &c).unwrap();
        let s = d.sample(200_000, 10).unwrap();
        let short = market::shortfall_cost_estimate(&c, &s).unwrap();
        assert!(short.agrees_with(o.shortfall, 3.0), "{short:?} vs {}", o.shortfall);
        let pay = market::payments_all_estimates(&c, &s).unwrap();
        for (p, exact) in pay.iter().zip(&o.payments) {
            assert!(p.agrees_with(*exact, 3.0), "{p:?} vs {exact}");
        }
    }
}
