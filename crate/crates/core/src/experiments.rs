//! Efficiency and capacity curves across producer counts, social-cost curves
//! along the symmetric ray and the asymmetric price-of-anarchy check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{self, CapacityProfile, MarketInstance, PaymentRule};
use crate::solver::{self, SolveSettings};
use crate::stochastic::{DemandModel, GenerationModel, SampleSet};

pub use crate::market::atom_event_probability;

/// Replicates per producer count keep standard errors roughly uniform in `n`.
pub fn replicates_for(n: usize, base: usize) -> usize {
    base.max(1_000 * n)
}

/// Smallest producer count beyond which the efficiency bound applies:
/// `1 / ((D_min / D_max) gamma)`.
pub fn entry_threshold(gamma: f64, demand: &DemandModel) -> f64 {
    demand.d_max() / (demand.d_min() * gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub capacity: f64,
    pub total_capacity: f64,
    /// Total capacity over mean demand.
    pub capacity_ratio: f64,
    /// `None` when nobody enters.
    pub efficiency: Option<f64>,
    pub efficiency_std_error: f64,
    pub markup: f64,
    pub atom_event_probability: f64,
    pub replicates: usize,
    pub below_threshold: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub gamma: f64,
    pub generation: GenerationModel,
    pub demand: DemandModel,
    pub settings: SolveSettings,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCurve {
    pub metadata: CurveMetadata,
    /// Sorted by `n`.
    pub rows: Vec<CurveRow>,
}

impl EfficiencyCurve {
    pub fn row(&self, n: usize) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// `n, capacity, ... , below_threshold` rows with a header.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "capacity",
            "total_capacity",
            "capacity_ratio",
            "efficiency",
            "efficiency_std_error",
            "markup",
            "atom_event_probability",
            "replicates",
            "below_threshold",
        ])
        ?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.capacity.to_string(),
                r.total_capacity.to_string(),
                r.capacity_ratio.to_string(),
                r.efficiency.map_or_else(String::new, |x| x.to_string()),
                r.efficiency_std_error.to_string(),
                r.markup.to_string(),
                r.atom_event_probability.to_string(),
                r.replicates.to_string(),
                r.below_threshold.to_string(),
            ])
            ?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Symmetric equilibrium at every producer count in `ns`. One sample set is
/// drawn per `n` from the same seed, so smaller `n` see a column prefix of
/// the outputs drawn for larger `n`.
pub fn efficiency_vs_n(
    gamma: f64,
    generation: &GenerationModel,
    demand: &DemandModel,
    ns: &[usize],
    settings: &SolveSettings,
) -> Result<EfficiencyCurve> {
    settings.validate()?;
    let threshold = entry_threshold(gamma, demand);
    let mut ns: Vec<usize> = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::with_capacity(ns.len());
    for n in ns {
        let row = curve_row(gamma, generation, demand, n, threshold, settings)
            .map_err(|e| Error::AtProducerCount {
                n,
                source: Box::new(e),
            })?;
        rows.push(row);
    }
    Ok(EfficiencyCurve {
        metadata: CurveMetadata {
            gamma,
            generation: generation.clone(),
            demand: demand.clone(),
            settings: settings.clone(),
            threshold,
        },
        rows,
    })
}

/// Same computation as [`efficiency_vs_n`]; the `capacity_ratio` column is
/// the quantity of interest.
pub fn capacity_ratio_vs_n(
    gamma: f64,
    generation: &GenerationModel,
    demand: &DemandModel,
    ns: &[usize],
    settings: &SolveSettings,
) -> Result<EfficiencyCurve> {
    efficiency_vs_n(gamma, generation, demand, ns, settings)
}

fn curve_row(
    gamma: f64,
    generation: &GenerationModel,
    demand: &DemandModel,
    n: usize,
    threshold: f64,
    settings: &SolveSettings,
) -> Result<CurveRow> {
    let below_threshold = (n as f64) <= threshold;
    if below_threshold {
        log::warn!(
            "n = {n} does not exceed the efficiency threshold {threshold:.3}; row computed anyway"
        );
    }
    let inst = MarketInstance::symmetric(n, gamma, generation.clone(), demand.clone())?;
    let replicates = if inst.is_deterministic() {
        1
    } else {
        replicates_for(n, settings.replicates)
    };
    let local = settings.clone().with_replicates(replicates);
    let report = solver::solve_symmetric_equilibrium(&inst, &local)?;
    let total = report.total_capacity();
    Ok(CurveRow {
        n,
        capacity: report.capacities.get(0),
        total_capacity: total,
        capacity_ratio: total / demand.mean(),
        efficiency: report.efficiency,
        efficiency_std_error: report.efficiency_std_error,
        markup: report.diagnostics.markup,
        atom_event_probability: report.diagnostics.atom_event_probability,
        replicates,
        below_threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialCostCurve {
    /// `(total capacity, social cost)` in grid order.
    pub points: Vec<(f64, f64)>,
    pub argmin: f64,
    pub min_cost: f64,
}

/// Social cost along the symmetric ray, indexed by total capacity.
pub fn social_cost_curve(
    inst: &MarketInstance,
    totals: &[f64],
    s: &SampleSet,
) -> Result<SocialCostCurve> {
    inst.common_cost()?;
    if totals.is_empty() {
        return Err(Error::InvalidCapacity("total-capacity grid is empty".into()));
    }
    let n = inst.n();
    let points = totals
        .iter()
        .map(|&t| {
            let c = CapacityProfile::symmetric(n, t / n as f64)?;
            Ok((t, market::social_cost(&c, inst, s)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (argmin, min_cost) = points
        .iter()
        .copied()
        .fold((totals[0], f64::INFINITY), |best, p| if p.1 < best.1 { p } else { best });
    Ok(SocialCostCurve {
        points,
        argmin,
        min_cost,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoaReport {
    /// Total payment over total investment cost.
    pub ratio: f64,
    /// `gamma_max / gamma_min`.
    pub bound: f64,
    /// Three standard errors of the ratio.
    pub tolerance: f64,
    pub violation: bool,
    pub max_gain: f64,
    pub epsilon: f64,
}

/// Payment-to-cost ratio at a verified equilibrium, with the cost-spread bound.
pub fn poa_asymmetric(
    inst: &MarketInstance,
    c: &CapacityProfile,
    s: &SampleSet,
    rule: PaymentRule,
) -> Result<PoaReport> {
    let check = solver::verify_equilibrium_with_samples(c, inst, s, rule)?;
    if !check.is_equilibrium {
        return Err(Error::NotAnEquilibrium {
            max_gain: check.max_gain,
            epsilon: check.epsilon,
        });
    }
    let paid: f64 = check.payments.iter().sum();
    let invested: f64 = inst.costs().iter().zip(c.as_slice()).map(|(g, c)| g * c).sum();
    if invested <= 0.0 {
        return Err(Error::InvalidCapacity("profile has no investment".into()));
    }
    let ratio = paid / invested;
    let paid_se: f64 = check.payment_std_errors.iter().sum();
    let tolerance = 3.0 * paid_se / invested;
    let bound = inst.gamma_max() / inst.gamma_min();
    Ok(PoaReport {
        ratio,
        bound,
        tolerance,
        violation: ratio > bound + tolerance,
        max_gain: check.max_gain,
        epsilon: check.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::Distribution;

    fn uniform() -> GenerationModel {
        GenerationModel::iid(Distribution::uniform(0.0, 1.0))
    }

    #[test]
    fn replicate_scaling_and_threshold() {
        assert_eq!(replicates_for(10, 200_000), 200_000);
        assert_eq!(replicates_for(300, 200_000), 300_000);
        let d = DemandModel::uniform(0.75, 1.25).unwrap();
        assert!((entry_threshold(0.25, &d) - 1.25 / 0.75 / 0.25).abs() < 1e-12);
        assert_eq!(entry_threshold(0.25, &DemandModel::fixed(1.0).unwrap()), 4.0);
    }

    #[test]
    fn deterministic_curve_is_flat() {
        let gen = GenerationModel::iid(Distribution::point_mass(1.0));
        let demand = DemandModel::fixed(5.0).unwrap();
        let curve =
            efficiency_vs_n(0.15, &gen, &demand, &[120, 5, 30], &SolveSettings::default()).unwrap();
        assert_eq!(curve.rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![5, 30, 120]);
        for r in &curve.rows {
            assert_eq!(r.efficiency, Some(0.15));
            assert!((r.capacity_ratio - 1.0).abs() < 1e-12);
        }
        assert!(curve.rows[0].below_threshold);
        assert!(!curve.rows[2].below_threshold);
    }

    #[test]
    fn no_entry_rows_have_zero_ratio() {
        let curve = capacity_ratio_vs_n(
            0.6,
            &uniform(),
            &DemandModel::fixed(1.0).unwrap(),
            &[2, 3],
            &SolveSettings::default().with_replicates(10_000),
        )
        .unwrap();
        assert!(curve.rows.iter().all(|r| r.capacity_ratio == 0.0 && r.efficiency.is_none()));
    }

    #[test]
    fn two_player_social_cost_curve() {
        let demand = DemandModel::uniform(0.75, 1.25).unwrap();
        let inst = MarketInstance::symmetric(2, 0.25, uniform(), demand).unwrap();
        let s = inst.sample(200_000, 3).unwrap();
        let grid = solver::linear_grid(0.0, 4.0, 401);
        let curve = social_cost_curve(&inst, &grid, &s).unwrap();
        assert!((curve.argmin - 1.71).abs() <= 0.05, "{}", curve.argmin);
        assert!((curve.points[0].1 - s.mean_demand()).abs() < 1e-12);
        assert!((curve.points[0].1 - 1.0).abs() < 0.01);
    }

    #[test]
    fn one_player_social_cost_minimum() {
        let inst =
            MarketInstance::symmetric(1, 0.25, uniform(), DemandModel::fixed(1.0).unwrap()).unwrap();
        let s = inst.sample(200_000, 4).unwrap();
        let grid = solver::linear_grid(0.0, 3.0, 301);
        let curve = social_cost_curve(&inst, &grid, &s).unwrap();
        assert!((curve.argmin - 2f64.sqrt()).abs() <= 0.03);
        assert!((curve.min_cost - 0.7071).abs() <= 0.01);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let gen = GenerationModel::iid(Distribution::point_mass(1.0));
        let curve = efficiency_vs_n(
            0.25,
            &gen,
            &DemandModel::fixed(1.0).unwrap(),
            &[5],
            &SolveSettings::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("n,capacity,"));
        assert!(lines[1].starts_with("5,0.2,1,1,0.25,"));
    }

    #[test]
    fn poa_rejects_non_equilibrium() {
        let inst = MarketInstance::new(vec![0.2, 0.3], uniform(), DemandModel::fixed(1.0).unwrap())
            .unwrap();
        let s = inst.sample(50_000, 5).unwrap();
        let c = CapacityProfile::new(vec![3.0, 3.0]).unwrap();
        assert!(matches!(
            poa_asymmetric(&inst, &c, &s, PaymentRule::TopPrice),
            Err(Error::NotAnEquilibrium { .. })
        ));
    }
}
