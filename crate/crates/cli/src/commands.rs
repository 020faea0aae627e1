use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use capgame_core::experiments::{self, EfficiencyCurve};
use capgame_core::ingest::{self, ProfileMatrix};
use capgame_core::market::{self, evaluate_profile};
use capgame_core::solver::{self, VerificationReport};
use capgame_core::{
    CapacityProfile, DemandModel, Estimate, EquilibriumReport, MarketInstance, SampleSet,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{self, REPORT, SUMMARY};

const FIXTURE: &str = include_str!("../fixtures/synthetic_3site.csv");

fn uses_symmetric_solver(inst: &MarketInstance) -> bool {
    inst.is_symmetric() && inst.generation().is_exchangeable()
}

fn format_vec(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn equilibrium_summary(out: &mut String, r: &EquilibriumReport) {
    let _ = writeln!(out, "capacities      {}", format_vec(r.capacities.as_slice()));
    let _ = writeln!(out, "total capacity  {:.6}", r.total_capacity());
    let _ = writeln!(out, "payments        {}", format_vec(&r.payments));
    let _ = writeln!(out, "profits         {}", format_vec(&r.profits));
    let _ = writeln!(out, "social cost     {:.6}", r.social_cost);
    match r.efficiency {
        Some(xi) => {
            let _ = writeln!(out, "efficiency      {xi:.6} (se {:.2e})", r.efficiency_std_error);
        }
        None => {
            let _ = writeln!(out, "efficiency      undefined (nothing is paid)");
        }
    }
    let _ = writeln!(out, "markup          {:.6}", r.diagnostics.markup);
    let _ = writeln!(out, "atom event      {:.6}", r.diagnostics.atom_event_probability);
    let _ = writeln!(out, "replicates      {}", r.diagnostics.replicates);
    if let Some(note) = &r.diagnostics.note {
        let _ = writeln!(out, "note            {note}");
    }
}

#[derive(Serialize)]
struct SolveOutput {
    equilibrium: EquilibriumReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<VerificationReport>,
}

/// Asymmetric instances go through best-response dynamics followed by
/// verification; the report is evaluated on the same sample.
pub fn solve(config: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let inst = config.instance()?.build()?;
    let settings = &config.settings;
    let result = if uses_symmetric_solver(&inst) {
        SolveOutput {
            equilibrium: solver::solve_symmetric_equilibrium(&inst, settings)?,
            verification: None,
        }
    } else {
        let s = inst.sample(settings.replicates, settings.seed)?;
        let n = inst.n() as f64;
        let start = CapacityProfile::new(
            inst.costs()
                .iter()
                .map(|g| 0.5 * s.mean_demand() / (g * n))
                .collect(),
        )?;
        let c = solver::best_response_dynamics(&inst, &start, &s, settings)?;
        let check = solver::verify_equilibrium_with_samples(&c, &inst, &s, settings.payment_rule)?;
        let mut equilibrium = evaluate_profile(&c, &inst, &s)?;
        if !check.is_equilibrium {
            equilibrium.diagnostics.note = Some(format!(
                "best-response dynamics stopped at a profile with unilateral gain {:.3e} > epsilon {:.3e}",
                check.max_gain, check.epsilon
            ));
        }
        SolveOutput {
            equilibrium,
            verification: Some(check),
        }
    };
    output::write_json(&out.join(REPORT), &result)?;
    let mut text = String::from("equilibrium\n");
    equilibrium_summary(&mut text, &result.equilibrium);
    if let Some(v) = &result.verification {
        let _ = writeln!(
            text,
            "verification    max gain {:.3e}, epsilon {:.3e}, equilibrium: {}",
            v.max_gain, v.epsilon, v.is_equilibrium
        );
    }
    output::write_text(&out.join(SUMMARY), &text)?;
    Ok(vec![REPORT, SUMMARY])
}

#[derive(Serialize)]
struct PlannerOutput {
    capacities: CapacityProfile,
    total_capacity: f64,
    social_cost: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    social_cost_curve: Option<experiments::SocialCostCurve>,
}

pub fn planner(config: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let inst = config.instance()?.build()?;
    let settings = &config.settings;
    let s = inst.sample(settings.replicates, settings.seed)?;
    let capacities = if uses_symmetric_solver(&inst) {
        solver::solve_social_planner_symmetric_with_samples(&inst, &s, settings)?
    } else {
        solver::solve_social_planner_general_with_samples(&inst, &s, settings)?
    };
    let social_cost = market::social_cost_estimate(&capacities, &inst, &s)?;
    let totals = config.planner.as_ref().and_then(|p| p.totals.as_ref());
    let social_cost_curve = match totals {
        Some(t) => Some(experiments::social_cost_curve(&inst, t, &s)?),
        None => None,
    };
    let mut files = vec![REPORT, SUMMARY];
    if let Some(curve) = &social_cost_curve {
        output::write_pairs(
            &out.join("social_cost.csv"),
            ["total_capacity", "social_cost"],
            &curve.points,
        )?;
        files.push("social_cost.csv");
    }
    let result = PlannerOutput {
        total_capacity: capacities.total(),
        capacities,
        social_cost,
        social_cost_curve,
    };
    output::write_json(&out.join(REPORT), &result)?;
    let mut text = String::from("social planner\n");
    let _ = writeln!(text, "capacities      {}", format_vec(result.capacities.as_slice()));
    let _ = writeln!(text, "total capacity  {:.6}", result.total_capacity);
    let _ = writeln!(
        text,
        "social cost     {:.6} (se {:.2e})",
        result.social_cost.mean, result.social_cost.std_error
    );
    if let Some(curve) = &result.social_cost_curve {
        let _ = writeln!(
            text,
            "curve minimum   {:.6} at total capacity {:.6}",
            curve.min_cost, curve.argmin
        );
    }
    output::write_text(&out.join(SUMMARY), &text)?;
    Ok(files)
}

#[derive(Serialize)]
struct SweepOutput {
    profile: CapacityProfile,
    curve: solver::BestResponseCurve,
}

pub fn sweep(config: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let inst = config.instance()?.build()?;
    let spec = config.sweep.clone().unwrap_or(crate::config::SweepSpec {
        producer: 0,
        capacities: None,
        points: None,
        grid: None,
    });
    let settings = &config.settings;
    let s = inst.sample(settings.replicates, settings.seed)?;
    let profile = match &spec.capacities {
        Some(c) => CapacityProfile::new(c.clone())?,
        None => solver::solve_symmetric_equilibrium_with_samples(&inst, &s, settings)
            .context("sweep without `capacities` needs a symmetric equilibrium")?
            .capacities,
    };
    if spec.producer >= profile.len() {
        return Err(capgame_core::Error::IndexOutOfRange {
            index: spec.producer,
            n: profile.len(),
        }
        .into());
    }
    let grid = match (&spec.points, &spec.grid) {
        (Some(points), _) => points.clone(),
        (None, Some(g)) => solver::linear_grid(g.lo, g.hi, g.points),
        (None, None) => solver::local_grid(
            profile.get(spec.producer),
            inst.cost(spec.producer),
            s.mean_demand(),
        ),
    };
    let curve = solver::best_response_sweep(
        spec.producer,
        &profile,
        &inst,
        &grid,
        &s,
        settings.payment_rule,
    )?;
    output::write_pairs(&out.join("sweep.csv"), ["capacity", "profit"], &curve.points)?;
    let mut text = String::from("best-response sweep\n");
    let _ = writeln!(text, "producer        {}", curve.producer);
    let _ = writeln!(text, "profile         {}", format_vec(profile.as_slice()));
    let _ = writeln!(text, "grid points     {}", curve.points.len());
    let _ = writeln!(text, "argmax          {:.6}", curve.argmax);
    let _ = writeln!(text, "max profit      {:.6}", curve.max_profit);
    output::write_json(&out.join(REPORT), &SweepOutput { profile, curve })?;
    output::write_text(&out.join(SUMMARY), &text)?;
    Ok(vec!["sweep.csv", REPORT, SUMMARY])
}

fn curve_summary(title: &str, curve: &EfficiencyCurve) -> String {
    let mut text = format!("{title}\n");
    let _ = writeln!(text, "gamma {}, entry threshold {:.3}", curve.metadata.gamma, curve.metadata.threshold);
    let _ = writeln!(
        text,
        "{:>6} {:>12} {:>10} {:>10} {:>10} {:>10}",
        "n", "capacity", "ratio", "xi", "xi se", "markup"
    );
    for r in &curve.rows {
        let xi = r.efficiency.map_or("-".to_string(), |x| format!("{x:.5}"));
        let _ = writeln!(
            text,
            "{:>6} {:>12.6} {:>10.5} {:>10} {:>10.2e} {:>10.5}{}",
            r.n,
            r.capacity,
            r.capacity_ratio,
            xi,
            r.efficiency_std_error,
            r.markup,
            if r.below_threshold { "  (below threshold)" } else { "" }
        );
    }
    text
}

pub fn curve(config: &RunConfig, out: &Path, csv_name: &'static str) -> Result<Vec<&'static str>> {
    let spec = config.section(&config.curve, "curve")?;
    let demand = DemandModel::new(spec.demand_distribution()?)?;
    let generation = spec.generation.model()?;
    let curve =
        experiments::efficiency_vs_n(spec.gamma, &generation, &demand, &spec.ns, &config.settings)?;
    curve.write_csv(output::create(&out.join(csv_name))?)?;
    output::write_json(&out.join(REPORT), &curve)?;
    output::write_text(&out.join(SUMMARY), &curve_summary("equilibrium curve", &curve))?;
    Ok(vec![csv_name, REPORT, SUMMARY])
}

fn load_casestudy_profiles(data: Option<&Path>, delimiter: u8) -> Result<ProfileMatrix> {
    match data {
        Some(path) => ingest::load_profiles(path, delimiter)
            .with_context(|| format!("loading profiles from {}", path.display())),
        None => ingest::read_profiles(FIXTURE.as_bytes(), b',')
            .context("loading the bundled fixture"),
    }
}

#[derive(Serialize)]
struct CaseStudyOutput {
    input_rows: usize,
    daytime_rows: usize,
    dropped_rows: usize,
    fit: ingest::AdditiveFit,
    curve: EfficiencyCurve,
}

/// The efficiency curve under an additive model fitted to daytime profiles.
pub fn casestudy(config: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let spec = config.section(&config.casestudy, "casestudy")?;
    let delimiter = u8::try_from(spec.delimiter).context("delimiter must be a single-byte character")?;
    let raw = load_casestudy_profiles(spec.data.as_deref(), delimiter)?;
    let normalized = ingest::normalize(&raw)?;
    let day = ingest::daytime_filter(&normalized, spec.daytime_fraction);
    day.write_csv(output::create(&out.join("normalized.csv"))?, delimiter)?;
    let corr = ingest::correlation_matrix(&day)?;
    ingest::write_correlation_csv(
        &day.sites,
        &corr,
        output::create(&out.join("correlation.csv"))?,
        delimiter,
    )?;
    let fit = ingest::fit_additive_model(&day)?;
    output::write_json(&out.join("model.json"), &fit.model)?;
    let demand = DemandModel::new(spec.demand_distribution()?)?;
    let curve =
        experiments::efficiency_vs_n(spec.gamma, &fit.model, &demand, &spec.ns, &config.settings)?;
    curve.write_csv(output::create(&out.join("efficiency_curve.csv"))?)?;

    let mut text = String::from("case study\n");
    let _ = writeln!(
        text,
        "rows            {} read, {} dropped, {} daytime",
        raw.rows(),
        raw.dropped_rows,
        day.rows()
    );
    let _ = writeln!(
        text,
        "fit             shared variance {:.5}, individual variance {:.5}, clipped {:.3}% / {:.3}%",
        fit.shared_variance,
        fit.individual_variance,
        100.0 * fit.shared_clipped_fraction,
        100.0 * fit.residual_clipped_fraction
    );
    text.push_str(&curve_summary("efficiency curve on the fitted model", &curve));
    output::write_text(&out.join(SUMMARY), &text)?;
    output::write_json(
        &out.join(REPORT),
        &CaseStudyOutput {
            input_rows: raw.rows(),
            daytime_rows: day.rows(),
            dropped_rows: raw.dropped_rows,
            fit,
            curve,
        },
    )?;
    Ok(vec![
        "normalized.csv",
        "correlation.csv",
        "model.json",
        "efficiency_curve.csv",
        REPORT,
        SUMMARY,
    ])
}

#[derive(Serialize)]
struct OracleRow {
    quantity: String,
    exact: f64,
    estimate: f64,
    std_error: f64,
    within_3se: bool,
}

impl OracleRow {
    fn new(quantity: impl Into<String>, exact: f64, est: Estimate) -> Self {
        Self {
            quantity: quantity.into(),
            exact,
            estimate: est.mean,
            std_error: est.std_error,
            within_3se: est.agrees_with(exact, 3.0),
        }
    }
}

pub fn oracle_check(config: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let spec = config.section(&config.oracle, "oracle")?;
    let (d, c) = spec.build()?;
    let exact = solver::oracle_expectations(&d, &c)?;
    let inst = d.market_instance()?;
    let settings = &config.settings;
    let s: SampleSet = d.sample(settings.replicates, settings.seed)?;
    let mut rows = vec![
        OracleRow::new("shortfall", exact.shortfall, market::shortfall_cost_estimate(&c, &s)?),
        OracleRow::new(
            "largest_payment",
            exact.largest_payment,
            market::payment_largest_estimate(&c, &s)?,
        ),
        OracleRow::new(
            "social_cost",
            exact.social_cost,
            market::social_cost_estimate(&c, &inst, &s)?,
        ),
    ];
    for (i, est) in market::payments_all_estimates(&c, &s)?.into_iter().enumerate() {
        rows.push(OracleRow::new(format!("payment_{i}"), exact.payments[i], est));
    }
    let mut w = csv::Writer::from_writer(output::create(&out.join("oracle.csv"))?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    output::write_json(&out.join(REPORT), &rows)?;
    let mut text = String::from("oracle check\n");
    let _ = writeln!(text, "joint outcomes  {}", d.outcome_count());
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<16} exact {:.6}  estimate {:.6}  se {:.2e}  {}",
            r.quantity,
            r.exact,
            r.estimate,
            r.std_error,
            if r.within_3se { "agree" } else { "DISAGREE" }
        );
    }
    output::write_text(&out.join(SUMMARY), &text)?;
    Ok(vec!["oracle.csv", REPORT, SUMMARY])
}
