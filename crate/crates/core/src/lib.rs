//! Capacity investment game for intermittent renewable producers selling
//! into a market with a grid backstop at a normalised price of 1.
//!
//! Producers pick capacities, nature draws outputs and demand, and the
//! pricing subgame pays each producer a share of the residual demand. The
//! crate estimates equilibria, planner optima and efficiency by Monte Carlo.

pub mod error;
pub mod experiments;
pub mod ingest;
pub mod market;
pub mod solver;
pub mod stats;
pub mod stochastic;

pub use error::{Error, Result};
pub use experiments::{CurveRow, EfficiencyCurve, PoaReport, SocialCostCurve};
pub use ingest::{AdditiveFit, ProfileMatrix};
pub use market::{CapacityProfile, Diagnostics, EquilibriumReport, MarketInstance, PaymentRule};
pub use solver::{
    BestResponseCurve, DiscreteInstance, FiniteLaw, OracleExpectations, SolveSettings,
    VerificationReport,
};
pub use stats::Estimate;
pub use stochastic::{DemandModel, Distribution, GenerationKind, GenerationModel, SampleSet};
