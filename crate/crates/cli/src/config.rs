use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use capgame_core::solver::{DiscreteInstance, FiniteLaw};
use capgame_core::stochastic::load_empirical;
use capgame_core::{
    CapacityProfile, DemandModel, Distribution, GenerationModel, MarketInstance, SolveSettings,
};
use serde::{Deserialize, Serialize};

/// A distribution given inline or as a single-column numeric file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionSpec {
    File { file: PathBuf },
    Inline(Distribution),
}

impl DistributionSpec {
    fn resolve(&self, base: &Path) -> Result<Distribution> {
        match self {
            DistributionSpec::Inline(d) => Ok(d.clone()),
            DistributionSpec::File { file } => {
                let path = base.join(file);
                load_empirical(&path).with_context(|| format!("reading {}", path.display()))
            }
        }
    }

    /// Replaces file references by their values so the config no longer
    /// depends on the working directory.
    fn inline(&mut self, base: &Path) -> Result<()> {
        *self = DistributionSpec::Inline(self.resolve(base)?);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenerationSpec {
    Iid {
        distribution: DistributionSpec,
    },
    AdditiveCorrelated {
        shared: DistributionSpec,
        individual: DistributionSpec,
    },
    Independent {
        marginals: Vec<DistributionSpec>,
    },
}

impl GenerationSpec {
    fn inline(&mut self, base: &Path) -> Result<()> {
        match self {
            GenerationSpec::Iid { distribution } => distribution.inline(base),
            GenerationSpec::AdditiveCorrelated { shared, individual } => {
                shared.inline(base)?;
                individual.inline(base)
            }
            GenerationSpec::Independent { marginals } => {
                marginals.iter_mut().try_for_each(|m| m.inline(base))
            }
        }
    }

    pub fn model(&self) -> Result<GenerationModel> {
        let inline = |d: &DistributionSpec| d.resolve(Path::new("."));
        Ok(match self {
            GenerationSpec::Iid { distribution } => GenerationModel::iid(inline(distribution)?),
            GenerationSpec::AdditiveCorrelated { shared, individual } => {
                GenerationModel::additive(inline(shared)?, inline(individual)?)
            }
            GenerationSpec::Independent { marginals } => GenerationModel::Independent {
                marginals: marginals.iter().map(inline).collect::<Result<_>>()?,
            },
        })
    }
}

/// Producers are given either as an explicit cost vector or as a count with
/// one shared cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<f64>>,
    pub generation: GenerationSpec,
    pub demand: DistributionSpec,
}

impl InstanceSpec {
    pub fn costs(&self) -> Result<Vec<f64>> {
        match (&self.costs, self.n, self.gamma) {
            (Some(costs), None, None) => Ok(costs.clone()),
            (None, Some(n), Some(gamma)) => Ok(vec![gamma; n]),
            _ => bail!("instance needs either `costs` or both `n` and `gamma`"),
        }
    }

    pub fn build(&self) -> Result<MarketInstance> {
        let demand = DemandModel::new(self.demand.resolve(Path::new("."))?)?;
        Ok(MarketInstance::new(self.costs()?, self.generation.model()?, demand)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepSpec {
    #[serde(default)]
    pub producer: usize,
    /// Capacities of every producer; the symmetric equilibrium when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacities: Option<Vec<f64>>,
    /// Explicit candidate capacities for the deviating producer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<f64>>,
    /// Evenly spaced candidates; the local grid around the current capacity
    /// when neither `points` nor `grid` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PlannerSpec {
    /// Total capacities at which to tabulate social cost on the symmetric ray.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub totals: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CurveSpec {
    pub gamma: f64,
    pub ns: Vec<usize>,
    pub generation: GenerationSpec,
    pub demand: DistributionSpec,
}

impl CurveSpec {
    pub fn demand_distribution(&self) -> Result<Distribution> {
        self.demand.resolve(Path::new("."))
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_daytime_fraction() -> f64 {
    capgame_core::ingest::DAYTIME_FRACTION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CaseStudySpec {
    /// Profile file; the bundled synthetic fixture when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_daytime_fraction")]
    pub daytime_fraction: f64,
    pub gamma: f64,
    pub ns: Vec<usize>,
    pub demand: DistributionSpec,
}

impl CaseStudySpec {
    pub fn demand_distribution(&self) -> Result<Distribution> {
        self.demand.resolve(Path::new("."))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct OracleSpec {
    pub outputs: Vec<FiniteLaw>,
    pub demand: FiniteLaw,
    pub costs: Vec<f64>,
    pub capacities: Vec<f64>,
}

impl OracleSpec {
    pub fn build(&self) -> Result<(DiscreteInstance, CapacityProfile)> {
        let d = DiscreteInstance::new(self.outputs.clone(), self.demand.clone(), self.costs.clone())?;
        Ok((d, CapacityProfile::new(self.capacities.clone())?))
    }
}

/// Everything a run needs. A resolved config is written as the run manifest
/// and re-executes to the same outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub settings: SolveSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub casestudy: Option<CaseStudySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base)?;
        Ok(config)
    }

    /// Inlines empirical files and makes data paths absolute, relative to
    /// the config file's directory.
    fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        if let Some(inst) = &mut self.instance {
            inst.generation.inline(base)?;
            inst.demand.inline(base)?;
        }
        if let Some(curve) = &mut self.curve {
            curve.generation.inline(base)?;
            curve.demand.inline(base)?;
        }
        if let Some(cs) = &mut self.casestudy {
            cs.demand.inline(base)?;
            if let Some(data) = &mut cs.data {
                let joined = base.join(&*data);
                *data = joined
                    .canonicalize()
                    .with_context(|| format!("profile file {}", joined.display()))?;
            }
        }
        Ok(())
    }

    pub fn instance(&self) -> Result<&InstanceSpec> {
        self.instance
            .as_ref()
            .context("config has no `instance` section")
    }

    pub fn section<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section
            .as_ref()
            .with_context(|| format!("config has no `{name}` section"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_and_cost_forms() {
        let spec: InstanceSpec = serde_json::from_str(
            r#"{"n": 2, "gamma": 0.25,
                "generation": {"kind": "iid", "distribution": {"kind": "uniform", "lo": 0, "hi": 1}},
                "demand": {"kind": "point-mass", "value": 1}}"#,
        )
        .unwrap();
        assert_eq!(spec.costs().unwrap(), vec![0.25, 0.25]);
        let inst = spec.build().unwrap();
        assert_eq!(inst.n(), 2);

        let both = InstanceSpec {
            costs: Some(vec![0.2]),
            ..spec
        };
        assert!(both.costs().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn empirical_files_are_inlined() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("z.txt"), "0.2\n0.4\n").unwrap();
        let cfg = r#"{"instance": {"n": 1, "gamma": 0.25,
            "generation": {"kind": "iid", "distribution": {"file": "z.txt"}},
            "demand": {"kind": "point-mass", "value": 1}}}"#;
        let path = dir.path().join("run.json");
        fs::write(&path, cfg).unwrap();
        let config = RunConfig::load(&path).unwrap();
        let inst = config.instance().unwrap();
        assert_eq!(
            inst.generation,
            GenerationSpec::Iid {
                distribution: DistributionSpec::Inline(Distribution::empirical(vec![0.2, 0.4]))
            }
        );
    }
}
