//! Generation profiles from delimited text: cleaning, per-site normalisation,
//! cross-site correlation and the fit of the additive shared/individual model.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::stochastic::{Distribution, GenerationModel};

/// Tail mass trimmed on each side when placing the residual support.
pub const CLIP_QUANTILE: f64 = 1e-3;
/// Rows whose cross-site mean is below this fraction of the largest
/// cross-site mean are treated as night.
pub const DAYTIME_FRACTION: f64 = 0.01;
const ROUNDING_NOISE: f64 = 1e-12;

/// `T` timestamps by `S` sites of non-negative output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileMatrix {
    pub sites: Vec<String>,
    pub timestamps: Vec<String>,
    /// Row-major: `values[t][s]`.
    pub values: Vec<Vec<f64>>,
    /// Rows removed while loading or filtering.
    pub dropped_rows: usize,
}

impl ProfileMatrix {
    pub fn new(sites: Vec<String>, timestamps: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: timestamps.len(),
            });
        }
        for row in &values {
            if row.len() != sites.len() {
                return Err(Error::DimensionMismatch {
                    expected: sites.len(),
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidInstance(
                    "profile values must be finite and non-negative".into(),
                ));
            }
        }
        Ok(Self {
            sites,
            timestamps,
            values,
            dropped_rows: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[s]).collect()
    }

    fn row_mean(row: &[f64]) -> f64 {
        row.iter().sum::<f64>() / row.len() as f64
    }

    /// Writes `timestamp, site...` rows with a header.
    pub fn write_csv<W: std::io::Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.sites.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.timestamps.iter().zip(&self.values) {
            let mut record = vec![t.clone()];
            record.extend(row.iter().map(f64::to_string));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_missing(token: &str) -> bool {
    token.is_empty() || token.eq_ignore_ascii_case("na") || token.eq_ignore_ascii_case("nan")
}

/// Reads a profile file: a header of `timestamp, site...` and one row per
/// timestamp. Rows with a missing or negative value are dropped and counted.
pub fn load_profiles(path: &Path, delimiter: u8) -> Result<ProfileMatrix> {
    let file = std::fs::File::open(path)?;
    read_profiles(file, delimiter)
}

pub fn read_profiles<R: Read>(reader: R, delimiter: u8) -> Result<ProfileMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyFile);
    }
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "header needs a timestamp column and at least one site".into(),
        });
    }
    let sites: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(sites.len());
        let mut keep = true;
        for (field, site) in record.iter().skip(1).zip(&sites) {
            if is_missing(field) {
                keep = false;
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("site '{site}': '{field}' is not a number"),
            })?;
            if !v.is_finite() || v < 0.0 {
                keep = false;
            }
            row.push(v);
        }
        if keep {
            timestamps.push(record[0].to_string());
            values.push(row);
        } else {
            dropped += 1;
        }
    }
    if values.is_empty() && dropped == 0 {
        return Err(Error::EmptyFile);
    }
    let mut p = ProfileMatrix::new(sites, timestamps, values)?;
    p.dropped_rows = dropped;
    Ok(p)
}

/// Divides every site by its own maximum.
pub fn normalize(p: &ProfileMatrix) -> Result<ProfileMatrix> {
    let maxima: Vec<f64> = (0..p.site_count())
        .map(|s| p.values.iter().map(|row| row[s]).fold(0.0, f64::max))
        .collect();
    if let Some(s) = maxima.iter().position(|m| *m <= 0.0) {
        return Err(Error::AllZeroSite(p.sites[s].clone()));
    }
    let values = p
        .values
        .iter()
        .map(|row| row.iter().zip(&maxima).map(|(v, m)| v / m).collect())
        .collect();
    Ok(ProfileMatrix {
        sites: p.sites.clone(),
        timestamps: p.timestamps.clone(),
        values,
        dropped_rows: p.dropped_rows,
    })
}

/// Drops rows whose cross-site mean is below `fraction` of the largest
/// cross-site mean.
pub fn daytime_filter(p: &ProfileMatrix, fraction: f64) -> ProfileMatrix {
    let means: Vec<f64> = p.values.iter().map(|r| ProfileMatrix::row_mean(r)).collect();
    let cutoff = fraction * means.iter().copied().fold(0.0, f64::max);
    let mut out = ProfileMatrix {
        sites: p.sites.clone(),
        timestamps: Vec::new(),
        values: Vec::new(),
        dropped_rows: p.dropped_rows,
    };
    for ((t, row), m) in p.timestamps.iter().zip(&p.values).zip(&means) {
        if *m >= cutoff {
            out.timestamps.push(t.clone());
            out.values.push(row.clone());
        } else {
            out.dropped_rows += 1;
        }
    }
    out
}

/// Pearson correlation between every pair of sites.
pub fn correlation_matrix(p: &ProfileMatrix) -> Result<Vec<Vec<f64>>> {
    if p.rows() < 2 {
        return Err(Error::InsufficientRows {
            required: 2,
            found: p.rows(),
        });
    }
    let columns: Vec<Vec<f64>> = (0..p.site_count()).map(|s| p.column(s)).collect();
    for (col, site) in columns.iter().zip(&p.sites) {
        let first = col[0];
        if col.iter().all(|v| *v == first) {
            return Err(Error::ZeroVarianceSite(site.clone()));
        }
    }
    let s = columns.len();
    let mut m = vec![vec![1.0; s]; s];
    for a in 0..s {
        for b in a + 1..s {
            let r = stats::pearson(&columns[a], &columns[b]).clamp(-1.0, 1.0);
            m[a][b] = r;
            m[b][a] = r;
        }
    }
    Ok(m)
}

pub fn write_correlation_csv<W: std::io::Write>(
    sites: &[String],
    m: &[Vec<f64>],
    out: W,
    delimiter: u8,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    let mut header = vec!["site".to_string()];
    header.extend(sites.iter().cloned());
    w.write_record(&header)?;
    for (site, row) in sites.iter().zip(m) {
        let mut record = vec![site.clone()];
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Result of fitting the additive model to a normalised profile matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFit {
    pub model: GenerationModel,
    pub shared_variance: f64,
    pub individual_variance: f64,
    /// Amount moved from the cross-site mean into the individual components.
    pub shift: f64,
    /// Fraction of shared values that were clipped.
    pub shared_clipped_fraction: f64,
    /// Fraction of individual residuals that were clipped.
    pub residual_clipped_fraction: f64,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
    sorted[idx]
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// Fits `Z_i = individual_i + shared` with the shared part estimated by the
/// per-timestamp cross-site mean.
///
/// Residuals from that mean are centred, so a constant `shift` (the lower
/// [`CLIP_QUANTILE`] of the residuals) moves into the individual part to make
/// it non-negative. Both components are then clipped so that the largest
/// shared value plus the largest individual value is at most 1, which keeps
/// independently resampled sums inside `[0, 1]`.
pub fn fit_additive_model(p: &ProfileMatrix) -> Result<AdditiveFit> {
    if p.site_count() < 2 {
        return Err(Error::InsufficientSites {
            required: 2,
            found: p.site_count(),
        });
    }
    if p.rows() < 2 {
        return Err(Error::InsufficientRows {
            required: 2,
            found: p.rows(),
        });
    }
    let means: Vec<f64> = p.values.iter().map(|r| ProfileMatrix::row_mean(r)).collect();
    let mut residuals: Vec<f64> = p
        .values
        .iter()
        .zip(&means)
        .flat_map(|(row, m)| row.iter().map(move |v| v - m))
        // Rounding noise from the mean is not a residual.
        .map(|r: f64| if r.abs() < ROUNDING_NOISE { 0.0 } else { r })
        .collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let shift = (-quantile_sorted(&sorted, CLIP_QUANTILE)).max(0.0);
    let individual_hi = (quantile_sorted(&sorted, 1.0 - CLIP_QUANTILE) + shift).clamp(0.0, 1.0);
    let shared_hi = 1.0 - individual_hi;

    let mut residual_clipped = 0usize;
    for r in residuals.iter_mut() {
        let v = *r + shift;
        let c = v.clamp(0.0, individual_hi);
        if c != v {
            residual_clipped += 1;
        }
        *r = c;
    }
    let mut shared_clipped = 0usize;
    let shared: Vec<f64> = means
        .iter()
        .map(|m| {
            let v = m - shift;
            let c = v.clamp(0.0, shared_hi);
            if c != v {
                shared_clipped += 1;
            }
            c
        })
        .collect();
    let shared_variance = variance(&shared);
    let individual_variance = variance(&residuals);
    let model = GenerationModel::additive(
        Distribution::empirical(shared),
        Distribution::empirical(residuals),
    );
    model.validate()?;
    Ok(AdditiveFit {
        model,
        shared_variance,
        individual_variance,
        shift,
        shared_clipped_fraction: shared_clipped as f64 / p.rows() as f64,
        residual_clipped_fraction: residual_clipped as f64 / (p.rows() * p.site_count()) as f64,
    })
}

/// Profiles drawn from a known additive model, one row per timestamp:
/// `Z_{t,s} = individual_{t,s} + shared_t`.
pub fn synthetic_profiles(
    shared: &Distribution,
    individual: &Distribution,
    sites: usize,
    rows: usize,
    seed: u64,
) -> Result<ProfileMatrix> {
    let model = GenerationModel::additive(shared.clone(), individual.clone());
    let demand = crate::stochastic::DemandModel::fixed(1.0)?;
    let s = crate::stochastic::sample(&model, &demand, sites, rows, seed)?;
    let names = (1..=sites).map(|i| format!("site{i}")).collect();
    let timestamps = (0..rows).map(|t| t.to_string()).collect();
    let values = (0..rows).map(|k| s.row(k).to_vec()).collect();
    ProfileMatrix::new(names, timestamps, values)
}
