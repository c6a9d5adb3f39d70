//! Sample sources: seeded synthetic Gaussian streams and CSV dataset
//! ingestion with optional affine target normalization.
//!
//! Reproducibility contract: a stream is a pure function of `(seed, stream
//! index)`. Replication r of an experiment draws from ChaCha stream r of the
//! base seed, so parallel replications are independent and bit-reproducible
//! regardless of scheduling.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ConstraintSet, RegressionProblem, Sample, Vector};

/// Distribution of the feature vector x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    /// x ~ N(0, I_d).
    Identity,
    /// x ~ N(0, diag(values)); every variance must be positive.
    Diagonal { values: Vec<f64> },
    /// Deterministic x = values on every draw (a degenerate design; the
    /// correlation matrix is rank one, so this is valid only for d = 1).
    FixedX { values: Vec<f64> },
}

impl Default for Covariance {
    fn default() -> Self {
        Covariance::Identity
    }
}

/// Synthetic stream description: `y = x^T omega_star + v`, `v ~ N(0, sigma2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d: usize,
    pub omega_star: Vector,
    pub sigma2: f64,
    #[serde(default)]
    pub covariance: Covariance,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter("d must be >= 1".into()));
        }
        self.omega_star.check_dim(self.d)?;
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(
                "sigma2 must be finite and >= 0".into(),
            ));
        }
        match &self.covariance {
            Covariance::Identity => {}
            Covariance::Diagonal { values } => {
                if values.len() != self.d {
                    return Err(Error::DimensionMismatch {
                        expected: self.d,
                        found: values.len(),
                    });
                }
                if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::InvalidParameter(
                        "diagonal covariance values must all be > 0".into(),
                    ));
                }
            }
            Covariance::FixedX { values } => {
                if values.len() != self.d {
                    return Err(Error::DimensionMismatch {
                        expected: self.d,
                        found: values.len(),
                    });
                }
                if self.d != 1 {
                    return Err(Error::InvalidParameter(
                        "fixed_x design requires d = 1 (rank-one correlation)".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite() || *v == 0.0) {
                    return Err(Error::InvalidParameter(
                        "fixed_x value must be finite and nonzero".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Correlation matrix `R_x = E[x x^T]` of the design.
    pub fn correlation(&self) -> DMatrix<f64> {
        match &self.covariance {
            Covariance::Identity => DMatrix::identity(self.d, self.d),
            Covariance::Diagonal { values } => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(values.clone()))
            }
            Covariance::FixedX { values } => {
                DMatrix::from_fn(self.d, self.d, |i, j| values[i] * values[j])
            }
        }
    }

    /// Smallest eigenvalue of the correlation matrix, available in closed
    /// form for all supported designs.
    pub fn min_eigenvalue(&self) -> f64 {
        match &self.covariance {
            Covariance::Identity => 1.0,
            Covariance::Diagonal { values } => {
                values.iter().cloned().fold(f64::INFINITY, f64::min)
            }
            Covariance::FixedX { values } => values.iter().map(|v| v * v).sum(),
        }
    }

    /// Bundle the stream description into a full problem with a
    /// caller-supplied `mu` (validated against the spectrum) and constraint
    /// set.
    pub fn problem(&self, mu: f64, constraint: ConstraintSet) -> Result<RegressionProblem> {
        self.validate()?;
        RegressionProblem::new(
            self.omega_star.clone(),
            self.sigma2,
            self.correlation(),
            mu,
            constraint,
        )
    }

    /// The stream for ChaCha stream index 0.
    pub fn stream(&self) -> SampleStream {
        self.replication_stream(0)
    }

    /// Independent, reproducible stream for one replication: same seed,
    /// distinct ChaCha stream index.
    pub fn replication_stream(&self, replication: u64) -> SampleStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication);
        SampleStream {
            rng,
            omega_star: self.omega_star.clone(),
            covariance: self.covariance.clone(),
            sigma: self.sigma2.sqrt(),
        }
    }
}

/// Infinite iterator of i.i.d. samples. Each draw consumes `d` normals for x
/// (none for a fixed design) and one for the noise when `sigma2 > 0`, so the
/// x sequence is identical across noise levels.
#[derive(Debug, Clone)]
pub struct SampleStream {
    rng: ChaCha8Rng,
    omega_star: Vector,
    covariance: Covariance,
    sigma: f64,
}

impl Iterator for SampleStream {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        let d = self.omega_star.dim();
        let coords: Vec<f64> = match &self.covariance {
            Covariance::Identity => (0..d).map(|_| self.rng.sample(StandardNormal)).collect(),
            Covariance::Diagonal { values } => values
                .iter()
                .map(|v| v.sqrt() * self.rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Covariance::FixedX { values } => values.clone(),
        };
        let x = Vector::new(coords).expect("finite normal draws");
        let mut y = x.dot(&self.omega_star);
        if self.sigma > 0.0 {
            y += self.sigma * self.rng.sample::<f64, _>(StandardNormal);
        }
        Some(Sample { x, y })
    }
}

/// Affine target normalization `y <- (y - lo) / (hi - lo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRange {
    pub lo: f64,
    pub hi: f64,
}

impl TargetRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidParameter(
                "target_range requires finite lo < hi".into(),
            ));
        }
        Ok(())
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.lo) / (self.hi - self.lo)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.lo + y * (self.hi - self.lo)
    }
}

fn default_n_features() -> usize {
    90
}

/// CSV dataset layout: one numeric target column plus `n_features` numeric
/// feature columns per row, comma-separated, no header unless flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub target_column: usize,
    #[serde(default = "default_n_features")]
    pub n_features: usize,
    #[serde(default)]
    pub target_range: Option<TargetRange>,
    #[serde(default)]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub has_header: bool,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 {
            return Err(Error::InvalidParameter("n_features must be >= 1".into()));
        }
        if self.target_column > self.n_features {
            return Err(Error::InvalidParameter(format!(
                "target_column {} out of range for {} columns",
                self.target_column,
                self.n_features + 1
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidParameter(
                "holdout_fraction must lie in [0, 1)".into(),
            ));
        }
        if let Some(range) = &self.target_range {
            range.validate()?;
        }
        Ok(())
    }
}

/// Loads and splits a dataset. The split is a plain prefix/suffix cut with no
/// shuffle: the first rows train, the final `floor(n * holdout_fraction)`
/// rows are held out, preserving any ordering convention baked into the file.
pub fn load_csv(config: &DatasetConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    config.validate()?;
    let file = File::open(&config.path).map_err(|source| Error::Io {
        path: config.path.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(config.has_header)
        .flexible(true) // length mismatches reported below, with the line
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let expected = config.n_features + 1;
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            path: config.path.clone(),
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or(samples.len() as u64 + 1),
            message: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(samples.len() as u64 + 1);
        if record.len() != expected {
            return Err(Error::MalformedRow {
                path: config.path.clone(),
                line,
                message: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        let mut fields = Vec::with_capacity(expected);
        for raw in record.iter() {
            let value: f64 = raw.parse().map_err(|_| Error::MalformedRow {
                path: config.path.clone(),
                line,
                message: format!("cannot parse `{raw}` as a number"),
            })?;
            fields.push(value);
        }
        let mut y = fields.remove(config.target_column);
        if let Some(range) = &config.target_range {
            y = range.normalize(y);
        }
        let x = Vector::new(fields).map_err(|e| Error::MalformedRow {
            path: config.path.clone(),
            line,
            message: e.to_string(),
        })?;
        samples.push(Sample::new(x, y).map_err(|e| Error::MalformedRow {
            path: config.path.clone(),
            line,
            message: e.to_string(),
        })?);
    }
    if samples.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{}: empty dataset",
            config.path.display()
        )));
    }
    let n_holdout = (samples.len() as f64 * config.holdout_fraction).floor() as usize;
    let split = samples.len() - n_holdout;
    let holdout = samples.split_off(split);
    Ok((samples, holdout))
}
