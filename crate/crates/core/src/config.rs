//! Run descriptions: a TOML file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{DEFAULT_PD_PRIOR_MIX, DEFAULT_PD_SIGMA};
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_PERMUTATIONS, DEFAULT_SAMPLES};
use crate::predictor::{PredictorConfig, Variant};
use crate::ratings::{PairPriorMode, Rating, RatingScale, SplitSpec};
use crate::sensor::DEFAULT_SIGMA2_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Noisy1,
    Noisy2,
    Pd,
    Correlation,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Noisy1,
        Algorithm::Noisy2,
        Algorithm::Pd,
        Algorithm::Correlation,
    ];

    pub fn variant(self) -> Option<Variant> {
        match self {
            Algorithm::Noisy1 => Some(Variant::Noisy1),
            Algorithm::Noisy2 => Some(Variant::Noisy2),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Noisy1 => "noisy1",
            Algorithm::Noisy2 => "noisy2",
            Algorithm::Pd => "pd",
            Algorithm::Correlation => "correlation",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noisy1" => Ok(Algorithm::Noisy1),
            "noisy2" => Ok(Algorithm::Noisy2),
            "pd" => Ok(Algorithm::Pd),
            "correlation" | "corr" => Ok(Algorithm::Correlation),
            _ => Err(Error::Config(format!(
                "unknown algorithm `{s}` (expected noisy1, noisy2, pd, correlation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairPriorKind {
    /// Product of the rating prior with itself.
    Marginal,
    /// Add-one counts over sampled co-rating events.
    Empirical,
}

/// Everything needed to reproduce an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub scale_min: Rating,
    pub scale_max: Rating,
    pub algorithms: Vec<Algorithm>,
    /// `allbut1` or `givenX`.
    pub protocols: Vec<String>,
    pub train_fraction: f64,
    /// Dummy-observation weight for Noisy1.
    pub k: f64,
    /// Max user sensors.
    pub u: usize,
    /// Max item sensors.
    pub i: usize,
    pub min_corated_noisy1: usize,
    pub min_corated_noisy2: usize,
    pub sigma2_floor: f64,
    pub pair_prior: PairPriorKind,
    pub pair_sample_size: usize,
    pub pd_sigma: f64,
    pub pd_prior_mix: f64,
    pub samples: usize,
    pub permutations: usize,
    /// Mandatory; there is no clock-based default.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PredictorConfig::default();
        Self {
            dataset: None,
            scale_min: 1,
            scale_max: 5,
            algorithms: vec![Algorithm::Noisy2, Algorithm::Correlation],
            protocols: vec!["allbut1".into()],
            train_fraction: 0.6,
            k: p.k,
            u: p.max_user_sensors,
            i: p.max_item_sensors,
            min_corated_noisy1: p.min_corated_noisy1,
            min_corated_noisy2: p.min_corated_noisy2,
            sigma2_floor: DEFAULT_SIGMA2_FLOOR,
            pair_prior: PairPriorKind::Marginal,
            pair_sample_size: 100_000,
            pd_sigma: DEFAULT_PD_SIGMA,
            pd_prior_mix: DEFAULT_PD_PRIOR_MIX,
            samples: DEFAULT_SAMPLES,
            permutations: DEFAULT_PERMUTATIONS,
            seed: None,
            output_dir: None,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every documented range; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dataset.is_none() {
            return bad("no dataset given".into());
        }
        if self.seed.is_none() {
            return bad("a seed is required".into());
        }
        if self.scale_min >= self.scale_max {
            return bad(format!(
                "scale {}..{} is empty",
                self.scale_min, self.scale_max
            ));
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        self.protocol_specs()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            ));
        }
        if !(self.k.is_finite() && self.k >= 0.0) {
            return bad(format!("k = {} must be finite and >= 0", self.k));
        }
        if self.min_corated_noisy1 < 2 {
            return bad("min_corated_noisy1 must be >= 2".into());
        }
        if self.min_corated_noisy2 < 1 {
            return bad("min_corated_noisy2 must be >= 1".into());
        }
        if !(self.sigma2_floor.is_finite() && self.sigma2_floor > 0.0) {
            return bad("sigma2_floor must be > 0".into());
        }
        if self.pair_prior == PairPriorKind::Empirical && self.pair_sample_size == 0 {
            return bad("pair_sample_size must be >= 1".into());
        }
        if !(self.pd_sigma.is_finite() && self.pd_sigma > 0.0) {
            return bad("pd_sigma must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.pd_prior_mix) {
            return bad("pd_prior_mix must lie in [0, 1)".into());
        }
        if self.samples == 0 || self.permutations == 0 {
            return bad("samples and permutations must be >= 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        Ok(())
    }

    pub fn scale(&self) -> Result<RatingScale> {
        RatingScale::range(self.scale_min, self.scale_max).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn protocol_specs(&self) -> Result<Vec<SplitSpec>> {
        if self.protocols.is_empty() {
            return Err(Error::Config("no protocols selected".into()));
        }
        self.protocols.iter().map(|p| p.parse()).collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required".into()))
    }

    pub fn pair_prior_mode(&self) -> PairPriorMode {
        match self.pair_prior {
            PairPriorKind::Marginal => PairPriorMode::MarginalProduct,
            PairPriorKind::Empirical => PairPriorMode::EmpiricalPairs {
                sample_size: self.pair_sample_size,
            },
        }
    }

    pub fn predictor_config(&self, variant: Variant) -> PredictorConfig {
        PredictorConfig {
            variant,
            k: self.k,
            max_user_sensors: self.u,
            max_item_sensors: self.i,
            min_corated_noisy1: self.min_corated_noisy1,
            min_corated_noisy2: self.min_corated_noisy2,
            sigma2_floor: self.sigma2_floor,
        }
    }
}
