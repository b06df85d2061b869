//! Naive Bayes fusion of user and item noisy sensors.
//!
//! To predict the active user's rating of a target item, every training user
//! who rated the item and every item the active user rated is a candidate
//! sensor. Each candidate is fitted against the hidden rating on its
//! co-ratings, the most reliable `U` user sensors and `I` item sensors are
//! kept, and the posterior over the rating scale is
//!
//! ```text
//! P(v | evidence) ∝ P(v) · Π_user p(S_uj | v) · Π_item p(S_ak | v)
//! ```
//!
//! accumulated in log space.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::{
    rating_prior, ActiveProfile, ItemId, PairPrior, Rating, RatingPrior, RatingScale, RatingsMatrix,
};
use crate::sensor::{log_predictive_density, SensorFit, SensorFitter, DEFAULT_SIGMA2_FLOOR};

const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &str = "#noisycf-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Per-pair linear regression, sensors ranked by r² (descending).
    Noisy1,
    /// Identity relationship with learned variance, ranked by σ² (ascending).
    Noisy2,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Noisy1 => "noisy1",
            Variant::Noisy2 => "noisy2",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noisy1" => Ok(Variant::Noisy1),
            "noisy2" => Ok(Variant::Noisy2),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    User,
    Item,
}

impl SensorKind {
    fn as_str(&self) -> &'static str {
        match self {
            SensorKind::User => "user",
            SensorKind::Item => "item",
        }
    }
}

/// A selected sensor and the rating it reports.
///
/// For a user sensor `evidence` is that user's rating of the target item;
/// for an item sensor it is the active user's rating of that item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorRef {
    pub kind: SensorKind,
    pub id: u32,
    pub fit: SensorFit,
    pub evidence: Rating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub variant: Variant,
    /// Dummy observation weight `K`.
    pub k: f64,
    /// `U`: user sensors kept after ranking.
    pub max_user_sensors: usize,
    /// `I`: item sensors kept after ranking.
    pub max_item_sensors: usize,
    pub min_corated_noisy1: usize,
    pub min_corated_noisy2: usize,
    pub sigma2_floor: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Noisy2,
            k: 1.0,
            max_user_sensors: 50,
            max_item_sensors: 20,
            min_corated_noisy1: 2,
            min_corated_noisy2: 1,
            sigma2_floor: DEFAULT_SIGMA2_FLOOR,
        }
    }
}

impl PredictorConfig {
    pub fn min_corated(&self) -> usize {
        match self.variant {
            Variant::Noisy1 => self.min_corated_noisy1,
            Variant::Noisy2 => self.min_corated_noisy2,
        }
    }
}

/// Posterior over the rating scale plus its expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDistribution {
    probs: Vec<f64>,
    expected: f64,
}

impl PosteriorDistribution {
    /// Wraps normalised probabilities indexed like `scale`.
    pub fn new(probs: Vec<f64>, scale: &RatingScale) -> Self {
        let expected = probs
            .iter()
            .zip(scale.values())
            .map(|(p, &v)| p * v as f64)
            .sum::<f64>();
        Self {
            probs,
            expected: scale.clamp(expected),
        }
    }

    /// Normalises log scores (max-subtracted before exponentiation).
    pub fn from_log_scores(log_scores: &[f64], scale: &RatingScale) -> Result<Self> {
        let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || log_scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Invariant(format!(
                "posterior log scores are degenerate: {log_scores:?}"
            )));
        }
        let weights: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        Ok(Self::new(
            weights.iter().map(|w| w / total).collect(),
            scale,
        ))
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn expected(&self) -> f64 {
        self.expected
    }

    /// Index of the most probable value (first one on ties).
    pub fn mode_index(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Posterior from a prior and explicit sensor lists.
pub fn posterior_from_sensors(
    prior: &RatingPrior,
    user_sensors: &[SensorRef],
    item_sensors: &[SensorRef],
    scale: &RatingScale,
) -> Result<PosteriorDistribution> {
    if prior.len() != scale.len() {
        return Err(Error::Invariant(format!(
            "prior has {} values, scale has {}",
            prior.len(),
            scale.len()
        )));
    }
    let mut log_scores: Vec<f64> = prior.probs().iter().map(|p| p.ln()).collect();
    for (score, &v) in log_scores.iter_mut().zip(scale.values()) {
        for sensor in user_sensors.iter().chain(item_sensors) {
            *score += log_predictive_density(&sensor.fit, sensor.evidence as f64, v as f64, scale)?;
        }
    }
    PosteriorDistribution::from_log_scores(&log_scores, scale)
}

/// The active-prediction context: prior and selected sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub prior: RatingPrior,
    pub user_sensors: Vec<SensorRef>,
    pub item_sensors: Vec<SensorRef>,
    pub variant: Variant,
    pub k: f64,
    pub max_user_sensors: usize,
    pub max_item_sensors: usize,
}

impl FittedModel {
    pub fn posterior(&self, scale: &RatingScale) -> Result<PosteriorDistribution> {
        posterior_from_sensors(&self.prior, &self.user_sensors, &self.item_sensors, scale)
    }

    /// Expected rating under the posterior.
    pub fn predict(&self, scale: &RatingScale) -> Result<f64> {
        Ok(self.posterior(scale)?.expected())
    }

    /// Keeps the best `max_user` user and `max_item` item sensors.
    pub fn truncated(&self, max_user: usize, max_item: usize) -> Self {
        let mut model = self.clone();
        model.user_sensors.truncate(max_user);
        model.item_sensors.truncate(max_item);
        model.max_user_sensors = max_user;
        model.max_item_sensors = max_item;
        model
    }

    /// Writes the versioned, tab-separated sensor record file.
    ///
    /// ```text
    /// #noisycf-model  1
    /// #variant        noisy2
    /// #k              1
    /// #max_user       50
    /// #max_item       20
    /// #prior          p(v_1) ... p(v_m)
    /// kind  id  alpha  beta  sigma2  r2  n  evidence
    /// user  17  0      1     0.61    NA  12 4
    /// ```
    ///
    /// Floats use shortest round-trip formatting; `r2` is `NA` when unset.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MODEL_MAGIC}\t{MODEL_FORMAT_VERSION}")?;
        writeln!(out, "#variant\t{}", self.variant)?;
        writeln!(out, "#k\t{}", self.k)?;
        writeln!(out, "#max_user\t{}", self.max_user_sensors)?;
        writeln!(out, "#max_item\t{}", self.max_item_sensors)?;
        let prior: Vec<String> = self.prior.probs().iter().map(f64::to_string).collect();
        writeln!(out, "#prior\t{}", prior.join("\t"))?;
        writeln!(out, "kind\tid\talpha\tbeta\tsigma2\tr2\tn\tevidence")?;
        for s in self.user_sensors.iter().chain(&self.item_sensors) {
            let r2 = s.fit.r2.map_or_else(|| "NA".to_string(), |r| r.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.kind.as_str(),
                s.id,
                s.fit.alpha,
                s.fit.beta,
                s.fit.sigma2,
                r2,
                s.fit.n,
                s.evidence
            )?;
        }
        Ok(())
    }

    pub fn read_records<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let mut header = |expect: &str| -> Result<Vec<String>> {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| malformed(0, "truncated header"))?;
            let line = line?;
            let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
            if fields[0] != expect {
                return Err(malformed(idx + 1, &format!("expected `{expect}`")));
            }
            Ok(fields)
        };
        let magic = header(MODEL_MAGIC)?;
        if magic.get(1).map(String::as_str) != Some("1") {
            return Err(malformed(1, "unsupported model format version"));
        }
        let variant: Variant = header("#variant")?[1].parse()?;
        let k = parse_field(&header("#k")?[1], 3)?;
        let max_user_sensors = parse_field(&header("#max_user")?[1], 4)?;
        let max_item_sensors = parse_field(&header("#max_item")?[1], 5)?;
        let prior_fields = header("#prior")?;
        let probs = prior_fields[1..]
            .iter()
            .map(|f| parse_field(f, 6))
            .collect::<Result<Vec<f64>>>()?;
        let prior = RatingPrior::from_probs(probs)?;
        header("kind")?;

        let mut model = FittedModel {
            prior,
            user_sensors: Vec::new(),
            item_sensors: Vec::new(),
            variant,
            k,
            max_user_sensors,
            max_item_sensors,
        };
        for (idx, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(malformed(idx + 1, "expected 8 fields"));
            }
            let kind = match f[0] {
                "user" => SensorKind::User,
                "item" => SensorKind::Item,
                _ => return Err(malformed(idx + 1, "kind must be `user` or `item`")),
            };
            let r2 = if f[5] == "NA" {
                None
            } else {
                Some(parse_field(f[5], idx + 1)?)
            };
            let sensor = SensorRef {
                kind,
                id: parse_field(f[1], idx + 1)?,
                fit: SensorFit {
                    alpha: parse_field(f[2], idx + 1)?,
                    beta: parse_field(f[3], idx + 1)?,
                    sigma2: parse_field(f[4], idx + 1)?,
                    r2,
                    n: parse_field(f[6], idx + 1)?,
                    k,
                },
                evidence: parse_field(f[7], idx + 1)?,
            };
            match kind {
                SensorKind::User => model.user_sensors.push(sensor),
                SensorKind::Item => model.item_sensors.push(sensor),
            }
        }
        Ok(model)
    }
}

fn malformed(line: usize, reason: &str) -> Error {
    Error::MalformedRecord {
        line,
        reason: reason.to_string(),
    }
}

fn parse_field<T: FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| malformed(line, &format!("cannot parse `{field}`")))
}

/// Orders sensors best-first: by the variant's reliability key, then by more
/// co-ratings, then by smaller id.
pub fn rank_order(variant: Variant, a: &SensorRef, b: &SensorRef) -> Ordering {
    let key = match variant {
        Variant::Noisy1 => {
            let (ra, rb) = (a.fit.r2.unwrap_or(0.0), b.fit.r2.unwrap_or(0.0));
            rb.total_cmp(&ra)
        }
        Variant::Noisy2 => a.fit.sigma2.total_cmp(&b.fit.sigma2),
    };
    key.then(b.fit.n.cmp(&a.fit.n)).then(a.id.cmp(&b.id))
}

/// Noisy sensor rating predictor over a fixed training matrix.
#[derive(Debug, Clone)]
pub struct NoisySensorPredictor<'a> {
    train: &'a RatingsMatrix,
    prior: RatingPrior,
    fitter: SensorFitter,
    config: PredictorConfig,
}

impl<'a> NoisySensorPredictor<'a> {
    /// Uses the add-one smoothed rating prior of `train`.
    pub fn new(
        train: &'a RatingsMatrix,
        pair_prior: &PairPrior,
        config: PredictorConfig,
    ) -> Result<Self> {
        let prior = rating_prior(train)?;
        Self::with_prior(train, prior, pair_prior, config)
    }

    pub fn with_prior(
        train: &'a RatingsMatrix,
        prior: RatingPrior,
        pair_prior: &PairPrior,
        config: PredictorConfig,
    ) -> Result<Self> {
        if prior.len() != train.scale().len() {
            return Err(Error::Config(
                "prior does not match the rating scale".into(),
            ));
        }
        let fitter = SensorFitter::new(train.scale(), pair_prior, config.k)?
            .with_sigma2_floor(config.sigma2_floor);
        Ok(Self {
            train,
            prior,
            fitter,
            config,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn prior(&self) -> &RatingPrior {
        &self.prior
    }

    pub fn scale(&self) -> &RatingScale {
        self.train.scale()
    }

    fn fit(&self, pairs: &[(Rating, Rating)]) -> Option<SensorFit> {
        if pairs.len() < self.config.min_corated() {
            return None;
        }
        match self.config.variant {
            Variant::Noisy1 => self.fitter.noisy1_pairs(pairs),
            Variant::Noisy2 => self.fitter.noisy2_pairs(pairs),
        }
        .ok()
    }

    fn user_candidates(&self, active: &ActiveProfile, target: ItemId) -> Vec<SensorRef> {
        let raters = self.train.item_ratings(target);
        raters
            .par_iter()
            .with_min_len(64)
            .filter(|&&(u, _)| Some(u) != active.user())
            .filter_map(|&(u, evidence)| {
                let pairs: Vec<(Rating, Rating)> = self
                    .train
                    .user_ratings(u)
                    .iter()
                    .filter(|&&(item, _)| item != target)
                    .filter_map(|&(item, y)| active.rating_of(item).map(|x| (x, y)))
                    .collect();
                self.fit(&pairs).map(|fit| SensorRef {
                    kind: SensorKind::User,
                    id: u,
                    fit,
                    evidence,
                })
            })
            .collect()
    }

    fn item_candidates(&self, active: &ActiveProfile, target: ItemId) -> Vec<SensorRef> {
        let mut target_by_user = vec![None; self.train.n_users()];
        for &(u, r) in self.train.item_ratings(target) {
            target_by_user[u as usize] = Some(r);
        }
        active
            .observed()
            .par_iter()
            .with_min_len(16)
            .filter(|&&(k, _)| k != target)
            .filter_map(|&(k, evidence)| {
                let pairs: Vec<(Rating, Rating)> = self
                    .train
                    .item_ratings(k)
                    .iter()
                    .filter(|&&(u, _)| Some(u) != active.user())
                    .filter_map(|&(u, y)| {
                        target_by_user
                            .get(u as usize)
                            .copied()
                            .flatten()
                            .map(|x| (x, y))
                    })
                    .collect();
                self.fit(&pairs).map(|fit| SensorRef {
                    kind: SensorKind::Item,
                    id: k,
                    fit,
                    evidence,
                })
            })
            .collect()
    }

    /// Every fittable candidate, ranked best-first but not truncated.
    pub fn candidates(&self, active: &ActiveProfile, target: ItemId) -> FittedModel {
        let variant = self.config.variant;
        let mut user_sensors = self.user_candidates(active, target);
        let mut item_sensors = self.item_candidates(active, target);
        user_sensors.sort_by(|a, b| rank_order(variant, a, b));
        item_sensors.sort_by(|a, b| rank_order(variant, a, b));
        FittedModel {
            prior: self.prior.clone(),
            user_sensors,
            item_sensors,
            variant,
            k: self.config.k,
            max_user_sensors: usize::MAX,
            max_item_sensors: usize::MAX,
        }
    }

    /// The model for one (active user, target item) prediction.
    pub fn build_model(&self, active: &ActiveProfile, target: ItemId) -> FittedModel {
        self.candidates(active, target)
            .truncated(self.config.max_user_sensors, self.config.max_item_sensors)
    }

    pub fn posterior(
        &self,
        active: &ActiveProfile,
        target: ItemId,
    ) -> Result<PosteriorDistribution> {
        self.build_model(active, target).posterior(self.scale())
    }

    pub fn predict(&self, active: &ActiveProfile, target: ItemId) -> Result<f64> {
        Ok(self.posterior(active, target)?.expected())
    }
}
