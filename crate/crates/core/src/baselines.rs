//! Comparison algorithms: mean-centred Pearson correlation and Personality
//! Diagnosis.

use crate::error::{Error, Result};
use crate::predictor::PosteriorDistribution;
use crate::ratings::{rating_prior, ActiveProfile, ItemId, Rating, RatingPrior, RatingsMatrix};

/// Pearson correlation over paired ratings.
///
/// `None` with fewer than two pairs or when either side has zero variance.
pub fn pearson(pairs: &[(Rating, Rating)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mean_a = pairs.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let mean_b = pairs.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        let (da, db) = (a as f64 - mean_a, b as f64 - mean_b);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Memory-based prediction: the active user's mean plus the
/// correlation-weighted mean deviation of neighbours who rated the target.
#[derive(Debug, Clone)]
pub struct CorrelationPredictor<'a> {
    train: &'a RatingsMatrix,
    user_means: Vec<Option<f64>>,
    global_mean: f64,
}

impl<'a> CorrelationPredictor<'a> {
    pub fn new(train: &'a RatingsMatrix) -> Result<Self> {
        let global_mean = train.mean_rating().ok_or(Error::EmptyTraining)?;
        let user_means = (0..train.n_users() as u32)
            .map(|u| {
                let row = train.user_ratings(u);
                (!row.is_empty())
                    .then(|| row.iter().map(|&(_, r)| r as f64).sum::<f64>() / row.len() as f64)
            })
            .collect();
        Ok(Self {
            train,
            user_means,
            global_mean,
        })
    }

    /// Pearson weight between the active user and training user `user` over
    /// their co-rated items.
    pub fn weight(&self, active: &ActiveProfile, user: u32) -> Option<f64> {
        let pairs: Vec<(Rating, Rating)> = self
            .train
            .user_ratings(user)
            .iter()
            .filter_map(|&(item, r)| active.rating_of(item).map(|a| (a, r)))
            .collect();
        pearson(&pairs)
    }

    pub fn predict(&self, active: &ActiveProfile, target: ItemId) -> f64 {
        let Some(active_mean) = active.mean() else {
            return self.global_mean;
        };
        let (mut num, mut den) = (0.0, 0.0);
        for &(u, r) in self.train.item_ratings(target) {
            if Some(u) == active.user() {
                continue;
            }
            let (Some(w), Some(mean_u)) = (self.weight(active, u), self.user_means[u as usize])
            else {
                continue;
            };
            num += w * (r as f64 - mean_u);
            den += w.abs();
        }
        if den <= 0.0 {
            return active_mean;
        }
        self.train.scale().clamp(active_mean + num / den)
    }
}

/// Personality Diagnosis: each training user who rated the target is a
/// candidate "true personality", weighted by a Gaussian likelihood of the
/// active user's observed ratings.
#[derive(Debug, Clone)]
pub struct PersonalityDiagnosis<'a> {
    train: &'a RatingsMatrix,
    prior: RatingPrior,
    sigma: f64,
    prior_mix: f64,
}

pub const DEFAULT_PD_SIGMA: f64 = 1.0;
/// Mass given to the rating prior in the PD posterior.
pub const DEFAULT_PD_PRIOR_MIX: f64 = 1e-4;

impl<'a> PersonalityDiagnosis<'a> {
    pub fn new(train: &'a RatingsMatrix, sigma: f64) -> Result<Self> {
        Self::with_prior_mix(train, sigma, DEFAULT_PD_PRIOR_MIX)
    }

    pub fn with_prior_mix(train: &'a RatingsMatrix, sigma: f64, prior_mix: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Config(format!("PD sigma must be > 0, got {sigma}")));
        }
        if !(0.0..=1.0).contains(&prior_mix) {
            return Err(Error::Config(format!(
                "PD prior mix must lie in [0, 1], got {prior_mix}"
            )));
        }
        Ok(Self {
            train,
            prior: rating_prior(train)?,
            sigma,
            prior_mix,
        })
    }

    pub fn posterior(
        &self,
        active: &ActiveProfile,
        target: ItemId,
    ) -> Result<PosteriorDistribution> {
        let scale = self.train.scale();
        let raters = self.train.item_ratings(target);
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let log_weights: Vec<(Rating, f64)> = raters
            .iter()
            .filter(|&&(u, _)| Some(u) != active.user())
            .map(|&(u, r)| {
                let log_w = -inv
                    * self
                        .train
                        .user_ratings(u)
                        .iter()
                        .filter_map(|&(item, s)| {
                            active.rating_of(item).map(|a| ((a - s) as f64).powi(2))
                        })
                        .sum::<f64>();
                (r, log_w)
            })
            .collect();
        if log_weights.is_empty() {
            return Ok(PosteriorDistribution::new(
                self.prior.probs().to_vec(),
                scale,
            ));
        }
        let max = log_weights
            .iter()
            .map(|w| w.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut mass = vec![0.0; scale.len()];
        for &(r, log_w) in &log_weights {
            // raters' ratings are on the scale by construction
            mass[scale.index_of(r).unwrap()] += (log_w - max).exp();
        }
        let total: f64 = mass.iter().sum();
        let probs = mass
            .iter()
            .zip(self.prior.probs())
            .map(|(m, p)| (1.0 - self.prior_mix) * m / total + self.prior_mix * p)
            .collect();
        Ok(PosteriorDistribution::new(probs, scale))
    }

    pub fn predict(&self, active: &ActiveProfile, target: ItemId) -> Result<f64> {
        Ok(self.posterior(active, target)?.expected())
    }
}
