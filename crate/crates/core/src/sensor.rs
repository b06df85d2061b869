//! Noisy-sensor fitting.
//!
//! A sensor relates a hypothesised rating `x` of the active user (or of the
//! target item) to an observed rating `y` of another user (or another item)
//! through `y = alpha + beta * x + e`, `e ~ N(0, sigma2)`.
//!
//! Sparse co-ratings are padded with `K` dummy observations spread over all
//! `m^2` rating pairs by a [`PairPrior`]: cell `(x, y)` enters the sufficient
//! statistics as one pseudo-point with fractional weight `K * w_xy`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::{PairPrior, Rating, RatingScale};

pub const DEFAULT_SIGMA2_FLOOR: f64 = 1e-6;

/// Co-rated `(x, y)` pairs between a sensor and its target.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairedObservations {
    pairs: Vec<(Rating, Rating)>,
}

impl PairedObservations {
    pub fn new(pairs: Vec<(Rating, Rating)>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(Rating, Rating)] {
        &self.pairs
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl FromIterator<(Rating, Rating)> for PairedObservations {
    fn from_iter<I: IntoIterator<Item = (Rating, Rating)>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Fitted parameters of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFit {
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    /// Coefficient of determination; `None` for identity (Noisy2) fits.
    pub r2: Option<f64>,
    /// Real co-rated observations.
    pub n: usize,
    /// Dummy weight used in the fit.
    pub k: f64,
}

impl SensorFit {
    /// Regression mean for hypothesised rating `x`, clamped onto the scale.
    pub fn mean(&self, x: f64, scale: &RatingScale) -> f64 {
        scale.clamp(self.alpha + self.beta * x)
    }
}

/// Fits sensors against a fixed pair prior and dummy weight.
#[derive(Debug, Clone)]
pub struct SensorFitter {
    k: f64,
    sigma2_floor: f64,
    /// `(x, y, K * w_xy)` for each prior cell with positive weight.
    dummies: Vec<(f64, f64, f64)>,
}

impl SensorFitter {
    pub fn new(scale: &RatingScale, pair_prior: &PairPrior, k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::Config(format!("K must be finite and >= 0, got {k}")));
        }
        if pair_prior.m() != scale.len() {
            return Err(Error::Config(format!(
                "pair prior has {} values but the scale has {}",
                pair_prior.m(),
                scale.len()
            )));
        }
        let mut dummies = Vec::new();
        if k > 0.0 {
            for (xi, &x) in scale.values().iter().enumerate() {
                for (yi, &y) in scale.values().iter().enumerate() {
                    let w = k * pair_prior.weight(xi, yi);
                    if w > 0.0 {
                        dummies.push((x as f64, y as f64, w));
                    }
                }
            }
        }
        Ok(Self {
            k,
            sigma2_floor: DEFAULT_SIGMA2_FLOOR,
            dummies,
        })
    }

    /// Lower bound applied to every fitted variance (0 disables it).
    pub fn with_sigma2_floor(mut self, floor: f64) -> Self {
        self.sigma2_floor = floor.max(0.0);
        self
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn sigma2_floor(&self) -> f64 {
        self.sigma2_floor
    }

    fn points<'a>(
        &'a self,
        obs: &'a [(Rating, Rating)],
    ) -> impl Iterator<Item = (f64, f64, f64)> + 'a {
        obs.iter()
            .map(|&(x, y)| (x as f64, y as f64, 1.0))
            .chain(self.dummies.iter().copied())
    }

    fn total_weight(&self, n: usize) -> f64 {
        n as f64 + self.dummies.iter().map(|d| d.2).sum::<f64>()
    }

    /// Weighted least-squares line (the Gaussian maximum-likelihood fit).
    pub fn noisy1(&self, obs: &PairedObservations) -> Result<SensorFit> {
        self.noisy1_pairs(obs.pairs())
    }

    pub fn noisy1_pairs(&self, obs: &[(Rating, Rating)]) -> Result<SensorFit> {
        let sw = self.total_weight(obs.len());
        if sw <= 0.0 {
            return Err(Error::NoData);
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for (x, y, w) in self.points(obs) {
            sx += w * x;
            sy += w * y;
        }
        let (x_mean, y_mean) = (sx / sw, sy / sw);

        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for (x, y, w) in self.points(obs) {
            let (dx, dy) = (x - x_mean, y - y_mean);
            sxx += w * dx * dx;
            sxy += w * dx * dy;
            syy += w * dy * dy;
        }
        if sxx <= 1e-12 * sw {
            return Err(Error::UnfittableSensor);
        }
        let beta = sxy / sxx;
        let alpha = y_mean - beta * x_mean;

        let sse: f64 = self
            .points(obs)
            .map(|(x, y, w)| {
                let e = y - alpha - beta * x;
                w * e * e
            })
            .sum();
        // all y equal: the fit is the horizontal line through the mean
        let r2 = if syy <= 1e-12 * sw {
            0.0
        } else {
            (1.0 - sse / syy).clamp(0.0, 1.0)
        };
        Ok(SensorFit {
            alpha,
            beta,
            sigma2: (sse / sw).max(self.sigma2_floor),
            r2: Some(r2),
            n: obs.len(),
            k: self.k,
        })
    }

    /// Identity relationship (`alpha = 0`, `beta = 1`); only the noise
    /// variance is learned.
    pub fn noisy2(&self, obs: &PairedObservations) -> Result<SensorFit> {
        self.noisy2_pairs(obs.pairs())
    }

    pub fn noisy2_pairs(&self, obs: &[(Rating, Rating)]) -> Result<SensorFit> {
        let sw = self.total_weight(obs.len());
        if sw <= 0.0 {
            return Err(Error::NoData);
        }
        let sse: f64 = self
            .points(obs)
            .map(|(x, y, w)| w * (y - x) * (y - x))
            .sum();
        Ok(SensorFit {
            alpha: 0.0,
            beta: 1.0,
            sigma2: (sse / sw).max(self.sigma2_floor),
            r2: None,
            n: obs.len(),
            k: self.k,
        })
    }
}

/// Gaussian density of observing `y` from a sensor when the hidden rating is
/// `x`. The regression mean is clamped onto the scale.
pub fn predictive_density(
    fit: &SensorFit,
    y: Rating,
    x: Rating,
    scale: &RatingScale,
) -> Result<f64> {
    log_predictive_density(fit, y as f64, x as f64, scale).map(f64::exp)
}

/// Natural log of [`predictive_density`], for real-valued arguments.
pub fn log_predictive_density(fit: &SensorFit, y: f64, x: f64, scale: &RatingScale) -> Result<f64> {
    if fit.sigma2.is_nan() || fit.sigma2 <= 0.0 {
        return Err(Error::DegenerateSensor);
    }
    let mu = fit.mean(x, scale);
    let d = y - mu;
    Ok(-0.5 * (2.0 * PI * fit.sigma2).ln() - d * d / (2.0 * fit.sigma2))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::ratings::RatingPrior;

    fn obs(pairs: &[(Rating, Rating)]) -> PairedObservations {
        PairedObservations::new(pairs.to_vec())
    }

    fn raw_fitter(scale: &RatingScale, k: f64) -> SensorFitter {
        SensorFitter::new(scale, &PairPrior::uniform(scale.len()), k)
            .unwrap()
            .with_sigma2_floor(0.0)
    }

    /// Textbook raw-sum OLS over weighted points.
    fn wls_oracle(points: &[(f64, f64, f64)]) -> (f64, f64, f64) {
        let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y, w) in points {
            s += w;
            sx += w * x;
            sy += w * y;
            sxx += w * x * x;
            sxy += w * x * y;
        }
        let beta = (s * sxy - sx * sy) / (s * sxx - sx * sx);
        let alpha = (sy - beta * sx) / s;
        let sse: f64 = points
            .iter()
            .map(|&(x, y, w)| w * (y - alpha - beta * x).powi(2))
            .sum();
        (alpha, beta, sse / s)
    }

    #[test]
    fn perfect_identity_fit() {
        let scale = RatingScale::range(0, 5).unwrap();
        let fit = raw_fitter(&scale, 0.0)
            .noisy1(&obs(&[(1, 1), (2, 2), (3, 3)]))
            .unwrap();
        assert_eq!(
            (fit.alpha, fit.beta, fit.sigma2, fit.r2),
            (0.0, 1.0, 0.0, Some(1.0))
        );
    }

    #[test]
    fn three_point_fit_matches_closed_form_and_grid_search() {
        let scale = RatingScale::range(0, 5).unwrap();
        let fit = raw_fitter(&scale, 0.0)
            .noisy1(&obs(&[(0, 0), (1, 1), (2, 1)]))
            .unwrap();
        assert!((fit.beta - 0.5).abs() < 1e-12);
        assert!((fit.alpha - 1.0 / 6.0).abs() < 1e-12);
        assert!((fit.sigma2 - 1.0 / 18.0).abs() < 1e-12);
        assert!((fit.r2.unwrap() - 0.75).abs() < 1e-12);

        // brute-force residual minimisation on a 1/600 grid
        let pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 1.0)];
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for ai in -300..=300 {
            for bi in -600..=600 {
                let (a, b) = (ai as f64 / 600.0, bi as f64 / 600.0);
                let sse: f64 = pts.iter().map(|&(x, y)| (y - a - b * x).powi(2)).sum();
                if sse < best.0 {
                    best = (sse, a, b);
                }
            }
        }
        assert!((best.1 - fit.alpha).abs() < 2e-3 && (best.2 - fit.beta).abs() < 2e-3);
        assert!((best.0 / 3.0 - fit.sigma2).abs() < 1e-6);
    }

    #[test]
    fn dummies_make_a_two_point_fit_noisy() {
        let scale = RatingScale::new(vec![1, 2]).unwrap();
        let fit = raw_fitter(&scale, 1.0)
            .noisy1(&obs(&[(1, 1), (2, 2)]))
            .unwrap();
        let mut pts = vec![(1.0, 1.0, 1.0), (2.0, 2.0, 1.0)];
        for x in [1.0, 2.0] {
            for y in [1.0, 2.0] {
                pts.push((x, y, 0.25));
            }
        }
        let (a, b, s2) = wls_oracle(&pts);
        assert!((fit.alpha - a).abs() < 1e-12 && (fit.beta - b).abs() < 1e-12);
        assert!((fit.sigma2 - s2).abs() < 1e-12);
        // hand-derived: alpha 1/2, beta 2/3, sigma2 5/36
        assert!((fit.sigma2 - 5.0 / 36.0).abs() < 1e-12);
        assert!(fit.sigma2 > 0.0);
    }

    #[test]
    fn degenerate_and_empty_inputs() {
        let scale = RatingScale::range(0, 5).unwrap();
        let f = raw_fitter(&scale, 0.0);
        assert!(matches!(
            f.noisy1(&obs(&[(2, 1), (2, 4)])),
            Err(Error::UnfittableSensor)
        ));
        assert!(matches!(f.noisy1(&obs(&[])), Err(Error::NoData)));
        assert!(matches!(f.noisy2(&obs(&[])), Err(Error::NoData)));
        // dummies alone are enough data
        let f = raw_fitter(&scale, 1.0);
        assert!(f.noisy1(&obs(&[])).is_ok());
        assert!(f.noisy2(&obs(&[])).is_ok());
        assert!(SensorFitter::new(&scale, &PairPrior::uniform(6), -1.0).is_err());
        assert!(SensorFitter::new(&scale, &PairPrior::uniform(5), 1.0).is_err());
    }

    #[test]
    fn constant_y_has_zero_r2() {
        let scale = RatingScale::range(0, 5).unwrap();
        let fit = raw_fitter(&scale, 0.0)
            .noisy1(&obs(&[(1, 3), (2, 3), (4, 3)]))
            .unwrap();
        assert_eq!(fit.r2, Some(0.0));
        assert!(fit.beta.abs() < 1e-15);
    }

    #[test]
    fn noisy2_examples() {
        let scale = RatingScale::range(0, 5).unwrap();
        let f = raw_fitter(&scale, 0.0);
        let fit = f.noisy2(&obs(&[(1, 1), (3, 3), (5, 5)])).unwrap();
        assert_eq!(
            (fit.alpha, fit.beta, fit.sigma2, fit.r2),
            (0.0, 1.0, 0.0, None)
        );
        assert_eq!(f.noisy2(&obs(&[(1, 2), (3, 3)])).unwrap().sigma2, 0.5);

        let small = RatingScale::new(vec![1, 2]).unwrap();
        let fit = raw_fitter(&small, 1.0).noisy2(&obs(&[(2, 2)])).unwrap();
        assert!((fit.sigma2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn floor_applies_after_fitting() {
        let scale = RatingScale::range(0, 5).unwrap();
        let f = SensorFitter::new(&scale, &PairPrior::uniform(6), 0.0).unwrap();
        assert_eq!(
            f.noisy2(&obs(&[(1, 1)])).unwrap().sigma2,
            DEFAULT_SIGMA2_FLOOR
        );
        assert_eq!(
            f.noisy1(&obs(&[(1, 1), (2, 2)])).unwrap().sigma2,
            DEFAULT_SIGMA2_FLOOR
        );
    }

    #[test]
    fn density_examples() {
        let scale = RatingScale::range(0, 5).unwrap();
        let unit = SensorFit {
            alpha: 0.0,
            beta: 1.0,
            sigma2: 1.0,
            r2: None,
            n: 1,
            k: 0.0,
        };
        let d = predictive_density(&unit, 3, 3, &scale).unwrap();
        assert!((d - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((d - 0.39894).abs() < 1e-5);

        let steep = SensorFit { beta: 2.0, ..unit };
        assert_eq!(steep.mean(4.0, &scale), 5.0);
        let at_max = predictive_density(&steep, 5, 4, &scale).unwrap();
        assert!((at_max - d).abs() < 1e-15);

        let narrow = SensorFit {
            sigma2: 0.25,
            ..unit
        };
        let d = predictive_density(&narrow, 1, 0, &scale).unwrap();
        let oracle = (1.0 / (2.0 * PI * 0.25).sqrt()) * (-2.0f64).exp();
        assert!((d - oracle).abs() < 1e-15);
        assert!((d - 0.10798).abs() < 1e-5);

        let flat = SensorFit {
            sigma2: 0.0,
            ..unit
        };
        assert!(matches!(
            predictive_density(&flat, 1, 1, &scale),
            Err(Error::DegenerateSensor)
        ));
    }

    #[test]
    fn density_integrates_to_one_and_peaks_at_mean() {
        let scale = RatingScale::range(0, 5).unwrap();
        for &(alpha, beta, sigma2, x) in &[
            (0.3, 0.8, 0.7, 2.0),
            (1.0, 1.5, 2.5, 4.0),
            (0.0, 1.0, 0.05, 0.0),
        ] {
            let fit = SensorFit {
                alpha,
                beta,
                sigma2,
                r2: None,
                n: 3,
                k: 1.0,
            };
            let mu = fit.mean(x, &scale);
            let sd = sigma2.sqrt();
            // composite Simpson over mu +/- 12 sd
            let (lo, hi, n) = (mu - 12.0 * sd, mu + 12.0 * sd, 20_000);
            let h = (hi - lo) / n as f64;
            let f = |y: f64| log_predictive_density(&fit, y, x, &scale).unwrap().exp();
            let mut total = f(lo) + f(hi);
            for i in 1..n {
                total += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert!((total * h / 3.0 - 1.0).abs() < 1e-6);
            let peak = f(mu);
            for dy in [-0.3, -0.01, 0.01, 0.3] {
                assert!(f(mu + dy) < peak);
            }
        }
    }

    #[test]
    fn beta_is_invariant_to_which_points_are_dummies() {
        // counts c give weights (c + 1) / T, so K = T turns them into integer
        // pseudo-point weights c + 1
        let scale = RatingScale::new(vec![1, 2, 3]).unwrap();
        let counts = [2u64, 0, 1, 0, 3, 0, 1, 0, 4];
        let total: u64 = counts.iter().map(|c| c + 1).sum();
        let prior_a = PairPrior::from_pair_counts(3, &counts).unwrap();
        let mut moved = counts;
        moved[2 * 3 + 2] += 1; // cell (3, 3)
        let prior_b = PairPrior::from_pair_counts(3, &moved).unwrap();

        let real = SensorFitter::new(&scale, &prior_a, total as f64)
            .unwrap()
            .noisy1(&obs(&[(1, 1), (2, 3), (3, 3)]))
            .unwrap();
        let dummy = SensorFitter::new(&scale, &prior_b, (total + 1) as f64)
            .unwrap()
            .noisy1(&obs(&[(1, 1), (2, 3)]))
            .unwrap();
        assert!((real.beta - dummy.beta).abs() < 1e-12);
        assert!((real.alpha - dummy.alpha).abs() < 1e-12);
        assert!((real.sigma2 - dummy.sigma2).abs() < 1e-12);
    }

    fn arb_pairs(max_value: Rating) -> impl Strategy<Value = Vec<(Rating, Rating)>> {
        prop::collection::vec((0..=max_value, 0..=max_value), 0..40)
    }

    proptest! {
        #[test]
        fn r2_in_unit_interval(pairs in arb_pairs(5), k in 0.0f64..3.0) {
            let scale = RatingScale::range(0, 5).unwrap();
            if let Ok(fit) = raw_fitter(&scale, k).noisy1(&obs(&pairs)) {
                let r2 = fit.r2.unwrap();
                prop_assert!((0.0..=1.0).contains(&r2));
                prop_assert!(fit.sigma2 >= 0.0);
            }
        }

        #[test]
        fn k_zero_matches_ols(pairs in prop::collection::vec((0i32..=5, 0i32..=5), 2..50)) {
            let scale = RatingScale::range(0, 5).unwrap();
            let pts: Vec<_> = pairs.iter().map(|&(x, y)| (x as f64, y as f64, 1.0)).collect();
            match raw_fitter(&scale, 0.0).noisy1(&obs(&pairs)) {
                Ok(fit) => {
                    let (a, b, s2) = wls_oracle(&pts);
                    prop_assert!((fit.alpha - a).abs() < 1e-9);
                    prop_assert!((fit.beta - b).abs() < 1e-9);
                    prop_assert!((fit.sigma2 - s2).abs() < 1e-9);
                }
                Err(e) => {
                    prop_assert!(matches!(e, Error::UnfittableSensor));
                    prop_assert!(pairs.iter().all(|p| p.0 == pairs[0].0));
                }
            }
        }

        #[test]
        fn smoothed_priors_keep_variance_positive(
            pairs in arb_pairs(5),
            marginal in prop::collection::vec(0u64..50, 6),
        ) {
            let scale = RatingScale::range(0, 5).unwrap();
            let prior = PairPrior::marginal_product(&RatingPrior::from_counts(&marginal, true).unwrap());
            let f = SensorFitter::new(&scale, &prior, 1.0).unwrap().with_sigma2_floor(0.0);
            prop_assert!(f.noisy1(&obs(&pairs)).unwrap().sigma2 > 0.0);
            prop_assert!(f.noisy2(&obs(&pairs)).unwrap().sigma2 > 0.0);
        }
    }
}
