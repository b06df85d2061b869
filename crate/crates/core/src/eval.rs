//! Train/test evaluation: protocol splits, average absolute deviation,
//! extreme-rating subsets and the randomization paired-sample test.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{CorrelationPredictor, PersonalityDiagnosis};
use crate::error::{Error, Result};
use crate::predictor::{posterior_from_sensors, NoisySensorPredictor};
use crate::ratings::{
    split_user, ActiveProfile, ItemId, Rating, RatingsMatrix, SplitSpec, TestUser, UserId,
};
use crate::seed::{self, Stream};

pub const DEFAULT_SAMPLES: usize = 60;
pub const DEFAULT_PERMUTATIONS: usize = 10_000;
/// Half-width of the band around the mean rating that is *not* extreme.
pub const EXTREME_MARGIN: f64 = 0.5;

/// Anything that predicts a real-valued rating for an active user.
pub trait RatingPredictor: Sync {
    fn predict(&self, active: &ActiveProfile, target: ItemId) -> Result<f64>;
}

impl RatingPredictor for NoisySensorPredictor<'_> {
    fn predict(&self, active: &ActiveProfile, target: ItemId) -> Result<f64> {
        NoisySensorPredictor::predict(self, active, target)
    }
}

impl RatingPredictor for CorrelationPredictor<'_> {
    fn predict(&self, active: &ActiveProfile, target: ItemId) -> Result<f64> {
        Ok(CorrelationPredictor::predict(self, active, target))
    }
}

impl RatingPredictor for PersonalityDiagnosis<'_> {
    fn predict(&self, active: &ActiveProfile, target: ItemId) -> Result<f64> {
        PersonalityDiagnosis::predict(self, active, target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub user: UserId,
    pub item: ItemId,
    pub actual: Rating,
    pub predicted: f64,
}

/// Mean over users of each user's mean absolute deviation.
pub fn mae(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no prediction records"));
    }
    let mut per_user: BTreeMap<UserId, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = per_user.entry(r.user).or_default();
        e.0 += (r.predicted - r.actual as f64).abs();
        e.1 += 1;
    }
    let total: f64 = per_user.values().map(|&(s, n)| s / n as f64).sum();
    Ok(total / per_user.len() as f64)
}

/// Keeps records whose actual rating lies strictly outside
/// `global_mean ± 0.5`.
pub fn extreme_filter(records: &[PredictionRecord], global_mean: f64) -> Vec<PredictionRecord> {
    records
        .iter()
        .filter(|r| is_extreme(r.actual as f64, global_mean))
        .copied()
        .collect()
}

fn is_extreme(actual: f64, global_mean: f64) -> bool {
    actual < global_mean - EXTREME_MARGIN || actual > global_mean + EXTREME_MARGIN
}

/// Randomization paired-sample test of a mean difference.
///
/// Each resample flips the sign of every difference independently with
/// probability 1/2. Returns the fraction of resamples whose mean is less
/// than or equal to the observed mean (ties count).
pub fn randomization_test(diffs: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    if diffs.is_empty() {
        return Err(Error::EmptyInput("no paired differences"));
    }
    if permutations == 0 {
        return Err(Error::Config("permutations must be >= 1".into()));
    }
    let observed: f64 = diffs.iter().sum();
    let tolerance = 1e-12 * diffs.iter().map(|d| d.abs()).sum::<f64>();
    let mut rng = seed::rng(seed, Stream::Permutation, &[]);
    let mut hits = 0usize;
    for _ in 0..permutations {
        let mut sum = 0.0;
        for chunk in diffs.chunks(64) {
            let bits = rng.next_u64();
            for (i, &d) in chunk.iter().enumerate() {
                sum += if bits >> i & 1 == 1 { -d } else { d };
            }
        }
        if sum <= observed + tolerance {
            hits += 1;
        }
    }
    Ok(hits as f64 / permutations as f64)
}

/// Per-sample MAE differences `mae(a) - mae(b)` over `n_samples` buckets.
///
/// Predictions are shuffled by `(user, item)` under the seed and dealt
/// round-robin, so bucket sizes differ by at most one. Both record sets must
/// cover the same `(user, item)` pairs.
pub fn paired_sample_diffs(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::Config("sample count must be >= 1".into()));
    }
    let index_b: HashMap<(UserId, ItemId), &PredictionRecord> =
        b.iter().map(|r| ((r.user, r.item), r)).collect();
    if index_b.len() != b.len() || a.len() != b.len() {
        return Err(Error::MismatchedRecords(format!(
            "{} vs {} predictions",
            a.len(),
            b.len()
        )));
    }
    let mut order: Vec<&PredictionRecord> = a.iter().collect();
    order.sort_by_key(|r| (r.user, r.item));
    if order
        .windows(2)
        .any(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
    {
        return Err(Error::MismatchedRecords(
            "duplicate (user, item) prediction".into(),
        ));
    }
    order.shuffle(&mut seed::rng(seed, Stream::Buckets, &[]));

    let mut buckets_a = vec![Vec::new(); n_samples];
    let mut buckets_b = vec![Vec::new(); n_samples];
    for (i, ra) in order.into_iter().enumerate() {
        let rb = index_b.get(&(ra.user, ra.item)).ok_or_else(|| {
            Error::MismatchedRecords(format!("user {} item {} missing", ra.user, ra.item))
        })?;
        if rb.actual != ra.actual {
            return Err(Error::MismatchedRecords(format!(
                "user {} item {}: actual ratings differ",
                ra.user, ra.item
            )));
        }
        buckets_a[i % n_samples].push(*ra);
        buckets_b[i % n_samples].push(**rb);
    }
    buckets_a
        .iter()
        .zip(&buckets_b)
        .filter(|(ba, _)| !ba.is_empty())
        .map(|(ba, bb)| Ok(mae(ba)? - mae(bb)?))
        .collect()
}

/// Significance levels for "a better than b" and "b better than a".
///
/// Both directions share the permutation stream, so they sum to at least 1.
pub fn paired_significance(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
    n_samples: usize,
    permutations: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let diffs = paired_sample_diffs(a, b, n_samples, seed)?;
    let reversed: Vec<f64> = diffs.iter().map(|d| -d).collect();
    Ok((
        randomization_test(&diffs, permutations, seed)?,
        randomization_test(&reversed, permutations, seed)?,
    ))
}

/// One test user's observed/hidden ratings under a protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedUser {
    pub user: UserId,
    pub observed: Vec<(ItemId, Rating)>,
    pub hidden: Vec<(ItemId, Rating)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolPlan {
    pub spec: SplitSpec,
    pub users: Vec<PlannedUser>,
    /// Users with too few ratings for the protocol.
    pub skipped: usize,
}

impl ProtocolPlan {
    pub fn n_predictions(&self) -> usize {
        self.users.iter().map(|u| u.hidden.len()).sum()
    }
}

/// Splits every test user; the split depends only on the seed, the protocol
/// and the user, so all algorithms see identical splits.
pub fn plan_protocol(test_users: &[TestUser], spec: SplitSpec, seed: u64) -> ProtocolPlan {
    let mut users = Vec::with_capacity(test_users.len());
    let mut skipped = 0;
    for t in test_users {
        let user_seed = seed::derive(seed, Stream::ProtocolSplit, &[spec.code(), t.user as u64]);
        match split_user(&t.ratings, spec, user_seed) {
            Ok(split) => users.push(PlannedUser {
                user: t.user,
                observed: split.observed,
                hidden: split.hidden,
            }),
            Err(_) => skipped += 1,
        }
    }
    ProtocolPlan {
        spec,
        users,
        skipped,
    }
}

fn active_profile(train: &RatingsMatrix, planned: &PlannedUser) -> ActiveProfile {
    let in_train = !train.user_ratings(planned.user).is_empty();
    ActiveProfile::new(
        in_train.then_some(planned.user),
        &planned.observed,
        train.n_items(),
    )
}

/// Predicts every hidden rating of the plan.
pub fn score_plan(
    train: &RatingsMatrix,
    plan: &ProtocolPlan,
    predictor: &dyn RatingPredictor,
) -> Result<Vec<PredictionRecord>> {
    let per_user = plan
        .users
        .par_iter()
        .map(|planned| {
            let active = active_profile(train, planned);
            planned
                .hidden
                .iter()
                .map(|&(item, actual)| {
                    let predicted = predictor.predict(&active, item)?;
                    if !predicted.is_finite() {
                        return Err(Error::Invariant(format!(
                            "non-finite prediction for user {} item {item}",
                            planned.user
                        )));
                    }
                    Ok(PredictionRecord {
                        user: planned.user,
                        item,
                        actual,
                        predicted,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

/// Records and bookkeeping of one algorithm under one protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub spec: SplitSpec,
    pub records: Vec<PredictionRecord>,
    pub n_users: usize,
    pub skipped: usize,
}

pub fn run_protocol(
    train: &RatingsMatrix,
    test_users: &[TestUser],
    spec: SplitSpec,
    predictor: &dyn RatingPredictor,
    seed: u64,
) -> Result<ProtocolRun> {
    let plan = plan_protocol(test_users, spec, seed);
    let records = score_plan(train, &plan, predictor)?;
    Ok(ProtocolRun {
        spec,
        records,
        n_users: plan.users.len(),
        skipped: plan.skipped,
    })
}

/// MAE of one `(U, I)` cell of a sensor-count sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub max_user_sensors: usize,
    pub max_item_sensors: usize,
    pub mae: f64,
    pub n_predictions: usize,
}

/// Scores every `(U, I)` combination on one plan.
///
/// Candidate sensors are fitted and ranked once per prediction; each cell
/// then fuses a prefix of the ranked lists, exactly as a model built with
/// that `(U, I)` would.
pub fn sweep(
    train: &RatingsMatrix,
    plan: &ProtocolPlan,
    predictor: &NoisySensorPredictor<'_>,
    user_grid: &[usize],
    item_grid: &[usize],
) -> Result<Vec<SweepCell>> {
    if user_grid.is_empty() || item_grid.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let cells: Vec<(usize, usize)> = user_grid
        .iter()
        .flat_map(|&u| item_grid.iter().map(move |&i| (u, i)))
        .collect();
    let max_u = user_grid.iter().copied().max().unwrap_or(0);
    let max_i = item_grid.iter().copied().max().unwrap_or(0);
    let scale = train.scale();

    let per_user = plan
        .users
        .par_iter()
        .map(|planned| {
            let active = active_profile(train, planned);
            let mut rows = vec![Vec::with_capacity(planned.hidden.len()); cells.len()];
            for &(item, actual) in &planned.hidden {
                let model = predictor.candidates(&active, item).truncated(max_u, max_i);
                for (c, &(u, i)) in cells.iter().enumerate() {
                    let users = &model.user_sensors[..u.min(model.user_sensors.len())];
                    let items = &model.item_sensors[..i.min(model.item_sensors.len())];
                    let predicted =
                        posterior_from_sensors(&model.prior, users, items, scale)?.expected();
                    rows[c].push(PredictionRecord {
                        user: planned.user,
                        item,
                        actual,
                        predicted,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(cells.len());
    for (c, &(u, i)) in cells.iter().enumerate() {
        let records: Vec<PredictionRecord> = per_user
            .iter()
            .flat_map(|rows| rows[c].iter().copied())
            .collect();
        out.push(SweepCell {
            max_user_sensors: u,
            max_item_sensors: i,
            mae: mae(&records)?,
            n_predictions: records.len(),
        });
    }
    Ok(out)
}

pub fn write_sweep<W: Write>(cells: &[SweepCell], mut out: W) -> Result<()> {
    writeln!(out, "u\ti\tmae\tn_predictions")?;
    for c in cells {
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{}",
            c.max_user_sensors, c.max_item_sensors, c.mae, c.n_predictions
        )?;
    }
    Ok(())
}

/// A prediction tagged with the algorithm and protocol that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedRecord {
    pub algorithm: String,
    pub protocol: String,
    pub record: PredictionRecord,
}

const RECORDS_HEADER: &str = "user\titem\tactual\tpredicted\talgorithm\tprotocol";

/// Writes the prediction dump: `user item actual predicted algorithm protocol`.
pub fn write_records<W: Write>(runs: &[AlgorithmRun], mut out: W) -> Result<()> {
    writeln!(out, "{RECORDS_HEADER}")?;
    for run in runs {
        for r in &run.run.records {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.user, r.item, r.actual, r.predicted, run.algorithm, run.run.spec
            )?;
        }
    }
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<TaggedRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() || (idx == 0 && line == RECORDS_HEADER) {
            continue;
        }
        let malformed = |reason: &str| Error::MalformedRecord {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(malformed("expected 6 tab-separated fields"));
        }
        let record = PredictionRecord {
            user: f[0].parse().map_err(|_| malformed("bad user id"))?,
            item: f[1].parse().map_err(|_| malformed("bad item id"))?,
            actual: f[2].parse().map_err(|_| malformed("bad actual rating"))?,
            predicted: f[3]
                .parse()
                .map_err(|_| malformed("bad predicted rating"))?,
        };
        out.push(TaggedRecord {
            algorithm: f[4].to_string(),
            protocol: f[5].to_string(),
            record,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmRun {
    pub algorithm: String,
    pub run: ProtocolRun,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub algorithm: String,
    pub protocol: String,
    pub mae: Option<f64>,
    pub mae_extreme: Option<f64>,
    pub n_users: usize,
    pub n_predictions: usize,
    pub n_extreme: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceRow {
    pub protocol: String,
    pub subset: String,
    pub a: String,
    pub b: String,
    /// Significance of "a has lower deviation than b".
    pub a_vs_b: f64,
    pub b_vs_a: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub global_mean: f64,
    pub algorithms: Vec<String>,
    pub protocols: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub significance: Vec<SignificanceRow>,
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub seed: u64,
    pub global_mean: f64,
    pub n_samples: usize,
    pub permutations: usize,
}

impl EvalReport {
    /// Aggregates runs (all algorithms over the same plans) into a report.
    pub fn build(runs: &[AlgorithmRun], opts: ReportOptions) -> Result<Self> {
        let mut algorithms: Vec<String> = Vec::new();
        let mut protocols: Vec<SplitSpec> = Vec::new();
        for r in runs {
            if !algorithms.contains(&r.algorithm) {
                algorithms.push(r.algorithm.clone());
            }
            if !protocols.contains(&r.run.spec) {
                protocols.push(r.run.spec);
            }
        }

        let mut rows = Vec::new();
        for r in runs {
            let extreme = extreme_filter(&r.run.records, opts.global_mean);
            rows.push(ReportRow {
                algorithm: r.algorithm.clone(),
                protocol: r.run.spec.to_string(),
                mae: mae(&r.run.records).ok(),
                mae_extreme: mae(&extreme).ok(),
                n_users: r.run.n_users,
                n_predictions: r.run.records.len(),
                n_extreme: extreme.len(),
                n_skipped: r.run.skipped,
            });
        }

        let mut significance = Vec::new();
        for &spec in &protocols {
            let of = |alg: &str| {
                runs.iter()
                    .find(|r| r.algorithm == alg && r.run.spec == spec)
            };
            for (ia, a) in algorithms.iter().enumerate() {
                for b in &algorithms[ia + 1..] {
                    let (Some(ra), Some(rb)) = (of(a), of(b)) else {
                        continue;
                    };
                    let sample_seed = seed::derive(opts.seed, Stream::Buckets, &[spec.code()]);
                    for subset in ["all", "extreme"] {
                        let (xa, xb) = if subset == "all" {
                            (ra.run.records.clone(), rb.run.records.clone())
                        } else {
                            (
                                extreme_filter(&ra.run.records, opts.global_mean),
                                extreme_filter(&rb.run.records, opts.global_mean),
                            )
                        };
                        if xa.is_empty() {
                            continue;
                        }
                        let (a_vs_b, b_vs_a) = paired_significance(
                            &xa,
                            &xb,
                            opts.n_samples,
                            opts.permutations,
                            sample_seed,
                        )?;
                        significance.push(SignificanceRow {
                            protocol: spec.to_string(),
                            subset: subset.to_string(),
                            a: a.clone(),
                            b: b.clone(),
                            a_vs_b,
                            b_vs_a,
                            n_samples: opts.n_samples.min(xa.len()),
                        });
                    }
                }
            }
        }

        Ok(Self {
            seed: opts.seed,
            global_mean: opts.global_mean,
            algorithms,
            protocols: protocols.iter().map(SplitSpec::to_string).collect(),
            rows,
            significance,
        })
    }

    pub fn row(&self, algorithm: &str, protocol: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.protocol == protocol)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Human-readable tables: MAE, extreme-rating MAE, significance.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for (title, pick) in [
            ("Average absolute deviation", 0),
            ("Average absolute deviation, extreme ratings", 1),
        ] {
            let _ = writeln!(out, "{title} (lower is better)");
            let _ = write!(out, "{:<14}", "algorithm");
            for p in &self.protocols {
                let _ = write!(out, "{p:>10}");
            }
            out.push('\n');
            for alg in &self.algorithms {
                let _ = write!(out, "{alg:<14}");
                for p in &self.protocols {
                    let v =
                        self.row(alg, p)
                            .and_then(|r| if pick == 0 { r.mae } else { r.mae_extreme });
                    let _ = write!(out, "{:>10}", fmt_opt(v));
                }
                out.push('\n');
            }
            out.push('\n');
        }

        let _ = writeln!(out, "Predictions (users scored / skipped)");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14}{:>10}{:>9} preds{:>7} users{:>6} skipped{:>9} extreme",
                r.algorithm, r.protocol, r.n_predictions, r.n_users, r.n_skipped, r.n_extreme
            );
        }

        if !self.significance.is_empty() {
            let _ = writeln!(
                out,
                "\nSignificance levels (randomization paired-sample test)"
            );
            let _ = writeln!(
                out,
                "{:<20}{:<24}{:>10}{:>10}",
                "protocol", "a vs b", "a<b", "b<a"
            );
            for s in &self.significance {
                let proto = if s.subset == "all" {
                    s.protocol.clone()
                } else {
                    format!("{} ({})", s.protocol, s.subset)
                };
                let _ = writeln!(
                    out,
                    "{:<20}{:<24}{:>10.4}{:>10.4}",
                    proto,
                    format!("{} vs {}", s.a, s.b),
                    s.a_vs_b,
                    s.b_vs_a
                );
            }
        }
        let _ = writeln!(
            out,
            "\nglobal mean rating {:.4}, seed {}",
            self.global_mean, self.seed
        );
        out
    }
}
