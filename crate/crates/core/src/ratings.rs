//! Sparse ratings storage, ingestion, protocol splits and empirical priors.
//!
//! Ratings live on an integer [`RatingScale`]. A [`RatingsMatrix`] keeps the
//! same triple set indexed both ways (per user sorted by item, per item sorted
//! by user) and never changes after construction.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

pub type UserId = u32;
pub type ItemId = u32;
pub type Rating = i32;

/// Ordered cardinal rating values `v_1 < v_2 < ... < v_m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingScale {
    values: Vec<Rating>,
}

impl RatingScale {
    pub fn new(values: Vec<Rating>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidScale(format!(
                "need at least 2 values, got {}",
                values.len()
            )));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidScale(
                "values must be strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Contiguous integer scale `min..=max`.
    pub fn range(min: Rating, max: Rating) -> Result<Self> {
        if max <= min {
            return Err(Error::InvalidScale(format!(
                "max ({max}) must exceed min ({min})"
            )));
        }
        Self::new((min..=max).collect())
    }

    pub fn values(&self) -> &[Rating] {
        &self.values
    }

    /// Number of scale values, `m`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(&self) -> Rating {
        self.values[0]
    }

    pub fn max(&self) -> Rating {
        self.values[self.values.len() - 1]
    }

    pub fn index_of(&self, value: Rating) -> Option<usize> {
        self.values.binary_search(&value).ok()
    }

    pub fn contains(&self, value: Rating) -> bool {
        self.index_of(value).is_some()
    }

    pub fn value(&self, index: usize) -> Rating {
        self.values[index]
    }

    /// Clamps a real value into `[v_1, v_m]`.
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min() as f64, self.max() as f64)
    }
}

/// Immutable sparse N x M ratings matrix.
#[derive(Debug, Clone)]
pub struct RatingsMatrix {
    scale: RatingScale,
    by_user: Vec<Vec<(ItemId, Rating)>>,
    by_item: Vec<Vec<(UserId, Rating)>>,
    n_entries: usize,
}

impl RatingsMatrix {
    pub fn empty(scale: RatingScale) -> Self {
        Self {
            scale,
            by_user: Vec::new(),
            by_item: Vec::new(),
            n_entries: 0,
        }
    }

    /// Builds both indexes from `(user, item, rating)` triples.
    ///
    /// Ids must be below `n_users` / `n_items`; every rating must be on the
    /// scale and no `(user, item)` pair may repeat.
    pub fn from_triples<I>(
        scale: RatingScale,
        n_users: usize,
        n_items: usize,
        triples: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (UserId, ItemId, Rating)>,
    {
        let mut by_user: Vec<Vec<(ItemId, Rating)>> = vec![Vec::new(); n_users];
        let mut by_item: Vec<Vec<(UserId, Rating)>> = vec![Vec::new(); n_items];
        let mut n_entries = 0;
        for (user, item, rating) in triples {
            if user as usize >= n_users || item as usize >= n_items {
                return Err(Error::InvalidScale(format!(
                    "entry ({user}, {item}) outside a {n_users} x {n_items} matrix"
                )));
            }
            if !scale.contains(rating) {
                return Err(Error::RatingNotOnScale { user, item, rating });
            }
            by_user[user as usize].push((item, rating));
            by_item[item as usize].push((user, rating));
            n_entries += 1;
        }
        for (user, row) in by_user.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(item, _)| item);
            if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::DuplicateEntry {
                    user: user as UserId,
                    item: w[0].0,
                });
            }
        }
        for column in &mut by_item {
            column.sort_unstable_by_key(|&(user, _)| user);
        }
        Ok(Self {
            scale,
            by_user,
            by_item,
            n_entries,
        })
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    pub fn n_users(&self) -> usize {
        self.by_user.len()
    }

    pub fn n_items(&self) -> usize {
        self.by_item.len()
    }

    pub fn n_entries(&self) -> usize {
        self.n_entries
    }

    pub fn is_empty(&self) -> bool {
        self.n_entries == 0
    }

    /// Ratings by `user`, sorted by item id. Unknown users have none.
    pub fn user_ratings(&self, user: UserId) -> &[(ItemId, Rating)] {
        self.by_user
            .get(user as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Ratings of `item`, sorted by user id. Unknown items have none.
    pub fn item_ratings(&self, item: ItemId) -> &[(UserId, Rating)] {
        self.by_item
            .get(item as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn get(&self, user: UserId, item: ItemId) -> Option<Rating> {
        let row = self.user_ratings(user);
        row.binary_search_by_key(&item, |&(i, _)| i)
            .ok()
            .map(|pos| row[pos].1)
    }

    /// All triples in user-major order.
    pub fn triples(&self) -> impl Iterator<Item = (UserId, ItemId, Rating)> + '_ {
        self.by_user
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(i, r)| (u as UserId, i, r)))
    }

    /// All triples in item-major order, reported as `(user, item, rating)`.
    pub fn triples_by_item(&self) -> impl Iterator<Item = (UserId, ItemId, Rating)> + '_ {
        self.by_item
            .iter()
            .enumerate()
            .flat_map(|(i, col)| col.iter().map(move |&(u, r)| (u, i as ItemId, r)))
    }

    /// Overall mean rating, `None` when empty.
    pub fn mean_rating(&self) -> Option<f64> {
        if self.n_entries == 0 {
            return None;
        }
        let sum: i64 = self.triples().map(|(_, _, r)| r as i64).sum();
        Some(sum as f64 / self.n_entries as f64)
    }

    /// Counts of each scale value, indexed like the scale.
    pub fn rating_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.scale.len()];
        for (_, _, r) in self.triples() {
            // on-scale by construction
            counts[self.scale.index_of(r).unwrap()] += 1;
        }
        counts
    }

    /// Same dimensions, keeping only the rows of users where `keep[user]`.
    pub fn restrict_users(&self, keep: &[bool]) -> Self {
        let triples = self
            .triples()
            .filter(|&(u, _, _)| keep.get(u as usize).copied().unwrap_or(false));
        Self::from_triples(self.scale.clone(), self.n_users(), self.n_items(), triples)
            .expect("subset of a valid matrix is valid")
    }
}

/// Mapping between external string ids and dense internal ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    to_internal: HashMap<String, u32>,
    external: Vec<String>,
}

impl IdMap {
    pub fn intern(&mut self, external: &str) -> u32 {
        if let Some(&id) = self.to_internal.get(external) {
            return id;
        }
        let id = self.external.len() as u32;
        self.external.push(external.to_string());
        self.to_internal.insert(external.to_string(), id);
        id
    }

    pub fn get(&self, external: &str) -> Option<u32> {
        self.to_internal.get(external).copied()
    }

    pub fn external(&self, internal: u32) -> Option<&str> {
        self.external.get(internal as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// Writes `external<TAB>internal` lines in internal-id order.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (internal, external) in self.external.iter().enumerate() {
            writeln!(out, "{external}\t{internal}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut map = IdMap::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = split_fields(&line).collect();
            if fields.is_empty() {
                continue;
            }
            let malformed = |reason: &str| Error::MalformedRecord {
                line: idx + 1,
                reason: reason.to_string(),
            };
            if fields.len() != 2 {
                return Err(malformed("expected `external internal`"));
            }
            let internal: u32 = fields[1]
                .parse()
                .map_err(|_| malformed("internal id is not an integer"))?;
            if internal as usize != map.len() {
                return Err(malformed("internal ids must be contiguous from 0"));
            }
            map.intern(fields[0]);
        }
        Ok(map)
    }
}

/// A loaded dataset: the matrix plus the id maps used to densify it.
#[derive(Debug, Clone)]
pub struct LoadedRatings {
    pub matrix: RatingsMatrix,
    pub users: IdMap,
    pub items: IdMap,
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
}

enum ParsedRating {
    Value(Rating),
    NotANumber,
    NotIntegral,
}

fn parse_rating(field: &str) -> ParsedRating {
    if let Ok(v) = field.parse::<i64>() {
        return match Rating::try_from(v) {
            Ok(v) => ParsedRating::Value(v),
            Err(_) => ParsedRating::NotIntegral,
        };
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < Rating::MAX as f64 => {
            ParsedRating::Value(v as Rating)
        }
        Ok(_) => ParsedRating::NotIntegral,
        Err(_) => ParsedRating::NotANumber,
    }
}

/// Reads delimited `(user, item, rating)` triples.
///
/// Fields are separated by whitespace and/or commas; fields after the third
/// (e.g. timestamps) are ignored. The first non-blank line may be a header,
/// recognised by a non-numeric rating field. External ids are densified in
/// order of first appearance.
pub fn load_ratings<R: BufRead>(reader: R, scale: &RatingScale) -> Result<LoadedRatings> {
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut seen: HashSet<(UserId, ItemId)> = HashSet::new();
    let mut triples = Vec::new();
    let mut first_content = true;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let fields: Vec<&str> = split_fields(&line).collect();
        if fields.is_empty() {
            continue;
        }
        let is_first = std::mem::replace(&mut first_content, false);
        if fields.len() < 3 {
            if is_first {
                continue;
            }
            return Err(Error::MalformedRecord {
                line: line_no,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let rating = match parse_rating(fields[2]) {
            ParsedRating::Value(v) => v,
            ParsedRating::NotANumber if is_first => continue,
            ParsedRating::NotANumber => {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    reason: format!("rating `{}` is not a number", fields[2]),
                })
            }
            ParsedRating::NotIntegral => {
                return Err(Error::OffScale {
                    line: line_no,
                    value: fields[2].to_string(),
                })
            }
        };
        if !scale.contains(rating) {
            return Err(Error::OffScale {
                line: line_no,
                value: fields[2].to_string(),
            });
        }
        let user = users.intern(fields[0]);
        let item = items.intern(fields[1]);
        if !seen.insert((user, item)) {
            return Err(Error::DuplicateRating {
                line: line_no,
                user: fields[0].to_string(),
                item: fields[1].to_string(),
            });
        }
        triples.push((user, item, rating));
    }

    let matrix = RatingsMatrix::from_triples(scale.clone(), users.len(), items.len(), triples)?;
    Ok(LoadedRatings {
        matrix,
        users,
        items,
    })
}

/// Writes a matrix as tab-separated triples with a header line.
pub fn write_triples<W: Write>(loaded: &LoadedRatings, mut out: W) -> Result<()> {
    writeln!(out, "user\titem\trating")?;
    for (u, i, r) in loaded.matrix.triples() {
        writeln!(
            out,
            "{}\t{}\t{}",
            loaded.users.external(u).unwrap_or_default(),
            loaded.items.external(i).unwrap_or_default(),
            r
        )?;
    }
    Ok(())
}

/// Test-user protocol: which of a user's ratings are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitSpec {
    /// Hide one random rating, observe the rest.
    AllBut1,
    /// Observe exactly `X` random ratings, hide the rest.
    Given(usize),
}

impl SplitSpec {
    pub fn given(x: usize) -> Result<Self> {
        if x == 0 {
            return Err(Error::Config("Given(X) requires X >= 1".into()));
        }
        Ok(SplitSpec::Given(x))
    }

    /// Fewest ratings a user needs for this protocol.
    pub fn min_ratings(&self) -> usize {
        match *self {
            SplitSpec::AllBut1 => 2,
            SplitSpec::Given(x) => x + 1,
        }
    }

    /// Stable numeric label, used to derive per-protocol seeds.
    pub fn code(&self) -> u64 {
        match *self {
            SplitSpec::AllBut1 => 0,
            SplitSpec::Given(x) => 1 + x as u64,
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::AllBut1 => write!(f, "AllBut1"),
            SplitSpec::Given(x) => write!(f, "Given{x}"),
        }
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "allbut1" {
            return Ok(SplitSpec::AllBut1);
        }
        if let Some(rest) = lower.strip_prefix("given") {
            let x = rest
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad protocol `{s}`")))?;
            return SplitSpec::given(x);
        }
        Err(Error::Config(format!(
            "bad protocol `{s}` (expected allbut1 or givenX)"
        )))
    }
}

/// Observed (`I_a`) and hidden (`P_a`) ratings of one test user, each sorted
/// by item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub observed: Vec<(ItemId, Rating)>,
    pub hidden: Vec<(ItemId, Rating)>,
}

/// Randomly partitions one user's ratings according to `spec`.
pub fn split_user(ratings: &[(ItemId, Rating)], spec: SplitSpec, seed: u64) -> Result<Split> {
    let need = spec.min_ratings();
    if ratings.len() < need {
        return Err(Error::InsufficientRatings {
            have: ratings.len(),
            need,
        });
    }
    let mut shuffled = ratings.to_vec();
    shuffled.sort_unstable();
    let mut rng = seed::rng(seed, Stream::ProtocolSplit, &[]);
    shuffled.shuffle(&mut rng);
    let n_observed = match spec {
        SplitSpec::AllBut1 => ratings.len() - 1,
        SplitSpec::Given(x) => x,
    };
    let hidden = shuffled.split_off(n_observed);
    let mut observed = shuffled;
    observed.sort_unstable();
    let mut hidden = hidden;
    hidden.sort_unstable();
    Ok(Split { observed, hidden })
}

/// A test user: an id in the loaded matrix and all of their ratings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestUser {
    pub user: UserId,
    pub ratings: Vec<(ItemId, Rating)>,
}

/// Randomly assigns `train_fraction` of the users (rounded) to training.
///
/// The returned training matrix keeps the full dimensions so ids remain
/// valid; test users' rows are simply absent from it.
pub fn split_users(
    matrix: &RatingsMatrix,
    train_fraction: f64,
    seed: u64,
) -> Result<(RatingsMatrix, Vec<TestUser>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let mut users: Vec<UserId> = (0..matrix.n_users() as UserId).collect();
    users.shuffle(&mut seed::rng(seed, Stream::UserSplit, &[]));
    let n_train = (train_fraction * users.len() as f64).round() as usize;
    let mut keep = vec![false; matrix.n_users()];
    for &u in &users[..n_train] {
        keep[u as usize] = true;
    }
    let train = matrix.restrict_users(&keep);
    let test = (0..matrix.n_users() as UserId)
        .filter(|&u| !keep[u as usize])
        .map(|u| TestUser {
            user: u,
            ratings: matrix.user_ratings(u).to_vec(),
        })
        .collect();
    Ok((train, test))
}

/// The active user's observed ratings with O(1) lookup by item.
#[derive(Debug, Clone)]
pub struct ActiveProfile {
    user: Option<UserId>,
    observed: Vec<(ItemId, Rating)>,
    lookup: Vec<Option<Rating>>,
}

impl ActiveProfile {
    /// `user` is the active user's row in the training matrix, if any; that
    /// row is never used as evidence about the user themselves.
    pub fn new(user: Option<UserId>, observed: &[(ItemId, Rating)], n_items: usize) -> Self {
        let mut observed = observed.to_vec();
        observed.sort_unstable();
        observed.dedup_by_key(|e| e.0);
        let width = observed
            .last()
            .map_or(0, |&(i, _)| i as usize + 1)
            .max(n_items);
        let mut lookup = vec![None; width];
        for &(item, rating) in &observed {
            lookup[item as usize] = Some(rating);
        }
        Self {
            user,
            observed,
            lookup,
        }
    }

    pub fn user(&self) -> Option<UserId> {
        self.user
    }

    pub fn observed(&self) -> &[(ItemId, Rating)] {
        &self.observed
    }

    pub fn rating_of(&self, item: ItemId) -> Option<Rating> {
        self.lookup.get(item as usize).copied().flatten()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.observed.is_empty() {
            return None;
        }
        let sum: i64 = self.observed.iter().map(|&(_, r)| r as i64).sum();
        Some(sum as f64 / self.observed.len() as f64)
    }
}

const SUM_TOLERANCE: f64 = 1e-12;

/// Prior over rating values, indexed like the scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingPrior {
    probs: Vec<f64>,
}

impl RatingPrior {
    /// Normalised counts; `laplace` adds one to every cell first.
    pub fn from_counts(counts: &[u64], laplace: bool) -> Result<Self> {
        let add = u64::from(laplace);
        let total: u64 = counts.iter().map(|c| c + add).sum();
        if total == 0 {
            return Err(Error::EmptyTraining);
        }
        let probs = counts
            .iter()
            .map(|&c| (c + add) as f64 / total as f64)
            .collect();
        Ok(Self { probs })
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > SUM_TOLERANCE
        {
            return Err(Error::Config(format!(
                "prior must be nonnegative and sum to 1 (sum = {sum})"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            probs: vec![1.0 / m as f64; m],
        }
    }

    /// Frequencies of each rating value in `train`.
    pub fn from_matrix(train: &RatingsMatrix, laplace: bool) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTraining);
        }
        Self::from_counts(&train.rating_counts(), laplace)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Rating prior with add-one smoothing, so no scale value has zero mass.
pub fn rating_prior(train: &RatingsMatrix) -> Result<RatingPrior> {
    RatingPrior::from_matrix(train, true)
}

/// How the joint prior over `(x, y)` rating pairs is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairPriorMode {
    /// Product of the smoothed marginal rating prior with itself.
    MarginalProduct,
    /// Add-one smoothed counts over a random sample of co-rating events
    /// (two distinct users rating the same item).
    EmpiricalPairs { sample_size: usize },
}

/// Joint weights over the m x m rating pairs, row-major in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPrior {
    m: usize,
    weights: Vec<f64>,
}

impl PairPrior {
    pub fn marginal_product(prior: &RatingPrior) -> Self {
        let p = prior.probs();
        let weights = p
            .iter()
            .flat_map(|&px| p.iter().map(move |&py| px * py))
            .collect();
        Self {
            m: p.len(),
            weights,
        }
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            m,
            weights: vec![1.0 / (m * m) as f64; m * m],
        }
    }

    /// Add-one smoothed, normalised pair counts (`counts[x * m + y]`).
    pub fn from_pair_counts(m: usize, counts: &[u64]) -> Result<Self> {
        if counts.len() != m * m {
            return Err(Error::Config(format!(
                "expected {} pair counts, got {}",
                m * m,
                counts.len()
            )));
        }
        let total: u64 = counts.iter().map(|c| c + 1).sum();
        let weights = counts
            .iter()
            .map(|&c| (c + 1) as f64 / total as f64)
            .collect();
        Ok(Self { m, weights })
    }

    /// Counts `(x, y)` rating events and smooths them.
    pub fn from_events<I>(scale: &RatingScale, events: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Rating, Rating)>,
    {
        let m = scale.len();
        let mut counts = vec![0u64; m * m];
        for (x, y) in events {
            let (Some(xi), Some(yi)) = (scale.index_of(x), scale.index_of(y)) else {
                return Err(Error::Config(format!(
                    "rating pair ({x}, {y}) is not on the scale"
                )));
            };
            counts[xi * m + yi] += 1;
        }
        Self::from_pair_counts(m, &counts)
    }

    /// Samples `sample_size` co-rating events uniformly over (item, ordered
    /// pair of distinct raters), weighting items by their rater count.
    pub fn sample_empirical(train: &RatingsMatrix, sample_size: usize, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTraining);
        }
        let mut eligible = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0usize;
        for item in 0..train.n_items() as ItemId {
            let n = train.item_ratings(item).len();
            if n >= 2 {
                total += n;
                eligible.push(item);
                cumulative.push(total);
            }
        }
        let mut rng = seed::rng(seed, Stream::PairSample, &[]);
        let mut events = Vec::with_capacity(if total == 0 { 0 } else { sample_size });
        if total > 0 {
            for _ in 0..sample_size {
                let draw = rng.random_range(0..total);
                let slot = cumulative.partition_point(|&c| c <= draw);
                let raters = train.item_ratings(eligible[slot]);
                let a = rng.random_range(0..raters.len());
                let mut b = rng.random_range(0..raters.len() - 1);
                if b >= a {
                    b += 1;
                }
                events.push((raters[a].1, raters[b].1));
            }
        }
        Self::from_events(train.scale(), events)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn weight(&self, x_index: usize, y_index: usize) -> f64 {
        self.weights[x_index * self.m + y_index]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Estimates the pair prior from training data.
pub fn pair_prior(train: &RatingsMatrix, mode: PairPriorMode, seed: u64) -> Result<PairPrior> {
    match mode {
        PairPriorMode::MarginalProduct => Ok(PairPrior::marginal_product(&rating_prior(train)?)),
        PairPriorMode::EmpiricalPairs { sample_size } => {
            PairPrior::sample_empirical(train, sample_size, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;

    fn scale05() -> RatingScale {
        RatingScale::range(0, 5).unwrap()
    }

    #[test]
    fn scale_rejects_bad_values() {
        assert!(RatingScale::new(vec![1]).is_err());
        assert!(RatingScale::new(vec![1, 1]).is_err());
        assert!(RatingScale::new(vec![3, 1]).is_err());
        let s = RatingScale::new(vec![1, 2, 5]).unwrap();
        assert_eq!(s.index_of(5), Some(2));
        assert_eq!(s.index_of(3), None);
        assert_eq!(s.clamp(8.0), 5.0);
        assert_eq!(s.clamp(-2.0), 1.0);
    }

    #[test]
    fn loads_three_lines() {
        let data = "0 0 4\n0 1 2\n1 0 5\n";
        let loaded = load_ratings(data.as_bytes(), &scale05()).unwrap();
        let m = &loaded.matrix;
        assert_eq!(m.n_users(), 2);
        assert_eq!(m.n_items(), 2);
        assert_eq!(m.n_entries(), 3);
        assert_eq!(m.get(0, 1), Some(2));
        assert_eq!(m.get(1, 1), None);
        assert_eq!(m.item_ratings(0), &[(0, 4), (1, 5)]);
    }

    #[test]
    fn off_scale_rating_is_rejected() {
        let err = load_ratings("0 0 9\n".as_bytes(), &scale05()).unwrap_err();
        assert!(matches!(err, Error::OffScale { line: 1, .. }), "{err}");
        let err = load_ratings("0 0 4\n0 1 2.5\n".as_bytes(), &scale05()).unwrap_err();
        assert!(matches!(err, Error::OffScale { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_stream_gives_empty_matrix() {
        let loaded = load_ratings("".as_bytes(), &scale05()).unwrap();
        assert_eq!(loaded.matrix.n_users(), 0);
        assert_eq!(loaded.matrix.n_items(), 0);
        assert!(loaded.matrix.is_empty());
    }

    #[test]
    fn header_comma_and_extra_fields() {
        let data = "user,item,rating,ts\n\na,x,3,100\nb,x,4.0,101\na,y,1,102\n";
        let loaded = load_ratings(data.as_bytes(), &scale05()).unwrap();
        assert_eq!(loaded.matrix.n_entries(), 3);
        assert_eq!(loaded.users.get("b"), Some(1));
        assert_eq!(loaded.items.external(1), Some("y"));
        assert_eq!(loaded.matrix.get(1, 0), Some(4));
    }

    #[test]
    fn malformed_and_duplicate_lines_report_line_numbers() {
        let err = load_ratings("0 0 4\n0 1\n".as_bytes(), &scale05()).unwrap_err();
        assert!(
            matches!(err, Error::MalformedRecord { line: 2, .. }),
            "{err}"
        );
        let err = load_ratings("0 0 4\n0 1 abc\n".as_bytes(), &scale05()).unwrap_err();
        assert!(
            matches!(err, Error::MalformedRecord { line: 2, .. }),
            "{err}"
        );
        let err = load_ratings("0 0 4\n1 1 3\n0 0 2\n".as_bytes(), &scale05()).unwrap_err();
        assert!(
            matches!(err, Error::DuplicateRating { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn from_triples_rejects_duplicates() {
        let err = RatingsMatrix::from_triples(scale05(), 1, 1, [(0, 0, 1), (0, 0, 2)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { user: 0, item: 0 }));
    }

    #[test]
    fn id_map_round_trips() {
        let loaded = load_ratings("u7 i3 4\nu2 i3 1\n".as_bytes(), &scale05()).unwrap();
        let mut buf = Vec::new();
        loaded.users.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "u7\t0\nu2\t1\n");
        assert_eq!(IdMap::read_from(buf.as_slice()).unwrap(), loaded.users);
    }

    #[test]
    fn split_sizes() {
        let five: Vec<(ItemId, Rating)> = (0..5).map(|i| (i, 3)).collect();
        let s = split_user(&five, SplitSpec::AllBut1, 1).unwrap();
        assert_eq!((s.observed.len(), s.hidden.len()), (4, 1));

        let six: Vec<(ItemId, Rating)> = (0..6).map(|i| (i, 2)).collect();
        let s = split_user(&six, SplitSpec::Given(2), 1).unwrap();
        assert_eq!((s.observed.len(), s.hidden.len()), (2, 4));

        let two: Vec<(ItemId, Rating)> = vec![(0, 1), (1, 2)];
        let err = split_user(&two, SplitSpec::Given(5), 1).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientRatings { have: 2, need: 6 }
        ));
        assert!(split_user(&two[..1], SplitSpec::AllBut1, 1).is_err());
    }

    #[test]
    fn every_given_subset_is_reachable() {
        for k in 2..=5usize {
            let ratings: Vec<(ItemId, Rating)> = (0..k as ItemId).map(|i| (i, 1)).collect();
            for x in 1..k {
                let mut seen = BTreeSet::new();
                for seed in 0..2000 {
                    let s = split_user(&ratings, SplitSpec::Given(x), seed).unwrap();
                    seen.insert(s.observed.iter().map(|e| e.0).collect::<Vec<_>>());
                }
                let expected = (1..=k).product::<usize>()
                    / ((1..=x).product::<usize>() * (1..=k - x).product::<usize>());
                assert_eq!(seen.len(), expected, "k={k} x={x}");
            }
        }
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!("AllBut1".parse::<SplitSpec>().unwrap(), SplitSpec::AllBut1);
        assert_eq!(
            "given10".parse::<SplitSpec>().unwrap(),
            SplitSpec::Given(10)
        );
        assert!("given0".parse::<SplitSpec>().is_err());
        assert!("top5".parse::<SplitSpec>().is_err());
        assert_eq!(SplitSpec::Given(5).to_string(), "Given5");
    }

    #[test]
    fn rating_prior_examples() {
        let train = RatingsMatrix::from_triples(scale05(), 3, 1, [(0, 0, 4), (1, 0, 4), (2, 0, 2)])
            .unwrap();
        let raw = RatingPrior::from_matrix(&train, false).unwrap();
        let expect = [0.0, 0.0, 1.0 / 3.0, 0.0, 2.0 / 3.0, 0.0];
        for (p, e) in raw.probs().iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
        let smooth = rating_prior(&train).unwrap();
        let expect = [1.0, 1.0, 2.0, 1.0, 3.0, 1.0].map(|c| c / 9.0);
        for (p, e) in smooth.probs().iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
        let uniform = RatingsMatrix::from_triples(
            scale05(),
            1,
            6,
            (0..6).map(|i| (0, i as ItemId, i as Rating)),
        )
        .unwrap();
        for p in RatingPrior::from_matrix(&uniform, false).unwrap().probs() {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!(matches!(
            rating_prior(&RatingsMatrix::empty(scale05())),
            Err(Error::EmptyTraining)
        ));
    }

    #[test]
    fn pair_prior_examples() {
        let pp = PairPrior::marginal_product(&RatingPrior::uniform(2));
        assert!(pp.weights().iter().all(|&w| w == 0.25));

        let pp = PairPrior::marginal_product(&RatingPrior::from_probs(vec![0.75, 0.25]).unwrap());
        assert_eq!(pp.weights(), &[0.5625, 0.1875, 0.1875, 0.0625]);

        let scale = RatingScale::new(vec![1, 2]).unwrap();
        let pp = PairPrior::from_events(&scale, [(1, 1), (1, 1), (1, 2)]).unwrap();
        let expect = [3.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0];
        for (w, e) in pp.weights().iter().zip(expect) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn empirical_pair_sampling_is_seeded() {
        let train = RatingsMatrix::from_triples(
            scale05(),
            4,
            2,
            [(0, 0, 1), (1, 0, 2), (2, 0, 5), (3, 1, 4)],
        )
        .unwrap();
        let a = PairPrior::sample_empirical(&train, 500, 3).unwrap();
        let b = PairPrior::sample_empirical(&train, 500, 3).unwrap();
        assert_eq!(a, b);
        // item 1 has a single rater, so rating 4 never appears in a pair
        let i4 = train.scale().index_of(4).unwrap();
        let smallest = 1.0 / (500.0 + 36.0);
        for y in 0..6 {
            assert!((a.weight(i4, y) - smallest).abs() < 1e-15);
        }
        // diagonal cells are unreachable with distinct raters and distinct ratings
        assert!((a.weight(1, 1) - smallest).abs() < 1e-15);
    }

    #[test]
    fn user_split_partitions_users() {
        let triples: Vec<_> = (0..10u32).map(|u| (u, 0, 3)).collect();
        let m = RatingsMatrix::from_triples(scale05(), 10, 1, triples).unwrap();
        let (train, test) = split_users(&m, 0.6, 11).unwrap();
        assert_eq!(test.len(), 4);
        assert_eq!(train.n_entries(), 6);
        for t in &test {
            assert!(train.user_ratings(t.user).is_empty());
        }
        let (_, again) = split_users(&m, 0.6, 11).unwrap();
        assert_eq!(test, again);
    }

    fn arb_triples() -> impl Strategy<Value = Vec<(UserId, ItemId, Rating)>> {
        prop::collection::btree_map((0u32..8, 0u32..8), 0i32..=5, 0..40)
            .prop_map(|m| m.into_iter().map(|((u, i), r)| (u, i, r)).collect())
    }

    proptest! {
        #[test]
        fn indexes_are_transposes(triples in arb_triples()) {
            let m = RatingsMatrix::from_triples(scale05(), 8, 8, triples.clone()).unwrap();
            let by_user: BTreeSet<_> = m.triples().collect();
            let by_item: BTreeSet<_> = m.triples_by_item().collect();
            let input: BTreeSet<_> = triples.into_iter().collect();
            prop_assert_eq!(&by_user, &input);
            prop_assert_eq!(&by_item, &input);
        }

        #[test]
        fn split_is_deterministic_partition(
            n in 2usize..30, x in 1usize..12, seed in any::<u64>(), all_but_one in any::<bool>()
        ) {
            let ratings: Vec<(ItemId, Rating)> = (0..n as ItemId).map(|i| (i * 3, (i % 5) as Rating)).collect();
            let spec = if all_but_one { SplitSpec::AllBut1 } else { SplitSpec::Given(x) };
            match split_user(&ratings, spec, seed) {
                Ok(s) => {
                    let mut union: Vec<_> = s.observed.iter().chain(&s.hidden).copied().collect();
                    union.sort_unstable();
                    prop_assert_eq!(&union, &ratings);
                    match spec {
                        SplitSpec::AllBut1 => prop_assert_eq!(s.hidden.len(), 1),
                        SplitSpec::Given(x) => prop_assert_eq!(s.observed.len(), x),
                    }
                    prop_assert_eq!(s, split_user(&ratings, spec, seed).unwrap());
                }
                Err(_) => prop_assert!(n < spec.min_ratings()),
            }
        }

        #[test]
        fn priors_are_distributions(triples in arb_triples().prop_filter("nonempty", |t| !t.is_empty()), seed in any::<u64>()) {
            let m = RatingsMatrix::from_triples(scale05(), 8, 8, triples).unwrap();
            for laplace in [false, true] {
                let p = RatingPrior::from_matrix(&m, laplace).unwrap();
                prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(p.probs().iter().all(|&v| v >= 0.0));
            }
            for mode in [PairPriorMode::MarginalProduct, PairPriorMode::EmpiricalPairs { sample_size: 50 }] {
                let pp = pair_prior(&m, mode, seed).unwrap();
                prop_assert!((pp.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(pp.weights().iter().all(|&v| v > 0.0));
            }
        }
    }
}
