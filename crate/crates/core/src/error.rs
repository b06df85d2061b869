use std::io;

use thiserror::Error;

use crate::ratings::{ItemId, Rating, UserId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("line {line}: rating {value} is not on the rating scale")]
    OffScale { line: usize, value: String },

    #[error("line {line}: duplicate rating for user {user}, item {item}")]
    DuplicateRating {
        line: usize,
        user: String,
        item: String,
    },

    #[error("invalid rating scale: {0}")]
    InvalidScale(String),

    #[error("rating {rating} for user {user}, item {item} is not on the scale")]
    RatingNotOnScale {
        user: UserId,
        item: ItemId,
        rating: Rating,
    },

    #[error("duplicate entry for user {user}, item {item}")]
    DuplicateEntry { user: UserId, item: ItemId },

    #[error("training matrix has no ratings")]
    EmptyTraining,

    #[error("user has {have} ratings but the protocol needs at least {need}")]
    InsufficientRatings { have: usize, need: usize },

    #[error("sensor has no observations (real or dummy)")]
    NoData,

    #[error("sensor is unfittable: the independent ratings have no spread")]
    UnfittableSensor,

    #[error("sensor has zero variance; its density is degenerate")]
    DegenerateSensor,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("record sets differ: {0}")]
    MismatchedRecords(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code for this error: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }
}
