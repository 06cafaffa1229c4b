//! Integer range buckets used for faceted breakdowns.
//!
//! A [`Buckets`] value is a strictly increasing list of lower bounds. Bucket
//! `k` covers `lower[k] ..= lower[k + 1] - 1` and the last bucket is open
//! ended, so `[1, 2, 5, 9, 17]` reads as `1`, `2-4`, `5-8`, `9-16`, `17+`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BucketError {
    #[error("bucket bounds must be non-empty")]
    Empty,
    #[error("bucket bounds must be strictly increasing, got {0:?}")]
    NotIncreasing(Vec<u32>),
    #[error("cannot parse bucket bound {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Buckets {
    lower: Vec<u32>,
}

impl Buckets {
    pub fn new(lower: Vec<u32>) -> Result<Self, BucketError> {
        if lower.is_empty() {
            return Err(BucketError::Empty);
        }
        if lower.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BucketError::NotIncreasing(lower));
        }
        Ok(Self { lower })
    }

    /// Word positions: `1`, `2-4`, `5-8`, `9-16`, `17+`.
    pub fn positions() -> Self {
        Self { lower: vec![1, 2, 5, 9, 17] }
    }

    /// Sentence lengths: `1-8`, `9-16`, `17-32`, `33+`.
    pub fn sentence_lengths() -> Self {
        Self { lower: vec![1, 9, 17, 33] }
    }

    /// Senses per word: `1`, `2-5`, `6-9`, `10+`.
    pub fn sense_counts() -> Self {
        Self { lower: vec![1, 2, 6, 10] }
    }

    /// Relative distance `|i - j|`: `0`, `1-3`, `4-7`, `8-15`, `16+`.
    pub fn relative_distances() -> Self {
        Self { lower: vec![0, 1, 4, 8, 16] }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower_bounds(&self) -> &[u32] {
        &self.lower
    }

    /// Index of the bucket holding `value`, or `None` below the first bound.
    pub fn bucket_of(&self, value: u32) -> Option<usize> {
        match self.lower.partition_point(|&b| b <= value) {
            0 => None,
            n => Some(n - 1),
        }
    }

    pub fn label(&self, bucket: usize) -> String {
        let lo = self.lower[bucket];
        match self.lower.get(bucket + 1) {
            None => format!("{lo}+"),
            Some(&next) if next == lo + 1 => lo.to_string(),
            Some(&next) => format!("{lo}-{}", next - 1),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|b| self.label(b)).collect()
    }
}

impl TryFrom<Vec<u32>> for Buckets {
    type Error = BucketError;

    fn try_from(lower: Vec<u32>) -> Result<Self, Self::Error> {
        Self::new(lower)
    }
}

impl From<Buckets> for Vec<u32> {
    fn from(b: Buckets) -> Self {
        b.lower
    }
}

impl FromStr for Buckets {
    type Err = BucketError;

    /// Parses a comma separated list of lower bounds, e.g. `"1,2,6,10"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s
            .split(',')
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<u32>().map_err(|_| BucketError::Parse(p.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(lower)
    }
}

impl fmt::Display for Buckets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.labels().join(","))
    }
}
