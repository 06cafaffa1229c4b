//! Sense-wise similarity aggregates.
//!
//! Pairs of labeled occurrences sharing a sense are enumerated per sense
//! (optionally per facet bucket), capped by a seeded sampler, and their
//! cosines averaged in f64 with compensated summation over a fixed order.

mod aggregate;
mod pairs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buckets::{BucketError, Buckets};
use crate::corpus::{OccurrenceKey, Pos};
use crate::embstore::StoreError;

pub(crate) use aggregate::sim_rand_over;
pub use aggregate::{
    breakdown, layer_sweep, sim_aggregate, sim_aggregate_mapped, sim_masked, sim_rand, BucketRecord, GlobalRecord,
    GroupRecord, RandomBaseline, RandomConfig, SimReport, REPORT_SCHEMA_VERSION,
};
pub use pairs::{enumerate_pairs, pair_bucket, GroupKey, PairGroup, PairSet};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cosine undefined: zero-norm vector{}", key.as_ref().map(|k| format!(" at {k}")).unwrap_or_default())]
    ZeroNorm { key: Option<OccurrenceKey> },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite vector component")]
    NonFinite,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{} pair member(s) missing from store: {}", keys.len(), list_keys(keys))]
    Unresolvable { keys: Vec<OccurrenceKey> },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Bucket(#[from] BucketError),
}

fn list_keys(keys: &[OccurrenceKey]) -> String {
    let shown: Vec<String> = keys.iter().take(10).map(ToString::to_string).collect();
    if keys.len() > 10 {
        format!("{}, ...", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    /// Same word form, same sense.
    #[serde(rename = "ss")]
    SameWordSameSense,
    /// Different word forms, same sense.
    #[serde(rename = "ds")]
    DiffWordSameSense,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::SameWordSameSense => "ss",
            Relation::DiffWordSameSense => "ds",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ss" | "same_word_same_sense" => Ok(Relation::SameWordSameSense),
            "ds" | "diff_word_same_sense" => Ok(Relation::DiffWordSameSense),
            _ => Err(format!("unknown relation {s:?} (expected ss or ds)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Pos,
    NSenses,
    SentLen,
    RelDist,
    PositionIndex,
}

impl Facet {
    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Pos => "pos",
            Facet::NSenses => "n_senses",
            Facet::SentLen => "sent_len",
            Facet::RelDist => "rel_dist",
            Facet::PositionIndex => "position_index",
        }
    }

    pub fn default_buckets(self) -> Buckets {
        match self {
            // Buckets are ignored for pos; the four content classes are used.
            Facet::Pos => Buckets::new(vec![0, 1, 2, 3]).expect("static"),
            Facet::NSenses => Buckets::sense_counts(),
            Facet::SentLen => Buckets::sentence_lengths(),
            Facet::RelDist => Buckets::relative_distances(),
            Facet::PositionIndex => Buckets::positions(),
        }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Facet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pos" => Ok(Facet::Pos),
            "n_senses" => Ok(Facet::NSenses),
            "sent_len" => Ok(Facet::SentLen),
            "rel_dist" => Ok(Facet::RelDist),
            "position_index" | "position" => Ok(Facet::PositionIndex),
            _ => Err(format!("unknown facet {s:?}")),
        }
    }
}

/// A facet together with its bucket boundaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetSpec {
    pub facet: Facet,
    pub buckets: Buckets,
}

impl FacetSpec {
    pub fn new(facet: Facet) -> Self {
        Self { facet, buckets: facet.default_buckets() }
    }

    pub fn with_buckets(facet: Facet, buckets: Buckets) -> Self {
        Self { facet, buckets }
    }

    pub fn n_buckets(&self) -> usize {
        match self.facet {
            Facet::Pos => Pos::LABELED.len(),
            _ => self.buckets.len(),
        }
    }

    pub fn label(&self, bucket: usize) -> String {
        match self.facet {
            Facet::Pos => Pos::LABELED[bucket].to_string(),
            _ => self.buckets.label(bucket),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// `None` means every pair is used.
    pub max_pairs_per_group: Option<u64>,
    pub seed: u64,
}

impl SamplerConfig {
    pub const DEFAULT_CAP: u64 = 10_000;

    pub fn unlimited(seed: u64) -> Self {
        Self { max_pairs_per_group: None, seed }
    }

    pub fn capped(cap: u64, seed: u64) -> Self {
        Self { max_pairs_per_group: Some(cap), seed }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { max_pairs_per_group: Some(Self::DEFAULT_CAP), seed: 0 }
    }
}

/// How per-pair cosines are pooled into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean over all pairs.
    #[default]
    Micro,
    /// Mean over groups of per-group means.
    Macro,
}

#[inline]
pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (uc, ur) = u.split_at(u.len() - u.len() % 4);
    let (vc, vr) = v.split_at(uc.len());
    for (a, b) in uc.chunks_exact(4).zip(vc.chunks_exact(4)) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in ur.iter().zip(vr) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine from precomputed norms, clamped to [-1, 1] against rounding.
#[inline]
pub(crate) fn cosine_with_norms(u: &[f64], v: &[f64], nu: f64, nv: f64) -> f64 {
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Cosine similarity computed in f64.
///
/// A zero-norm input has no defined direction and is reported as
/// [`MetricsError::ZeroNorm`] instead of a silent 0.
pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64, MetricsError> {
    if u.len() != v.len() {
        return Err(MetricsError::DimensionMismatch { left: u.len(), right: v.len() });
    }
    let u: Vec<f64> = u.iter().map(|&x| x.into()).collect();
    let v: Vec<f64> = v.iter().map(|&x| x.into()).collect();
    if u.iter().chain(&v).any(|x| !x.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (nu, nv) = (norm(&u), norm(&v));
    if nu == 0.0 || nv == 0.0 {
        return Err(MetricsError::ZeroNorm { key: None });
    }
    Ok(cosine_with_norms(&u, &v, nu, nv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_values() {
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[3.0f32, 4.0, 5.0], &[3.0, 4.0, 5.0]).unwrap() - 1.0).abs() < 1e-12);
        // 32 / sqrt(14 * 77), evaluated with 50-digit arithmetic:
        // 0.97463184619707627107...
        let c = cosine(&[1.0f64, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974_631_846_197_076_3).abs() < 1e-15, "{c}");
    }

    #[test]
    fn errors() {
        assert!(matches!(cosine(&[0.0f64, 0.0], &[1.0, 0.0]), Err(MetricsError::ZeroNorm { key: None })));
        assert!(matches!(cosine(&[1.0f64], &[1.0, 0.0]), Err(MetricsError::DimensionMismatch { left: 1, right: 2 })));
        assert!(matches!(cosine(&[f64::NAN], &[1.0]), Err(MetricsError::NonFinite)));
    }

    #[test]
    fn dot_tail_handling() {
        let u: Vec<f64> = (0..11).map(|i| i as f64).collect();
        assert_eq!(dot(&u, &u), (0..11).map(|i| (i * i) as f64).sum::<f64>());
    }

    #[test]
    fn parse_names() {
        assert_eq!("ss".parse::<Relation>().unwrap(), Relation::SameWordSameSense);
        assert_eq!("n_senses".parse::<Facet>().unwrap(), Facet::NSenses);
        assert!("x".parse::<Facet>().is_err());
        assert_eq!(FacetSpec::new(Facet::Pos).label(2), "ADJ");
        assert_eq!(FacetSpec::new(Facet::NSenses).label(3), "10+");
    }
}
