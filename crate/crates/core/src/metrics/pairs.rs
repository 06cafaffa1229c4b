use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Facet, FacetSpec, MetricsError, Relation, SamplerConfig};
use crate::corpus::{Corpus, OccId, Pos, SenseId, WordIdentity};

/// Sampling unit: one sense, or one (bucket, sense) cell when faceted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub bucket: Option<usize>,
    pub sense: SenseId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGroup {
    pub key: GroupKey,
    pub pair_count_exact: u64,
    /// Used pairs, each `(a, b)` with `a < b`, sorted.
    pub pairs: Vec<(OccId, OccId)>,
}

impl PairGroup {
    pub fn pair_count_used(&self) -> u64 {
        self.pairs.len() as u64
    }
}

/// Enumerated (and possibly sampled) pairs. Layer independent, so one set
/// can be scored at every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub relation: Relation,
    pub identity: WordIdentity,
    pub facet: Option<FacetSpec>,
    pub sampler: SamplerConfig,
    /// Sorted by key; groups without pairs are omitted.
    pub groups: Vec<PairGroup>,
}

impl PairSet {
    pub fn pair_count_exact(&self) -> u64 {
        self.groups.iter().map(|g| g.pair_count_exact).sum()
    }

    pub fn pair_count_used(&self) -> u64 {
        self.groups.iter().map(|g| g.pair_count_used()).sum()
    }

    pub fn iter_pairs(&self) -> impl Iterator<Item = (OccId, OccId)> + '_ {
        self.groups.iter().flat_map(|g| g.pairs.iter().copied())
    }
}

struct Reservoir {
    cap: Option<u64>,
    seen: u64,
    items: Vec<(OccId, OccId)>,
    rng: ChaCha8Rng,
}

impl Reservoir {
    fn new(cap: Option<u64>, seed: u64) -> Self {
        Self { cap, seen: 0, items: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    #[inline]
    fn offer(&mut self, pair: (OccId, OccId)) {
        let n = self.seen;
        self.seen += 1;
        match self.cap {
            Some(cap) if n >= cap => {
                let j = self.rng.random_range(0..=n);
                if j < cap {
                    self.items[j as usize] = pair;
                }
            }
            _ => self.items.push(pair),
        }
    }
}

fn group_seed(seed: u64, key: &GroupKey) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.sense.as_str().as_bytes());
    h.update([0xff]);
    h.update(key.bucket.map_or(u64::MAX, |b| b as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Facet bucket of one pair, or `None` when the pair falls outside the
/// facet's applicability predicate (different sentence-length buckets, a
/// value below the first bound).
///
/// `senses_per_word` is only consulted for [`Facet::NSenses`].
pub fn pair_bucket(
    c: &Corpus,
    facet: &FacetSpec,
    a: OccId,
    b: OccId,
    identity: WordIdentity,
    senses_per_word: &BTreeMap<&str, usize>,
) -> Result<Option<usize>, MetricsError> {
    Ok(match facet.facet {
        Facet::Pos => {
            let pos = c.token(a).pos;
            if c.token(b).pos != pos {
                return Err(MetricsError::ContractViolation(format!(
                    "pair members have different pos {} and {}",
                    pos,
                    c.token(b).pos
                )));
            }
            Pos::LABELED.iter().position(|&p| p == pos)
        }
        Facet::NSenses => {
            let n = |o| senses_per_word.get(c.word_of(o, identity)).copied().unwrap_or(0);
            facet.buckets.bucket_of(n(a).max(n(b)) as u32)
        }
        Facet::SentLen => {
            let ba = facet.buckets.bucket_of(c.sentence_len(a));
            let bb = facet.buckets.bucket_of(c.sentence_len(b));
            if ba == bb {
                ba
            } else {
                None
            }
        }
        Facet::RelDist => facet.buckets.bucket_of(a.index().abs_diff(b.index())),
        Facet::PositionIndex => {
            if a.index() != b.index() {
                return Err(MetricsError::ContractViolation(format!(
                    "position_index facet needs equal positions, got {} and {}",
                    a.index(),
                    b.index()
                )));
            }
            facet.buckets.bucket_of(a.index())
        }
    })
}

/// Enumerates unordered pairs of distinct labeled occurrences that share a
/// sense and satisfy `relation`, grouped per sense (and per facet bucket).
///
/// Groups above the sampler cap keep a seeded uniform sample without
/// replacement; each group's seed derives from the sampler seed and the
/// group key, so the result does not depend on group order.
pub fn enumerate_pairs(
    c: &Corpus,
    relation: Relation,
    facet: Option<&FacetSpec>,
    sampler: SamplerConfig,
    identity: WordIdentity,
) -> Result<PairSet, MetricsError> {
    let senses_per_word = match facet {
        Some(f) if f.facet == Facet::NSenses => c.senses_per_word(identity),
        _ => BTreeMap::new(),
    };
    let same_position_only = facet.is_some_and(|f| f.facet == Facet::PositionIndex);

    let mut groups = Vec::new();
    for (sense, occs) in c.sense_index() {
        // Blocks of occurrences sharing a word form, each in canonical order.
        let mut blocks: BTreeMap<&str, Vec<OccId>> = BTreeMap::new();
        for &o in occs {
            blocks.entry(c.word_of(o, identity)).or_default().push(o);
        }
        let blocks: Vec<Vec<OccId>> = blocks.into_values().collect();

        let mut cells: BTreeMap<Option<usize>, Reservoir> = BTreeMap::new();
        let mut visit = |x: OccId, y: OccId| -> Result<(), MetricsError> {
            let (a, b) = if x < y { (x, y) } else { (y, x) };
            if same_position_only && a.index() != b.index() {
                return Ok(());
            }
            let bucket = match facet {
                None => None,
                Some(f) => match pair_bucket(c, f, a, b, identity, &senses_per_word)? {
                    Some(bk) => Some(bk),
                    None => return Ok(()),
                },
            };
            cells
                .entry(bucket)
                .or_insert_with(|| {
                    let key = GroupKey { bucket, sense: sense.clone() };
                    Reservoir::new(sampler.max_pairs_per_group, group_seed(sampler.seed, &key))
                })
                .offer((a, b));
            Ok(())
        };

        match relation {
            Relation::SameWordSameSense => {
                for block in &blocks {
                    for (i, &x) in block.iter().enumerate() {
                        for &y in &block[i + 1..] {
                            visit(x, y)?;
                        }
                    }
                }
            }
            Relation::DiffWordSameSense => {
                for (p, left) in blocks.iter().enumerate() {
                    for right in &blocks[p + 1..] {
                        for &x in left {
                            for &y in right {
                                visit(x, y)?;
                            }
                        }
                    }
                }
            }
        }

        for (bucket, mut res) in cells {
            res.items.sort_unstable();
            groups.push(PairGroup {
                key: GroupKey { bucket, sense: sense.clone() },
                pair_count_exact: res.seen,
                pairs: res.items,
            });
        }
    }
    groups.sort_by(|a, b| a.key.cmp(&b.key));

    Ok(PairSet { relation, identity, facet: facet.cloned(), sampler, groups })
}
