use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pairs::PairSet;
use super::{cosine_with_norms, dot, norm, Aggregation, Facet, FacetSpec, MetricsError, Relation, SamplerConfig};
use crate::corpus::{Corpus, OccId, OccurrenceKey, WordIdentity};
use crate::embstore::{EmbeddingStore, Variant};
use crate::reduce::KahanSum;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Pairs per reduction task. Fixed so partial sums, and therefore the final
/// bits, do not depend on the thread count.
const PAIR_CHUNK: usize = 4096;
/// Rows per Gram block in the random baseline.
const GRAM_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group: String,
    pub bucket: Option<String>,
    pub pair_count_exact: u64,
    pub pair_count_used: u64,
    pub mean_cosine: f64,
    pub delta_vs_random: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRecord {
    pub bucket: String,
    pub pair_count_exact: u64,
    pub pair_count_used: u64,
    /// `None` for a bucket without pairs.
    pub mean_cosine: Option<f64>,
    pub delta_vs_random: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRecord {
    pub sim_value: Option<f64>,
    pub sim_rand: Option<f64>,
    pub delta: Option<f64>,
    pub pair_count_exact: u64,
    pub pair_count_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub relation: Relation,
    pub variant: Variant,
    pub layer: u32,
    pub identity: WordIdentity,
    pub aggregation: Aggregation,
    pub facet: Option<FacetSpec>,
    pub sampler: SamplerConfig,
    pub groups: Vec<GroupRecord>,
    pub buckets: Vec<BucketRecord>,
    pub global: GlobalRecord,
}

impl SimReport {
    /// Fills every delta as `mean - sim_rand`.
    pub fn attach_baseline(&mut self, sim_rand: f64) {
        self.global.sim_rand = Some(sim_rand);
        self.global.delta = self.global.sim_value.map(|v| v - sim_rand);
        for g in &mut self.groups {
            g.delta_vs_random = Some(g.mean_cosine - sim_rand);
        }
        for b in &mut self.buckets {
            b.delta_vs_random = b.mean_cosine.map(|m| m - sim_rand);
        }
    }

    pub fn bucket(&self, label: &str) -> Option<&BucketRecord> {
        self.buckets.iter().find(|b| b.bucket == label)
    }
}

struct Vectors {
    slot: HashMap<OccId, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
    dim: usize,
}

impl Vectors {
    #[inline]
    fn cos(&self, a: OccId, b: OccId) -> f64 {
        let (ia, ib) = (self.slot[&a], self.slot[&b]);
        let d = self.dim;
        cosine_with_norms(
            &self.data[ia * d..(ia + 1) * d],
            &self.data[ib * d..(ib + 1) * d],
            self.norms[ia],
            self.norms[ib],
        )
    }
}

fn load_vectors<F>(
    store: &EmbeddingStore,
    occs: impl IntoIterator<Item = OccId>,
    layer: u32,
    key_of: F,
) -> Result<Vectors, MetricsError>
where
    F: Fn(OccId) -> OccurrenceKey,
{
    store.check_layer(layer)?;
    let unique: BTreeSet<OccId> = occs.into_iter().collect();
    let mut rows = Vec::with_capacity(unique.len());
    let mut missing = Vec::new();
    for &o in &unique {
        let key = key_of(o);
        match store.row_of(&key) {
            Some(r) => rows.push((o, r, key)),
            None => missing.push(key),
        }
    }
    if !missing.is_empty() {
        return Err(MetricsError::Unresolvable { keys: missing });
    }

    let dim = store.dim();
    let mut slot = HashMap::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * dim);
    let mut norms = Vec::with_capacity(rows.len());
    let mut buf = Vec::with_capacity(dim);
    for (i, (o, r, key)) in rows.into_iter().enumerate() {
        store.read_f64(r, layer, &mut buf)?;
        let n = norm(&buf);
        if n == 0.0 {
            return Err(MetricsError::ZeroNorm { key: Some(key) });
        }
        slot.insert(o, i);
        data.extend_from_slice(&buf);
        norms.push(n);
    }
    Ok(Vectors { slot, data, norms, dim })
}

/// Per-group compensated cosine sums, reduced over fixed chunks.
fn group_sums(pairs: &PairSet, vecs: &Vectors) -> Vec<KahanSum> {
    let tasks: Vec<(usize, &[(OccId, OccId)])> = pairs
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, grp)| grp.pairs.chunks(PAIR_CHUNK).map(move |c| (g, c)))
        .collect();
    let partials: Vec<(usize, KahanSum)> =
        tasks.par_iter().map(|&(g, chunk)| (g, chunk.iter().map(|&(a, b)| vecs.cos(a, b)).collect())).collect();
    let mut sums = vec![KahanSum::new(); pairs.groups.len()];
    for (g, k) in &partials {
        sums[*g].merge(k);
    }
    sums
}

/// Pools group sums. Micro weights each group by its exact pair count, which
/// reduces to the plain all-pairs mean when nothing was sampled.
fn pool(members: impl Iterator<Item = (u64, u64, KahanSum)>, aggregation: Aggregation) -> (u64, u64, Option<f64>) {
    let mut exact = 0u64;
    let mut used = 0u64;
    let mut acc = KahanSum::new();
    let mut n_groups = 0u64;
    for (e, u, sum) in members {
        if u == 0 {
            continue;
        }
        exact += e;
        used += u;
        n_groups += 1;
        match aggregation {
            Aggregation::Micro if e == u => acc.merge(&sum),
            Aggregation::Micro => acc.add(sum.value() * (e as f64 / u as f64)),
            Aggregation::Macro => acc.add(sum.value() / u as f64),
        }
    }
    let mean = match aggregation {
        _ if n_groups == 0 => None,
        Aggregation::Micro => Some(acc.value() / exact as f64),
        Aggregation::Macro => Some(acc.value() / n_groups as f64),
    };
    (exact, used, mean.map(|m| m.clamp(-1.0, 1.0)))
}

/// Mean pairwise cosine over `pairs` at `layer`, per group, per bucket and
/// overall.
pub fn sim_aggregate(
    store: &EmbeddingStore,
    c: &Corpus,
    pairs: &PairSet,
    layer: u32,
    aggregation: Aggregation,
) -> Result<SimReport, MetricsError> {
    sim_aggregate_mapped(store, c, pairs, layer, aggregation, |o| c.key(o))
}

/// [`sim_aggregate`] with store rows looked up through `key_of`, for scoring
/// pairs enumerated on one corpus against a store built from a derived one.
pub fn sim_aggregate_mapped<F>(
    store: &EmbeddingStore,
    c: &Corpus,
    pairs: &PairSet,
    layer: u32,
    aggregation: Aggregation,
    key_of: F,
) -> Result<SimReport, MetricsError>
where
    F: Fn(OccId) -> OccurrenceKey,
{
    if pairs.facet.as_ref().is_some_and(|f| f.facet == Facet::PositionIndex) {
        if let Some((a, b)) = pairs.iter_pairs().find(|(a, b)| a.index() != b.index()) {
            return Err(MetricsError::ContractViolation(format!(
                "position_index pair {} / {} has unequal positions",
                c.key(a),
                c.key(b)
            )));
        }
    }

    let vecs = load_vectors(store, pairs.iter_pairs().flat_map(|(a, b)| [a, b]), layer, key_of)?;
    let sums = group_sums(pairs, &vecs);

    let groups: Vec<GroupRecord> = pairs
        .groups
        .iter()
        .zip(&sums)
        .map(|(g, s)| GroupRecord {
            group: g.key.sense.to_string(),
            bucket: match (&pairs.facet, g.key.bucket) {
                (Some(f), Some(b)) => Some(f.label(b)),
                _ => None,
            },
            pair_count_exact: g.pair_count_exact,
            pair_count_used: g.pair_count_used(),
            mean_cosine: (s.value() / g.pair_count_used() as f64).clamp(-1.0, 1.0),
            delta_vs_random: None,
        })
        .collect();

    let buckets = match &pairs.facet {
        None => Vec::new(),
        Some(f) => (0..f.n_buckets())
            .map(|b| {
                let members = pairs
                    .groups
                    .iter()
                    .zip(&sums)
                    .filter(|(g, _)| g.key.bucket == Some(b))
                    .map(|(g, s)| (g.pair_count_exact, g.pair_count_used(), *s));
                let (exact, used, mean) = pool(members, aggregation);
                BucketRecord {
                    bucket: f.label(b),
                    pair_count_exact: exact,
                    pair_count_used: used,
                    mean_cosine: mean,
                    delta_vs_random: None,
                }
            })
            .collect(),
    };

    let (exact, used, sim_value) =
        pool(pairs.groups.iter().zip(&sums).map(|(g, s)| (g.pair_count_exact, g.pair_count_used(), *s)), aggregation);

    Ok(SimReport {
        schema_version: REPORT_SCHEMA_VERSION,
        relation: pairs.relation,
        variant: store.variant(),
        layer,
        identity: pairs.identity,
        aggregation,
        facet: pairs.facet.clone(),
        sampler: pairs.sampler,
        groups,
        buckets,
        global: GlobalRecord { sim_value, sim_rand: None, delta: None, pair_count_exact: exact, pair_count_used: used },
    })
}

/// Same aggregation over a masked-variant store.
pub fn sim_masked(
    store: &EmbeddingStore,
    c: &Corpus,
    pairs: &PairSet,
    layer: u32,
    aggregation: Aggregation,
) -> Result<SimReport, MetricsError> {
    store.require_variant(Variant::Masked)?;
    sim_aggregate(store, c, pairs, layer, aggregation)
}

/// Faceted report: one mean per bucket.
#[allow(clippy::too_many_arguments)]
pub fn breakdown(
    store: &EmbeddingStore,
    c: &Corpus,
    facet: &FacetSpec,
    relation: Relation,
    sampler: SamplerConfig,
    identity: WordIdentity,
    layer: u32,
    aggregation: Aggregation,
) -> Result<SimReport, MetricsError> {
    let pairs = super::enumerate_pairs(c, relation, Some(facet), sampler, identity)?;
    sim_aggregate(store, c, &pairs, layer, aggregation)
}

/// Scores one pair set at each layer.
pub fn layer_sweep(
    store: &EmbeddingStore,
    c: &Corpus,
    pairs: &PairSet,
    layers: &[u32],
    aggregation: Aggregation,
) -> Result<Vec<SimReport>, MetricsError> {
    layers.iter().map(|&l| sim_aggregate(store, c, pairs, l, aggregation)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Sample only sense-labeled occurrences. Forced on for masked stores,
    /// which hold no unlabeled rows.
    pub labeled_only: bool,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self { n_samples: 10_000, seed: 0, labeled_only: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub value: f64,
    pub layer: u32,
    pub n_requested: usize,
    pub n_used: usize,
    pub seed: u64,
    pub labeled_only: bool,
    pub warning: Option<String>,
}

/// Mean cosine over all pairs of a seeded uniform sample of occurrences.
pub fn sim_rand(
    store: &EmbeddingStore,
    c: &Corpus,
    cfg: &RandomConfig,
    layer: u32,
) -> Result<RandomBaseline, MetricsError> {
    let labeled_only = cfg.labeled_only || store.variant() == Variant::Masked;
    let population: Vec<OccId> = if labeled_only { c.labeled().to_vec() } else { c.all_occurrences().collect() };
    sim_rand_over(store, &population, |o| c.key(o), cfg, labeled_only, layer)
}

pub(crate) fn sim_rand_over<F>(
    store: &EmbeddingStore,
    population: &[OccId],
    key_of: F,
    cfg: &RandomConfig,
    labeled_only: bool,
    layer: u32,
) -> Result<RandomBaseline, MetricsError>
where
    F: Fn(OccId) -> OccurrenceKey,
{
    if cfg.n_samples < 2 {
        return Err(MetricsError::TooFewSamples(cfg.n_samples));
    }
    let mut warning = None;
    let sample: Vec<OccId> = if population.len() <= cfg.n_samples {
        if population.len() < cfg.n_samples {
            warning = Some(format!(
                "requested {} samples but only {} occurrences exist; using all",
                cfg.n_samples,
                population.len()
            ));
        }
        population.to_vec()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = rand::seq::index::sample(&mut rng, population.len(), cfg.n_samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| population[i]).collect()
    };
    let n = sample.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }

    let vecs = load_vectors(store, sample.iter().copied(), layer, key_of)?;
    let dim = vecs.dim;
    // Unit rows in sample order.
    let mut unit = Vec::with_capacity(n * dim);
    for o in &sample {
        let i = vecs.slot[o];
        let inv = 1.0 / vecs.norms[i];
        unit.extend(vecs.data[i * dim..(i + 1) * dim].iter().map(|x| x * inv));
    }

    let nb = n.div_ceil(GRAM_BLOCK);
    let blocks: Vec<(usize, usize)> = (0..nb).flat_map(|bi| (bi..nb).map(move |bj| (bi, bj))).collect();
    let partials: Vec<KahanSum> = blocks
        .par_iter()
        .map(|&(bi, bj)| {
            let mut k = KahanSum::new();
            let (i0, i1) = (bi * GRAM_BLOCK, ((bi + 1) * GRAM_BLOCK).min(n));
            let (j0, j1) = (bj * GRAM_BLOCK, ((bj + 1) * GRAM_BLOCK).min(n));
            for i in i0..i1 {
                let ui = &unit[i * dim..(i + 1) * dim];
                for j in j0.max(i + 1)..j1 {
                    k.add(dot(ui, &unit[j * dim..(j + 1) * dim]).clamp(-1.0, 1.0));
                }
            }
            k
        })
        .collect();
    let mut total = KahanSum::new();
    for p in &partials {
        total.merge(p);
    }
    let value = (2.0 * total.value() / (n as f64 * (n as f64 - 1.0))).clamp(-1.0, 1.0);

    Ok(RandomBaseline { value, layer, n_requested: cfg.n_samples, n_used: n, seed: cfg.seed, labeled_only, warning })
}
