//! Sense-equivalence probing over frozen embeddings.
//!
//! A pair of occurrences is turned into the concatenation `[h_a; h_b]` and a
//! small classifier predicts whether both carry the same sense. Two model
//! kinds are supported: a single affine map to two logits, and an
//! affine → ReLU → affine network. Training is plain minibatch SGD on
//! softmax cross-entropy with a seeded initialization and shuffle.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, OccId, OccurrenceKey, SenseId};
use crate::embstore::{EmbeddingStore, RowId, StoreError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPRB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(
        "cannot draw {requested_positive} positive / {requested_negative} negative pairs: \
         at most {max_positive} positive and {max_negative} negative pairs exist \
         (largest balanced dataset: {max_total} pairs)"
    )]
    InsufficientData {
        requested_positive: u64,
        requested_negative: u64,
        max_positive: u64,
        max_negative: u64,
        max_total: u64,
    },
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}; config: {config}")]
    Diverged { epoch: usize, batch: usize, config: String },
    #[error("input width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("pair member {0} is not in the store")]
    MissingRow(OccurrenceKey),
    #[error("invalid probe config: {0}")]
    Config(String),
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    SameSense,
    DiffSense,
}

impl PairLabel {
    /// Class index: 1 for same sense.
    pub fn class(self) -> usize {
        match self {
            PairLabel::SameSense => 1,
            PairLabel::DiffSense => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePair {
    pub key_a: OccurrenceKey,
    pub key_b: OccurrenceKey,
    pub label: PairLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub eval: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        Self { train: 20_000, eval: 2_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePairDataset {
    pub train: Vec<ProbePair>,
    pub eval: Vec<ProbePair>,
    pub seed: u64,
    /// Fraction of negatives requested from same-word, different-sense pairs.
    pub hard_negative_fraction: f64,
    /// Hard negatives actually drawn (short pools are topped up uniformly).
    pub hard_negatives_drawn: usize,
    pub corpus_fingerprint: String,
}

impl ProbePairDataset {
    pub fn sizes(&self) -> DatasetSizes {
        DatasetSizes { train: self.train.len(), eval: self.eval.len() }
    }
}

/// Labeled occurrences grouped into blocks. Pairs within a block and pairs
/// across blocks can both be addressed by a dense rank, which lets us draw
/// distinct pairs uniformly without materializing the pool.
struct Blocks {
    members: Vec<Vec<OccId>>,
    within_cum: Vec<u64>,
    across_cum: Vec<u64>,
    /// Number of members in blocks after block `b`.
    later: Vec<u64>,
}

impl Blocks {
    fn new(members: Vec<Vec<OccId>>) -> Self {
        let mut later = vec![0u64; members.len()];
        let mut tail = 0u64;
        for (b, m) in members.iter().enumerate().rev() {
            later[b] = tail;
            tail += m.len() as u64;
        }
        let mut within_cum = Vec::with_capacity(members.len() + 1);
        let mut across_cum = Vec::with_capacity(members.len() + 1);
        within_cum.push(0);
        across_cum.push(0);
        for (b, m) in members.iter().enumerate() {
            let n = m.len() as u64;
            within_cum.push(within_cum[b] + n * n.saturating_sub(1) / 2);
            across_cum.push(across_cum[b] + n * later[b]);
        }
        Self { members, within_cum, across_cum, later }
    }

    fn within_total(&self) -> u64 {
        *self.within_cum.last().unwrap()
    }

    fn across_total(&self) -> u64 {
        *self.across_cum.last().unwrap()
    }

    fn block_of(cum: &[u64], r: u64) -> usize {
        cum.partition_point(|&c| c <= r) - 1
    }

    fn within(&self, r: u64) -> (OccId, OccId) {
        let b = Self::block_of(&self.within_cum, r);
        let (i, j) = unrank_pair(r - self.within_cum[b]);
        let m = &self.members[b];
        (m[i as usize], m[j as usize])
    }

    fn across(&self, r: u64) -> (OccId, OccId) {
        let b = Self::block_of(&self.across_cum, r);
        let off = r - self.across_cum[b];
        let (i, mut k) = (off / self.later[b], off % self.later[b]);
        let mut c = b + 1;
        while k >= self.members[c].len() as u64 {
            k -= self.members[c].len() as u64;
            c += 1;
        }
        (self.members[b][i as usize], self.members[c][k as usize])
    }
}

/// Maps a rank in `0..n(n-1)/2` to `(i, j)` with `i < j`, ordered by `j`.
fn unrank_pair(r: u64) -> (u64, u64) {
    let mut j = ((1.0 + (1.0 + 8.0 * r as f64).sqrt()) / 2.0) as u64;
    while j * (j - 1) / 2 > r {
        j -= 1;
    }
    while (j + 1) * j / 2 <= r {
        j += 1;
    }
    (r - j * (j - 1) / 2, j)
}

/// Draws `k` distinct ranks from `0..total` whose pairs are not in `taken`.
/// Uses rejection while the pool is large relative to the request and
/// falls back to a full shuffle otherwise.
fn draw_distinct(
    rng: &mut ChaCha8Rng,
    total: u64,
    k: usize,
    pair_of: impl Fn(u64) -> (OccId, OccId),
    taken: &HashSet<(OccId, OccId)>,
) -> Option<Vec<(OccId, OccId)>> {
    if k == 0 {
        return Some(Vec::new());
    }
    let budget = k as u64 + taken.len() as u64;
    let mut out = Vec::with_capacity(k);
    if total >= 4 * budget {
        let mut seen = HashSet::with_capacity(k);
        while out.len() < k {
            let p = canonical_pair(pair_of(rng.random_range(0..total)));
            if !taken.contains(&p) && seen.insert(p) {
                out.push(p);
            }
        }
        return Some(out);
    }
    let mut ranks: Vec<u64> = (0..total).collect();
    ranks.shuffle(rng);
    for r in ranks {
        let p = canonical_pair(pair_of(r));
        if !taken.contains(&p) {
            out.push(p);
            if out.len() == k {
                return Some(out);
            }
        }
    }
    None
}

fn canonical_pair((a, b): (OccId, OccId)) -> (OccId, OccId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Seeded, balanced sense-equivalence dataset.
///
/// Positives are uniform over same-sense pairs. Half of the negatives (per
/// `hard_negative_fraction`) come from same-surface, different-sense pairs,
/// the rest uniformly from all different-sense pairs. Train and eval never
/// share a pair. Only occurrences present in `store` are used.
pub fn build_pair_dataset(
    c: &Corpus,
    store: &EmbeddingStore,
    sizes: DatasetSizes,
    seed: u64,
) -> Result<ProbePairDataset, ProbeError> {
    build_pair_dataset_with(c, store, sizes, seed, 0.5)
}

pub fn build_pair_dataset_with(
    c: &Corpus,
    store: &EmbeddingStore,
    sizes: DatasetSizes,
    seed: u64,
    hard_negative_fraction: f64,
) -> Result<ProbePairDataset, ProbeError> {
    if !(0.0..=1.0).contains(&hard_negative_fraction) {
        return Err(ProbeError::Config(format!("hard_negative_fraction {hard_negative_fraction} not in [0, 1]")));
    }
    let usable = |o: &OccId| store.contains(&c.key(*o));
    let by_sense: Vec<Vec<OccId>> = c
        .sense_index()
        .values()
        .map(|v| v.iter().copied().filter(usable).collect::<Vec<_>>())
        .filter(|v: &Vec<OccId>| !v.is_empty())
        .collect();
    let senses = Blocks::new(by_sense);

    // Same surface, blocks by sense within each word.
    let word_blocks: Vec<Blocks> = c
        .word_index()
        .values()
        .map(|occs| {
            let mut per: std::collections::BTreeMap<&SenseId, Vec<OccId>> = Default::default();
            for &o in occs.iter().filter(|o| usable(o)) {
                if let Some(s) = &c.token(o).sense {
                    per.entry(s).or_default().push(o);
                }
            }
            Blocks::new(per.into_values().collect())
        })
        .filter(|b| b.across_total() > 0)
        .collect();
    let hard_cum: Vec<u64> = std::iter::once(0)
        .chain(word_blocks.iter().scan(0u64, |acc, b| {
            *acc += b.across_total();
            Some(*acc)
        }))
        .collect();
    let hard_total = *hard_cum.last().unwrap();

    let pos_train = sizes.train.div_ceil(2);
    let pos_eval = sizes.eval.div_ceil(2);
    let (neg_train, neg_eval) = (sizes.train / 2, sizes.eval / 2);
    let (n_pos, n_neg) = (pos_train + pos_eval, neg_train + neg_eval);

    let max_pos = senses.within_total();
    let max_neg = senses.across_total();
    if n_pos as u64 > max_pos || n_neg as u64 > max_neg {
        let half = max_pos.min(max_neg);
        return Err(ProbeError::InsufficientData {
            requested_positive: n_pos as u64,
            requested_negative: n_neg as u64,
            max_positive: max_pos,
            max_negative: max_neg,
            max_total: 2 * half,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let none = HashSet::new();
    let positives = draw_distinct(&mut rng, max_pos, n_pos, |r| senses.within(r), &none).expect("count checked");

    let n_hard = ((n_neg as f64 * hard_negative_fraction).round() as usize).min(hard_total as usize);
    let hard = draw_distinct(
        &mut rng,
        hard_total,
        n_hard,
        |r| {
            let w = Blocks::block_of(&hard_cum, r);
            word_blocks[w].across(r - hard_cum[w])
        },
        &none,
    )
    .expect("count checked");
    let hard_set: HashSet<_> = hard.iter().copied().collect();
    let rest = draw_distinct(&mut rng, max_neg, n_neg - n_hard, |r| senses.across(r), &hard_set).ok_or(
        ProbeError::InsufficientData {
            requested_positive: n_pos as u64,
            requested_negative: n_neg as u64,
            max_positive: max_pos,
            max_negative: max_neg,
            max_total: 2 * max_pos.min(max_neg),
        },
    )?;
    let mut negatives = hard;
    negatives.extend(rest);
    negatives.shuffle(&mut rng);

    let mut to_item = |(a, b): (OccId, OccId), label| {
        let (a, b) = if rng.random::<bool>() { (a, b) } else { (b, a) };
        ProbePair { key_a: c.key(a), key_b: c.key(b), label }
    };
    let mut train = Vec::with_capacity(sizes.train);
    let mut eval = Vec::with_capacity(sizes.eval);
    for (i, p) in positives.into_iter().enumerate() {
        let item = to_item(p, PairLabel::SameSense);
        if i < pos_train {
            train.push(item)
        } else {
            eval.push(item)
        }
    }
    for (i, p) in negatives.into_iter().enumerate() {
        let item = to_item(p, PairLabel::DiffSense);
        if i < neg_train {
            train.push(item)
        } else {
            eval.push(item)
        }
    }
    train.shuffle(&mut rng);
    eval.shuffle(&mut rng);

    Ok(ProbePairDataset {
        train,
        eval,
        seed,
        hard_negative_fraction,
        hard_negatives_drawn: n_hard,
        corpus_fingerprint: c.fingerprint().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Linear,
    Mlp,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Linear => "linear",
            ProbeKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ProbeKind::Linear),
            "mlp" => Ok(ProbeKind::Mlp),
            _ => Err(format!("unknown probe kind {s:?} (expected linear or mlp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub hidden_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 10, batch: 64, hidden_size: 256, seed: 0 }
    }
}

impl ProbeConfig {
    fn validate(&self, kind: ProbeKind) -> Result<(), ProbeError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ProbeError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(ProbeError::Config("batch must be at least 1".into()));
        }
        if kind == ProbeKind::Mlp && self.hidden_size == 0 {
            return Err(ProbeError::Config("mlp hidden_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row-major feature matrix with class labels (1 = same sense).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatures {
    width: usize,
    x: Vec<f64>,
    y: Vec<usize>,
}

impl DenseFeatures {
    pub fn new(width: usize, x: Vec<f64>, y: Vec<usize>) -> Self {
        assert_eq!(x.len(), width * y.len(), "feature matrix shape");
        assert!(y.iter().all(|&c| c < 2), "labels are 0 or 1");
        Self { width, x, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    /// Gathers `[h_a; h_b]` for each pair at `layer`.
    pub fn from_pairs(store: &EmbeddingStore, pairs: &[ProbePair], layer: u32) -> Result<Self, ProbeError> {
        store.check_layer(layer)?;
        let dim = store.dim();
        let row = |k: &OccurrenceKey| store.row_of(k).ok_or_else(|| ProbeError::MissingRow(k.clone()));
        let mut x = Vec::with_capacity(pairs.len() * 2 * dim);
        let mut buf = Vec::with_capacity(dim);
        let mut push = |r: RowId, x: &mut Vec<f64>| -> Result<(), ProbeError> {
            store.read_f64(r, layer, &mut buf)?;
            x.extend_from_slice(&buf);
            Ok(())
        };
        for p in pairs {
            push(row(&p.key_a)?, &mut x)?;
            push(row(&p.key_b)?, &mut x)?;
        }
        Ok(Self::new(2 * dim, x, pairs.iter().map(|p| p.label.class()).collect()))
    }
}

/// Trained probe. Parameters are stored flat:
/// linear `[W0 (2 x in), b0 (2)]`; mlp `[W2 (h x in), b2 (h), W1 (2 x h), b1 (2)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub input_dim: usize,
    pub hidden_size: usize,
    pub layer: u32,
    pub config: ProbeConfig,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: ProbeKind,
    input_dim: usize,
    hidden_size: usize,
    layer: u32,
    config: ProbeConfig,
    param_count: usize,
}

impl ProbeModel {
    /// Seeded initialization: Gaussian weights scaled by fan-in, zero biases.
    pub fn init(kind: ProbeKind, input_dim: usize, config: ProbeConfig, layer: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hidden_size = if kind == ProbeKind::Mlp { config.hidden_size } else { 0 };
        let mut m = Self { kind, input_dim, hidden_size, layer, config, params: Vec::new() };
        let mut gauss = |n: usize, fan_in: usize, gain: f64| -> Vec<f64> {
            let d = Normal::new(0.0, (gain / fan_in.max(1) as f64).sqrt()).expect("finite std");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        };
        m.params = match kind {
            ProbeKind::Linear => {
                let mut p = gauss(2 * input_dim, input_dim, 1.0);
                p.extend([0.0; 2]);
                p
            }
            ProbeKind::Mlp => {
                let h = hidden_size;
                let mut p = gauss(h * input_dim, input_dim, 2.0);
                p.extend(std::iter::repeat_n(0.0, h));
                p.extend(gauss(2 * h, h, 1.0));
                p.extend([0.0; 2]);
                p
            }
        };
        m
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn logits_into(&self, params: &[f64], x: &[f64], hidden: &mut [f64]) -> [f64; 2] {
        let n = self.input_dim;
        match self.kind {
            ProbeKind::Linear => {
                let (w, b) = params.split_at(2 * n);
                [dot(&w[..n], x) + b[0], dot(&w[n..], x) + b[1]]
            }
            ProbeKind::Mlp => {
                let h = self.hidden_size;
                let (w2, rest) = params.split_at(h * n);
                let (b2, rest) = rest.split_at(h);
                let (w1, b1) = rest.split_at(2 * h);
                for (k, z) in hidden.iter_mut().enumerate() {
                    *z = dot(&w2[k * n..(k + 1) * n], x) + b2[k];
                }
                let relu = |z: f64| z.max(0.0);
                let mut out = [b1[0], b1[1]];
                for (c, o) in out.iter_mut().enumerate() {
                    *o += w1[c * h..(c + 1) * h].iter().zip(hidden.iter()).map(|(w, &z)| w * relu(z)).sum::<f64>();
                }
                out
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> [f64; 2] {
        let mut hidden = vec![0.0; self.hidden_size];
        self.logits_into(&self.params, x, &mut hidden)
    }

    /// Argmax class; ties go to class 0.
    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        usize::from(l[1] > l[0])
    }

    /// Mean cross-entropy over `rows` of `data` at `params`, and its gradient.
    pub fn loss_and_grad(&self, params: &[f64], data: &DenseFeatures, rows: &[usize]) -> (f64, Vec<f64>) {
        let n = self.input_dim;
        let h = self.hidden_size;
        let mut grad = vec![0.0; params.len()];
        let mut hidden = vec![0.0; h];
        let mut loss = 0.0;
        let scale = 1.0 / rows.len() as f64;
        for &i in rows {
            let x = data.row(i);
            let y = data.label(i);
            let l = self.logits_into(params, x, &mut hidden);
            let m = l[0].max(l[1]);
            let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
            loss += lse - l[y];
            let p = [(l[0] - lse).exp(), (l[1] - lse).exp()];
            let d = [(p[0] - f64::from(y == 0)) * scale, (p[1] - f64::from(y == 1)) * scale];
            match self.kind {
                ProbeKind::Linear => {
                    for c in 0..2 {
                        axpy(&mut grad[c * n..(c + 1) * n], d[c], x);
                        grad[2 * n + c] += d[c];
                    }
                }
                ProbeKind::Mlp => {
                    let (o_b2, o_w1, o_b1) = (h * n, h * n + h, h * n + h + 2 * h);
                    for c in 0..2 {
                        for k in 0..h {
                            grad[o_w1 + c * h + k] += d[c] * hidden[k].max(0.0);
                        }
                        grad[o_b1 + c] += d[c];
                    }
                    for k in 0..h {
                        if hidden[k] > 0.0 {
                            let dz = d[0] * params[o_w1 + k] + d[1] * params[o_w1 + h + k];
                            axpy(&mut grad[k * n..(k + 1) * n], dz, x);
                            grad[o_b2 + k] += dz;
                        }
                    }
                }
            }
        }
        (loss * scale, grad)
    }

    pub fn accuracy(&self, data: &DenseFeatures) -> Result<f64, ProbeError> {
        if data.width() != self.input_dim {
            return Err(ProbeError::WidthMismatch { expected: self.input_dim, got: data.width() });
        }
        if data.is_empty() {
            return Err(ProbeError::Empty);
        }
        let correct = (0..data.len()).filter(|&i| self.predict(data.row(i)) == data.label(i)).count();
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            kind: self.kind,
            input_dim: self.input_dim,
            hidden_size: self.hidden_size,
            layer: self.layer,
            config: self.config,
            param_count: self.params.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProbeError> {
        let bad = |m: &str| ProbeError::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing SPRB magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ProbeError::Checkpoint(format!("unsupported version {version}")));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
        let h: CheckpointHeader = serde_json::from_slice(body).map_err(|e| ProbeError::Checkpoint(e.to_string()))?;
        let weights = &bytes[12 + len..];
        if weights.len() != 8 * h.param_count {
            return Err(ProbeError::Checkpoint(format!(
                "expected {} weight bytes, found {}",
                8 * h.param_count,
                weights.len()
            )));
        }
        let params: Vec<f64> = weights.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let m = Self {
            kind: h.kind,
            input_dim: h.input_dim,
            hidden_size: h.hidden_size,
            layer: h.layer,
            config: h.config,
            params,
        };
        let expected = Self::init(m.kind, m.input_dim, ProbeConfig { hidden_size: m.hidden_size, ..m.config }, m.layer)
            .param_count();
        if expected != m.params.len() {
            return Err(bad("parameter count does not match shape"));
        }
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Trains on an in-memory feature matrix.
pub fn train_features(
    data: &DenseFeatures,
    kind: ProbeKind,
    config: ProbeConfig,
    layer: u32,
) -> Result<ProbeModel, ProbeError> {
    config.validate(kind)?;
    if data.is_empty() {
        return Err(ProbeError::Empty);
    }
    let mut model = ProbeModel::init(kind, data.width(), config, layer);
    // Separate stream for shuffling so init does not depend on data size.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4531);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, rows) in order.chunks(config.batch).enumerate() {
            let (loss, grad) = model.loss_and_grad(&model.params, data, rows);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ProbeError::Diverged {
                    epoch,
                    batch,
                    config: serde_json::to_string(&config).expect("config serializes"),
                });
            }
            axpy(&mut model.params, -config.lr, &grad);
        }
    }
    Ok(model)
}

/// Trains a probe on the dataset's train split at `layer`. The store is
/// only read.
pub fn train_probe(
    ds: &ProbePairDataset,
    store: &EmbeddingStore,
    layer: u32,
    kind: ProbeKind,
    config: ProbeConfig,
) -> Result<ProbeModel, ProbeError> {
    let data = DenseFeatures::from_pairs(store, &ds.train, layer)?;
    train_features(&data, kind, config, layer)
}

/// Fraction of correct argmax predictions on `pairs`.
pub fn eval_probe(model: &ProbeModel, pairs: &[ProbePair], store: &EmbeddingStore) -> Result<f64, ProbeError> {
    if 2 * store.dim() != model.input_dim {
        return Err(ProbeError::WidthMismatch { expected: model.input_dim, got: 2 * store.dim() });
    }
    let data = DenseFeatures::from_pairs(store, pairs, model.layer)?;
    model.accuracy(&data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unrank_covers_all_pairs_in_order() {
        let mut r = 0;
        for j in 1..40u64 {
            for i in 0..j {
                assert_eq!(unrank_pair(r), (i, j));
                r += 1;
            }
        }
    }

    #[test]
    fn block_ranks_enumerate_pools() {
        let occ = |i| OccId::new(i, 0);
        let b = Blocks::new(vec![vec![occ(0), occ(1), occ(2)], vec![occ(3)], vec![occ(4), occ(5)]]);
        assert_eq!(b.within_total(), 4);
        assert_eq!(b.across_total(), 11);
        let within: HashSet<_> = (0..b.within_total()).map(|r| b.within(r)).collect();
        assert_eq!(within.len(), 4);
        let across: HashSet<_> = (0..b.across_total()).map(|r| canonical_pair(b.across(r))).collect();
        assert_eq!(across.len(), 11);
        assert!(across.contains(&(occ(3), occ(5))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ProbeModel::init(ProbeKind::Mlp, 6, ProbeConfig { hidden_size: 3, seed: 9, ..Default::default() }, 2);
        let back = ProbeModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut bytes = m.to_bytes();
        bytes.pop();
        assert!(matches!(ProbeModel::from_bytes(&bytes), Err(ProbeError::Checkpoint(_))));
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let mut m = ProbeModel::init(ProbeKind::Linear, 2, ProbeConfig::default(), 0);
        m.params.iter_mut().for_each(|p| *p = 0.0);
        let data = DenseFeatures::new(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.5], vec![0, 1, 1, 0]);
        assert_eq!(m.accuracy(&data).unwrap(), 0.5);
    }

    #[test]
    fn divergence_reports_config() {
        let data = DenseFeatures::new(1, vec![1e200, -1e200], vec![1, 0]);
        let cfg = ProbeConfig { lr: 1e200, epochs: 5, batch: 2, ..Default::default() };
        match train_features(&data, ProbeKind::Linear, cfg, 0) {
            Err(ProbeError::Diverged { config, .. }) => assert!(config.contains("\"lr\"")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
