//! Seeded synthetic corpora and embedding stores.
//!
//! These stand in for real model dumps in tests, demos and the `synth`
//! command. Vectors are sums of named components (a shared direction, a
//! per-sense centroid, a per-word offset, Gaussian noise) so every
//! similarity has a known cause.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bias::{apply_prompt, PromptTemplate, PromptedCorpusMap};
use crate::corpus::{Corpus, OccurrenceKey, Pos, Sentence, Token};
use crate::embstore::{encode_store, EmbeddingManifest, EmbeddingStore, StoreError, Variant};
use crate::probe::DenseFeatures;
use crate::wsd::{wic_to_corpus, WicInstance};

/// Corpus plus an encoded store built for it.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub corpus: Corpus,
    pub manifest: EmbeddingManifest,
    pub store_bytes: Vec<u8>,
}

impl Fixture {
    pub fn store(&self) -> EmbeddingStore {
        EmbeddingStore::from_bytes(self.store_bytes.clone()).expect("fixture store is well formed")
    }
}

pub fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Gaussian direction scaled to unit length.
pub fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let mut v = gaussian(rng, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SenseFixtureConfig {
    pub n_senses: usize,
    pub words_per_sense: usize,
    pub occurrences_per_word: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    pub dim: usize,
    pub n_layers: u32,
    /// Weight of the sense centroid at the first and the last layer.
    pub sense_weight: (f64, f64),
    /// Weight of the per-word offset; dropped entirely in masked dumps.
    pub word_weight: f64,
    /// Weight of one direction shared by every vector.
    pub anisotropy: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SenseFixtureConfig {
    fn default() -> Self {
        Self {
            n_senses: 6,
            words_per_sense: 2,
            occurrences_per_word: 5,
            min_sentence_len: 4,
            max_sentence_len: 24,
            dim: 16,
            n_layers: 4,
            sense_weight: (0.5, 1.5),
            word_weight: 1.0,
            anisotropy: 0.5,
            noise: 1.0,
            seed: 0,
        }
    }
}

const POS_CYCLE: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv];

/// One labeled target per sentence, placed at a random position among
/// unlabeled filler tokens. Returns the plain store; see
/// [`sense_fixture_masked`] for the masked companion.
pub fn sense_fixture(cfg: &SenseFixtureConfig) -> Fixture {
    build_sense_fixture(cfg, Variant::Plain)
}

/// Masked companion of [`sense_fixture`]: same corpus, labeled rows only,
/// with the word-identity component removed.
pub fn sense_fixture_masked(cfg: &SenseFixtureConfig) -> Fixture {
    build_sense_fixture(cfg, Variant::Masked)
}

fn build_sense_fixture(cfg: &SenseFixtureConfig, variant: Variant) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let common = unit_gaussian(&mut rng, cfg.dim);
    let centroids: Vec<Vec<f64>> = (0..cfg.n_senses).map(|_| unit_gaussian(&mut rng, cfg.dim)).collect();
    let offsets: Vec<Vec<f64>> =
        (0..cfg.n_senses * cfg.words_per_sense).map(|_| unit_gaussian(&mut rng, cfg.dim)).collect();

    let mut sentences = Vec::new();
    // (sentence index, token index, sense, word) of each target
    let mut targets = Vec::new();
    for s in 0..cfg.n_senses {
        for w in 0..cfg.words_per_sense {
            for _ in 0..cfg.occurrences_per_word {
                let len = rng.random_range(cfg.min_sentence_len..=cfg.max_sentence_len);
                let at = rng.random_range(0..len);
                let pos = POS_CYCLE[s % POS_CYCLE.len()];
                let tokens = (0..len)
                    .map(|t| {
                        if t == at {
                            Token::new(format!("w{s}_{w}"), pos).with_sense(format!("sense{s}"))
                        } else {
                            Token::new(format!("f{}", rng.random_range(0..50)), Pos::Other)
                        }
                    })
                    .collect();
                targets.push((sentences.len(), at, s, w));
                sentences.push(Sentence::new(format!("s{}", sentences.len()), tokens));
            }
        }
    }
    let corpus = Corpus::from_sentences(sentences).expect("synthetic corpus is valid");

    let layer_weight = |l: u32| {
        let t = if cfg.n_layers > 1 { l as f64 / (cfg.n_layers - 1) as f64 } else { 1.0 };
        cfg.sense_weight.0 + t * (cfg.sense_weight.1 - cfg.sense_weight.0)
    };
    let word_weight = if variant == Variant::Masked { 0.0 } else { cfg.word_weight };

    let mut target_at = std::collections::HashMap::new();
    for &(si, ti, s, w) in &targets {
        target_at.insert((si, ti), (s, w));
    }
    let mut rows = Vec::new();
    for (si, sent) in corpus.sentences().iter().enumerate() {
        for ti in 0..sent.len() {
            let target = target_at.get(&(si, ti)).copied();
            if variant == Variant::Masked && target.is_none() {
                continue;
            }
            let layers = (0..cfg.n_layers)
                .map(|l| {
                    let mut v = vec![0.0; cfg.dim];
                    axpy(&mut v, cfg.anisotropy, &common);
                    if let Some((s, w)) = target {
                        axpy(&mut v, layer_weight(l), &centroids[s]);
                        axpy(&mut v, word_weight, &offsets[s * cfg.words_per_sense + w]);
                    }
                    axpy(&mut v, cfg.noise / (cfg.dim as f64).sqrt(), &gaussian(&mut rng, cfg.dim));
                    v.into_iter().map(|x| x as f32).collect()
                })
                .collect();
            rows.push((OccurrenceKey::new(sent.id.clone(), ti as u32 + 1), layers));
        }
    }
    finish(corpus, "synthetic-sense", cfg.n_layers, cfg.dim, variant, rows)
}

fn finish(
    corpus: Corpus,
    model: &str,
    n_layers: u32,
    dim: usize,
    variant: Variant,
    rows: Vec<(OccurrenceKey, Vec<Vec<f32>>)>,
) -> Fixture {
    let manifest = EmbeddingManifest::new(model, n_layers, dim as u32, variant, &corpus);
    let store_bytes = encode_store(&manifest, rows).expect("synthetic rows are consistent");
    let manifest = EmbeddingStore::from_bytes(store_bytes.clone()).expect("valid").manifest().clone();
    Fixture { corpus, manifest, store_bytes }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositionFixtureConfig {
    pub n_sentences: usize,
    pub sentence_len: usize,
    /// Distinct (word, sense) pairs cycling at each position.
    pub words_per_position: usize,
    pub dim: usize,
    /// Position whose vectors share the anchor direction.
    pub anchor_position: u32,
    pub anchor_weight: f64,
    pub noise_weight: f64,
    pub seed: u64,
}

impl Default for PositionFixtureConfig {
    fn default() -> Self {
        Self {
            n_sentences: 24,
            sentence_len: 20,
            words_per_position: 3,
            dim: 32,
            anchor_position: 1,
            anchor_weight: 0.8,
            noise_weight: 0.2,
            seed: 0,
        }
    }
}

/// Corpus where every token is labeled and each word always sits at the
/// same position, so all same-word pairs have equal positions. Vectors at
/// `anchor_position` are `anchor_weight * anchor + noise_weight * noise`;
/// every other position is pure noise.
pub fn position_bias_corpus(cfg: &PositionFixtureConfig) -> Corpus {
    let sentences = (0..cfg.n_sentences)
        .map(|s| {
            let tokens = (1..=cfg.sentence_len)
                .map(|p| {
                    let k = s % cfg.words_per_position;
                    Token::new(format!("p{p}w{k}"), POS_CYCLE[p % 4]).with_sense(format!("p{p}s{k}"))
                })
                .collect();
            Sentence::new(format!("s{s}"), tokens)
        })
        .collect();
    Corpus::from_sentences(sentences).expect("valid")
}

pub fn position_bias_fixture(cfg: &PositionFixtureConfig) -> Fixture {
    let corpus = position_bias_corpus(cfg);
    let rows = position_rows(&corpus, cfg, 0);
    finish(corpus, "synthetic-position", 1, cfg.dim, Variant::Plain, rows)
}

/// Rows for `corpus` where the anchor sits at `cfg.anchor_position + shift`.
/// Used to build a "prompted" store for a corpus shifted by `shift` tokens.
pub fn position_rows(corpus: &Corpus, cfg: &PositionFixtureConfig, shift: u32) -> Vec<(OccurrenceKey, Vec<Vec<f32>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let anchor = unit_gaussian(&mut rng, cfg.dim);
    let anchored = cfg.anchor_position + shift;
    let mut rows = Vec::new();
    for sent in corpus.sentences() {
        for p in 1..=sent.len() as u32 {
            let mut v = vec![0.0; cfg.dim];
            let noise = unit_gaussian(&mut rng, cfg.dim);
            if p == anchored {
                axpy(&mut v, cfg.anchor_weight, &anchor);
                axpy(&mut v, cfg.noise_weight, &noise);
            } else {
                v = noise;
            }
            rows.push((OccurrenceKey::new(sent.id.clone(), p), vec![v.into_iter().map(|x| x as f32).collect()]));
        }
    }
    rows
}

/// Builds a store for an arbitrary corpus from a row generator.
pub fn store_for(
    corpus: &Corpus,
    model: &str,
    n_layers: u32,
    dim: usize,
    variant: Variant,
    rows: Vec<(OccurrenceKey, Vec<Vec<f32>>)>,
) -> Result<(EmbeddingManifest, Vec<u8>), StoreError> {
    let manifest = EmbeddingManifest::new(model, n_layers, dim as u32, variant, corpus);
    let bytes = encode_store(&manifest, rows)?;
    let m = EmbeddingStore::from_bytes(bytes.clone())?.manifest().clone();
    Ok((m, bytes))
}

/// Word, sense and PoS choices for [`small_fixture`]: four senses, two
/// words each, and one word ("bank") with two senses.
const LEXICON: [(&str, &str, Pos); 8] = [
    ("bank", "s:bank.n.1", Pos::Noun),
    ("shore", "s:bank.n.1", Pos::Noun),
    ("bank", "s:bank.n.2", Pos::Noun),
    ("lender", "s:bank.n.2", Pos::Noun),
    ("run", "s:run.v.1", Pos::Verb),
    ("sprint", "s:run.v.1", Pos::Verb),
    ("quick", "s:fast.a.1", Pos::Adj),
    ("fast", "s:fast.a.1", Pos::Adj),
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallFixtureConfig {
    pub n_sentences: usize,
    pub max_sentence_len: usize,
    /// Upper bound on labeled occurrences.
    pub max_labeled: usize,
    pub dim: usize,
    pub n_layers: u32,
    pub seed: u64,
}

impl Default for SmallFixtureConfig {
    fn default() -> Self {
        Self { n_sentences: 12, max_sentence_len: 20, max_labeled: 50, dim: 8, n_layers: 3, seed: 0 }
    }
}

/// Random sentences mixing lexicon words with unlabeled filler, and i.i.d.
/// Gaussian vectors for every token.
pub fn small_fixture(cfg: &SmallFixtureConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labeled = 0;
    let sentences = (0..cfg.n_sentences)
        .map(|s| {
            let len = rng.random_range(1..=cfg.max_sentence_len);
            let tokens = (0..len)
                .map(|_| {
                    if labeled < cfg.max_labeled && rng.random_bool(0.5) {
                        labeled += 1;
                        let (w, sense, pos) = LEXICON[rng.random_range(0..LEXICON.len())];
                        Token::new(w, pos).with_sense(sense)
                    } else {
                        Token::new(format!("x{}", rng.random_range(0..8)), Pos::Other)
                    }
                })
                .collect();
            Sentence::new(format!("q{s}"), tokens)
        })
        .collect();
    let corpus = Corpus::from_sentences(sentences).expect("valid");
    let rows = corpus
        .sentences()
        .iter()
        .flat_map(|s| (1..=s.len() as u32).map(move |i| OccurrenceKey::new(s.id.clone(), i)))
        .map(|k| {
            let layers = (0..cfg.n_layers)
                .map(|_| gaussian(&mut rng, cfg.dim).into_iter().map(|x| x as f32).collect())
                .collect();
            (k, layers)
        })
        .collect();
    finish(corpus, "synthetic-small", cfg.n_layers, cfg.dim, Variant::Plain, rows)
}

/// Which structure [`pair_features`] plants in the pair concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStructure {
    /// The first coordinate of `h_a` is +2 for same-sense pairs, -2 otherwise.
    Separable,
    /// Each half carries a sign in its first coordinate; same sense iff the
    /// signs agree.
    Xor,
    /// All vectors sit in a narrow cone and labels are independent of them.
    Cone,
}

/// Balanced synthetic pair features `[h_a; h_b]` of width `2 * dim`.
pub fn pair_features(structure: PairStructure, n: usize, dim: usize, seed: u64) -> DenseFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = unit_gaussian(&mut rng, dim);
    let mut x = Vec::with_capacity(n * 2 * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let mut a = gaussian(&mut rng, dim);
        let mut b = gaussian(&mut rng, dim);
        match structure {
            PairStructure::Separable => {
                a[0] = if label == 1 { 2.0 } else { -2.0 } + 0.1 * a[0];
            }
            PairStructure::Xor => {
                let sa = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let sb = if label == 1 { sa } else { -sa };
                a[0] = 2.0 * sa + 0.1 * a[0];
                b[0] = 2.0 * sb + 0.1 * b[0];
            }
            PairStructure::Cone => {
                for v in [&mut a, &mut b] {
                    for (o, d) in v.iter_mut().zip(&axis) {
                        *o = 10.0 * d + 0.01 * *o;
                    }
                }
            }
        }
        x.extend(a);
        x.extend(b);
        y.push(label);
    }
    DenseFeatures::new(2 * dim, x, y)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WicFixtureConfig {
    pub n_instances: usize,
    pub dim: usize,
    pub n_layers: u32,
    /// Share of instances whose targets both open their sentence.
    pub first_word_fraction: f64,
    /// Weight of the direction shared by every token at absolute position 1.
    pub position_bias: f64,
    /// Weight of the meaning vector at the first and the last layer.
    pub meaning_weight: (f64, f64),
    /// Instance ids are this prefix followed by a five-digit counter.
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for WicFixtureConfig {
    fn default() -> Self {
        Self {
            n_instances: 400,
            dim: 16,
            n_layers: 4,
            first_word_fraction: 0.25,
            position_bias: 1.5,
            meaning_weight: (0.3, 1.2),
            id_prefix: "syn".into(),
            seed: 0,
        }
    }
}

/// Word-in-context instances with a matching corpus and store.
#[derive(Debug, Clone)]
pub struct WicFixture {
    pub instances: Vec<WicInstance>,
    pub corpus: Corpus,
    pub manifest: EmbeddingManifest,
    pub store_bytes: Vec<u8>,
    cfg: WicFixtureConfig,
}

impl WicFixture {
    pub fn store(&self) -> EmbeddingStore {
        EmbeddingStore::from_bytes(self.store_bytes.clone()).expect("fixture store is well formed")
    }

    /// Store for the prompted copy of the corpus. Vectors follow the same
    /// recipe, so the position-1 direction lands on the first prompt token
    /// and no longer on sentence-initial targets.
    pub fn prompted(&self, template: &PromptTemplate) -> (Corpus, PromptedCorpusMap, Vec<u8>) {
        let (pc, map) = apply_prompt(&self.corpus, template);
        let rows = wic_rows(&self.instances, &pc, &self.cfg, map.offset);
        let mut manifest =
            EmbeddingManifest::new("synthetic-wic", self.cfg.n_layers, self.cfg.dim as u32, Variant::Plain, &pc);
        manifest.prompt_id = Some(template.id.clone());
        let bytes = encode_store(&manifest, rows).expect("consistent rows");
        (pc, map, bytes)
    }
}

pub fn wic_fixture(cfg: &WicFixtureConfig) -> WicFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let instances: Vec<WicInstance> = (0..cfg.n_instances)
        .map(|i| {
            let first = rng.random_bool(cfg.first_word_fraction);
            let sentence = |rng: &mut ChaCha8Rng| {
                let len = rng.random_range(4..=14usize);
                let idx = if first { 1 } else { rng.random_range(2..=len as u32) };
                let words: Vec<String> = (1..=len as u32)
                    .map(|k| if k == idx { format!("t{i}") } else { format!("c{}", rng.random_range(0..40)) })
                    .collect();
                (words, idx)
            };
            let (sent_a, idx_a) = sentence(&mut rng);
            let (sent_b, idx_b) = sentence(&mut rng);
            WicInstance {
                id: format!("{}{i:05}", cfg.id_prefix),
                word: format!("t{i}"),
                pos: POS_CYCLE[i % 2],
                sent_a,
                sent_b,
                idx_a,
                idx_b,
                gold: Some(i % 2 == 0),
            }
        })
        .collect();
    let corpus = wic_to_corpus(&instances).expect("valid");
    let rows = wic_rows(&instances, &corpus, cfg, 0);
    let manifest = EmbeddingManifest::new("synthetic-wic", cfg.n_layers, cfg.dim as u32, Variant::Plain, &corpus);
    let store_bytes = encode_store(&manifest, rows).expect("consistent rows");
    let manifest = EmbeddingStore::from_bytes(store_bytes.clone()).expect("valid").manifest().clone();
    WicFixture { instances, corpus, manifest, store_bytes, cfg: cfg.clone() }
}

/// Rows for `corpus`, whose sentences are the instance sentences shifted
/// right by `offset` tokens.
fn wic_rows(
    instances: &[WicInstance],
    corpus: &Corpus,
    cfg: &WicFixtureConfig,
    offset: u32,
) -> Vec<(OccurrenceKey, Vec<Vec<f32>>)> {
    // Everything below is drawn from streams that do not depend on the
    // offset, so original tokens get identical noise with and without a
    // prompt.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5749_4321);
    let anchor = unit_gaussian(&mut rng, cfg.dim);
    let mut targets = std::collections::HashMap::new();
    let mut original_lens = std::collections::HashMap::new();
    for inst in instances {
        original_lens.insert(inst.sentence_id_a(), inst.sent_a.len() as u32);
        original_lens.insert(inst.sentence_id_b(), inst.sent_b.len() as u32);
        let m_a = unit_gaussian(&mut rng, cfg.dim);
        let m_b = if inst.gold == Some(true) { m_a.clone() } else { unit_gaussian(&mut rng, cfg.dim) };
        targets.insert((inst.sentence_id_a(), inst.idx_a + offset), m_a);
        targets.insert((inst.sentence_id_b(), inst.idx_b + offset), m_b);
    }
    let weight = |l: u32| {
        let t = if cfg.n_layers > 1 { l as f64 / (cfg.n_layers - 1) as f64 } else { 1.0 };
        cfg.meaning_weight.0 + t * (cfg.meaning_weight.1 - cfg.meaning_weight.0)
    };
    let mut rows = Vec::new();
    for sent in corpus.sentences() {
        let base = cfg.seed ^ crate::embstore::sentence_hash(&sent.id);
        let original_len = original_lens[&sent.id];
        for p in 1..=sent.len() as u32 {
            // Noise keyed by original position; prompt tokens get their own keys.
            let key = if p > offset && p - offset <= original_len { (p - offset) as u64 } else { (1 << 40) + p as u64 };
            let mut noise_rng = ChaCha8Rng::seed_from_u64(base.wrapping_add(key.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let meaning = targets.get(&(sent.id.clone(), p));
            let layers = (0..cfg.n_layers)
                .map(|l| {
                    let mut v = vec![0.0; cfg.dim];
                    axpy(&mut v, 1.0 / (cfg.dim as f64).sqrt(), &gaussian(&mut noise_rng, cfg.dim));
                    if let Some(m) = meaning {
                        axpy(&mut v, weight(l), m);
                    }
                    if p == 1 {
                        axpy(&mut v, cfg.position_bias, &anchor);
                    }
                    v.into_iter().map(|x| x as f32).collect()
                })
                .collect();
            rows.push((OccurrenceKey::new(sent.id.clone(), p), layers));
        }
    }
    rows
}
