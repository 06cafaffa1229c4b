//! Position bias: same-position similarity, PoS-by-position composition and
//! prompt-shift comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buckets::Buckets;
use crate::corpus::{Corpus, CorpusError, OccId, OccurrenceKey, Pos, Sentence, Token, WordIdentity};
use crate::embstore::EmbeddingStore;
use crate::metrics::{
    self, enumerate_pairs, Aggregation, Facet, FacetSpec, MetricsError, RandomConfig, Relation, SamplerConfig,
    SimReport,
};

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("prompt {0:?} has neither prefix nor suffix tokens")]
    EmptyPrompt(String),
    #[error("unknown prompt {0:?} (built-ins: P1, P2, P3)")]
    UnknownPrompt(String),
    #[error("prompt map mismatch: {0}")]
    MapMismatch(String),
    #[error("bad prompt map file: {0}")]
    MapFile(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Word-level tokens placed around every sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub prefix_tokens: Vec<String>,
    pub suffix_tokens: Vec<String>,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        prefix_tokens: Vec<String>,
        suffix_tokens: Vec<String>,
    ) -> Result<Self, BiasError> {
        let id = id.into();
        if prefix_tokens.is_empty() && suffix_tokens.is_empty() {
            return Err(BiasError::EmptyPrompt(id));
        }
        Ok(Self { id, prefix_tokens, suffix_tokens })
    }

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    /// Quote wrap: `` [X] ''
    pub fn p1() -> Self {
        Self { id: "P1".into(), prefix_tokens: Self::words(&["``"]), suffix_tokens: Self::words(&["''"]) }
    }

    /// She said : [X]
    pub fn p2() -> Self {
        Self { id: "P2".into(), prefix_tokens: Self::words(&["She", "said", ":"]), suffix_tokens: Vec::new() }
    }

    /// Document : [X]
    pub fn p3() -> Self {
        Self { id: "P3".into(), prefix_tokens: Self::words(&["Document", ":"]), suffix_tokens: Vec::new() }
    }

    pub fn builtins() -> [Self; 3] {
        [Self::p1(), Self::p2(), Self::p3()]
    }

    /// No-op template. Only useful as a control condition.
    pub fn identity() -> Self {
        Self { id: "identity".into(), prefix_tokens: Vec::new(), suffix_tokens: Vec::new() }
    }

    pub fn offset(&self) -> u32 {
        self.prefix_tokens.len() as u32
    }
}

impl FromStr for PromptTemplate {
    type Err = BiasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(Self::p1()),
            "P2" => Ok(Self::p2()),
            "P3" => Ok(Self::p3()),
            "IDENTITY" => Ok(Self::identity()),
            _ => Err(BiasError::UnknownPrompt(s.to_string())),
        }
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = self.prefix_tokens.iter().map(String::as_str).collect();
        parts.push("[X]");
        parts.extend(self.suffix_tokens.iter().map(String::as_str));
        write!(f, "{}: {}", self.id, parts.join(" "))
    }
}

/// Alignment between a corpus and its prompted copy. Original 1-based index
/// `i` maps to `i + offset` in the same sentence id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptedCorpusMap {
    pub prompt_id: String,
    pub offset: u32,
    pub suffix_len: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompted_fingerprint: Option<String>,
}

impl PromptedCorpusMap {
    pub fn map_index(&self, i: u32) -> u32 {
        i + self.offset
    }

    pub fn map_key(&self, key: &OccurrenceKey) -> OccurrenceKey {
        OccurrenceKey::new(key.sentence_id.clone(), self.map_index(key.token_index))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("map serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, BiasError> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Wraps every sentence with the template's tokens. Prompt tokens are
/// unlabeled `OTHER` tokens; original tokens keep all attributes.
pub fn apply_prompt(c: &Corpus, p: &PromptTemplate) -> (Corpus, PromptedCorpusMap) {
    let filler = |w: &String| Token::new(w.clone(), Pos::Other);
    let sentences: Vec<Sentence> = c
        .sentences()
        .iter()
        .map(|s| {
            let tokens = p
                .prefix_tokens
                .iter()
                .map(filler)
                .chain(s.tokens.iter().cloned())
                .chain(p.suffix_tokens.iter().map(filler))
                .collect();
            Sentence::new(s.id.clone(), tokens)
        })
        .collect();
    let prompted = Corpus::from_sentences(sentences).expect("prompting preserves validity");
    let map = PromptedCorpusMap {
        prompt_id: p.id.clone(),
        offset: p.offset(),
        suffix_len: p.suffix_tokens.len() as u32,
        original_fingerprint: Some(c.fingerprint().to_string()),
        prompted_fingerprint: Some(prompted.fingerprint().to_string()),
    };
    (prompted, map)
}

/// Same-word same-sense similarity for pairs at equal position, bucketed by
/// that position.
pub fn position_similarity(
    store: &EmbeddingStore,
    c: &Corpus,
    buckets: &Buckets,
    sampler: SamplerConfig,
    layer: u32,
    aggregation: Aggregation,
) -> Result<SimReport, MetricsError> {
    let facet = FacetSpec::with_buckets(Facet::PositionIndex, buckets.clone());
    metrics::breakdown(
        store,
        c,
        &facet,
        Relation::SameWordSameSense,
        sampler,
        WordIdentity::Surface,
        layer,
        aggregation,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCondition {
    pub prompt_id: String,
    pub offset: u32,
    pub sim_rand: f64,
    /// Per bucket Δ under the prompt.
    pub delta: Vec<Option<f64>>,
    /// Per bucket Δ(prompted) − Δ(original).
    pub change: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptShiftReport {
    pub schema_version: u32,
    pub layer: u32,
    /// Labels keyed by original position index.
    pub buckets: Vec<String>,
    pub pair_counts: Vec<u64>,
    pub sim_rand_original: f64,
    pub delta_original: Vec<Option<f64>>,
    pub conditions: Vec<PromptCondition>,
    /// Mean change over the supplied prompts.
    pub average_change: Vec<Option<f64>>,
    pub average_over: String,
}

impl PromptShiftReport {
    pub fn bucket_index(&self, label: &str) -> Option<usize> {
        self.buckets.iter().position(|b| b == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftConfig {
    pub sampler: SamplerConfig,
    pub random: RandomConfig,
    pub aggregation: Aggregation,
    pub layer: u32,
}

fn check_map(
    c: &Corpus,
    store_orig: &EmbeddingStore,
    store_p: &EmbeddingStore,
    map: &PromptedCorpusMap,
) -> Result<(), BiasError> {
    let mismatch = |m: String| Err(BiasError::MapMismatch(m));
    if let Some(fp) = &map.original_fingerprint {
        if fp != c.fingerprint() {
            return mismatch(format!("map {} was built from a different corpus", map.prompt_id));
        }
    }
    store_orig.check_alignment(c).map_err(|e| BiasError::MapMismatch(e.to_string()))?;
    let stored = &store_p.manifest().corpus_fingerprint;
    match &map.prompted_fingerprint {
        Some(fp) if fp != stored => {
            return mismatch(format!("store for {} was extracted from a different prompted corpus", map.prompt_id))
        }
        None if map.offset > 0 && stored == c.fingerprint() => {
            return mismatch(format!("store for {} holds the unprompted corpus", map.prompt_id))
        }
        _ => {}
    }
    if let Some(id) = &store_p.manifest().prompt_id {
        if id != &map.prompt_id {
            return mismatch(format!("store carries prompt {id}, map says {}", map.prompt_id));
        }
    }
    Ok(())
}

/// Compares same-position similarity before and after prompting. Pairs are
/// enumerated on the original corpus and looked up in each prompted store
/// through its map, so every bucket refers to original positions.
pub fn prompt_shift_report(
    store_orig: &EmbeddingStore,
    prompted: &[(&EmbeddingStore, &PromptedCorpusMap)],
    c: &Corpus,
    buckets: &Buckets,
    cfg: &ShiftConfig,
) -> Result<PromptShiftReport, BiasError> {
    for (s, m) in prompted {
        check_map(c, store_orig, s, m)?;
    }
    let facet = FacetSpec::with_buckets(Facet::PositionIndex, buckets.clone());
    let pairs = enumerate_pairs(c, Relation::SameWordSameSense, Some(&facet), cfg.sampler, WordIdentity::Surface)?;
    let labeled_only = cfg.random.labeled_only || store_orig.variant() == crate::embstore::Variant::Masked;
    let population: Vec<OccId> = if labeled_only { c.labeled().to_vec() } else { c.all_occurrences().collect() };

    let measure = |store: &EmbeddingStore, key_of: &dyn Fn(OccId) -> OccurrenceKey| -> Result<_, BiasError> {
        let mut r = metrics::sim_aggregate_mapped(store, c, &pairs, cfg.layer, cfg.aggregation, key_of)?;
        let base = metrics::sim_rand_over(store, &population, key_of, &cfg.random, labeled_only, cfg.layer)?;
        r.attach_baseline(base.value);
        Ok((r, base.value))
    };

    let (orig, rand_orig) = measure(store_orig, &|o| c.key(o))?;
    let delta_original: Vec<Option<f64>> = orig.buckets.iter().map(|b| b.delta_vs_random).collect();

    let mut conditions = Vec::with_capacity(prompted.len());
    for (store, map) in prompted {
        let (r, base) = measure(store, &|o| map.map_key(&c.key(o)))?;
        let delta: Vec<Option<f64>> = r.buckets.iter().map(|b| b.delta_vs_random).collect();
        let change = delta.iter().zip(&delta_original).map(|(p, o)| Some(p.as_ref()? - o.as_ref()?)).collect();
        conditions.push(PromptCondition {
            prompt_id: map.prompt_id.clone(),
            offset: map.offset,
            sim_rand: base,
            delta,
            change,
        });
    }

    let average_change = (0..orig.buckets.len())
        .map(|b| {
            let vals: Vec<f64> = conditions.iter().filter_map(|c| c.change[b]).collect();
            (!vals.is_empty() && vals.len() == conditions.len()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();

    Ok(PromptShiftReport {
        schema_version: metrics::REPORT_SCHEMA_VERSION,
        layer: cfg.layer,
        buckets: orig.buckets.iter().map(|b| b.bucket.clone()).collect(),
        pair_counts: orig.buckets.iter().map(|b| b.pair_count_exact).collect(),
        sim_rand_original: rand_orig,
        delta_original,
        conditions,
        average_change,
        average_over: "prompts".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub pos: Pos,
    /// Share of all labeled tokens carrying this PoS.
    pub share: f64,
    /// Share of this PoS's labeled tokens found at each requested position.
    pub at_position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionTable {
    pub positions: Vec<u32>,
    pub labeled_tokens: usize,
    pub rows: Vec<CompositionRow>,
}

/// PoS-by-position distribution over labeled tokens.
pub fn pos_position_composition(c: &Corpus, positions: &[u32]) -> CompositionTable {
    let mut counts: BTreeMap<Pos, (usize, BTreeMap<u32, usize>)> = BTreeMap::new();
    for &o in c.labeled() {
        let e = counts.entry(c.token(o).pos).or_default();
        e.0 += 1;
        *e.1.entry(o.index()).or_default() += 1;
    }
    let total = c.labeled().len();
    let rows = Pos::LABELED
        .iter()
        .map(|&pos| {
            let (n, at) = counts.get(&pos).cloned().unwrap_or_default();
            let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
            CompositionRow {
                pos,
                share: if total == 0 { 0.0 } else { n as f64 / total as f64 },
                at_position: positions.iter().map(|p| frac(at.get(p).copied().unwrap_or(0))).collect(),
            }
        })
        .collect();
    CompositionTable { positions: positions.to_vec(), labeled_tokens: total, rows }
}
