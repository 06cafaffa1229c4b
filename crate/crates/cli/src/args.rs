use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use sensevar::metrics::RandomConfig;
use sensevar::{Aggregation, Corpus, EmbeddingStore, Relation, SamplerConfig, WordIdentity};
use serde::{Serialize, Serializer};

/// One layer: a number, `first` or `last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSel {
    First,
    Last,
    N(u32),
}

impl LayerSel {
    pub fn resolve(self, store: &EmbeddingStore) -> Result<u32> {
        let l = match self {
            LayerSel::First => store.first_layer(),
            LayerSel::Last => store.last_layer(),
            LayerSel::N(n) => n,
        };
        store.check_layer(l)?;
        Ok(l)
    }
}

impl FromStr for LayerSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(LayerSel::First),
            "last" => Ok(LayerSel::Last),
            n => n.parse().map(LayerSel::N).map_err(|_| format!("bad layer {n:?} (number, first or last)")),
        }
    }
}

impl fmt::Display for LayerSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSel::First => f.write_str("first"),
            LayerSel::Last => f.write_str("last"),
            LayerSel::N(n) => write!(f, "{n}"),
        }
    }
}

/// `all`, or a comma list of layers and `a-b` ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerList {
    All,
    Items(Vec<(LayerSel, Option<LayerSel>)>),
}

impl LayerList {
    pub fn resolve(&self, store: &EmbeddingStore) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        match self {
            LayerList::All => out.extend(store.hidden_layers()),
            LayerList::Items(items) => {
                for &(a, b) in items {
                    let a = a.resolve(store)?;
                    let b = b.map(|b| b.resolve(store)).transpose()?.unwrap_or(a);
                    if b < a {
                        bail!("empty layer range {a}-{b}");
                    }
                    out.extend(a..=b);
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        out.retain(|l| seen.insert(*l));
        Ok(out)
    }
}

impl FromStr for LayerList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(LayerList::All);
        }
        s.split(',')
            .map(|part| match part.split_once('-') {
                Some((a, b)) => Ok((a.parse()?, Some(b.parse()?))),
                None => Ok((part.parse()?, None)),
            })
            .collect::<Result<_, String>>()
            .map(LayerList::Items)
    }
}

impl fmt::Display for LayerList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerList::All => f.write_str("all"),
            LayerList::Items(items) => {
                for (i, (a, b)) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    match b {
                        Some(b) => write!(f, "{a}-{b}")?,
                        None => write!(f, "{a}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

macro_rules! serialize_as_string {
    ($($t:ty),*) => {$(
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
    )*};
}
serialize_as_string!(LayerSel, LayerList);

/// A prompted store and the map that produced its corpus, given as
/// `STORE=MAP`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptedInput {
    pub store: PathBuf,
    pub map: PathBuf,
}

impl FromStr for PromptedInput {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (store, map) = s.split_once('=').ok_or_else(|| format!("expected STORE=MAP, got {s:?}"))?;
        Ok(PromptedInput { store: store.into(), map: map.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationArg {
    Ss,
    Ds,
    Both,
}

impl RelationArg {
    pub fn relations(self) -> Vec<Relation> {
        match self {
            RelationArg::Ss => vec![Relation::SameWordSameSense],
            RelationArg::Ds => vec![Relation::DiffWordSameSense],
            RelationArg::Both => vec![Relation::SameWordSameSense, Relation::DiffWordSameSense],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationArg {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentityArg {
    Surface,
    Lemma,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InputArgs {
    /// Sense-annotated corpus (JSONL).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Embedding store extracted from that corpus.
    #[arg(long)]
    pub store: PathBuf,
}

impl InputArgs {
    pub fn paths(&self) -> Vec<&PathBuf> {
        vec![&self.corpus, &self.store]
    }

    pub fn load(&self) -> Result<(Corpus, EmbeddingStore)> {
        let c = load_corpus(&self.corpus)?;
        let store = EmbeddingStore::open_aligned(&self.store, &c)
            .with_context(|| format!("opening store {}", self.store.display()))?;
        Ok((c, store))
    }
}

pub fn load_corpus(path: &PathBuf) -> Result<Corpus> {
    Corpus::load_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SamplerArgs {
    /// Pairs kept per sense group; 0 keeps every pair.
    #[arg(long, default_value_t = SamplerConfig::DEFAULT_CAP)]
    pub cap: u64,
    #[arg(long, value_enum, default_value_t = AggregationArg::Micro)]
    pub aggregation: AggregationArg,
    /// What makes two occurrences the same word.
    #[arg(long, value_enum, default_value_t = IdentityArg::Surface)]
    pub identity: IdentityArg,
}

impl SamplerArgs {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        match self.cap {
            0 => SamplerConfig::unlimited(seed),
            cap => SamplerConfig::capped(cap, seed),
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        match self.aggregation {
            AggregationArg::Micro => Aggregation::Micro,
            AggregationArg::Macro => Aggregation::Macro,
        }
    }

    pub fn identity(&self) -> WordIdentity {
        match self.identity {
            IdentityArg::Surface => WordIdentity::Surface,
            IdentityArg::Lemma => WordIdentity::Lemma,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RandomArgs {
    /// Occurrences drawn for the random-pair baseline.
    #[arg(long, default_value_t = 10_000)]
    pub n_random: usize,
    /// Draw baseline occurrences from sense-labeled tokens only.
    #[arg(long)]
    pub random_labeled_only: bool,
}

impl RandomArgs {
    pub fn config(&self, seed: u64) -> RandomConfig {
        RandomConfig { n_samples: self.n_random, seed, labeled_only: self.random_labeled_only }
    }
}
