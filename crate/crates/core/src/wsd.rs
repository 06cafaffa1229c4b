//! Distance-based word-in-context classification.
//!
//! Two occurrences of a target word get label 1 (same meaning) when the
//! cosine of their embeddings exceeds a threshold fitted per layer.

use std::io::{BufRead, BufReader, Read};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::PromptedCorpusMap;
use crate::corpus::{Corpus, CorpusError, OccurrenceKey, Pos, Sentence, Token};
use crate::embstore::EmbeddingStore;
use crate::metrics::{cosine, MetricsError};

pub const WIC_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WsdError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("instance {id}: target index {index} out of range for a {len}-token sentence")]
    IndexOutOfRange { id: String, index: u32, len: usize },
    #[error("gold file has {gold} rows but data file has {data}")]
    GoldCount { data: usize, gold: usize },
    #[error("no instances")]
    Empty,
    #[error("instance {id}: no gold label")]
    Unlabeled { id: String },
    #[error("instance {id}: {key} missing from the store{}", prompt.as_ref().map(|p| format!(" for prompt {p}")).unwrap_or_default())]
    MissingEmbedding { id: String, key: OccurrenceKey, prompt: Option<String> },
    #[error("prompted dump for {prompt_id} does not match its map: {msg}")]
    PromptMismatch { prompt_id: String, msg: String },
    #[error("instance {id}: {source}")]
    Cosine { id: String, source: MetricsError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WicInstance {
    pub id: String,
    pub word: String,
    pub pos: Pos,
    pub sent_a: Vec<String>,
    pub sent_b: Vec<String>,
    /// 1-based target indices.
    pub idx_a: u32,
    pub idx_b: u32,
    pub gold: Option<bool>,
}

impl WicInstance {
    pub fn sentence_id_a(&self) -> String {
        format!("{}:a", self.id)
    }

    pub fn sentence_id_b(&self) -> String {
        format!("{}:b", self.id)
    }

    pub fn key_a(&self) -> OccurrenceKey {
        OccurrenceKey::new(self.sentence_id_a(), self.idx_a)
    }

    pub fn key_b(&self) -> OccurrenceKey {
        OccurrenceKey::new(self.sentence_id_b(), self.idx_b)
    }

    /// Both targets open their sentence.
    pub fn is_first_word(&self) -> bool {
        self.idx_a == 1 && self.idx_b == 1
    }
}

/// Parses the tab-separated WiC format (`word, pos, "i-j", sentence_a,
/// sentence_b`, indices 0-based) with an optional parallel gold file of
/// `T`/`F` lines. Instance ids are `{prefix}{line:05}` counting from 0.
pub fn load_wic(data: impl Read, gold: Option<impl Read>, prefix: &str) -> Result<Vec<WicInstance>, WsdError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(data).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| WsdError::Parse { line: n + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(err(format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let (ia, ib) = cols[2].split_once('-').ok_or_else(|| err(format!("bad index field {:?}", cols[2])))?;
        let parse = |s: &str| s.trim().parse::<u32>().map_err(|_| err(format!("bad index {s:?}")));
        let pos = cols[1].parse::<Pos>().map_err(|e| err(e.to_string()))?;
        let inst = WicInstance {
            id: format!("{prefix}{:05}", out.len()),
            word: cols[0].to_string(),
            pos,
            sent_a: cols[3].split_whitespace().map(str::to_string).collect(),
            sent_b: cols[4].split_whitespace().map(str::to_string).collect(),
            idx_a: parse(ia)? + 1,
            idx_b: parse(ib)? + 1,
            gold: None,
        };
        for (idx, sent) in [(inst.idx_a, &inst.sent_a), (inst.idx_b, &inst.sent_b)] {
            if idx as usize > sent.len() {
                return Err(WsdError::IndexOutOfRange { id: inst.id.clone(), index: idx, len: sent.len() });
            }
        }
        out.push(inst);
    }
    if let Some(gold) = gold {
        let labels: Vec<String> = BufReader::new(gold)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
            .collect::<Result<_, _>>()?;
        if labels.len() != out.len() {
            return Err(WsdError::GoldCount { data: out.len(), gold: labels.len() });
        }
        for (n, (inst, l)) in out.iter_mut().zip(&labels).enumerate() {
            inst.gold = Some(match l.trim() {
                "T" => true,
                "F" => false,
                other => {
                    return Err(WsdError::Parse { line: n + 1, msg: format!("gold label {other:?} is not T or F") })
                }
            });
        }
    }
    Ok(out)
}

/// Inverse of [`load_wic`]: data file text and, when every instance is
/// labeled, gold file text.
pub fn write_wic(instances: &[WicInstance]) -> (String, Option<String>) {
    let mut data = String::new();
    for i in instances {
        data.push_str(&format!(
            "{}\t{}\t{}-{}\t{}\t{}\n",
            i.word,
            wic_pos_code(i.pos),
            i.idx_a - 1,
            i.idx_b - 1,
            i.sent_a.join(" "),
            i.sent_b.join(" ")
        ));
    }
    let gold = instances.iter().map(|i| i.gold.map(|g| if g { "T\n" } else { "F\n" })).collect::<Option<String>>();
    (data, gold)
}

fn wic_pos_code(p: Pos) -> &'static str {
    match p {
        Pos::Noun => "N",
        Pos::Verb => "V",
        Pos::Adj => "A",
        Pos::Adv => "R",
        Pos::Other => "OTHER",
    }
}

/// Two sentences per instance (`{id}:a`, `{id}:b`); only the targets carry
/// the instance PoS. No sense labels.
pub fn wic_to_corpus(instances: &[WicInstance]) -> Result<Corpus, WsdError> {
    let sent = |id: String, words: &[String], target: u32, pos: Pos| {
        let tokens = words
            .iter()
            .enumerate()
            .map(|(k, w)| Token::new(w.clone(), if k as u32 + 1 == target { pos } else { Pos::Other }))
            .collect();
        Sentence::new(id, tokens)
    };
    let sentences = instances
        .iter()
        .flat_map(|i| {
            [sent(i.sentence_id_a(), &i.sent_a, i.idx_a, i.pos), sent(i.sentence_id_b(), &i.sent_b, i.idx_b, i.pos)]
        })
        .collect();
    Ok(Corpus::from_sentences(sentences)?)
}

/// A store holding the instance sentences, possibly prompted.
#[derive(Debug, Clone, Copy)]
pub struct WicSource<'a> {
    pub store: &'a EmbeddingStore,
    pub map: Option<&'a PromptedCorpusMap>,
}

impl<'a> WicSource<'a> {
    pub fn plain(store: &'a EmbeddingStore) -> Self {
        Self { store, map: None }
    }

    pub fn prompted(store: &'a EmbeddingStore, map: &'a PromptedCorpusMap) -> Self {
        Self { store, map: Some(map) }
    }

    fn prompt_id(&self) -> Option<String> {
        self.map.map(|m| m.prompt_id.clone())
    }

    fn check(&self) -> Result<(), WsdError> {
        let (Some(map), Some(id)) = (self.map, &self.store.manifest().prompt_id) else {
            return Ok(());
        };
        if id != &map.prompt_id {
            return Err(WsdError::PromptMismatch {
                prompt_id: map.prompt_id.clone(),
                msg: format!("store was extracted with prompt {id}"),
            });
        }
        Ok(())
    }

    fn key(&self, k: OccurrenceKey) -> OccurrenceKey {
        match self.map {
            Some(m) => m.map_key(&k),
            None => k,
        }
    }
}

/// Cosine between the two targets of every instance at `layer`.
pub fn instance_cosines(instances: &[WicInstance], src: &WicSource, layer: u32) -> Result<Vec<f64>, WsdError> {
    src.check()?;
    src.store.check_layer(layer).map_err(MetricsError::from)?;
    instances
        .par_iter()
        .map(|inst| {
            let fetch = |k: OccurrenceKey| {
                let k = src.key(k);
                match src.store.row_of(&k) {
                    Some(r) => Ok(src.store.vector(r, layer).map_err(MetricsError::from)?.values),
                    None => Err(WsdError::MissingEmbedding { id: inst.id.clone(), key: k, prompt: src.prompt_id() }),
                }
            };
            let (a, b) = (fetch(inst.key_a())?, fetch(inst.key_b())?);
            cosine(&a, &b).map_err(|source| WsdError::Cosine { id: inst.id.clone(), source })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub layer: u32,
    pub threshold: f64,
    pub fit_split: String,
    pub fit_accuracy: f64,
}

impl ThresholdModel {
    pub fn classify(&self, cos: f64) -> bool {
        cos > self.threshold
    }
}

/// Threshold maximizing accuracy of `cos > T` over the given scores.
///
/// Candidates are -1, the midpoints between adjacent distinct sorted
/// cosines, and +1. Ties go to the smaller threshold. Returns `(T, accuracy)`.
pub fn fit_threshold_scores(cos: &[f64], gold: &[bool]) -> Result<(f64, f64), WsdError> {
    assert_eq!(cos.len(), gold.len(), "one label per score");
    if cos.is_empty() {
        return Err(WsdError::Empty);
    }
    let mut order: Vec<usize> = (0..cos.len()).collect();
    order.sort_by(|&a, &b| cos[a].total_cmp(&cos[b]));
    let n = cos.len();
    let positives = gold.iter().filter(|&&g| g).count();

    // Accuracy when the first k sorted items are predicted 0.
    let acc = |neg_below: usize, pos_below: usize| (neg_below + positives - pos_below) as f64 / n as f64;

    let (mut neg_below, mut pos_below) = (0, 0);
    let mut k = 0;
    // Items at or below -1 fall under the lower sentinel.
    while k < n && cos[order[k]] <= -1.0 {
        if gold[order[k]] {
            pos_below += 1
        } else {
            neg_below += 1
        }
        k += 1;
    }
    let mut best = (-1.0, acc(neg_below, pos_below));
    while k < n {
        let v = cos[order[k]];
        while k < n && cos[order[k]] == v {
            if gold[order[k]] {
                pos_below += 1
            } else {
                neg_below += 1
            }
            k += 1;
        }
        let t = if k < n {
            let next = cos[order[k]];
            let mid = v + (next - v) / 2.0;
            // Adjacent floats: the midpoint may round up onto `next`.
            if mid < next {
                mid
            } else {
                v
            }
        } else {
            1.0
        };
        let a = acc(neg_below, pos_below);
        if a > best.1 {
            best = (t, a);
        }
    }
    Ok(best)
}

fn gold_labels(instances: &[WicInstance]) -> Result<Vec<bool>, WsdError> {
    instances.iter().map(|i| i.gold.ok_or_else(|| WsdError::Unlabeled { id: i.id.clone() })).collect()
}

pub fn fit_threshold(
    instances: &[WicInstance],
    src: &WicSource,
    layer: u32,
    fit_split: &str,
) -> Result<ThresholdModel, WsdError> {
    if instances.is_empty() {
        return Err(WsdError::Empty);
    }
    let gold = gold_labels(instances)?;
    let cos = instance_cosines(instances, src, layer)?;
    let (threshold, fit_accuracy) = fit_threshold_scores(&cos, &gold)?;
    Ok(ThresholdModel { layer, threshold, fit_split: fit_split.to_string(), fit_accuracy })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceResult {
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

impl SliceResult {
    fn new(n: usize, correct: usize) -> Self {
        Self { n, correct, accuracy: (n > 0).then(|| correct as f64 / n as f64) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    pub layer: u32,
    pub threshold: f64,
    pub fit_accuracy: f64,
    pub accuracy: f64,
    /// Instances with both targets at index 1.
    pub first_word: SliceResult,
    pub others: SliceResult,
}

/// Scores `instances` whose cosines are `cos` with a fitted model.
pub fn evaluate_scores(
    instances: &[WicInstance],
    cos: &[f64],
    model: &ThresholdModel,
) -> Result<LayerResult, WsdError> {
    let gold = gold_labels(instances)?;
    if gold.is_empty() {
        return Err(WsdError::Empty);
    }
    let (mut first, mut first_ok, mut other, mut other_ok) = (0, 0, 0, 0);
    for ((inst, &c), &g) in instances.iter().zip(cos).zip(&gold) {
        let ok = usize::from(model.classify(c) == g);
        if inst.is_first_word() {
            first += 1;
            first_ok += ok;
        } else {
            other += 1;
            other_ok += ok;
        }
    }
    Ok(LayerResult {
        layer: model.layer,
        threshold: model.threshold,
        fit_accuracy: model.fit_accuracy,
        accuracy: (first_ok + other_ok) as f64 / gold.len() as f64,
        first_word: SliceResult::new(first, first_ok),
        others: SliceResult::new(other, other_ok),
    })
}

pub fn evaluate(instances: &[WicInstance], model: &ThresholdModel, src: &WicSource) -> Result<LayerResult, WsdError> {
    let cos = instance_cosines(instances, src, model.layer)?;
    evaluate_scores(instances, &cos, model)
}

/// Stores for one condition: where thresholds are fitted and where they
/// are applied.
#[derive(Debug, Clone, Copy)]
pub struct WicCondition<'a> {
    pub fit: WicSource<'a>,
    pub eval: WicSource<'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub layers: Vec<LayerResult>,
    /// Per layer accuracy change against the original condition.
    pub delta_accuracy: Option<Vec<f64>>,
    pub delta_first_word: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WicReport {
    pub schema_version: u32,
    pub fit_split: String,
    pub eval_split: String,
    pub layers: Vec<u32>,
    pub conditions: Vec<ConditionReport>,
}

pub struct WicSplits<'a> {
    pub fit: &'a [WicInstance],
    pub fit_name: &'a str,
    pub eval: &'a [WicInstance],
    pub eval_name: &'a str,
}

/// Fits one threshold per layer on the fit split and scores the eval split.
pub fn evaluate_condition(
    splits: &WicSplits,
    cond: &WicCondition,
    layers: &[u32],
    name: &str,
) -> Result<ConditionReport, WsdError> {
    let layers = layers
        .iter()
        .map(|&l| {
            let model = fit_threshold(splits.fit, &cond.fit, l, splits.fit_name)?;
            evaluate(splits.eval, &model, &cond.eval)
        })
        .collect::<Result<_, WsdError>>()?;
    Ok(ConditionReport { condition: name.to_string(), layers, delta_accuracy: None, delta_first_word: None })
}

/// Fills per-layer deltas of every condition after the first against the
/// first, which is taken as the original.
pub fn with_deltas(mut conditions: Vec<ConditionReport>) -> Vec<ConditionReport> {
    let Some((base, rest)) = conditions.split_first_mut() else {
        return conditions;
    };
    for r in rest {
        r.delta_accuracy = Some(r.layers.iter().zip(&base.layers).map(|(p, o)| p.accuracy - o.accuracy).collect());
        r.delta_first_word = Some(
            r.layers
                .iter()
                .zip(&base.layers)
                .map(|(p, o)| Some(p.first_word.accuracy? - o.first_word.accuracy?))
                .collect(),
        );
    }
    conditions
}

/// Original condition plus one refitted condition per prompt, each with
/// per-layer deltas against the original.
pub fn evaluate_with_prompt(
    splits: &WicSplits,
    original: &WicCondition,
    prompted: &[(&str, WicCondition)],
    layers: &[u32],
) -> Result<WicReport, WsdError> {
    let mut conditions = vec![evaluate_condition(splits, original, layers, "original")?];
    for (name, cond) in prompted {
        conditions.push(evaluate_condition(splits, cond, layers, name)?);
    }
    Ok(WicReport {
        schema_version: WIC_REPORT_SCHEMA_VERSION,
        fit_split: splits.fit_name.to_string(),
        eval_split: splits.eval_name.to_string(),
        layers: layers.to_vec(),
        conditions: with_deltas(conditions),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DATA: &str = "carry\tV\t2-1\tYou must carry your camping gear .\tSound carries well over water .\n\
                        go\tV\t0-1\tGo back to your parents .\tWe'll go to the park .\n";

    #[test]
    fn parses_official_lines() {
        let v = load_wic(DATA.as_bytes(), Some("F\nT\n".as_bytes()), "dev").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].id, "dev00000");
        assert_eq!((v[0].idx_a, v[0].idx_b), (3, 2));
        assert_eq!(v[0].sent_a[2], "carry");
        assert_eq!(v[0].gold, Some(false));
        assert_eq!(v[1].pos, Pos::Verb);
        assert!(!v[1].is_first_word());
    }

    #[test]
    fn gold_count_mismatch() {
        assert!(matches!(
            load_wic(DATA.as_bytes(), Some("T\n".as_bytes()), "x"),
            Err(WsdError::GoldCount { data: 2, gold: 1 })
        ));
    }

    #[test]
    fn out_of_range_names_instance() {
        let bad = "go\tV\t9-0\tGo back .\tGo .\n";
        match load_wic(bad.as_bytes(), None::<&[u8]>, "t") {
            Err(WsdError::IndexOutOfRange { id, index: 10, len: 3 }) => assert_eq!(id, "t00000"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn separable_pair_midpoint() {
        let (t, a) = fit_threshold_scores(&[0.2, 0.8], &[false, true]).unwrap();
        assert_eq!((t, a), (0.5, 1.0));
    }

    #[test]
    fn degenerate_labels() {
        assert_eq!(fit_threshold_scores(&[0.1, 0.4], &[true, true]).unwrap(), (-1.0, 1.0));
        assert_eq!(fit_threshold_scores(&[0.1, 0.4], &[false, false]).unwrap(), (1.0, 1.0));
        assert!(matches!(fit_threshold_scores(&[], &[]), Err(WsdError::Empty)));
    }

    #[test]
    fn corpus_from_instances() {
        let v = load_wic(DATA.as_bytes(), None::<&[u8]>, "d").unwrap();
        let c = wic_to_corpus(&v).unwrap();
        assert_eq!(c.sentences().len(), 4);
        let t = c.token(c.find(&v[0].key_a()).unwrap());
        assert_eq!((t.surface.as_str(), t.pos), ("carry", Pos::Verb));
    }
}
