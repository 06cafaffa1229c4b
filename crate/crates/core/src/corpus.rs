//! Sense-annotated corpora: loading, validation, indexing and statistics.
//!
//! One sentence per JSONL line:
//!
//! ```text
//! {"id": "s1", "tokens": [{"t": "levels", "lemma": "level", "pos": "NOUN", "sense": "bn:00041239n"}, ...]}
//! ```
//!
//! Surface forms and lemmas are NFC-normalized on load. Token positions are
//! 1-based over the word-level tokenization in the file.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::buckets::Buckets;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate sentence id {id:?}")]
    DuplicateSentence { line: usize, id: String },
    #[error("line {line}: sentence {id:?} token index gap, expected {expected} found {found}")]
    IndexGap { line: usize, id: String, expected: u32, found: u32 },
    #[error("line {line}: sentence {id:?} token {index} has an empty surface form")]
    EmptySurface { line: usize, id: String, index: u32 },
    #[error("line {line}: sentence {id:?} token {index} carries more than one sense label")]
    MultiLabel { line: usize, id: String, index: u32 },
    #[error("line {line}: sentence {id:?} token {index} has a sense but pos OTHER")]
    SenseWithoutPos { line: usize, id: String, index: u32 },
    #[error("sense {sense} appears with pos {first} and {second}")]
    InconsistentSensePos { sense: SenseId, first: Pos, second: Pos },
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
    Other,
}

impl Pos {
    /// The four content-word classes that can carry a sense label.
    pub const LABELED: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv];

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
            Pos::Other => "OTHER",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Pos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NOUN" | "N" => Ok(Pos::Noun),
            "VERB" | "V" => Ok(Pos::Verb),
            "ADJ" | "A" => Ok(Pos::Adj),
            "ADV" | "R" => Ok(Pos::Adv),
            "OTHER" => Ok(Pos::Other),
            _ => Err(format!("unknown pos {s:?}")),
        }
    }
}

/// A sense-inventory identifier such as `bn:00041239n`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SenseId(String);

impl SenseId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for SenseId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SenseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    #[serde(rename = "t")]
    pub surface: String,
    pub lemma: Option<String>,
    pub pos: Pos,
    pub sense: Option<SenseId>,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: Pos) -> Self {
        Self { surface: surface.into(), lemma: None, pos, sense: None }
    }

    pub fn with_lemma(mut self, lemma: impl Into<String>) -> Self {
        self.lemma = Some(lemma.into());
        self
    }

    pub fn with_sense(mut self, sense: impl Into<String>) -> Self {
        self.sense = Some(SenseId::new(sense));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Self {
        Self { id: id.into(), tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Position of a token inside a loaded corpus. Ordering is sentence order,
/// then token order, which is the canonical occurrence order everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OccId {
    pub sentence: u32,
    pub token: u32,
}

impl OccId {
    pub fn new(sentence: u32, token: u32) -> Self {
        Self { sentence, token }
    }

    /// 1-based position within the sentence.
    pub fn index(self) -> u32 {
        self.token + 1
    }
}

/// Corpus-independent address of a token: sentence id plus 1-based index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OccurrenceKey {
    pub sentence_id: String,
    pub token_index: u32,
}

impl OccurrenceKey {
    pub fn new(sentence_id: impl Into<String>, token_index: u32) -> Self {
        Self { sentence_id: sentence_id.into(), token_index }
    }
}

impl fmt::Display for OccurrenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sentence_id, self.token_index)
    }
}

/// Which token attribute decides whether two occurrences are "the same word".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordIdentity {
    /// Exact NFC surface form, case-sensitive.
    #[default]
    Surface,
    /// Lemma when present, surface form otherwise.
    Lemma,
}

#[derive(Deserialize)]
struct RawSentence {
    id: String,
    tokens: Vec<RawToken>,
}

#[derive(Deserialize)]
struct RawToken {
    t: String,
    #[serde(default)]
    lemma: Option<String>,
    pos: Pos,
    #[serde(default)]
    sense: Option<RawSense>,
    /// Optional explicit 1-based index; checked against list order.
    #[serde(default)]
    i: Option<u32>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSense {
    One(String),
    Many(Vec<String>),
}

/// An immutable, fully indexed sense-annotated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    sentence_lookup: HashMap<String, u32>,
    sense_inventory: BTreeMap<SenseId, Pos>,
    word_index: BTreeMap<String, Vec<OccId>>,
    lemma_index: BTreeMap<String, Vec<OccId>>,
    sense_index: BTreeMap<SenseId, Vec<OccId>>,
    labeled: Vec<OccId>,
    total_tokens: usize,
    fingerprint: String,
}

impl Corpus {
    /// Validates and indexes `sentences`. Error line numbers refer to the
    /// 1-based sentence position.
    pub fn from_sentences(sentences: Vec<Sentence>) -> Result<Self, CorpusError> {
        let mut sentences = sentences;
        for s in &mut sentences {
            for tok in &mut s.tokens {
                tok.surface = tok.surface.nfc().collect();
                if let Some(l) = &mut tok.lemma {
                    *l = l.nfc().collect();
                }
            }
        }

        let mut sentence_lookup = HashMap::with_capacity(sentences.len());
        let mut sense_inventory: BTreeMap<SenseId, Pos> = BTreeMap::new();
        let mut word_index: BTreeMap<String, Vec<OccId>> = BTreeMap::new();
        let mut lemma_index: BTreeMap<String, Vec<OccId>> = BTreeMap::new();
        let mut sense_index: BTreeMap<SenseId, Vec<OccId>> = BTreeMap::new();
        let mut labeled = Vec::new();
        let mut total_tokens = 0;

        for (si, s) in sentences.iter().enumerate() {
            let line = si + 1;
            if sentence_lookup.insert(s.id.clone(), si as u32).is_some() {
                return Err(CorpusError::DuplicateSentence { line, id: s.id.clone() });
            }
            for (ti, tok) in s.tokens.iter().enumerate() {
                let occ = OccId::new(si as u32, ti as u32);
                let index = occ.index();
                if tok.surface.is_empty() {
                    return Err(CorpusError::EmptySurface { line, id: s.id.clone(), index });
                }
                word_index.entry(tok.surface.clone()).or_default().push(occ);
                if let Some(l) = &tok.lemma {
                    lemma_index.entry(l.clone()).or_default().push(occ);
                }
                if let Some(sense) = &tok.sense {
                    if tok.pos == Pos::Other {
                        return Err(CorpusError::SenseWithoutPos { line, id: s.id.clone(), index });
                    }
                    match sense_inventory.get(sense) {
                        Some(&p) if p != tok.pos => {
                            return Err(CorpusError::InconsistentSensePos {
                                sense: sense.clone(),
                                first: p,
                                second: tok.pos,
                            })
                        }
                        Some(_) => {}
                        None => {
                            sense_inventory.insert(sense.clone(), tok.pos);
                        }
                    }
                    sense_index.entry(sense.clone()).or_default().push(occ);
                    labeled.push(occ);
                }
                total_tokens += 1;
            }
        }

        let fingerprint = fingerprint_of(&sentences);
        Ok(Self {
            sentences,
            sentence_lookup,
            sense_inventory,
            word_index,
            lemma_index,
            sense_index,
            labeled,
            total_tokens,
            fingerprint,
        })
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path)?;
        Self::parse_jsonl(file)
    }

    pub fn parse_jsonl(reader: impl Read) -> Result<Self, CorpusError> {
        let mut sentences = Vec::new();
        let mut seen = HashMap::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = n + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawSentence = serde_json::from_str(&line)
                .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
            if seen.insert(raw.id.clone(), line_no).is_some() {
                return Err(CorpusError::DuplicateSentence { line: line_no, id: raw.id });
            }
            let mut tokens = Vec::with_capacity(raw.tokens.len());
            for (ti, rt) in raw.tokens.into_iter().enumerate() {
                let expected = ti as u32 + 1;
                if let Some(found) = rt.i {
                    if found != expected {
                        return Err(CorpusError::IndexGap { line: line_no, id: raw.id, expected, found });
                    }
                }
                let sense = match rt.sense {
                    None => None,
                    Some(RawSense::One(s)) => Some(SenseId(s)),
                    Some(RawSense::Many(v)) if v.len() == 1 => Some(SenseId(v.into_iter().next().unwrap())),
                    Some(RawSense::Many(v)) if v.is_empty() => None,
                    Some(RawSense::Many(_)) => {
                        return Err(CorpusError::MultiLabel { line: line_no, id: raw.id, index: expected })
                    }
                };
                tokens.push(Token { surface: rt.t, lemma: rt.lemma, pos: rt.pos, sense });
            }
            sentences.push((line_no, Sentence { id: raw.id, tokens }));
        }
        // Re-map sentence positions onto file line numbers for validation errors.
        let lines: Vec<usize> = sentences.iter().map(|(l, _)| *l).collect();
        Self::from_sentences(sentences.into_iter().map(|(_, s)| s).collect()).map_err(|e| relocate(e, &lines))
    }

    /// Canonical JSONL serialization; reparses to an identical corpus.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(s).expect("sentence serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    /// Hex SHA-256 of the canonical JSONL form.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, occ: OccId) -> &Sentence {
        &self.sentences[occ.sentence as usize]
    }

    pub fn token(&self, occ: OccId) -> &Token {
        &self.sentences[occ.sentence as usize].tokens[occ.token as usize]
    }

    pub fn sentence_len(&self, occ: OccId) -> u32 {
        self.sentence(occ).tokens.len() as u32
    }

    pub fn key(&self, occ: OccId) -> OccurrenceKey {
        OccurrenceKey::new(self.sentence(occ).id.clone(), occ.index())
    }

    pub fn find(&self, key: &OccurrenceKey) -> Option<OccId> {
        let &si = self.sentence_lookup.get(&key.sentence_id)?;
        let len = self.sentences[si as usize].tokens.len() as u32;
        (key.token_index >= 1 && key.token_index <= len).then(|| OccId::new(si, key.token_index - 1))
    }

    pub fn sentence_position(&self, id: &str) -> Option<u32> {
        self.sentence_lookup.get(id).copied()
    }

    /// All occurrences in canonical order, labeled or not.
    pub fn all_occurrences(&self) -> impl Iterator<Item = OccId> + '_ {
        self.sentences
            .iter()
            .enumerate()
            .flat_map(|(si, s)| (0..s.tokens.len() as u32).map(move |ti| OccId::new(si as u32, ti)))
    }

    /// Sense-labeled occurrences in canonical order.
    pub fn labeled(&self) -> &[OccId] {
        &self.labeled
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    pub fn sense_inventory(&self) -> &BTreeMap<SenseId, Pos> {
        &self.sense_inventory
    }

    pub fn sense_index(&self) -> &BTreeMap<SenseId, Vec<OccId>> {
        &self.sense_index
    }

    pub fn word_index(&self) -> &BTreeMap<String, Vec<OccId>> {
        &self.word_index
    }

    pub fn lemma_index(&self) -> &BTreeMap<String, Vec<OccId>> {
        &self.lemma_index
    }

    pub fn word_of(&self, occ: OccId, identity: WordIdentity) -> &str {
        let tok = self.token(occ);
        match identity {
            WordIdentity::Surface => &tok.surface,
            WordIdentity::Lemma => tok.lemma.as_deref().unwrap_or(&tok.surface),
        }
    }

    /// Number of distinct senses each word carries across labeled tokens.
    pub fn senses_per_word(&self, identity: WordIdentity) -> BTreeMap<&str, usize> {
        let mut senses: BTreeMap<&str, BTreeSet<&SenseId>> = BTreeMap::new();
        for &occ in &self.labeled {
            let sense = self.token(occ).sense.as_ref().expect("labeled");
            senses.entry(self.word_of(occ, identity)).or_default().insert(sense);
        }
        senses.into_iter().map(|(w, s)| (w, s.len())).collect()
    }

    pub fn stats(&self) -> CorpusStats {
        corpus_stats(self)
    }

    /// Labeled occurrences matching every set field of `filter`, in
    /// canonical order.
    pub fn occurrences(&self, filter: &OccurrenceFilter) -> Result<Vec<OccId>, CorpusError> {
        if let Some(b) = filter.position_bucket {
            if b >= filter.position_buckets.len() {
                return Err(CorpusError::InvalidFilter(format!("position bucket {b} out of range")));
            }
        }
        if let Some(b) = filter.length_bucket {
            if b >= filter.length_buckets.len() {
                return Err(CorpusError::InvalidFilter(format!("length bucket {b} out of range")));
            }
        }
        let base: &[OccId] = match &filter.sense {
            Some(s) => self.sense_index.get(s).map(Vec::as_slice).unwrap_or(&[]),
            None => &self.labeled,
        };
        Ok(base.iter().copied().filter(|&o| filter.matches(self, o)).collect())
    }
}

fn relocate(e: CorpusError, lines: &[usize]) -> CorpusError {
    let fix = |l: usize| lines.get(l.wrapping_sub(1)).copied().unwrap_or(l);
    match e {
        CorpusError::DuplicateSentence { line, id } => CorpusError::DuplicateSentence { line: fix(line), id },
        CorpusError::EmptySurface { line, id, index } => CorpusError::EmptySurface { line: fix(line), id, index },
        CorpusError::SenseWithoutPos { line, id, index } => CorpusError::SenseWithoutPos { line: fix(line), id, index },
        other => other,
    }
}

fn fingerprint_of(sentences: &[Sentence]) -> String {
    let mut h = Sha256::new();
    for s in sentences {
        h.update(serde_json::to_vec(s).expect("sentence serializes"));
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Filter over labeled occurrences. Unset fields match everything.
#[derive(Debug, Clone)]
pub struct OccurrenceFilter {
    pub sense: Option<SenseId>,
    pub word: Option<String>,
    pub lemma: Option<String>,
    pub pos: Option<Pos>,
    pub position_bucket: Option<usize>,
    pub length_bucket: Option<usize>,
    pub position_buckets: Buckets,
    pub length_buckets: Buckets,
}

impl Default for OccurrenceFilter {
    fn default() -> Self {
        Self {
            sense: None,
            word: None,
            lemma: None,
            pos: None,
            position_bucket: None,
            length_bucket: None,
            position_buckets: Buckets::positions(),
            length_buckets: Buckets::sentence_lengths(),
        }
    }
}

impl OccurrenceFilter {
    fn matches(&self, c: &Corpus, occ: OccId) -> bool {
        let tok = c.token(occ);
        if let Some(s) = &self.sense {
            if tok.sense.as_ref() != Some(s) {
                return false;
            }
        }
        if let Some(w) = &self.word {
            if &tok.surface != w {
                return false;
            }
        }
        if let Some(l) = &self.lemma {
            if tok.lemma.as_ref() != Some(l) {
                return false;
            }
        }
        if let Some(p) = self.pos {
            if tok.pos != p {
                return false;
            }
        }
        if let Some(b) = self.position_bucket {
            if self.position_buckets.bucket_of(occ.index()) != Some(b) {
                return false;
            }
        }
        if let Some(b) = self.length_bucket {
            if self.length_buckets.bucket_of(c.sentence_len(occ)) != Some(b) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_tokens: usize,
    pub labeled_tokens: usize,
    pub vocabulary_size: usize,
    pub sentence_count: usize,
    pub mean_sentence_length: f64,
    pub sense_inventory_size: usize,
    pub senses_per_token_mean: f64,
    pub senses_per_token_max: usize,
    /// Share of labeled tokens per part of speech.
    pub pos_distribution: BTreeMap<Pos, f64>,
    /// Mean distinct senses per sense-bearing word, by part of speech.
    pub senses_per_word_by_pos: BTreeMap<Pos, f64>,
}

/// Whole-corpus counts. Vocabulary is distinct surface forms over all
/// tokens; senses-per-token is taken over surface forms carrying at least
/// one sense.
pub fn corpus_stats(c: &Corpus) -> CorpusStats {
    let sentence_count = c.sentences.len();
    let total_tokens = c.total_tokens;
    let labeled_tokens = c.labeled.len();

    let per_word = c.senses_per_word(WordIdentity::Surface);
    let (senses_per_token_mean, senses_per_token_max) = if per_word.is_empty() {
        (0.0, 0)
    } else {
        let sum: usize = per_word.values().sum();
        (sum as f64 / per_word.len() as f64, per_word.values().copied().max().unwrap_or(0))
    };

    let mut pos_counts: BTreeMap<Pos, usize> = BTreeMap::new();
    let mut word_pos_senses: BTreeMap<(Pos, &str), BTreeSet<&SenseId>> = BTreeMap::new();
    for &occ in &c.labeled {
        let tok = c.token(occ);
        *pos_counts.entry(tok.pos).or_default() += 1;
        word_pos_senses
            .entry((tok.pos, tok.surface.as_str()))
            .or_default()
            .insert(tok.sense.as_ref().expect("labeled"));
    }
    let pos_distribution = pos_counts.iter().map(|(&p, &n)| (p, n as f64 / labeled_tokens as f64)).collect();
    let mut by_pos: BTreeMap<Pos, (usize, usize)> = BTreeMap::new();
    for ((p, _), senses) in &word_pos_senses {
        let e = by_pos.entry(*p).or_default();
        e.0 += senses.len();
        e.1 += 1;
    }
    let senses_per_word_by_pos = by_pos.into_iter().map(|(p, (s, n))| (p, s as f64 / n as f64)).collect();

    CorpusStats {
        total_tokens,
        labeled_tokens,
        vocabulary_size: c.word_index.len(),
        sentence_count,
        mean_sentence_length: if sentence_count == 0 { 0.0 } else { total_tokens as f64 / sentence_count as f64 },
        sense_inventory_size: c.sense_inventory.len(),
        senses_per_token_mean,
        senses_per_token_max,
        pos_distribution,
        senses_per_word_by_pos,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels_corpus() -> Corpus {
        let jsonl = r#"{"id":"a","tokens":[{"t":"There","lemma":"there","pos":"OTHER","sense":null},{"t":"are","lemma":"be","pos":"VERB","sense":null},{"t":"three","lemma":"three","pos":"OTHER","sense":null},{"t":"levels","lemma":"level","pos":"NOUN","sense":"bn:00041239n"}]}
{"id":"b","tokens":[{"t":"The","lemma":null,"pos":"OTHER","sense":null},{"t":"three","lemma":"three","pos":"OTHER","sense":null},{"t":"levels","lemma":"level","pos":"NOUN","sense":"bn:00041239n"}]}
{"id":"c","tokens":[{"t":"several","lemma":null,"pos":"ADJ","sense":null},{"t":"levels","lemma":"level","pos":"NOUN","sense":"bn:00050303n"},{"t":"layers","lemma":"layer","pos":"NOUN","sense":"bn:00050303n"}]}
"#;
        Corpus::parse_jsonl(jsonl.as_bytes()).unwrap()
    }

    #[test]
    fn single_sentence_file() {
        let c = Corpus::parse_jsonl(
            r#"{"id":"s1","tokens":[{"t":"a","pos":"OTHER"},{"t":"b","pos":"NOUN","sense":"x"},{"t":"c","pos":"OTHER"}]}"#
                .as_bytes(),
        )
        .unwrap();
        assert_eq!(c.sentences().len(), 1);
        assert_eq!(c.total_tokens(), 3);
        assert_eq!(c.labeled(), &[OccId::new(0, 1)]);
    }

    #[test]
    fn missing_tokens_field_cites_line() {
        let src = "{\"id\":\"a\",\"tokens\":[]}\n{\"id\":\"b\"}\n";
        match Corpus::parse_jsonl(src.as_bytes()) {
            Err(CorpusError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("tokens"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_gaps_and_multilabels() {
        let dup = "{\"id\":\"a\",\"tokens\":[]}\n{\"id\":\"a\",\"tokens\":[]}\n";
        assert!(matches!(Corpus::parse_jsonl(dup.as_bytes()), Err(CorpusError::DuplicateSentence { line: 2, .. })));
        let gap = r#"{"id":"a","tokens":[{"t":"x","pos":"OTHER","i":1},{"t":"y","pos":"OTHER","i":3}]}"#;
        assert!(matches!(
            Corpus::parse_jsonl(gap.as_bytes()),
            Err(CorpusError::IndexGap { expected: 2, found: 3, .. })
        ));
        let multi = r#"{"id":"a","tokens":[{"t":"x","pos":"NOUN","sense":["s1","s2"]}]}"#;
        assert!(matches!(Corpus::parse_jsonl(multi.as_bytes()), Err(CorpusError::MultiLabel { .. })));
        let other = r#"{"id":"a","tokens":[{"t":"x","pos":"OTHER","sense":"s1"}]}"#;
        assert!(matches!(Corpus::parse_jsonl(other.as_bytes()), Err(CorpusError::SenseWithoutPos { .. })));
        let empty = "\n\n{\"id\":\"a\",\"tokens\":[{\"t\":\"\",\"pos\":\"OTHER\"}]}";
        assert!(matches!(Corpus::parse_jsonl(empty.as_bytes()), Err(CorpusError::EmptySurface { line: 3, .. })));
    }

    #[test]
    fn nfc_normalizes_surface() {
        // "é" as e + combining acute.
        let src = "{\"id\":\"a\",\"tokens\":[{\"t\":\"caf\u{0065}\u{0301}\",\"pos\":\"NOUN\",\"sense\":\"s\"}]}";
        let c = Corpus::parse_jsonl(src.as_bytes()).unwrap();
        assert_eq!(c.token(OccId::new(0, 0)).surface, "caf\u{00e9}");
    }

    #[test]
    fn sense_filter_returns_both_levels() {
        let c = levels_corpus();
        let f = OccurrenceFilter { sense: Some(SenseId::new("bn:00041239n")), ..Default::default() };
        let occ = c.occurrences(&f).unwrap();
        assert_eq!(occ, vec![OccId::new(0, 3), OccId::new(1, 2)]);
        assert!(occ.iter().all(|&o| c.token(o).surface == "levels"));

        let unknown = OccurrenceFilter { sense: Some(SenseId::new("bn:nope")), ..Default::default() };
        assert!(c.occurrences(&unknown).unwrap().is_empty());
        let verbs = OccurrenceFilter { pos: Some(Pos::Verb), ..Default::default() };
        assert!(c.occurrences(&verbs).unwrap().is_empty());
        let bad = OccurrenceFilter { position_bucket: Some(9), ..Default::default() };
        assert!(matches!(c.occurrences(&bad), Err(CorpusError::InvalidFilter(_))));
    }

    #[test]
    fn inconsistent_sense_pos_rejected() {
        let src = r#"{"id":"a","tokens":[{"t":"x","pos":"NOUN","sense":"s"},{"t":"y","pos":"VERB","sense":"s"}]}"#;
        assert!(matches!(Corpus::parse_jsonl(src.as_bytes()), Err(CorpusError::InconsistentSensePos { .. })));
    }

    #[test]
    fn hand_counted_stats() {
        // 2 sentences, 7 tokens, 3 labels:
        //   s1: run(VERB,v1) fast(ADV,r1) home(OTHER)
        //   s2: run(VERB,v2) the(OTHER) long(ADJ) race(NOUN,n1)
        let src = r#"{"id":"s1","tokens":[{"t":"run","pos":"VERB","sense":"v1"},{"t":"fast","pos":"ADV"},{"t":"home","pos":"OTHER"}]}
{"id":"s2","tokens":[{"t":"run","pos":"VERB","sense":"v2"},{"t":"the","pos":"OTHER"},{"t":"long","pos":"ADJ"},{"t":"race","pos":"NOUN","sense":"n1"}]}"#;
        let c = Corpus::parse_jsonl(src.as_bytes()).unwrap();
        let st = corpus_stats(&c);
        assert_eq!(st.total_tokens, 7);
        assert_eq!(st.labeled_tokens, 3);
        assert_eq!(st.sentence_count, 2);
        assert_eq!(st.vocabulary_size, 6); // run, fast, home, the, long, race
        assert_eq!(st.mean_sentence_length, 3.5);
        assert_eq!(st.sense_inventory_size, 3);
        // run → {v1, v2}, race → {n1}
        assert_eq!(st.senses_per_token_mean, 1.5);
        assert_eq!(st.senses_per_token_max, 2);
        assert_eq!(st.pos_distribution[&Pos::Verb], 2.0 / 3.0);
        assert_eq!(st.pos_distribution[&Pos::Noun], 1.0 / 3.0);
        assert_eq!(st.senses_per_word_by_pos[&Pos::Verb], 2.0);
        let total: f64 = st.pos_distribution.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_corpus_stats_are_zero() {
        let c = Corpus::parse_jsonl("".as_bytes()).unwrap();
        let st = corpus_stats(&c);
        assert_eq!(st.total_tokens, 0);
        assert_eq!(st.labeled_tokens, 0);
        assert_eq!(st.sentence_count, 0);
        assert_eq!(st.mean_sentence_length, 0.0);
        assert_eq!(st.senses_per_token_max, 0);
        assert!(st.pos_distribution.is_empty());
    }

    #[test]
    fn jsonl_round_trip_and_fingerprint() {
        let c = levels_corpus();
        let again = Corpus::parse_jsonl(c.to_jsonl().as_bytes()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.fingerprint(), again.fingerprint());

        let mut edited = c.sentences().to_vec();
        edited[2].tokens[0].surface = "many".into();
        let edited = Corpus::from_sentences(edited).unwrap();
        assert_ne!(c.fingerprint(), edited.fingerprint());
    }

    #[test]
    fn lemma_identity_and_keys() {
        let c = levels_corpus();
        let o = OccId::new(2, 1);
        assert_eq!(c.word_of(o, WordIdentity::Surface), "levels");
        assert_eq!(c.word_of(o, WordIdentity::Lemma), "level");
        // no lemma falls back to surface
        assert_eq!(c.word_of(OccId::new(1, 0), WordIdentity::Lemma), "The");
        let key = c.key(o);
        assert_eq!(key, OccurrenceKey::new("c", 2));
        assert_eq!(c.find(&key), Some(o));
        assert_eq!(c.find(&OccurrenceKey::new("c", 0)), None);
        assert_eq!(c.find(&OccurrenceKey::new("c", 4)), None);
        assert_eq!(c.senses_per_word(WordIdentity::Surface)["levels"], 2);
    }
}
