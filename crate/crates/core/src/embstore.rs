//! Per-occurrence, per-layer embedding dumps.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "SEMB"                      4 bytes magic
//! version                     u32
//! manifest length             u32
//! manifest                    UTF-8 JSON, space padded to a multiple of 4
//! index                       row_count × (sentence hash u64, token index u32, row u64),
//!                             sorted by (hash, index)
//! payload                     [row][layer][dim] f32
//! ```
//!
//! The manifest is also written next to the store as `<path>.json`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
#[cfg(feature = "fs")]
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, OccurrenceKey};

pub const MAGIC: &[u8; 4] = b"SEMB";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes per index entry: u64 hash + u32 token index + u64 row.
pub const INDEX_ENTRY_BYTES: usize = 20;
const PREAMBLE_BYTES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingReason {
    /// The token exists but carries no sense label, and the dump only holds labeled rows.
    Unlabeled,
    /// The token should have a row but the dump does not contain it.
    Incomplete,
    /// The key does not name a token of the corpus at all.
    UnknownToken,
}

impl fmt::Display for MissingReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingReason::Unlabeled => "token is unlabeled",
            MissingReason::Incomplete => "dump incomplete",
            MissingReason::UnknownToken => "no such token in corpus",
        })
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an embedding store (bad magic)")]
    BadMagic,
    #[error("unsupported store format version {0}")]
    UnsupportedVersion(u32),
    #[error("store truncated: need {needed} bytes, have {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("store has {extra} trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("inconsistent store: {0}")]
    Inconsistent(String),
    #[error("non-finite value at row {row}, layer offset {layer}")]
    NonFinite { row: u64, layer: u32 },
    #[error("store was built for corpus {store}, loaded corpus is {corpus}")]
    FingerprintMismatch { store: String, corpus: String },
    #[error("no row for {key}: {reason}")]
    MissingRow { key: OccurrenceKey, reason: MissingReason },
    #[error("layer {layer} outside stored range {first}..={last}")]
    LayerOutOfRange { layer: u32, first: u32, last: u32 },
    #[error("row {key}: expected {expected_layers} layers of dim {expected_dim}, got {detail}")]
    DimensionMismatch { key: OccurrenceKey, expected_layers: u32, expected_dim: u32, detail: String },
    #[error("row {key}: non-finite input value")]
    NonFiniteInput { key: OccurrenceKey },
    #[error("duplicate row key {0}")]
    DuplicateKey(OccurrenceKey),
    #[error("expected a {expected} store, got {actual}")]
    VariantMismatch { expected: Variant, actual: Variant },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Hidden states of the unmodified sentence.
    #[default]
    Plain,
    /// Hidden state at the mask symbol substituted for a single target.
    Masked,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Masked => "masked",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub model_name: String,
    pub n_layers: u32,
    /// When set, stored layer numbers start at 0 (embedding output).
    #[serde(default)]
    pub includes_embedding_layer: bool,
    pub dim: u32,
    #[serde(default)]
    pub dtype: Dtype,
    pub variant: Variant,
    #[serde(default)]
    pub prompt_id: Option<String>,
    /// Filled in by the writer.
    #[serde(default)]
    pub row_count: u64,
    pub corpus_fingerprint: String,
    /// How words split into several subwords are represented.
    #[serde(default = "default_subword_policy")]
    pub subword_policy: String,
    /// How masked targets were replaced; only meaningful for masked dumps.
    #[serde(default)]
    pub mask_policy: Option<String>,
}

fn default_subword_policy() -> String {
    "first_subtoken".to_string()
}

impl EmbeddingManifest {
    pub fn new(model_name: impl Into<String>, n_layers: u32, dim: u32, variant: Variant, corpus: &Corpus) -> Self {
        Self {
            model_name: model_name.into(),
            n_layers,
            includes_embedding_layer: false,
            dim,
            dtype: Dtype::F32le,
            variant,
            prompt_id: None,
            row_count: 0,
            corpus_fingerprint: corpus.fingerprint().to_string(),
            subword_policy: default_subword_policy(),
            mask_policy: (variant == Variant::Masked).then(|| "single_mask_symbol".to_string()),
        }
    }

    pub fn first_layer(&self) -> u32 {
        if self.includes_embedding_layer {
            0
        } else {
            1
        }
    }

    pub fn last_layer(&self) -> u32 {
        (self.first_layer() + self.n_layers).saturating_sub(1)
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.row_count > 0 && (self.dim == 0 || self.n_layers == 0) {
            return Err(StoreError::Manifest("non-empty store needs dim > 0 and n_layers >= 1".into()));
        }
        Ok(())
    }

    fn padded_json(&self) -> Vec<u8> {
        let mut json = serde_json::to_vec(self).expect("manifest serializes");
        while !json.len().is_multiple_of(4) {
            json.push(b' ');
        }
        json
    }
}

/// Exact byte size of a store file with the given manifest.
pub fn expected_file_size(manifest: &EmbeddingManifest) -> usize {
    let rows = manifest.row_count as usize;
    PREAMBLE_BYTES
        + manifest.padded_json().len()
        + rows * INDEX_ENTRY_BYTES
        + rows * manifest.n_layers as usize * manifest.dim as usize * 4
}

/// Stable 64-bit hash of a sentence id used in the index table.
pub fn sentence_hash(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Row number inside a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub u64);

/// One stored vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorView {
    pub layer: u32,
    pub values: Vec<f32>,
}

enum Backing {
    Owned(Vec<u8>),
    #[cfg(feature = "fs")]
    Mapped(memmap2::Mmap),
}

impl std::ops::Deref for Backing {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        match self {
            Backing::Owned(v) => v,
            #[cfg(feature = "fs")]
            Backing::Mapped(m) => m,
        }
    }
}

/// Read-only handle on an embedding dump.
pub struct EmbeddingStore {
    bytes: Backing,
    manifest: EmbeddingManifest,
    rows: HashMap<(u64, u32), u64>,
    payload_offset: usize,
}

impl fmt::Debug for EmbeddingStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingStore")
            .field("manifest", &self.manifest)
            .field("payload_offset", &self.payload_offset)
            .finish()
    }
}

impl EmbeddingStore {
    /// Memory-maps a store file and validates its structure.
    #[cfg(feature = "fs")]
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let file = std::fs::File::open(path)?;
        // SAFETY: the mapping is read-only and stores are never modified in
        // place; writers replace files by rename.
        let map = unsafe { memmap2::Mmap::map(&file)? };
        Self::from_backing(Backing::Mapped(map))
    }

    /// Opens a store and refuses it unless it was built for `corpus`.
    #[cfg(feature = "fs")]
    pub fn open_aligned(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Self, StoreError> {
        let store = Self::open(path)?;
        store.check_alignment(corpus)?;
        Ok(store)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, StoreError> {
        Self::from_backing(Backing::Owned(bytes))
    }

    fn from_backing(bytes: Backing) -> Result<Self, StoreError> {
        let b: &[u8] = &bytes;
        need(b, PREAMBLE_BYTES)?;
        if &b[..4] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = read_u32(b, 4);
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let mlen = read_u32(b, 8) as usize;
        need(b, PREAMBLE_BYTES + mlen)?;
        let manifest: EmbeddingManifest = serde_json::from_slice(&b[PREAMBLE_BYTES..PREAMBLE_BYTES + mlen])
            .map_err(|e| StoreError::Manifest(e.to_string()))?;
        manifest.validate()?;

        let rows =
            usize::try_from(manifest.row_count).map_err(|_| StoreError::Manifest("row_count too large".into()))?;
        let index_offset = PREAMBLE_BYTES + mlen;
        let payload_offset = index_offset + rows * INDEX_ENTRY_BYTES;
        let payload_len = rows * manifest.n_layers as usize * manifest.dim as usize * 4;
        need(b, payload_offset + payload_len)?;
        if b.len() > payload_offset + payload_len {
            return Err(StoreError::TrailingBytes { extra: b.len() - payload_offset - payload_len });
        }

        let mut map = HashMap::with_capacity(rows);
        let mut prev: Option<(u64, u32)> = None;
        let mut seen_rows = vec![false; rows];
        for e in 0..rows {
            let at = index_offset + e * INDEX_ENTRY_BYTES;
            let hash = read_u64(b, at);
            let idx = read_u32(b, at + 8);
            let row = read_u64(b, at + 12);
            if prev.is_some_and(|p| p >= (hash, idx)) {
                return Err(StoreError::Inconsistent("index table not strictly sorted".into()));
            }
            prev = Some((hash, idx));
            let slot = seen_rows
                .get_mut(row as usize)
                .ok_or_else(|| StoreError::Inconsistent(format!("index entry points at row {row} of {rows}")))?;
            if std::mem::replace(slot, true) {
                return Err(StoreError::Inconsistent(format!("row {row} indexed twice")));
            }
            map.insert((hash, idx), row);
        }

        let per_layer = manifest.dim as usize * 4;
        for (n, chunk) in b[payload_offset..payload_offset + payload_len].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                let layer_block = n * 4 / per_layer;
                return Err(StoreError::NonFinite {
                    row: (layer_block / manifest.n_layers as usize) as u64,
                    layer: (layer_block % manifest.n_layers as usize) as u32,
                });
            }
        }

        Ok(Self { bytes, manifest, rows: map, payload_offset })
    }

    pub fn manifest(&self) -> &EmbeddingManifest {
        &self.manifest
    }

    pub fn variant(&self) -> Variant {
        self.manifest.variant
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim as usize
    }

    pub fn row_count(&self) -> u64 {
        self.manifest.row_count
    }

    pub fn first_layer(&self) -> u32 {
        self.manifest.first_layer()
    }

    pub fn last_layer(&self) -> u32 {
        self.manifest.last_layer()
    }

    /// Hidden layers, i.e. every stored layer except the embedding output.
    pub fn hidden_layers(&self) -> std::ops::RangeInclusive<u32> {
        1.max(self.first_layer())..=self.last_layer()
    }

    pub fn byte_len(&self) -> usize {
        self.bytes.len()
    }

    pub fn check_alignment(&self, corpus: &Corpus) -> Result<(), StoreError> {
        if self.manifest.corpus_fingerprint != corpus.fingerprint() {
            return Err(StoreError::FingerprintMismatch {
                store: self.manifest.corpus_fingerprint.clone(),
                corpus: corpus.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    pub fn require_variant(&self, expected: Variant) -> Result<(), StoreError> {
        if self.variant() != expected {
            return Err(StoreError::VariantMismatch { expected, actual: self.variant() });
        }
        Ok(())
    }

    pub fn check_layer(&self, layer: u32) -> Result<(), StoreError> {
        let (first, last) = (self.first_layer(), self.last_layer());
        if layer < first || layer > last || self.manifest.n_layers == 0 {
            return Err(StoreError::LayerOutOfRange { layer, first, last });
        }
        Ok(())
    }

    pub fn row_of(&self, key: &OccurrenceKey) -> Option<RowId> {
        self.rows.get(&(sentence_hash(&key.sentence_id), key.token_index)).map(|&r| RowId(r))
    }

    pub fn contains(&self, key: &OccurrenceKey) -> bool {
        self.row_of(key).is_some()
    }

    /// Raw little-endian bytes of one stored vector.
    pub fn raw(&self, row: RowId, layer: u32) -> Result<&[u8], StoreError> {
        self.check_layer(layer)?;
        let l = (layer - self.first_layer()) as usize;
        let per_layer = self.dim() * 4;
        let start = self.payload_offset + (row.0 as usize * self.manifest.n_layers as usize + l) * per_layer;
        Ok(&self.bytes[start..start + per_layer])
    }

    /// Decodes one stored vector into `out` as f64.
    pub fn read_f64(&self, row: RowId, layer: u32, out: &mut Vec<f64>) -> Result<(), StoreError> {
        let raw = self.raw(row, layer)?;
        out.clear();
        out.extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64));
        Ok(())
    }

    pub fn vector(&self, row: RowId, layer: u32) -> Result<VectorView, StoreError> {
        let raw = self.raw(row, layer)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(VectorView { layer, values })
    }

    pub fn get_vector(&self, key: &OccurrenceKey, layer: u32) -> Result<VectorView, StoreError> {
        let row = self
            .row_of(key)
            .ok_or_else(|| StoreError::MissingRow { key: key.clone(), reason: MissingReason::Incomplete })?;
        self.vector(row, layer)
    }

    /// Like [`get_vector`](Self::get_vector), but a missing row is classified
    /// against the corpus.
    pub fn get_vector_in(&self, corpus: &Corpus, key: &OccurrenceKey, layer: u32) -> Result<VectorView, StoreError> {
        let row = self.resolve(corpus, key)?;
        self.vector(row, layer)
    }

    pub fn resolve(&self, corpus: &Corpus, key: &OccurrenceKey) -> Result<RowId, StoreError> {
        if let Some(r) = self.row_of(key) {
            return Ok(r);
        }
        let reason = match corpus.find(key) {
            None => MissingReason::UnknownToken,
            Some(occ) if corpus.token(occ).sense.is_none() => MissingReason::Unlabeled,
            Some(_) => MissingReason::Incomplete,
        };
        Err(StoreError::MissingRow { key: key.clone(), reason })
    }
}

fn need(b: &[u8], needed: usize) -> Result<(), StoreError> {
    if b.len() < needed {
        return Err(StoreError::Truncated { needed, actual: b.len() });
    }
    Ok(())
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Streams row payloads into `payload` and returns the finished manifest and
/// the sorted index.
/// Sentence hash, token index and payload offset of one row.
type IndexEntry = (u64, u32, u64);

fn encode_rows<I, W>(
    manifest: &EmbeddingManifest,
    rows: I,
    payload: &mut W,
) -> Result<(EmbeddingManifest, Vec<IndexEntry>), StoreError>
where
    I: IntoIterator<Item = (OccurrenceKey, Vec<Vec<f32>>)>,
    W: Write,
{
    let mut index = Vec::new();
    let mut seen = HashMap::new();
    let mut buf = Vec::with_capacity(manifest.n_layers as usize * manifest.dim as usize * 4);
    for (row, (key, layers)) in rows.into_iter().enumerate() {
        if layers.len() != manifest.n_layers as usize || layers.iter().any(|v| v.len() != manifest.dim as usize) {
            let dims: Vec<usize> = layers.iter().map(Vec::len).collect();
            return Err(StoreError::DimensionMismatch {
                key,
                expected_layers: manifest.n_layers,
                expected_dim: manifest.dim,
                detail: format!("{} layers with dims {:?}", layers.len(), dims),
            });
        }
        if layers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFiniteInput { key });
        }
        let slot = (sentence_hash(&key.sentence_id), key.token_index);
        if seen.insert(slot, ()).is_some() {
            return Err(StoreError::DuplicateKey(key));
        }
        buf.clear();
        for v in layers.iter().flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        payload.write_all(&buf)?;
        index.push((slot.0, slot.1, row as u64));
    }
    index.sort_unstable();
    let mut m = manifest.clone();
    m.row_count = index.len() as u64;
    m.validate()?;
    Ok((m, index))
}

fn write_head<W: Write + ?Sized>(
    w: &mut W,
    manifest: &EmbeddingManifest,
    index: &[(u64, u32, u64)],
) -> std::io::Result<()> {
    let json = manifest.padded_json();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for &(h, i, r) in index {
        w.write_all(&h.to_le_bytes())?;
        w.write_all(&i.to_le_bytes())?;
        w.write_all(&r.to_le_bytes())?;
    }
    Ok(())
}

/// Builds a complete store image in memory.
pub fn encode_store<I>(manifest: &EmbeddingManifest, rows: I) -> Result<Vec<u8>, StoreError>
where
    I: IntoIterator<Item = (OccurrenceKey, Vec<Vec<f32>>)>,
{
    let mut payload = Vec::new();
    let (m, index) = encode_rows(manifest, rows, &mut payload)?;
    let mut out = Vec::with_capacity(expected_file_size(&m));
    write_head(&mut out, &m, &index)?;
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Writes a store to `path` (atomically) plus the `<path>.json` manifest
/// sidecar. Rows are stored in input order, so identical input gives an
/// identical file.
#[cfg(feature = "fs")]
pub fn write_store<I>(
    manifest: &EmbeddingManifest,
    rows: I,
    path: impl AsRef<Path>,
) -> Result<EmbeddingManifest, StoreError>
where
    I: IntoIterator<Item = (OccurrenceKey, Vec<Vec<f32>>)>,
{
    use std::io::{BufWriter, Seek, SeekFrom};

    let path = path.as_ref();
    let dir = crate::fsutil::parent_dir(path);
    let mut payload = BufWriter::new(tempfile::tempfile_in(dir)?);
    let (m, index) = encode_rows(manifest, rows, &mut payload)?;
    let mut payload = payload.into_inner().map_err(|e| e.into_error())?;
    payload.seek(SeekFrom::Start(0))?;

    crate::fsutil::atomic_write(path, |w| {
        write_head(w, &m, &index)?;
        std::io::copy(&mut payload, w)?;
        Ok(())
    })?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    crate::fsutil::atomic_write(&sidecar, |w| w.write_all(json.as_bytes()))?;
    Ok(m)
}

#[cfg(feature = "fs")]
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
