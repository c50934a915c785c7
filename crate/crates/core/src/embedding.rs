//! The `.prbemb` layer-wise sentence embedding format.
//!
//! All integers and floats are little-endian:
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | 8 bytes, `PRBEMB01`                    |
//! | n_sentences      | u32                                    |
//! | n_layers         | u16                                    |
//! | dim              | u16                                    |
//! | model_name       | u16 byte length + UTF-8 bytes          |
//! | dataset_digest   | 32 bytes, SHA-256 of the dataset JSONL |
//! | index            | n_sentences × (u16 length + UTF-8 id)  |
//! | data             | f32 × n_sentences × n_layers × dim     |
//!
//! Data is row-major `[sentence][layer][dim]`. Nothing may follow the data.
//!
//! Fixture vectors are drawn per example from a ChaCha8 stream keyed by
//! `SHA-256(le_u64(seed) || 0 || "fixture" || 0 || id || 0x1f || tokens)`
//! where tokens are `surface/POS` pairs joined by spaces. Each coordinate
//! is a Box-Muller cosine draw from two 53-bit uniforms, layer by layer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::ProbingExample;
use crate::seed;

pub const MAGIC: &[u8; 8] = b"PRBEMB01";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic: expected PRBEMB01")]
    BadMagic,
    #[error("file truncated while reading {0}")]
    TruncatedFile(&'static str),
    #[error("{0} unexpected bytes after the data block")]
    TrailingBytes(usize),
    #[error("dataset digest mismatch: file has {expected}, dataset hashes to {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("non-finite value at sentence {row}, layer {layer}, dim {dim}")]
    NonFiniteValue { row: usize, layer: usize, dim: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("{0} is not valid UTF-8")]
    InvalidUtf8(&'static str),
    #[error("data has {actual} values, header implies {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("signal needs dim >= {needed} (label count), got {dim}")]
    SignalDimTooSmall { needed: usize, dim: usize },
    #[error("signal layer {layer} outside 0..{n_layers}")]
    SignalLayerOutOfRange { layer: usize, n_layers: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingSetHeader {
    pub n_sentences: u32,
    pub n_layers: u16,
    pub dim: u16,
    pub model_name: String,
    pub dataset_digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub header: EmbeddingSetHeader,
    pub index: Vec<String>,
    pub data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(
        model_name: impl Into<String>,
        dataset_digest: [u8; 32],
        n_layers: u16,
        dim: u16,
        index: Vec<String>,
        data: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        let n_sentences = u32::try_from(index.len())
            .map_err(|_| EmbeddingError::InvalidHeader("too many sentences".into()))?;
        let set = EmbeddingSet {
            header: EmbeddingSetHeader {
                n_sentences,
                n_layers,
                dim,
                model_name: model_name.into(),
                dataset_digest,
            },
            index,
            data,
        };
        set.check()?;
        Ok(set)
    }

    pub fn n_sentences(&self) -> usize {
        self.header.n_sentences as usize
    }

    pub fn n_layers(&self) -> usize {
        self.header.n_layers as usize
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    pub fn vector(&self, row: usize, layer: usize) -> &[f32] {
        let d = self.dim();
        let start = (row * self.n_layers() + layer) * d;
        &self.data[start..start + d]
    }

    pub fn row_of(&self) -> HashMap<&str, usize> {
        self.index.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Rows `rows` of one layer as an `f64` matrix.
    pub fn layer_matrix(&self, layer: usize, rows: &[usize]) -> Array2<f64> {
        let d = self.dim();
        Array2::from_shape_fn((rows.len(), d), |(i, j)| f64::from(self.vector(rows[i], layer)[j]))
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.header.dataset_digest)
    }

    /// Checks every invariant of the format.
    pub fn check(&self) -> Result<(), EmbeddingError> {
        let h = &self.header;
        if h.n_sentences == 0 || h.n_layers == 0 || h.dim == 0 {
            return Err(EmbeddingError::InvalidHeader(format!(
                "n_sentences, n_layers and dim must be >= 1 (got {}, {}, {})",
                h.n_sentences, h.n_layers, h.dim
            )));
        }
        if h.model_name.len() > u16::MAX as usize {
            return Err(EmbeddingError::InvalidHeader("model name too long".into()));
        }
        if self.index.len() != self.n_sentences() {
            return Err(EmbeddingError::InvalidHeader(format!(
                "index has {} ids for {} sentences",
                self.index.len(),
                h.n_sentences
            )));
        }
        let mut seen = HashSet::new();
        for id in &self.index {
            if id.len() > u16::MAX as usize {
                return Err(EmbeddingError::InvalidHeader("example id too long".into()));
            }
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        let expected = self.n_sentences() * self.n_layers() * self.dim();
        if self.data.len() != expected {
            return Err(EmbeddingError::ShapeMismatch {
                expected,
                actual: self.data.len(),
            });
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            let (d, l) = (self.dim(), self.n_layers());
            return Err(EmbeddingError::NonFiniteValue {
                row: pos / (l * d),
                layer: (pos / d) % l,
                dim: pos % d,
            });
        }
        Ok(())
    }

    /// Fails with `DigestMismatch` unless `dataset` hashes to the header digest.
    pub fn verify_digest(&self, dataset: &[u8]) -> Result<(), EmbeddingError> {
        let actual = seed::sha256(dataset);
        if actual != self.header.dataset_digest {
            return Err(EmbeddingError::DigestMismatch {
                expected: self.digest_hex(),
                actual: hex::encode(actual),
            });
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        8 + 4 + 2 + 2 + 2 + self.header.model_name.len() + 32 + self.index.iter().map(|id| 2 + id.len()).sum::<usize>()
            + self.data.len() * 4
    }
}

pub fn encode(set: &EmbeddingSet) -> Result<Vec<u8>, EmbeddingError> {
    set.check()?;
    let h = &set.header;
    let mut out = Vec::with_capacity(set.encoded_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&h.n_sentences.to_le_bytes());
    out.extend_from_slice(&h.n_layers.to_le_bytes());
    out.extend_from_slice(&h.dim.to_le_bytes());
    put_str(&mut out, &h.model_name);
    out.extend_from_slice(&h.dataset_digest);
    for id in &set.index {
        put_str(&mut out, id);
    }
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], EmbeddingError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(EmbeddingError::TruncatedFile(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], EmbeddingError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn string(&mut self, what: &'static str) -> Result<String, EmbeddingError> {
        let len = u16::from_le_bytes(self.array(what)?) as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| EmbeddingError::InvalidUtf8(what))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingSet, EmbeddingError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(8, "magic").map_err(|_| EmbeddingError::BadMagic)?;
    if magic != MAGIC {
        return Err(EmbeddingError::BadMagic);
    }
    let n_sentences = u32::from_le_bytes(c.array("header")?);
    let n_layers = u16::from_le_bytes(c.array("header")?);
    let dim = u16::from_le_bytes(c.array("header")?);
    let model_name = c.string("model name")?;
    let dataset_digest = c.array::<32>("dataset digest")?;
    if n_sentences == 0 || n_layers == 0 || dim == 0 {
        return Err(EmbeddingError::InvalidHeader(format!(
            "n_sentences, n_layers and dim must be >= 1 (got {n_sentences}, {n_layers}, {dim})"
        )));
    }

    // Bound allocations by what the remaining bytes can hold.
    let remaining = bytes.len() - c.pos;
    if (n_sentences as usize).saturating_mul(2) > remaining {
        return Err(EmbeddingError::TruncatedFile("index"));
    }
    let mut index = Vec::with_capacity(n_sentences as usize);
    for _ in 0..n_sentences {
        index.push(c.string("index")?);
    }
    let n_values = (n_sentences as usize)
        .checked_mul(n_layers as usize)
        .and_then(|v| v.checked_mul(dim as usize))
        .ok_or(EmbeddingError::TruncatedFile("data"))?;
    let raw = c.take(n_values.checked_mul(4).ok_or(EmbeddingError::TruncatedFile("data"))?, "data")?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
        .collect();
    if c.pos != bytes.len() {
        return Err(EmbeddingError::TrailingBytes(bytes.len() - c.pos));
    }
    let set = EmbeddingSet {
        header: EmbeddingSetHeader {
            n_sentences,
            n_layers,
            dim,
            model_name,
            dataset_digest,
        },
        index,
        data,
    };
    set.check()?;
    Ok(set)
}

/// Human-readable copy of the header, written next to the binary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub format: String,
    pub model_name: String,
    pub n_sentences: u32,
    pub n_layers: u16,
    pub dim: u16,
    pub dataset_digest: String,
    pub pooling: String,
    pub include_special_tokens: bool,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl EmbeddingMeta {
    pub fn for_set(set: &EmbeddingSet) -> Self {
        EmbeddingMeta {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            model_name: set.header.model_name.clone(),
            n_sentences: set.header.n_sentences,
            n_layers: set.header.n_layers,
            dim: set.header.dim,
            dataset_digest: set.digest_hex(),
            pooling: "mean".into(),
            include_special_tokens: false,
            extra: BTreeMap::new(),
        }
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes `path` and its `<path>.meta.json` companion.
pub fn write(set: &EmbeddingSet, path: &Path, meta: &EmbeddingMeta) -> Result<(), EmbeddingError> {
    let bytes = encode(set)?;
    fs::write(path, bytes)?;
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    fs::write(meta_path(path), json)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<EmbeddingSet, EmbeddingError> {
    decode(&fs::read(path)?)
}

/// Planted class signal for fixtures: at each listed layer, coordinate
/// `label` of an example's vector is shifted by `strength`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub strength: f64,
    pub layers: Vec<usize>,
}

/// Deterministic unit-variance Gaussian vectors, optionally with a
/// linearly decodable label signal at chosen layers.
pub fn generate_fixture(
    examples: &[ProbingExample],
    model_name: &str,
    dataset_digest: [u8; 32],
    n_layers: u16,
    dim: u16,
    seed: u64,
    signal: Option<&SignalSpec>,
) -> Result<EmbeddingSet, EmbeddingError> {
    if let Some(sig) = signal {
        let needed = examples.iter().map(|e| e.task.class_count()).max().unwrap_or(0);
        if (dim as usize) < needed {
            return Err(EmbeddingError::SignalDimTooSmall { needed, dim: dim as usize });
        }
        if let Some(&layer) = sig.layers.iter().find(|&&l| l >= n_layers as usize) {
            return Err(EmbeddingError::SignalLayerOutOfRange {
                layer,
                n_layers: n_layers as usize,
            });
        }
    }
    let (l, d) = (n_layers as usize, dim as usize);
    let mut data = Vec::with_capacity(examples.len() * l * d);
    for ex in examples {
        let mut rng = seed::stream(seed, "fixture", &fixture_item(ex));
        let start = data.len();
        for _ in 0..l * d {
            data.push(seed::standard_normal(&mut rng) as f32);
        }
        if let Some(sig) = signal {
            for &layer in &sig.layers {
                let v = &mut data[start + layer * d + ex.label];
                *v = (f64::from(*v) + sig.strength) as f32;
            }
        }
    }
    let index = examples.iter().map(|e| e.id.clone()).collect();
    EmbeddingSet::new(model_name, dataset_digest, n_layers, dim, index, data)
}

fn fixture_item(ex: &ProbingExample) -> String {
    let tokens: Vec<String> = ex.tokens.iter().map(|(s, p)| format!("{s}/{p}")).collect();
    format!("{}\u{1f}{}", ex.id, tokens.join(" "))
}
