//! Binary model bundle.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DCOM" | version u32 | payload length u64 | payload | crc32(payload) u32
//! ```
//!
//! The payload holds, in order: architecture config (JSON string), training
//! metadata (JSON string), vocabulary (kind u8, count u32, strings), class
//! names (count u32, strings), scaler (19 means, 19 stds as f64), and the
//! parameter tensors (count u32; each name, rank u32, dims u64, f64 data).
//! Strings are a u32 byte length followed by UTF-8.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureScaler, FEATURE_COUNT};
use crate::ingest::ClassVocabulary;
use crate::nn::{ArchitectureConfig, Network, NnError, Params, Tensor};
use crate::tokenize::{TokenizerKind, Vocabulary};

pub const MAGIC: &[u8; 4] = b"DCOM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a model bundle (bad magic bytes)")]
    BadMagic,
    #[error("bundle format version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("bundle is truncated")]
    Truncated,
    #[error("bundle checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt bundle: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epochs actually run.
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_validation_f1: Option<f64>,
}

/// Everything needed to predict: network, vocabularies, scaler and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub network: Network,
    pub vocab: Vocabulary,
    pub scaler: FeatureScaler,
    pub classes: ClassVocabulary,
    pub meta: TrainingMeta,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Writer::default();
        p.string(&serde_json::to_string(&self.network.config).expect("config serializes"));
        p.string(&serde_json::to_string(&self.meta).expect("meta serializes"));
        p.u8(kind_code(self.vocab.kind()));
        p.u32(self.vocab.len() as u32);
        for t in self.vocab.tokens() {
            p.string(t);
        }
        p.u32(self.classes.len() as u32);
        for c in self.classes.names() {
            p.string(c);
        }
        for x in self.scaler.mean.iter().chain(&self.scaler.std) {
            p.f64(*x);
        }
        let named = self.network.params.named();
        p.u32(named.len() as u32);
        for (name, t) in named {
            p.string(&name);
            p.u32(t.shape().len() as u32);
            for &d in t.shape() {
                p.u64(d as u64);
            }
            for &x in t.data() {
                p.f64(x);
            }
        }
        let payload = p.buf;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        if bytes.len() < 4 {
            return Err(BundleError::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(BundleError::BadMagic);
        }
        if bytes.len() < 8 {
            return Err(BundleError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(BundleError::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(BundleError::Truncated);
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let rest = &bytes[HEADER_LEN..];
        let len = usize::try_from(len).map_err(|_| BundleError::Truncated)?;
        if rest.len() < len.saturating_add(4) {
            return Err(BundleError::Truncated);
        }
        if rest.len() > len + 4 {
            return Err(BundleError::Corrupt("trailing bytes after checksum".into()));
        }
        let payload = &rest[..len];
        let stored = u32::from_le_bytes(rest[len..len + 4].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(BundleError::Checksum { stored, computed });
        }
        parse_payload(payload)
    }

    pub fn save(&self, path: &Path) -> Result<u64, BundleError> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| BundleError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let bytes = std::fs::read(path).map_err(|e| BundleError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<u64, BundleError> {
    bundle.save(path)
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle, BundleError> {
    ModelBundle::load(path)
}

fn kind_code(kind: TokenizerKind) -> u8 {
    match kind {
        TokenizerKind::Char => 0,
        TokenizerKind::Word => 1,
        TokenizerKind::Wordpiece => 2,
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BundleError> {
        if self.buf.len() < n {
            return Err(BundleError::Corrupt("payload ends early".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, BundleError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, BundleError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self) -> Result<String, BundleError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| BundleError::Corrupt("invalid UTF-8".into()))
    }
}

fn parse_payload(payload: &[u8]) -> Result<ModelBundle, BundleError> {
    let corrupt = |m: String| BundleError::Corrupt(m);
    let mut r = Reader { buf: payload };
    let config: ArchitectureConfig =
        serde_json::from_str(&r.string()?).map_err(|e| corrupt(format!("config: {e}")))?;
    let meta: TrainingMeta = serde_json::from_str(&r.string()?).map_err(|e| corrupt(format!("metadata: {e}")))?;
    let kind = match r.u8()? {
        0 => TokenizerKind::Char,
        1 => TokenizerKind::Word,
        2 => TokenizerKind::Wordpiece,
        k => return Err(corrupt(format!("unknown tokenizer kind {k}"))),
    };
    let n_tokens = r.u32()? as usize;
    let tokens = (0..n_tokens).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::from_tokens(kind, &tokens);
    if vocab.tokens() != tokens.as_slice() {
        return Err(corrupt("vocabulary is not in canonical order".into()));
    }
    let n_classes = r.u32()? as usize;
    let names = (0..n_classes).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
    let classes = ClassVocabulary::from_names(names).map_err(|e| corrupt(e.to_string()))?;
    let mut scaler = FeatureScaler::identity();
    for j in 0..FEATURE_COUNT {
        scaler.mean[j] = r.f64()?;
    }
    for j in 0..FEATURE_COUNT {
        scaler.std[j] = r.f64()?;
    }

    let mut params = Params::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(corrupt(format!("expected {} tensors, found {count}", expected.len())));
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let got = r.string()?;
        if &got != name {
            return Err(corrupt(format!("expected tensor {name}, found {got}")));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if &dims != shape {
            return Err(corrupt(format!("tensor {name}: expected shape {shape:?}, found {dims:?}")));
        }
        let data = (0..slot.len()).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        *slot = Tensor::from_vec(&dims, data)?;
    }
    if !r.buf.is_empty() {
        return Err(corrupt("unread payload bytes".into()));
    }
    if config.vocab_size != vocab.len() || config.num_classes != classes.len() {
        return Err(corrupt("config does not match vocabulary or classes".into()));
    }
    let network = Network::from_parts(config, params)?;
    Ok(ModelBundle {
        network,
        vocab,
        scaler,
        classes,
        meta,
    })
}
