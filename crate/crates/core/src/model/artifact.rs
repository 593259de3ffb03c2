//! Model files and the common prediction interface.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TLMODEL\0"
//! version    u32      1
//! kind       u8       1 = linear, 2 = transformer
//! header     u32 len + UTF-8 JSON (configuration echo)
//! vocab      u32 count, then per entry u32 len + UTF-8 bytes (0 for linear)
//! tensors    u32 count, then per tensor:
//!              u32 len + UTF-8 name, u32 ndim, ndim x u32 dims,
//!              prod(dims) x f64 (IEEE-754)
//! ```
//!
//! Tensors appear in canonical order. Trailing bytes are rejected.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{HashingFeaturizer, SparseFeatures};
use super::linear::LinearModel;
use super::transformer::{Params, Stage, TinyTransformer, TransformerConfig};
use super::vocab::Vocab;
use crate::corpus::{Label, Sentence};
use crate::error::{Error, Result};
use crate::sampling::ClassWeights;

pub const MAGIC: &[u8; 8] = b"TLMODEL\0";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const KIND_LINEAR: u8 = 1;
const KIND_TRANSFORMER: u8 = 2;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearHeader {
    hash_dim: usize,
    class_weights: ClassWeights,
    threshold: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformerHeader {
    config: TransformerConfig,
    stage: Stage,
    vocab_min_freq: usize,
    threshold: f64,
}

/// A trained model of either kind plus its decision threshold.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    Linear {
        model: LinearModel,
        featurizer: HashingFeaturizer,
        threshold: f64,
    },
    Transformer {
        model: Box<TinyTransformer>,
        threshold: f64,
    },
}

impl Classifier {
    pub fn linear(model: LinearModel) -> Result<Self> {
        Ok(Classifier::Linear {
            featurizer: HashingFeaturizer::new(model.dim())?,
            model,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    pub fn transformer(model: TinyTransformer) -> Self {
        Classifier::Transformer {
            model: Box::new(model),
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Classifier::Linear { .. } => "linear",
            Classifier::Transformer { .. } => "transformer",
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Classifier::Linear { threshold, .. } | Classifier::Transformer { threshold, .. } => *threshold,
        }
    }

    pub fn set_threshold(&mut self, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidConfig(format!("threshold {value} outside [0, 1]")));
        }
        match self {
            Classifier::Linear { threshold, .. } | Classifier::Transformer { threshold, .. } => *threshold = value,
        }
        Ok(())
    }

    /// Probability that the sentence is `Relevant`.
    pub fn predict_proba<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Result<f64> {
        match self {
            Classifier::Linear { model, featurizer, .. } => model.predict_proba(&featurizer.featurize(words)),
            Classifier::Transformer { model, .. } => model.predict_proba(&model.encode(words)),
        }
    }

    pub fn predict_sentence(&self, sentence: &Sentence) -> Result<f64> {
        self.predict_proba(sentence.words())
    }

    /// Same values as calling [`Classifier::predict_sentence`] one by one.
    pub fn predict_batch(&self, sentences: &[Sentence]) -> Result<Vec<f64>> {
        sentences.par_iter().map(|s| self.predict_sentence(s)).collect()
    }

    pub fn decide(&self, probability: f64) -> Label {
        Label::from_bool(probability >= self.threshold())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        match self {
            Classifier::Linear { model, threshold, .. } => {
                out.push(KIND_LINEAR);
                let header = LinearHeader {
                    hash_dim: model.dim(),
                    class_weights: model.class_weights,
                    threshold: *threshold,
                };
                put_bytes(&mut out, &serde_json::to_vec(&header)?);
                put_u32(&mut out, 0);
                put_u32(&mut out, 2);
                put_tensor(&mut out, "weights", &[model.dim()], &model.weights);
                put_tensor(&mut out, "bias", &[1], &[model.bias]);
            }
            Classifier::Transformer { model, threshold } => {
                out.push(KIND_TRANSFORMER);
                let header = TransformerHeader {
                    config: model.config,
                    stage: model.stage,
                    vocab_min_freq: model.vocab.min_freq(),
                    threshold: *threshold,
                };
                put_bytes(&mut out, &serde_json::to_vec(&header)?);
                put_u32(&mut out, model.vocab.len() as u32);
                for t in model.vocab.tokens() {
                    put_bytes(&mut out, t.as_bytes());
                }
                let specs = Params::specs(&model.config, model.vocab.len());
                put_u32(&mut out, specs.len() as u32);
                for (spec, data) in specs.iter().zip(model.params.tensors()) {
                    put_tensor(&mut out, &spec.name, &spec.shape, data);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::ModelFormat("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported format version {version}")));
        }
        let kind = r.take(1)?[0];
        let header = r.bytes()?;
        let n_vocab = r.u32()? as usize;
        let mut vocab = Vec::with_capacity(n_vocab.min(1 << 20));
        for _ in 0..n_vocab {
            vocab.push(r.string()?);
        }
        let classifier = match kind {
            KIND_LINEAR => {
                let h: LinearHeader = serde_json::from_slice(header)?;
                if !vocab.is_empty() {
                    return Err(Error::ModelFormat("linear model carries a vocabulary".into()));
                }
                let featurizer = HashingFeaturizer::new(h.hash_dim)?;
                r.expect_count(2)?;
                let weights = r.tensor("weights", &[h.hash_dim])?;
                let bias = r.tensor("bias", &[1])?[0];
                Classifier::Linear {
                    model: LinearModel {
                        weights,
                        bias,
                        class_weights: h.class_weights,
                    },
                    featurizer,
                    threshold: h.threshold,
                }
            }
            KIND_TRANSFORMER => {
                let h: TransformerHeader = serde_json::from_slice(header)?;
                h.config.validate()?;
                let vocab = Vocab::from_tokens(vocab, h.vocab_min_freq)?;
                let specs = Params::specs(&h.config, vocab.len());
                r.expect_count(specs.len())?;
                let mut model = TinyTransformer::new(h.config, vocab, 0)?;
                model.stage = h.stage;
                for (spec, dst) in specs.iter().zip(model.params.tensors_mut()) {
                    dst.copy_from_slice(&r.tensor(&spec.name, &spec.shape)?);
                }
                Classifier::Transformer {
                    model: Box::new(model),
                    threshold: h.threshold,
                }
            }
            other => return Err(Error::ModelFormat(format!("unknown model kind {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(classifier)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::from(e).in_file(path))?;
        f.write_all(&bytes).map_err(|e| Error::from(e).in_file(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }
}

/// Featurizes and predicts with a linear model directly.
pub fn linear_scores(model: &LinearModel, features: &[SparseFeatures]) -> Result<Vec<f64>> {
    features.iter().map(|x| model.predict_proba(x)).collect()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_bytes(out, name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ModelFormat(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::ModelFormat("invalid UTF-8".into()))
    }

    fn expect_count(&mut self, n: usize) -> Result<()> {
        let got = self.u32()? as usize;
        if got != n {
            return Err(Error::ModelFormat(format!("expected {n} tensors, found {got}")));
        }
        Ok(())
    }

    fn tensor(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let got = self.string()?;
        if got != name {
            return Err(Error::ModelFormat(format!("expected tensor `{name}`, found `{got}`")));
        }
        let ndim = self.u32()? as usize;
        let dims: Vec<usize> = (0..ndim)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<_>>()?;
        if dims != shape {
            return Err(Error::ModelFormat(format!(
                "tensor `{name}` has shape {dims:?}, expected {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::ModelFormat("tensor too large".into()))?,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelFormat(format!("tensor `{name}` holds non-finite values")));
        }
        Ok(data)
    }
}
