//! A small pre-norm transformer encoder with hand-written backpropagation.
//!
//! ```text
//! ids -> token_emb + pos_emb
//!     -> [ x + Attn(LN1(x)) ; x + FFN(LN2(x)) ] x n_layers
//!     -> LN_final -> hidden
//! hidden[t] . token_emb^T + lm_bias        masked-LM head (tied weights)
//! hidden[0] . cls_weight + cls_bias         classifier head on [CLS]
//! ```
//!
//! Sequences are processed one at a time without padding, so attention is
//! unmasked. All arithmetic is `f64` and single-threaded, which keeps every
//! run bit-for-bit reproducible.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::sampling::ClassWeights;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 128,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return fail("transformer dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Which schedule group a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Embeddings,
    Layer(usize),
    /// Final layer norm plus the LM and classifier heads; always trainable.
    Heads,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_query: Array2<f64>,
    pub b_query: Array1<f64>,
    pub w_key: Array2<f64>,
    pub b_key: Array1<f64>,
    pub w_value: Array2<f64>,
    pub b_value: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

/// Every trainable tensor. Also used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
    pub lm_bias: Array1<f64>,
    pub cls_weight: Array2<f64>,
    pub cls_bias: Array1<f64>,
}

fn uniform2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    uniform2(rng, fan_in, fan_out, (6.0 / (fan_in + fan_out) as f64).sqrt())
}

macro_rules! flat {
    ($t:expr) => {
        $t.as_slice().expect("parameters are contiguous")
    };
}

macro_rules! flat_mut {
    ($t:expr) => {
        $t.as_slice_mut().expect("parameters are contiguous")
    };
}

impl LayerParams {
    fn zeros(cfg: &TransformerConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let v = || Array1::zeros(d);
        let m = || Array2::zeros((d, d));
        LayerParams {
            ln1_gain: v(),
            ln1_bias: v(),
            w_query: m(),
            b_query: v(),
            w_key: m(),
            b_key: v(),
            w_value: m(),
            b_value: v(),
            w_out: m(),
            b_out: v(),
            ln2_gain: v(),
            ln2_bias: v(),
            w_ff1: Array2::zeros((d, f)),
            b_ff1: Array1::zeros(f),
            w_ff2: Array2::zeros((f, d)),
            b_ff2: v(),
        }
    }

    fn init(cfg: &TransformerConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        LayerParams {
            ln1_gain: Array1::ones(d),
            w_query: xavier(rng, d, d),
            w_key: xavier(rng, d, d),
            w_value: xavier(rng, d, d),
            w_out: xavier(rng, d, d),
            ln2_gain: Array1::ones(d),
            w_ff1: xavier(rng, d, f),
            w_ff2: xavier(rng, f, d),
            ..Self::zeros(cfg)
        }
    }

    const NAMES: [&'static str; 16] = [
        "ln1_gain", "ln1_bias", "w_query", "b_query", "w_key", "b_key", "w_value", "b_value", "w_out", "b_out",
        "ln2_gain", "ln2_bias", "w_ff1", "b_ff1", "w_ff2", "b_ff2",
    ];

    fn slices(&self) -> [&[f64]; 16] {
        [
            flat!(self.ln1_gain),
            flat!(self.ln1_bias),
            flat!(self.w_query),
            flat!(self.b_query),
            flat!(self.w_key),
            flat!(self.b_key),
            flat!(self.w_value),
            flat!(self.b_value),
            flat!(self.w_out),
            flat!(self.b_out),
            flat!(self.ln2_gain),
            flat!(self.ln2_bias),
            flat!(self.w_ff1),
            flat!(self.b_ff1),
            flat!(self.w_ff2),
            flat!(self.b_ff2),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 16] {
        let LayerParams {
            ln1_gain,
            ln1_bias,
            w_query,
            b_query,
            w_key,
            b_key,
            w_value,
            b_value,
            w_out,
            b_out,
            ln2_gain,
            ln2_bias,
            w_ff1,
            b_ff1,
            w_ff2,
            b_ff2,
        } = self;
        [
            flat_mut!(ln1_gain),
            flat_mut!(ln1_bias),
            flat_mut!(w_query),
            flat_mut!(b_query),
            flat_mut!(w_key),
            flat_mut!(b_key),
            flat_mut!(w_value),
            flat_mut!(b_value),
            flat_mut!(w_out),
            flat_mut!(b_out),
            flat_mut!(ln2_gain),
            flat_mut!(ln2_bias),
            flat_mut!(w_ff1),
            flat_mut!(b_ff1),
            flat_mut!(w_ff2),
            flat_mut!(b_ff2),
        ]
    }

    fn shapes(cfg: &TransformerConfig) -> [Vec<usize>; 16] {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        [
            vec![d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
        ]
    }
}

/// Name, group and shape of one tensor, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

impl Params {
    pub fn zeros(cfg: &TransformerConfig, vocab_size: usize) -> Self {
        let d = cfg.d_model;
        Params {
            token_emb: Array2::zeros((vocab_size, d)),
            pos_emb: Array2::zeros((cfg.max_len, d)),
            layers: (0..cfg.n_layers).map(|_| LayerParams::zeros(cfg)).collect(),
            final_gain: Array1::zeros(d),
            final_bias: Array1::zeros(d),
            lm_bias: Array1::zeros(vocab_size),
            cls_weight: Array2::zeros((d, 2)),
            cls_bias: Array1::zeros(2),
        }
    }

    pub fn init(cfg: &TransformerConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let emb_bound = 0.1;
        Params {
            token_emb: uniform2(&mut rng, vocab_size, d, emb_bound),
            pos_emb: uniform2(&mut rng, cfg.max_len, d, emb_bound),
            layers: (0..cfg.n_layers).map(|_| LayerParams::init(cfg, &mut rng)).collect(),
            final_gain: Array1::ones(d),
            final_bias: Array1::zeros(d),
            lm_bias: Array1::zeros(vocab_size),
            cls_weight: xavier(&mut rng, d, 2),
            cls_bias: Array1::zeros(2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// Tensor layout in canonical order.
    pub fn specs(cfg: &TransformerConfig, vocab_size: usize) -> Vec<TensorSpec> {
        let d = cfg.d_model;
        let spec = |name: String, group, shape: Vec<usize>| TensorSpec { name, group, shape };
        let mut out = vec![
            spec("token_emb".into(), ParamGroup::Embeddings, vec![vocab_size, d]),
            spec("pos_emb".into(), ParamGroup::Embeddings, vec![cfg.max_len, d]),
        ];
        for l in 0..cfg.n_layers {
            for (name, shape) in LayerParams::NAMES.iter().zip(LayerParams::shapes(cfg)) {
                out.push(spec(format!("layer{l}.{name}"), ParamGroup::Layer(l), shape));
            }
        }
        out.extend([
            spec("final_gain".into(), ParamGroup::Heads, vec![d]),
            spec("final_bias".into(), ParamGroup::Heads, vec![d]),
            spec("lm_bias".into(), ParamGroup::Heads, vec![vocab_size]),
            spec("cls_weight".into(), ParamGroup::Heads, vec![d, 2]),
            spec("cls_bias".into(), ParamGroup::Heads, vec![2]),
        ]);
        out
    }

    /// Flat views in the same order as [`Params::specs`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![flat!(self.token_emb), flat!(self.pos_emb)];
        for l in &self.layers {
            out.extend(l.slices());
        }
        out.extend([
            flat!(self.final_gain),
            flat!(self.final_bias),
            flat!(self.lm_bias),
            flat!(self.cls_weight),
            flat!(self.cls_bias),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Params {
            token_emb,
            pos_emb,
            layers,
            final_gain,
            final_bias,
            lm_bias,
            cls_weight,
            cls_bias,
        } = self;
        let mut out = vec![flat_mut!(token_emb), flat_mut!(pos_emb)];
        for l in layers.iter_mut() {
            out.extend(l.slices_mut());
        }
        out.extend([
            flat_mut!(final_gain),
            flat_mut!(final_bias),
            flat_mut!(lm_bias),
            flat_mut!(cls_weight),
            flat_mut!(cls_bias),
        ]);
        out
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut out = vec![ParamGroup::Embeddings; 2];
        for l in 0..self.layers.len() {
            out.extend([ParamGroup::Layer(l); 16]);
        }
        out.extend([ParamGroup::Heads; 5]);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Per-layer freeze mask and learning-rate multipliers. Index `i` is encoder
/// layer `i` counted from the bottom; the embeddings sit below layer 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    pub frozen: Vec<bool>,
    pub lr_scale: Vec<f64>,
    pub embeddings_frozen: bool,
    pub embeddings_lr_scale: f64,
}

impl LayerSchedule {
    pub fn all_trainable(n_layers: usize) -> Self {
        LayerSchedule {
            frozen: vec![false; n_layers],
            lr_scale: vec![1.0; n_layers],
            embeddings_frozen: false,
            embeddings_lr_scale: 1.0,
        }
    }

    /// Gradual unfreezing with discriminative rates. In epoch `e` (1-based)
    /// the top `e * unfreeze_per_epoch` groups train (encoder layers from
    /// the top, then the embeddings); the group at depth `l` from the top
    /// gets scale `1 / decay^l`. `unfreeze_per_epoch == 0` unfreezes all.
    pub fn for_epoch(n_layers: usize, epoch: usize, unfreeze_per_epoch: usize, decay: f64) -> Self {
        let open = if unfreeze_per_epoch == 0 {
            usize::MAX
        } else {
            epoch.saturating_mul(unfreeze_per_epoch)
        };
        let depth = |layer: usize| n_layers - 1 - layer;
        LayerSchedule {
            frozen: (0..n_layers).map(|l| depth(l) >= open).collect(),
            lr_scale: (0..n_layers).map(|l| decay.powi(depth(l) as i32).recip()).collect(),
            embeddings_frozen: n_layers >= open,
            embeddings_lr_scale: decay.powi(n_layers as i32).recip(),
        }
    }

    /// `None` when the group is frozen.
    pub fn scale(&self, group: ParamGroup) -> Option<f64> {
        match group {
            ParamGroup::Heads => Some(1.0),
            ParamGroup::Embeddings => (!self.embeddings_frozen).then_some(self.embeddings_lr_scale),
            ParamGroup::Layer(l) => (!self.frozen[l]).then_some(self.lr_scale[l]),
        }
    }
}

/// Training-stage bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Initialized,
    Pretrained,
    LmFinetuned,
    Classifier,
}

impl Stage {
    pub fn number(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyTransformer {
    pub config: TransformerConfig,
    pub vocab: Vocab,
    pub params: Params,
    pub stage: Stage,
    pub schedule: LayerSchedule,
}

/// One masked-LM training example: `input` starts with `[CLS]`; `targets`
/// holds `(position, original id)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmExample {
    pub input: Vec<u32>,
    pub targets: Vec<(usize, u32)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MlmStats {
    /// Mean cross-entropy over all targets in the batch.
    pub loss: f64,
    pub n_targets: usize,
    pub n_correct: usize,
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct LayerCache {
    ln1: LnCache,
    normed1: Array2<f64>,
    query: Array2<f64>,
    key: Array2<f64>,
    value: Array2<f64>,
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
    ln2: LnCache,
    normed2: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
}

struct SeqCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    hidden: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_bias: &mut Array1<f64>,
) -> Array2<f64> {
    *d_gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *d_bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let mean_dxhat = dxhat.mean_axis(Axis(1)).expect("non-empty rows");
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).mean_axis(Axis(1)).expect("non-empty rows");
    let mut dx = dxhat - mean_dxhat.view().insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dxhat_xhat.view().insert_axis(Axis(1)));
    dx * cache.rstd.view().insert_axis(Axis(1))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax, numerically stabilised.
pub fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let e = v.mapv(|x| (x - max).exp());
    let sum = e.sum();
    e / sum
}

/// First index of the maximum.
fn argmax(v: &Array1<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

fn add_bias(mut m: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    m += b;
    m
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a = a.insert_axis(Axis(1));
    let b = b.insert_axis(Axis(0));
    a.dot(&b)
}

impl TinyTransformer {
    pub fn new(config: TransformerConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, vocab.len(), seed);
        Ok(Self {
            schedule: LayerSchedule::all_trainable(config.n_layers),
            config,
            vocab,
            params,
            stage: Stage::Initialized,
        })
    }

    pub fn encode<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        self.vocab.encode(words, self.config.max_len)
    }

    pub fn check_input(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() || ids.len() > self.config.max_len {
            return Err(Error::DimensionMismatch(format!(
                "sequence length {} outside 1..={}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.vocab.len()) {
            return Err(Error::DimensionMismatch(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, ids: &[u32]) -> SeqCache {
        let p = &self.params;
        let cfg = &self.config;
        let (t_len, dh) = (ids.len(), cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = Array2::zeros((t_len, cfg.d_model));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row += &p.token_emb.row(id as usize);
            row += &p.pos_emb.row(t);
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lp in &p.layers {
            let (normed1, ln1) = layer_norm(&x, &lp.ln1_gain, &lp.ln1_bias);
            let query = add_bias(normed1.dot(&lp.w_query), &lp.b_query);
            let key = add_bias(normed1.dot(&lp.w_key), &lp.b_key);
            let value = add_bias(normed1.dot(&lp.w_value), &lp.b_value);
            let mut concat = Array2::zeros((t_len, cfg.d_model));
            let mut attn = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut scores = query.slice(cols).dot(&key.slice(cols).t()) * scale;
                softmax_rows(&mut scores);
                concat.slice_mut(cols).assign(&scores.dot(&value.slice(cols)));
                attn.push(scores);
            }
            x = x + add_bias(concat.dot(&lp.w_out), &lp.b_out);

            let (normed2, ln2) = layer_norm(&x, &lp.ln2_gain, &lp.ln2_bias);
            let ff_pre = add_bias(normed2.dot(&lp.w_ff1), &lp.b_ff1);
            let ff_act = ff_pre.mapv(gelu);
            x = x + add_bias(ff_act.dot(&lp.w_ff2), &lp.b_ff2);

            layers.push(LayerCache {
                ln1,
                normed1,
                query,
                key,
                value,
                attn,
                concat,
                ln2,
                normed2,
                ff_pre,
                ff_act,
            });
        }
        let (hidden, final_ln) = layer_norm(&x, &p.final_gain, &p.final_bias);
        SeqCache {
            ids: ids.to_vec(),
            layers,
            final_ln,
            hidden,
        }
    }

    /// Backpropagates `d_hidden` (gradient w.r.t. the final hidden states)
    /// through the encoder, accumulating into `grads`.
    fn backward(&self, cache: &SeqCache, d_hidden: &Array2<f64>, grads: &mut Params) {
        let p = &self.params;
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dx = layer_norm_backward(
            d_hidden,
            &cache.final_ln,
            &p.final_gain,
            &mut grads.final_gain,
            &mut grads.final_bias,
        );

        for (l, (lp, lc)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
            let g = &mut grads.layers[l];

            // Feed-forward residual branch.
            g.w_ff2 += &lc.ff_act.t().dot(&dx);
            g.b_ff2 += &dx.sum_axis(Axis(0));
            let mut d_pre = dx.dot(&lp.w_ff2.t());
            Zip::from(&mut d_pre)
                .and(&lc.ff_pre)
                .for_each(|d, &x| *d *= gelu_grad(x));
            g.w_ff1 += &lc.normed2.t().dot(&d_pre);
            g.b_ff1 += &d_pre.sum_axis(Axis(0));
            let d_normed2 = d_pre.dot(&lp.w_ff1.t());
            dx += &layer_norm_backward(&d_normed2, &lc.ln2, &lp.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);

            // Attention residual branch.
            g.w_out += &lc.concat.t().dot(&dx);
            g.b_out += &dx.sum_axis(Axis(0));
            let d_concat = dx.dot(&lp.w_out.t());
            let mut d_query = Array2::zeros(lc.query.raw_dim());
            let mut d_key = Array2::zeros(lc.key.raw_dim());
            let mut d_value = Array2::zeros(lc.value.raw_dim());
            for (h, attn) in lc.attn.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let d_out = d_concat.slice(cols);
                let d_attn = d_out.dot(&lc.value.slice(cols).t());
                d_value.slice_mut(cols).assign(&attn.t().dot(&d_out));
                let row_dot = (&d_attn * attn).sum_axis(Axis(1));
                let d_scores = (d_attn - &row_dot.insert_axis(Axis(1))) * attn * scale;
                d_query.slice_mut(cols).assign(&d_scores.dot(&lc.key.slice(cols)));
                d_key.slice_mut(cols).assign(&d_scores.t().dot(&lc.query.slice(cols)));
            }
            g.w_query += &lc.normed1.t().dot(&d_query);
            g.b_query += &d_query.sum_axis(Axis(0));
            g.w_key += &lc.normed1.t().dot(&d_key);
            g.b_key += &d_key.sum_axis(Axis(0));
            g.w_value += &lc.normed1.t().dot(&d_value);
            g.b_value += &d_value.sum_axis(Axis(0));
            let d_normed1 = d_query.dot(&lp.w_query.t()) + d_key.dot(&lp.w_key.t()) + d_value.dot(&lp.w_value.t());
            dx += &layer_norm_backward(&d_normed1, &lc.ln1, &lp.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
        }

        for (t, &id) in cache.ids.iter().enumerate() {
            let row = dx.row(t);
            let mut e = grads.token_emb.row_mut(id as usize);
            e += &row;
            let mut pe = grads.pos_emb.row_mut(t);
            pe += &row;
        }
    }

    /// Final hidden states for one sequence (`T x d_model`).
    pub fn hidden_states(&self, ids: &[u32]) -> Result<Array2<f64>> {
        self.check_input(ids)?;
        Ok(self.forward(ids).hidden)
    }

    /// Attention probabilities of every layer and head for one sequence.
    pub fn attention_maps(&self, ids: &[u32]) -> Result<Vec<Vec<Array2<f64>>>> {
        self.check_input(ids)?;
        Ok(self.forward(ids).layers.into_iter().map(|l| l.attn).collect())
    }

    fn lm_logits(&self, hidden_row: ArrayView1<f64>) -> Array1<f64> {
        self.params.token_emb.dot(&hidden_row) + &self.params.lm_bias
    }

    /// Masked-LM cross-entropy averaged over every target in the batch.
    /// When `grads` is given, the gradient of that mean is added to it.
    pub fn mlm_loss(&self, batch: &[MlmExample], grads: Option<&mut Params>) -> MlmStats {
        let n_targets: usize = batch.iter().map(|e| e.targets.len()).sum();
        if n_targets == 0 {
            return MlmStats::default();
        }
        let norm = 1.0 / n_targets as f64;
        let (total, n_correct) = self.mlm_accumulate(batch, norm, grads);
        MlmStats {
            loss: total * norm,
            n_targets,
            n_correct,
        }
    }

    /// Summed target cross-entropy and correct-prediction count; gradients
    /// are scaled by `norm`.
    pub(crate) fn mlm_accumulate(
        &self,
        batch: &[MlmExample],
        norm: f64,
        mut grads: Option<&mut Params>,
    ) -> (f64, usize) {
        let mut total = 0.0;
        let mut n_correct = 0;
        for ex in batch.iter().filter(|e| !e.targets.is_empty()) {
            let cache = self.forward(&ex.input);
            let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
            for &(pos, target) in &ex.targets {
                let h = cache.hidden.row(pos);
                let logits = self.lm_logits(h);
                if argmax(&logits) == target as usize {
                    n_correct += 1;
                }
                let probs = softmax(logits.view());
                total -= probs[target as usize].ln();
                if let Some(g) = grads.as_deref_mut() {
                    let mut d_logits = probs;
                    d_logits[target as usize] -= 1.0;
                    d_logits *= norm;
                    g.lm_bias += &d_logits;
                    g.token_emb += &outer(d_logits.view(), h);
                    let mut dh_row = d_hidden.row_mut(pos);
                    dh_row += &d_logits.dot(&self.params.token_emb);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                self.backward(&cache, &d_hidden, g);
            }
        }
        (total, n_correct)
    }

    /// Two-way logits read from the `[CLS]` position.
    fn cls_logits(&self, hidden: &Array2<f64>) -> Array1<f64> {
        hidden.row(0).dot(&self.params.cls_weight) + &self.params.cls_bias
    }

    /// Class-weighted cross-entropy, `(1/n) * sum w_y * CE`.
    pub fn classification_loss(
        &self,
        batch: &[(Vec<u32>, Label)],
        weights: &ClassWeights,
        grads: Option<&mut Params>,
    ) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let norm = 1.0 / batch.len() as f64;
        self.cls_accumulate(batch, weights, norm, grads) * norm
    }

    /// Summed weighted cross-entropy; gradients are scaled by `norm`.
    pub(crate) fn cls_accumulate(
        &self,
        batch: &[(Vec<u32>, Label)],
        weights: &ClassWeights,
        norm: f64,
        mut grads: Option<&mut Params>,
    ) -> f64 {
        let mut total = 0.0;
        for (ids, label) in batch {
            let cache = self.forward(ids);
            let probs = softmax(self.cls_logits(&cache.hidden).view());
            let y = *label as usize;
            let w = weights.for_label(*label);
            total -= w * probs[y].ln();
            if let Some(g) = grads.as_deref_mut() {
                let mut d_logits = probs;
                d_logits[y] -= 1.0;
                d_logits *= w * norm;
                let h0 = cache.hidden.row(0);
                g.cls_weight += &outer(h0, d_logits.view());
                g.cls_bias += &d_logits;
                let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
                d_hidden.row_mut(0).assign(&self.params.cls_weight.dot(&d_logits));
                self.backward(&cache, &d_hidden, g);
            }
        }
        total
    }

    /// `[P(Irrelevant), P(Relevant)]` for one encoded sequence.
    pub fn class_probabilities(&self, ids: &[u32]) -> Result<[f64; 2]> {
        self.check_input(ids)?;
        let cache = self.forward(ids);
        let p = softmax(self.cls_logits(&cache.hidden).view());
        Ok([p[0], p[1]])
    }

    pub fn predict_proba(&self, ids: &[u32]) -> Result<f64> {
        Ok(self.class_probabilities(ids)?[1])
    }

    /// Most likely token at `pos`.
    pub fn predict_token(&self, ids: &[u32], pos: usize) -> Result<u32> {
        self.check_input(ids)?;
        if pos >= ids.len() {
            return Err(Error::DimensionMismatch(format!("position {pos} beyond sequence")));
        }
        let cache = self.forward(ids);
        Ok(argmax(&self.lm_logits(cache.hidden.row(pos))) as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TinyTransformer {
        let words = ["alpha beta gamma", "delta alpha beta", "gamma gamma delta"];
        let vocab = Vocab::build(words.iter().map(|s| s.split(' ')), 1).unwrap();
        let cfg = TransformerConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_len: 8,
        };
        TinyTransformer::new(cfg, vocab, 7).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TransformerConfig {
            d_model: 10,
            n_heads: 4,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TransformerConfig::default().validate().is_ok());
    }

    #[test]
    fn specs_match_tensors() {
        let m = tiny();
        let specs = Params::specs(&m.config, m.vocab.len());
        let tensors = m.params.tensors();
        assert_eq!(specs.len(), tensors.len());
        for (s, t) in specs.iter().zip(&tensors) {
            assert_eq!(s.shape.iter().product::<usize>(), t.len(), "{}", s.name);
        }
        let groups = m.params.groups();
        assert!(specs.iter().zip(groups).all(|(s, g)| s.group == g));
    }

    #[test]
    fn probabilities_are_complementary() {
        let m = tiny();
        let ids = m.encode(["alpha", "gamma", "unknown"]);
        let [a, b] = m.class_probabilities(&ids).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn rejects_bad_input() {
        let m = tiny();
        assert!(m.predict_proba(&[]).is_err());
        assert!(m.predict_proba(&[3, 999]).is_err());
        assert!(m.predict_proba(&[3; 9]).is_err());
    }

    #[test]
    fn schedule_unfreezes_top_down() {
        let s = LayerSchedule::for_epoch(3, 1, 1, 2.6);
        assert_eq!(s.frozen, vec![true, true, false]);
        assert!(s.embeddings_frozen);
        let s = LayerSchedule::for_epoch(3, 3, 1, 2.6);
        assert_eq!(s.frozen, vec![false, false, false]);
        assert!(s.embeddings_frozen);
        assert!(!LayerSchedule::for_epoch(3, 4, 1, 2.6).embeddings_frozen);
        assert!((s.lr_scale[0] - 1.0 / (2.6f64 * 2.6)).abs() < 1e-15);
        assert_eq!(s.lr_scale[2], 1.0);
        let all = LayerSchedule::for_epoch(3, 1, 0, 2.6);
        assert!(!all.embeddings_frozen && all.frozen.iter().all(|f| !f));
        assert_eq!(s.scale(ParamGroup::Heads), Some(1.0));
        assert_eq!(LayerSchedule::for_epoch(3, 1, 1, 2.6).scale(ParamGroup::Layer(0)), None);
    }
}
