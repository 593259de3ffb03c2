//! Masked-LM corruption, the optimizer, and the three training stages.

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{OptimizerKind, TrainConfig};
use super::transformer::{LayerSchedule, MlmExample, Params, Stage, TinyTransformer};
use super::vocab::{Vocab, MASK, N_SPECIAL};
use crate::corpus::{Label, Sentence};
use crate::error::{Error, Result};
use crate::sampling::ClassWeights;

/// Examples per gradient chunk. Chunks are summed in order, so results do
/// not depend on the thread count.
const CHUNK: usize = 4;
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Number of positions selected out of `n` maskable ones.
pub fn n_masked(n: usize, mask_prob: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((mask_prob * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Corrupts each sequence for masked-LM training.
///
/// Picks `ceil(mask_prob * n)` of the `n` non-special positions; each chosen
/// position becomes `[MASK]` with probability 0.8, a random ordinary token
/// with probability 0.1, and stays unchanged otherwise. Sequences without a
/// maskable token come back unmodified with no targets.
pub fn mask_batch(
    batch: &[Vec<u32>],
    mask_prob: f64,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MlmExample>> {
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(Error::InvalidConfig(format!("mask_prob {mask_prob} outside (0, 1)")));
    }
    let mut out = Vec::with_capacity(batch.len());
    for ids in batch {
        let maskable: Vec<usize> = (0..ids.len()).filter(|&i| !Vocab::is_special(ids[i])).collect();
        let k = n_masked(maskable.len(), mask_prob);
        let mut chosen: Vec<usize> = index::sample(rng, maskable.len(), k)
            .into_iter()
            .map(|i| maskable[i])
            .collect();
        chosen.sort_unstable();
        let mut input = ids.clone();
        let mut targets = Vec::with_capacity(k);
        for pos in chosen {
            let r: f64 = rng.random();
            if r < 0.8 {
                input[pos] = MASK;
            } else if r < 0.9 {
                input[pos] = rng.random_range(N_SPECIAL as u32..vocab_size as u32);
            }
            targets.push((pos, ids[pos]));
        }
        out.push(MlmExample { input, targets });
    }
    Ok(out)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// SGD or Adam with global gradient-norm clipping. Frozen tensors are
/// skipped entirely, including their moment estimates.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    clip_norm: f64,
    moments: Option<(Params, Params)>,
    steps: i32,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            kind: cfg.optimizer,
            learning_rate: cfg.learning_rate,
            clip_norm: cfg.clip_norm,
            moments: None,
            steps: 0,
        }
    }

    /// Applies one update; returns the pre-clip gradient norm over the
    /// trainable tensors.
    pub fn step(&mut self, params: &mut Params, grads: &Params, schedule: &LayerSchedule) -> f64 {
        let groups = params.groups();
        let scales: Vec<Option<f64>> = groups.iter().map(|&g| schedule.scale(g)).collect();
        let norm = grads
            .tensors()
            .iter()
            .zip(&scales)
            .filter(|(_, s)| s.is_some())
            .flat_map(|(t, _)| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let clip = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((p, g), s) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(&scales) {
                    let Some(scale) = s else { continue };
                    let lr = self.learning_rate * scale * clip;
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
                let bc1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.steps);
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                    .zip(&scales);
                for ((((p, g), m), v), s) in tensors {
                    let Some(scale) = s else { continue };
                    let lr = self.learning_rate * scale;
                    for i in 0..p.len() {
                        let gi = g[i] * clip;
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        norm
    }
}

fn add_into(acc: &mut Params, other: &Params) {
    for (a, b) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Mean-MLM gradient over a batch, computed in parallel chunks.
fn mlm_gradient(model: &TinyTransformer, batch: &[MlmExample]) -> (Params, f64, usize) {
    let n_targets: usize = batch.iter().map(|e| e.targets.len()).sum();
    let norm = 1.0 / n_targets.max(1) as f64;
    let parts: Vec<(Params, f64)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.params.zeros_like();
            let (loss, _) = model.mlm_accumulate(chunk, norm, Some(&mut g));
            (g, loss)
        })
        .collect();
    sum_parts(model, parts, n_targets)
}

fn cls_gradient(model: &TinyTransformer, batch: &[(Vec<u32>, Label)], weights: &ClassWeights) -> (Params, f64, usize) {
    let norm = 1.0 / batch.len().max(1) as f64;
    let parts: Vec<(Params, f64)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.params.zeros_like();
            let loss = model.cls_accumulate(chunk, weights, norm, Some(&mut g));
            (g, loss)
        })
        .collect();
    sum_parts(model, parts, batch.len())
}

fn sum_parts(model: &TinyTransformer, parts: Vec<(Params, f64)>, count: usize) -> (Params, f64, usize) {
    let mut grads = model.params.zeros_like();
    let mut loss = 0.0;
    for (g, l) in &parts {
        add_into(&mut grads, g);
        loss += l;
    }
    (grads, loss, count)
}

/// Per-epoch losses of one training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    /// Mean training loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

struct DivergenceGuard {
    stage: &'static str,
    initial: Option<f64>,
}

impl DivergenceGuard {
    fn new(stage: &'static str) -> Self {
        Self { stage, initial: None }
    }

    fn check(&mut self, epoch: usize, loss: f64, params: &Params) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if !loss.is_finite() || loss > initial * DIVERGENCE_FACTOR || !params.all_finite() {
            return Err(Error::Divergence {
                stage: self.stage.into(),
                epoch,
                loss,
                initial,
            });
        }
        Ok(())
    }
}

fn encode_all<'a>(model: &TinyTransformer, sentences: impl IntoIterator<Item = &'a Sentence>) -> Vec<Vec<u32>> {
    sentences.into_iter().map(|s| model.encode(s.words())).collect()
}

fn check_stage(model: &TinyTransformer, allowed: &[Stage], what: &str, cfg: &TrainConfig) -> Result<()> {
    if allowed.contains(&model.stage) {
        return Ok(());
    }
    if cfg.skip_lm_stages {
        warn!(
            "{what}: model is at stage {:?}; continuing because skip_lm_stages is set",
            model.stage
        );
        return Ok(());
    }
    Err(Error::StageOrder(format!(
        "{what} requires a model at stage {allowed:?}, found {:?}",
        model.stage
    )))
}

fn run_mlm(
    model: &mut TinyTransformer,
    data: &[Vec<u32>],
    cfg: &TrainConfig,
    name: &'static str,
) -> Result<(Vec<f64>, usize)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    model.schedule = LayerSchedule::all_trainable(model.config.n_layers);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg);
    let mut guard = DivergenceGuard::new(name);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut n) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let raw: Vec<Vec<u32>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let batch = mask_batch(&raw, cfg.mask_prob, model.vocab.len(), &mut rng)?;
            let (grads, loss, count) = mlm_gradient(model, &batch);
            if count == 0 {
                continue;
            }
            total += loss;
            n += count;
            opt.step(&mut model.params, &grads, &model.schedule);
            steps += 1;
        }
        let mean = if n == 0 { 0.0 } else { total / n as f64 };
        guard.check(epoch, mean, &model.params)?;
        info!("{name} epoch {epoch}: loss {mean:.5}");
        losses.push(mean);
    }
    Ok((losses, steps))
}

/// Stage 1: masked-LM pretraining, typically on a merged corpus.
pub fn pretrain_lm<'a>(
    model: &mut TinyTransformer,
    sentences: impl IntoIterator<Item = &'a Sentence>,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    check_stage(model, &[Stage::Initialized, Stage::Pretrained], "LM pretraining", cfg)?;
    let data = encode_all(model, sentences);
    let (epoch_losses, steps) = run_mlm(model, &data, cfg, "lm-pretrain")?;
    model.stage = Stage::Pretrained;
    Ok(StageReport {
        stage: model.stage,
        epoch_losses,
        steps,
    })
}

/// Stage 2: the same objective on task text only.
pub fn finetune_lm<'a>(
    model: &mut TinyTransformer,
    sentences: impl IntoIterator<Item = &'a Sentence>,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    check_stage(model, &[Stage::Pretrained, Stage::LmFinetuned], "LM fine-tuning", cfg)?;
    let data = encode_all(model, sentences);
    let (epoch_losses, steps) = run_mlm(model, &data, cfg, "lm-finetune")?;
    model.stage = Stage::LmFinetuned;
    Ok(StageReport {
        stage: model.stage,
        epoch_losses,
        steps,
    })
}

/// Stage 3: classifier fine-tuning with gradual unfreezing and
/// per-layer learning rates (see [`LayerSchedule::for_epoch`]).
pub fn finetune_classifier<'a>(
    model: &mut TinyTransformer,
    sentences: impl IntoIterator<Item = &'a Sentence>,
    weights: ClassWeights,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    cfg.validate()?;
    check_stage(
        model,
        &[Stage::LmFinetuned, Stage::Classifier],
        "classifier fine-tuning",
        cfg,
    )?;
    let data: Vec<(Vec<u32>, Label)> = sentences
        .into_iter()
        .map(|s| (model.encode(s.words()), s.label))
        .collect();
    let n_rel = data.iter().filter(|d| d.1.is_relevant()).count();
    if n_rel == 0 || n_rel == data.len() {
        return Err(Error::SingleClass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg);
    let mut guard = DivergenceGuard::new("classifier");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        model.schedule = LayerSchedule::for_epoch(
            model.config.n_layers,
            epoch,
            cfg.unfreeze_per_epoch,
            cfg.lr_decay_per_layer,
        );
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<u32>, Label)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (grads, loss, _) = cls_gradient(model, &batch, &weights);
            total += loss;
            opt.step(&mut model.params, &grads, &model.schedule);
            steps += 1;
        }
        let mean = total / data.len() as f64;
        guard.check(epoch, mean, &model.params)?;
        info!("classifier epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    model.stage = Stage::Classifier;
    Ok(StageReport {
        stage: model.stage,
        epoch_losses,
        steps,
    })
}

/// Masks every maskable position in turn and counts correct predictions.
/// Returns 0 when there is nothing to mask.
pub fn masked_token_accuracy<'a>(
    model: &TinyTransformer,
    sentences: impl IntoIterator<Item = &'a Sentence>,
) -> Result<f64> {
    let data = encode_all(model, sentences);
    let per_sentence: Vec<Result<(usize, usize)>> = data
        .par_iter()
        .map(|ids| {
            let mut hits = 0;
            let mut total = 0;
            for pos in (0..ids.len()).filter(|&p| !Vocab::is_special(ids[p])) {
                let mut input = ids.clone();
                input[pos] = MASK;
                if model.predict_token(&input, pos)? == ids[pos] {
                    hits += 1;
                }
                total += 1;
            }
            Ok((hits, total))
        })
        .collect();
    let (mut hits, mut total) = (0, 0);
    for r in per_sentence {
        let (h, t) = r?;
        hits += h;
        total += t;
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Mean masked-LM loss under one fixed corruption drawn from `seed`.
pub fn mlm_eval_loss<'a>(
    model: &TinyTransformer,
    sentences: impl IntoIterator<Item = &'a Sentence>,
    mask_prob: f64,
    seed: u64,
) -> Result<f64> {
    let data = encode_all(model, sentences);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = mask_batch(&data, mask_prob, model.vocab.len(), &mut rng)?;
    Ok(model.mlm_loss(&batch, None).loss)
}

/// Analytic-versus-numeric comparison for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `|g_a - g_n| / max(|g_a| + |g_n|, 1e-12)` over the whole tensor.
    pub relative_error: f64,
    pub analytic_norm: f64,
}

/// Checks gradients of `mlm + classification` loss against central
/// differences with step `h`.
pub fn gradient_check(
    model: &TinyTransformer,
    mlm: &[MlmExample],
    cls: &[(Vec<u32>, Label)],
    weights: &ClassWeights,
    h: f64,
) -> Vec<TensorCheck> {
    let loss = |m: &TinyTransformer| m.mlm_loss(mlm, None).loss + m.classification_loss(cls, weights, None);
    let mut analytic = model.params.zeros_like();
    model.mlm_loss(mlm, Some(&mut analytic));
    model.classification_loss(cls, weights, Some(&mut analytic));

    let specs = Params::specs(&model.config, model.vocab.len());
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(specs.len());
    for (t, spec) in specs.iter().enumerate() {
        let a = analytic.tensors()[t].to_vec();
        let mut diff2 = 0.0;
        let mut num2 = 0.0;
        for (i, &ga) in a.iter().enumerate() {
            let orig = probe.params.tensors()[t][i];
            probe.params.tensors_mut()[t][i] = orig + h;
            let plus = loss(&probe);
            probe.params.tensors_mut()[t][i] = orig - h;
            let minus = loss(&probe);
            probe.params.tensors_mut()[t][i] = orig;
            let gn = (plus - minus) / (2.0 * h);
            diff2 += (ga - gn).powi(2);
            num2 += gn * gn;
        }
        let an = a.iter().map(|g| g * g).sum::<f64>().sqrt();
        let nn = num2.sqrt();
        out.push(TensorCheck {
            name: spec.name.clone(),
            relative_error: diff2.sqrt() / (an + nn).max(1e-12),
            analytic_norm: an,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceiling_arithmetic() {
        assert_eq!(n_masked(10, 0.15), 2);
        assert_eq!(n_masked(20, 0.15), 3);
        assert_eq!(n_masked(1, 0.15), 1);
        assert_eq!(n_masked(0, 0.5), 0);
        assert_eq!(n_masked(10, 0.5), 5);
    }

    #[test]
    fn mask_selects_only_ordinary_tokens() {
        let ids: Vec<u32> = vec![3, 4, 20, 21, 22, 1, 23, 24, 25, 26, 27, 28, 29, 30];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = mask_batch(std::slice::from_ref(&ids), 0.15, 40, &mut rng).unwrap();
        assert_eq!(out[0].targets.len(), 2);
        for &(p, t) in &out[0].targets {
            assert_eq!(ids[p], t);
            assert!(!Vocab::is_special(t));
        }
        let specials = vec![vec![3u32, 0, 4, 5, 9]];
        let out = mask_batch(&specials, 0.5, 40, &mut rng).unwrap();
        assert!(out[0].targets.is_empty());
        assert_eq!(out[0].input, specials[0]);
    }

    #[test]
    fn mask_is_seeded() {
        let batch: Vec<Vec<u32>> = (0..5).map(|k| (10..30).map(|i| i + k).collect()).collect();
        let a = mask_batch(&batch, 0.3, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mask_batch(&batch, 0.3, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corruption_split_is_roughly_80_10_10() {
        let batch: Vec<Vec<u32>> = vec![(10..110).collect(); 200];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = mask_batch(&batch, 0.5, 1000, &mut rng).unwrap();
        let (mut masked, mut same, mut total) = (0usize, 0usize, 0usize);
        for ex in &out {
            for &(p, t) in &ex.targets {
                total += 1;
                if ex.input[p] == MASK {
                    masked += 1;
                } else if ex.input[p] == t {
                    same += 1;
                }
            }
        }
        let frac = |c: usize| c as f64 / total as f64;
        assert!((frac(masked) - 0.8).abs() < 0.02, "{}", frac(masked));
        assert!(frac(same) > 0.08 && frac(same) < 0.12, "{}", frac(same));
    }
}
