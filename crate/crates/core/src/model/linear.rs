//! Class-weighted logistic regression over hashed features, trained with
//! mini-batch SGD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::features::SparseFeatures;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::sampling::ClassWeights;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Loss weights the model was trained with.
    pub class_weights: ClassWeights,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary cross-entropy of logit `z` against `label`.
pub fn bce_from_logit(z: f64, label: Label) -> f64 {
    match label {
        Label::Relevant => softplus(-z),
        Label::Irrelevant => softplus(z),
    }
}

pub fn weighted_bce_from_logit(z: f64, label: Label, weights: &ClassWeights) -> f64 {
    weights.for_label(label) * bce_from_logit(z, label)
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            class_weights: ClassWeights::UNIFORM,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn check_dim(&self, x: &SparseFeatures) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have dimension {}, model expects {}",
                x.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn logit(&self, x: &SparseFeatures) -> Result<f64> {
        self.check_dim(x)?;
        Ok(x.dot(&self.weights) + self.bias)
    }

    /// Probability of `Relevant`.
    pub fn predict_proba(&self, x: &SparseFeatures) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    /// Mean class-weighted cross-entropy over a dataset.
    pub fn loss(&self, xs: &[SparseFeatures], ys: &[Label], weights: &ClassWeights) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            total += weighted_bce_from_logit(self.logit(x)?, y, weights);
        }
        Ok(total / xs.len().max(1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearTrainReport {
    /// Mean loss seen during each epoch (before each update).
    pub epoch_losses: Vec<f64>,
    /// Full-dataset loss after training.
    pub final_loss: f64,
}

/// Trains from zero weights. Deterministic given `cfg.seed`.
pub fn train_linear(
    features: &[SparseFeatures],
    labels: &[Label],
    weights: ClassWeights,
    cfg: &TrainConfig,
) -> Result<(LinearModel, LinearTrainReport)> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: labels.len(),
        });
    }
    let n_rel = labels.iter().filter(|l| l.is_relevant()).count();
    if n_rel == 0 || n_rel == labels.len() {
        return Err(Error::SingleClass);
    }
    let dim = features[0].dim();
    let mut model = LinearModel::zeros(dim);
    model.class_weights = weights;
    for x in features {
        model.check_dim(x)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut grad = vec![0.0; dim];
    let mut touched: Vec<u32> = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut initial = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grad_bias = 0.0;
            for &i in batch {
                let x = &features[i];
                let z = model.logit(x)?;
                epoch_loss += weighted_bce_from_logit(z, labels[i], &weights);
                let target = if labels[i].is_relevant() { 1.0 } else { 0.0 };
                let g = weights.for_label(labels[i]) * (sigmoid(z) - target) * scale;
                for &(j, v) in x.entries() {
                    if grad[j as usize] == 0.0 {
                        touched.push(j);
                    }
                    grad[j as usize] += g * v;
                }
                grad_bias += g;
            }
            let mut step = cfg.learning_rate;
            if cfg.clip_norm > 0.0 {
                let norm =
                    (touched.iter().map(|&j| grad[j as usize].powi(2)).sum::<f64>() + grad_bias * grad_bias).sqrt();
                if norm > cfg.clip_norm {
                    step *= cfg.clip_norm / norm;
                }
            }
            for &j in &touched {
                model.weights[j as usize] -= step * grad[j as usize];
                grad[j as usize] = 0.0;
            }
            touched.clear();
            model.bias -= step * grad_bias;
        }
        let mean = epoch_loss / features.len() as f64;
        let initial = *initial.get_or_insert(mean);
        if !mean.is_finite() || mean > initial * 10.0 {
            return Err(Error::Divergence {
                stage: "linear".into(),
                epoch,
                loss: mean,
                initial,
            });
        }
        epoch_losses.push(mean);
    }
    let final_loss = model.loss(features, labels, &weights)?;
    Ok((
        model,
        LinearTrainReport {
            epoch_losses,
            final_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_undecided() {
        let m = LinearModel::zeros(4);
        let x = SparseFeatures::new(4, vec![(1, 3.0)]).unwrap();
        assert_eq!(m.predict_proba(&x).unwrap(), 0.5);
    }

    #[test]
    fn uniform_weights_match_plain_loss_exactly() {
        for z in [-30.0, -2.5, -1e-3, 0.0, 0.7, 4.0, 40.0] {
            for y in [Label::Relevant, Label::Irrelevant] {
                let plain = bce_from_logit(z, y);
                let weighted = weighted_bce_from_logit(z, y, &ClassWeights::UNIFORM);
                assert_eq!(plain.to_bits(), weighted.to_bits());
            }
        }
    }

    #[test]
    fn bce_is_stable_at_extremes() {
        assert!(bce_from_logit(800.0, Label::Irrelevant).is_finite());
        assert!(bce_from_logit(-800.0, Label::Relevant).is_finite());
        assert!((bce_from_logit(0.0, Label::Relevant) - 2f64.ln()).abs() < 1e-15);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![SparseFeatures::new(2, vec![(0, 1.0)]).unwrap(); 3];
        let ys = vec![Label::Relevant; 3];
        assert!(matches!(
            train_linear(&xs, &ys, ClassWeights::UNIFORM, &TrainConfig::linear()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = LinearModel::zeros(8);
        let x = SparseFeatures::new(16, vec![(9, 1.0)]).unwrap();
        assert!(matches!(m.predict_proba(&x), Err(Error::DimensionMismatch(_))));
    }
}
