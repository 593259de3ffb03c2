//! Class-imbalance handling: undersampling, oversampling and loss weights.
//!
//! A ratio `a:b` is a target *minority:majority count* ratio. Undersampling
//! keeps every minority example and draws `floor(n_min * b / a)` majority
//! examples without replacement; oversampling keeps every majority example
//! and tops the minority class up to `ceil(n_maj * a / b)` by drawing with
//! replacement (never below the original minority count).
//!
//! With `ratio_is_duplication_factor` the ratio is read as a scaling factor
//! instead: oversampling multiplies the minority count by `b / a` and
//! undersampling keeps `a / b` of the majority class.
//!
//! Both samplers first put each class into canonical (sorted) order, so the
//! output depends only on the input multiset and the seed. The generator is
//! ChaCha8, which produces the same stream on every platform.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Labeled};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    None,
    #[serde(alias = "undersample")]
    Under,
    #[serde(alias = "oversample")]
    Over,
    #[serde(alias = "class_weights")]
    Weights,
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(SamplingMode::None),
            "under" | "undersample" => Ok(SamplingMode::Under),
            "over" | "oversample" => Ok(SamplingMode::Over),
            "weights" | "class_weights" => Ok(SamplingMode::Weights),
            other => Err(Error::InvalidConfig(format!("unknown sampling mode `{other}`"))),
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::None => "none",
            SamplingMode::Under => "under",
            SamplingMode::Over => "over",
            SamplingMode::Weights => "weights",
        })
    }
}

/// Target minority:majority ratio, e.g. `1:2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ratio {
    pub minority: u32,
    pub majority: u32,
}

impl Ratio {
    pub fn new(minority: u32, majority: u32) -> Result<Self> {
        if minority == 0 || majority == 0 {
            return Err(Error::InvalidConfig(format!(
                "ratio parts must be positive, got {minority}:{majority}"
            )));
        }
        Ok(Self { minority, majority })
    }
}

impl Default for Ratio {
    fn default() -> Self {
        Ratio {
            minority: 1,
            majority: 1,
        }
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("invalid ratio `{s}`, expected e.g. 1:2"));
        let (a, b) = s.trim().split_once(':').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        Ratio::new(a, b)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.minority, self.majority)
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub ratio: Ratio,
    pub seed: u64,
    pub ratio_is_duplication_factor: bool,
}

impl SamplingConfig {
    pub fn new(mode: SamplingMode, ratio: Ratio, seed: u64) -> Self {
        Self {
            mode,
            ratio,
            seed,
            ratio_is_duplication_factor: false,
        }
    }
}

/// Per-class multipliers for the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub relevant: f64,
    pub irrelevant: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights {
        relevant: 1.0,
        irrelevant: 1.0,
    };

    pub fn new(relevant: f64, irrelevant: f64) -> Result<Self> {
        let ok = |w: f64| w.is_finite() && w > 0.0;
        if !ok(relevant) || !ok(irrelevant) {
            return Err(Error::InvalidConfig(format!(
                "class weights must be finite and positive, got ({relevant}, {irrelevant})"
            )));
        }
        Ok(Self { relevant, irrelevant })
    }

    pub fn for_label(&self, label: Label) -> f64 {
        match label {
            Label::Relevant => self.relevant,
            Label::Irrelevant => self.irrelevant,
        }
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::UNIFORM
    }
}

/// Inverse class frequency: `w_c = N / (2 * N_c)`.
pub fn class_weights(n_relevant: usize, n_irrelevant: usize) -> Result<ClassWeights> {
    if n_relevant == 0 || n_irrelevant == 0 {
        return Err(Error::ZeroClassCount {
            relevant: n_relevant,
            irrelevant: n_irrelevant,
        });
    }
    let total = (n_relevant + n_irrelevant) as f64;
    ClassWeights::new(total / (2.0 * n_relevant as f64), total / (2.0 * n_irrelevant as f64))
}

/// Class counts after resampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TargetCounts {
    pub minority_label: Label,
    pub minority: usize,
    pub majority: usize,
    /// Undersampling asked for more majority examples than exist.
    pub clamped: bool,
}

fn count_labels<T: Labeled>(items: &[T]) -> (usize, usize) {
    let rel = items.iter().filter(|x| x.label() == Label::Relevant).count();
    (rel, items.len() - rel)
}

/// The smaller class; ties go to `Relevant`.
fn minority_label(n_relevant: usize, n_irrelevant: usize) -> Label {
    if n_relevant <= n_irrelevant {
        Label::Relevant
    } else {
        Label::Irrelevant
    }
}

fn split_classes<T: Labeled + Clone + Ord>(items: &[T]) -> Result<(Label, Vec<T>, Vec<T>)> {
    let (rel, irr) = count_labels(items);
    if rel == 0 || irr == 0 {
        return Err(Error::SingleClass);
    }
    let minority = minority_label(rel, irr);
    let (mut min, mut maj): (Vec<T>, Vec<T>) = items.iter().cloned().partition(|x| x.label() == minority);
    min.sort();
    maj.sort();
    Ok((minority, min, maj))
}

fn mul_div_floor(n: usize, num: u32, den: u32) -> usize {
    (n as u64 * num as u64 / den as u64) as usize
}

fn mul_div_ceil(n: usize, num: u32, den: u32) -> usize {
    (n as u64 * num as u64).div_ceil(den as u64) as usize
}

/// Class counts that [`undersample`] will produce.
pub fn undersample_target(n_minority: usize, n_majority: usize, cfg: &SamplingConfig) -> (usize, bool) {
    let r = cfg.ratio;
    let wanted = if cfg.ratio_is_duplication_factor {
        mul_div_floor(n_majority, r.minority, r.majority)
    } else {
        mul_div_floor(n_minority, r.majority, r.minority)
    };
    (wanted.min(n_majority), wanted > n_majority)
}

/// Minority count that [`oversample`] will produce.
pub fn oversample_target(n_minority: usize, n_majority: usize, cfg: &SamplingConfig) -> usize {
    let r = cfg.ratio;
    let wanted = if cfg.ratio_is_duplication_factor {
        mul_div_ceil(n_minority, r.majority, r.minority)
    } else {
        mul_div_ceil(n_majority, r.minority, r.majority)
    };
    wanted.max(n_minority)
}

/// Expected class counts for `cfg` applied to the given class sizes.
pub fn planned_counts(n_relevant: usize, n_irrelevant: usize, cfg: &SamplingConfig) -> TargetCounts {
    let minority_label = minority_label(n_relevant, n_irrelevant);
    let (n_min, n_maj) = if minority_label == Label::Relevant {
        (n_relevant, n_irrelevant)
    } else {
        (n_irrelevant, n_relevant)
    };
    let (minority, majority, clamped) = match cfg.mode {
        SamplingMode::Under => {
            let (maj, clamped) = undersample_target(n_min, n_maj, cfg);
            (n_min, maj, clamped)
        }
        SamplingMode::Over => (oversample_target(n_min, n_maj, cfg), n_maj, false),
        SamplingMode::None | SamplingMode::Weights => (n_min, n_maj, false),
    };
    TargetCounts {
        minority_label,
        minority,
        majority,
        clamped,
    }
}

/// Keeps every minority example and a seeded subset of the majority class.
pub fn undersample<T: Labeled + Clone + Ord>(items: &[T], cfg: &SamplingConfig) -> Result<Vec<T>> {
    let (_, minority, majority) = split_classes(items)?;
    let (target, clamped) = undersample_target(minority.len(), majority.len(), cfg);
    if clamped {
        log::warn!(
            "undersampling {} asked for more majority examples than the {} available; keeping all",
            cfg.ratio,
            majority.len()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked = index::sample(&mut rng, majority.len(), target).into_vec();
    picked.sort_unstable();
    let mut out = minority;
    out.extend(picked.into_iter().map(|i| majority[i].clone()));
    out.shuffle(&mut rng);
    Ok(out)
}

/// Keeps every majority example and tops up the minority class with seeded
/// duplicates.
pub fn oversample<T: Labeled + Clone + Ord>(items: &[T], cfg: &SamplingConfig) -> Result<Vec<T>> {
    let (_, minority, majority) = split_classes(items)?;
    let target = oversample_target(minority.len(), majority.len(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extra: Vec<T> = (minority.len()..target)
        .map(|_| minority[rng.random_range(0..minority.len())].clone())
        .collect();
    let mut out = majority;
    out.extend(minority);
    out.extend(extra);
    out.shuffle(&mut rng);
    Ok(out)
}

/// Applies `cfg` to a training set, returning the (possibly resampled) items
/// and the loss weights to train with.
pub fn apply<T: Labeled + Clone + Ord>(items: &[T], cfg: &SamplingConfig) -> Result<(Vec<T>, ClassWeights)> {
    match cfg.mode {
        SamplingMode::None => Ok((items.to_vec(), ClassWeights::UNIFORM)),
        SamplingMode::Weights => {
            let (rel, irr) = count_labels(items);
            Ok((items.to_vec(), class_weights(rel, irr)?))
        }
        SamplingMode::Under => Ok((undersample(items, cfg)?, ClassWeights::UNIFORM)),
        SamplingMode::Over => Ok((oversample(items, cfg)?, ClassWeights::UNIFORM)),
    }
}
