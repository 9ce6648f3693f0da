//! Bucketized score/length predictors, emulated as seeded noisy oracles with
//! configurable top-1 and top-3 accuracy.
//!
//! Top-3 accuracy is modelled ordinally: a prediction "in the top 3" is the
//! true bucket or one of its neighbours. Misses beyond the top-3 band land
//! uniformly on a bucket at distance two or more.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed_from, rng_for};
use crate::workload::Request;

pub const DEFAULT_BUCKETS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("value {value} outside [0, {max}]")]
    OutOfRange { value: f64, max: f64 },
    #[error("invalid bucket scheme: {0}")]
    Scheme(String),
    #[error("invalid accuracy: top1={top1}, top3={top3}")]
    Accuracy { top1: f64, top3: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketScheme {
    n_buckets: usize,
    max_value: f64,
}

impl BucketScheme {
    pub fn new(n_buckets: usize, max_value: f64) -> Result<Self, PredictorError> {
        if n_buckets < 2 {
            return Err(PredictorError::Scheme("need at least 2 buckets".into()));
        }
        if !(max_value > 0.0) {
            return Err(PredictorError::Scheme("max_value must be positive".into()));
        }
        Ok(Self {
            n_buckets,
            max_value,
        })
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn width(&self) -> f64 {
        self.max_value / self.n_buckets as f64
    }

    /// `floor(value / width)`, with the top edge folded into the last bucket.
    pub fn bucketize(&self, value: f64) -> Result<usize, PredictorError> {
        if !(0.0..=self.max_value).contains(&value) {
            return Err(PredictorError::OutOfRange {
                value,
                max: self.max_value,
            });
        }
        let b = (value / self.width()).floor() as usize;
        Ok(b.min(self.n_buckets - 1))
    }

    pub fn midpoint(&self, bucket: usize) -> f64 {
        (bucket as f64 + 0.5) * self.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorMode {
    /// Noisy oracle at the configured accuracy.
    Emulated,
    /// Always the true bucket.
    Perfect,
    /// No predictive information; features are zeroed.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Score,
    Length,
}

impl Target {
    fn tag(self) -> u64 {
        match self {
            Target::Score => 0x5C0E,
            Target::Length => 0x1E46,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyConfig {
    pub top1: f64,
    pub top3: f64,
    /// Overrides the predictor-wide mode for this target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<PredictorMode>,
}

impl AccuracyConfig {
    fn validate(&self) -> Result<(), PredictorError> {
        let ok = (0.0..=1.0).contains(&self.top1)
            && (0.0..=1.0).contains(&self.top3)
            && self.top1 <= self.top3;
        if ok {
            Ok(())
        } else {
            Err(PredictorError::Accuracy {
                top1: self.top1,
                top3: self.top3,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    #[serde(default = "default_mode")]
    pub mode: PredictorMode,
    #[serde(default = "default_score_acc")]
    pub score: AccuracyConfig,
    #[serde(default = "default_length_acc")]
    pub length: AccuracyConfig,
    #[serde(default = "default_buckets")]
    pub n_buckets: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> PredictorMode {
    PredictorMode::Emulated
}

fn default_score_acc() -> AccuracyConfig {
    AccuracyConfig {
        top1: 0.6339,
        top3: 0.9778,
        mode: None,
    }
}

fn default_length_acc() -> AccuracyConfig {
    AccuracyConfig {
        top1: 0.7297,
        top3: 0.8471,
        mode: None,
    }
}

fn default_buckets() -> usize {
    DEFAULT_BUCKETS
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            score: default_score_acc(),
            length: default_length_acc(),
            n_buckets: DEFAULT_BUCKETS,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn with_mode(mut self, mode: PredictorMode) -> Self {
        self.mode = mode;
        self.score.mode = None;
        self.length.mode = None;
        self
    }

    pub fn mode_for(&self, target: Target) -> PredictorMode {
        let acc = match target {
            Target::Score => &self.score,
            Target::Length => &self.length,
        };
        acc.mode.unwrap_or(self.mode)
    }
}

/// Per-expert predicted buckets and their decoded feature values for one
/// request.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub score_buckets: Vec<usize>,
    pub length_buckets: Vec<usize>,
    /// Bucket midpoints in `[0,1]`, or 0 when the target is zeroed.
    pub score_values: Vec<f64>,
    /// Length midpoints divided by `max_tokens`, or 0 when zeroed.
    pub length_values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    cfg: PredictorConfig,
    score_scheme: BucketScheme,
    length_scheme: BucketScheme,
}

impl Predictor {
    pub fn new(cfg: PredictorConfig, max_tokens: u32) -> Result<Self, PredictorError> {
        cfg.score.validate()?;
        cfg.length.validate()?;
        Ok(Self {
            score_scheme: BucketScheme::new(cfg.n_buckets, 1.0)?,
            length_scheme: BucketScheme::new(cfg.n_buckets, max_tokens as f64)?,
            cfg,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    pub fn scheme(&self, target: Target) -> &BucketScheme {
        match target {
            Target::Score => &self.score_scheme,
            Target::Length => &self.length_scheme,
        }
    }

    pub fn true_bucket(&self, request: &Request, expert: usize, target: Target) -> usize {
        let scheme = self.scheme(target);
        let v = match target {
            Target::Score => request.scores[expert],
            Target::Length => request.out_lens[expert] as f64,
        };
        scheme
            .bucketize(v.clamp(0.0, scheme.max_value()))
            .expect("clamped into range")
    }

    /// Predicted bucket for one (request, expert, target); a deterministic
    /// function of those and the predictor seed.
    pub fn predict(&self, request: &Request, expert: usize, target: Target) -> usize {
        let truth = self.true_bucket(request, expert, target);
        let acc = match target {
            Target::Score => &self.cfg.score,
            Target::Length => &self.cfg.length,
        };
        match self.cfg.mode_for(target) {
            PredictorMode::Perfect => truth,
            PredictorMode::Zero => 0,
            PredictorMode::Emulated => {
                let seed =
                    derive_seed_from(self.cfg.seed, &[request.id, expert as u64, target.tag()]);
                let n = self.scheme(target).n_buckets();
                emulate(truth, n, acc.top1, acc.top3, &mut rng_for(seed))
            }
        }
    }

    pub fn predict_vector(&self, request: &Request, target: Target) -> Vec<usize> {
        (0..request.scores.len())
            .map(|n| self.predict(request, n, target))
            .collect()
    }

    /// Feature value for a predicted bucket: midpoint normalized to `[0,1]`,
    /// or 0 when the target is zeroed.
    pub fn feature_value(&self, target: Target, bucket: usize) -> f64 {
        if self.cfg.mode_for(target) == PredictorMode::Zero {
            return 0.0;
        }
        let s = self.scheme(target);
        s.midpoint(bucket) / s.max_value()
    }

    pub fn predict_all(&self, request: &Request) -> Predictions {
        let score_buckets = self.predict_vector(request, Target::Score);
        let length_buckets = self.predict_vector(request, Target::Length);
        Predictions {
            score_values: score_buckets
                .iter()
                .map(|&b| self.feature_value(Target::Score, b))
                .collect(),
            length_values: length_buckets
                .iter()
                .map(|&b| self.feature_value(Target::Length, b))
                .collect(),
            score_buckets,
            length_buckets,
        }
    }
}

fn emulate<R: Rng>(truth: usize, n: usize, top1: f64, top3: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < top1 {
        return truth;
    }
    let adjacent: Vec<usize> = [truth.checked_sub(1), Some(truth + 1)]
        .into_iter()
        .flatten()
        .filter(|&b| b < n)
        .collect();
    if u < top3 {
        return adjacent[rng.random_range(0..adjacent.len())];
    }
    let mut far: Vec<usize> = (0..n).filter(|&b| b.abs_diff(truth) >= 2).collect();
    if far.is_empty() {
        far = (0..n).filter(|&b| b != truth).collect();
    }
    far[rng.random_range(0..far.len())]
}
