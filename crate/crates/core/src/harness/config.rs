use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::agent::{EncoderKind, SacConfig};
use crate::policies::RouterKind;
use crate::predictor::PredictorConfig;
use crate::rng::derive_seed;
use crate::stategraph::FeatureScales;
use crate::workload::{
    bursty_arrivals_capped, load_trace, poisson_arrivals_capped, requests_from_arrivals,
    rescale_trace, ExpertProfile, ProfileSet, Request,
};

const WORKLOAD_STREAM: u64 = 0x3017;
const PREDICTOR_STREAM: u64 = 0x93ED;

/// Where arrivals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WorkloadSpec {
    Poisson {
        rate_per_s: f64,
        horizon_ms: f64,
        /// Truncates the stream after this many arrivals.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_requests: Option<usize>,
    },
    /// Gamma-renewal arrivals; `shape < 1` is burstier than Poisson.
    Bursty {
        rate_per_s: f64,
        shape: f64,
        horizon_ms: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_requests: Option<usize>,
    },
    Trace {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rescale_to_per_s: Option<f64>,
    },
}

/// Reward signal used while training a learned router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// Completed QoS minus projected violations and drop penalty.
    Qos,
    /// Completed QoS only.
    Completion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Decisions between greedy evaluations.
    pub eval_interval: u64,
    /// Workload seed of the held-out evaluation episode.
    pub eval_seed: u64,
    pub encoder: Option<EncoderKind>,
    pub reward: Option<RewardKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eval_interval: 5_000,
            eval_seed: 9_999,
            encoder: None,
            reward: None,
        }
    }
}

/// One experiment. Fields that shape the environment feed the config hash;
/// router, seeds, learner settings and paths do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profiles: ProfileSet,
    pub workload: WorkloadSpec,
    pub latency_req_ms: f64,
    pub routing_overhead_ms: f64,
    pub run_cap: usize,
    pub wait_cap: usize,
    pub predictor: PredictorConfig,
    /// Spacing of the GPU-usage samples.
    pub gpu_sample_ms: f64,
    pub router: RouterKind,
    pub seed: u64,
    /// Workload seeds of multi-seed evaluations.
    pub eval_seeds: Vec<u64>,
    pub sac: SacConfig,
    pub train: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Desk benchmark: three experts trading quality against speed.
pub fn desk_profiles() -> ProfileSet {
    let expert = |score_mean: f64, k1: f64, k2: f64| ExpertProfile {
        score_mean,
        score_std: 0.2,
        length_mean: 60.0,
        length_std: 30.0,
        kv_capacity: 4_000.0,
        k1,
        k2,
        per_token_kv: 1.0,
    };
    ProfileSet {
        experts: vec![
            expert(0.80, 0.20, 0.030),
            expert(0.65, 0.10, 0.015),
            expert(0.50, 0.05, 0.008),
        ],
        prompt_mean: 100.0,
        prompt_std: 50.0,
        max_tokens: 300,
        max_prompt: 512,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profiles: desk_profiles(),
            workload: WorkloadSpec::Poisson {
                rate_per_s: 18.0,
                horizon_ms: 1e9,
                max_requests: Some(2_000),
            },
            latency_req_ms: 30.0,
            routing_overhead_ms: 5.0,
            run_cap: 5,
            wait_cap: 5,
            predictor: PredictorConfig::default(),
            gpu_sample_ms: 1_000.0,
            router: RouterKind::QosAwareRl,
            seed: 0,
            eval_seeds: vec![101, 102, 103, 104, 105],
            sac: SacConfig::default(),
            train: TrainConfig::default(),
            checkpoint: None,
            out_dir: None,
        }
    }
}

#[derive(Serialize)]
struct EnvKey<'a> {
    profiles: &'a ProfileSet,
    workload: &'a WorkloadSpec,
    latency_req_ms: f64,
    routing_overhead_ms: f64,
    run_cap: usize,
    wait_cap: usize,
    predictor: &'a PredictorConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn n_experts(&self) -> usize {
        self.profiles.n_experts()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.profiles.validate()?;
        if !(self.latency_req_ms > 0.0) {
            return bad(format!("latency_req_ms must be positive, got {}", self.latency_req_ms));
        }
        if !(self.routing_overhead_ms >= 0.0) {
            return bad("routing_overhead_ms must be non-negative".into());
        }
        if self.run_cap == 0 {
            return bad("run_cap must be at least 1".into());
        }
        if !(self.gpu_sample_ms > 0.0) {
            return bad("gpu_sample_ms must be positive".into());
        }
        match &self.workload {
            WorkloadSpec::Poisson { rate_per_s, horizon_ms, .. }
            | WorkloadSpec::Bursty { rate_per_s, horizon_ms, .. } => {
                if !(*horizon_ms > 0.0) {
                    return bad("workload horizon must be positive".into());
                }
                if !(*rate_per_s > 0.0) {
                    return bad("arrival rate must be positive".into());
                }
            }
            WorkloadSpec::Trace { path, .. } => {
                if path.as_os_str().is_empty() {
                    return bad("trace path is empty".into());
                }
            }
        }
        if self.train.eval_interval == 0 {
            return bad("train.eval_interval must be positive".into());
        }
        self.sac.validate()?;
        Ok(())
    }

    /// SHA-256 over the environment-defining fields.
    pub fn env_hash(&self) -> String {
        let key = EnvKey {
            profiles: &self.profiles,
            workload: &self.workload,
            latency_req_ms: self.latency_req_ms,
            routing_overhead_ms: self.routing_overhead_ms,
            run_cap: self.run_cap,
            wait_cap: self.wait_cap,
            predictor: &self.predictor,
        };
        let bytes = serde_json::to_vec(&key).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn scales(&self) -> FeatureScales {
        FeatureScales {
            max_prompt: self.profiles.max_prompt as f64,
            max_tokens: self.profiles.max_tokens as f64,
            latency_req_ms: self.latency_req_ms,
        }
    }

    /// Predictor settings for an episode with workload seed `seed`.
    pub fn predictor_for(&self, seed: u64) -> PredictorConfig {
        let mut p = self.predictor.clone();
        p.seed = derive_seed(derive_seed(seed, PREDICTOR_STREAM), self.predictor.seed);
        p
    }

    /// Encoder a learned router of this config trains with.
    pub fn learner_encoder(&self) -> Result<EncoderKind, HarnessError> {
        self.train
            .encoder
            .or(self.router.encoder())
            .ok_or_else(|| HarnessError::NotLearned(self.router.name()))
    }

    pub fn learner_reward(&self) -> RewardKind {
        self.train.reward.unwrap_or(match self.router {
            RouterKind::BaselineRl => RewardKind::Completion,
            _ => RewardKind::Qos,
        })
    }

    /// Requests of the episode with workload seed `seed`. Traces ignore the
    /// seed.
    pub fn requests(&self, seed: u64) -> Result<Vec<Request>, HarnessError> {
        let ws = derive_seed(seed, WORKLOAD_STREAM);
        Ok(match &self.workload {
            WorkloadSpec::Poisson {
                rate_per_s,
                horizon_ms,
                max_requests,
            } => {
                self.profiles.validate()?;
                let max = max_requests.unwrap_or(usize::MAX);
                let arrivals = poisson_arrivals_capped(*rate_per_s, *horizon_ms, max, derive_seed(ws, 0))?;
                requests_from_arrivals(&self.profiles, &arrivals, ws)
            }
            WorkloadSpec::Bursty {
                rate_per_s,
                shape,
                horizon_ms,
                max_requests,
            } => {
                self.profiles.validate()?;
                let max = max_requests.unwrap_or(usize::MAX);
                let arrivals =
                    bursty_arrivals_capped(*rate_per_s, *shape, *horizon_ms, max, derive_seed(ws, 0))?;
                requests_from_arrivals(&self.profiles, &arrivals, ws)
            }
            WorkloadSpec::Trace {
                path,
                rescale_to_per_s,
            } => {
                let mut trace = load_trace(path)?;
                if trace.n_experts != self.n_experts() {
                    return Err(HarnessError::Config(format!(
                        "trace has {} experts, config has {}",
                        trace.n_experts,
                        self.n_experts()
                    )));
                }
                if let Some(rate) = rescale_to_per_s {
                    trace = rescale_trace(&trace, *rate)?;
                }
                trace.to_requests()
            }
        })
    }
}
