//! Experiment orchestration: configuration, episodes, metrics, training,
//! comparison and ablation.

mod config;
mod env;
mod experiments;
mod metrics;
mod train;

use std::path::Path;

use thiserror::Error;

pub use config::{desk_profiles, RewardKind, RunConfig, TrainConfig, WorkloadSpec};
pub use env::{Applied, Decision, Env};
pub use experiments::{
    ablate, ablation_variants, compare, evaluate_seeds, improvement, AblationRow, AblationTable,
    AblationVariant, CompareRow, CompareTable, ABLATION_FILE, COMPARE_FILE,
};
pub use metrics::{
    read_requests_csv, Aggregates, GpuSample, MetricsRecord, RequestRow, AGGREGATES_FILE,
    GPU_USAGE_FILE, REQUESTS_FILE,
};
pub use train::{
    greedy_eval, train, train_to_dir, EvalSummary, LearningCurveRow, TrainOutcome,
    CHECKPOINT_DIR, LEARNING_CURVE_FILE,
};

use crate::agent::load_checkpoint;
use crate::agent::{AgentError, Policy};
use crate::impact::ImpactError;
use crate::neural::checkpoint::CheckpointError;
use crate::policies::{RouteContext, Router, RouterArgs, RouterError, RouterRegistry};
use crate::predictor::PredictorError;
use crate::simcore::SimError;
use crate::workload::{Request, WorkloadError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("router '{0}' is not a learned router")]
    NotLearned(&'static str),
    #[error("action {0} is masked out")]
    MaskedAction(usize),
    #[error("runs do not share a workload: {0}")]
    WorkloadMismatch(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("training diverged at step {step}: {source}")]
    Diverged {
        step: u64,
        source: AgentError,
        last_good: Box<Policy>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Impact(#[from] ImpactError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<crate::agent::ReplayError> for HarnessError {
    fn from(e: crate::agent::ReplayError) -> Self {
        HarnessError::Agent(e.into())
    }
}

/// Router named by `cfg.router`, with `policy` for learned kinds.
pub fn build_router(cfg: &RunConfig, policy: Option<Policy>) -> Result<Box<dyn Router>, HarnessError> {
    Ok(RouterRegistry::default().build(
        cfg.router.name(),
        RouterArgs {
            n_experts: cfg.n_experts(),
            policy,
        },
    )?)
}

/// Load the checkpoint a learned router of `cfg` needs. A config-hash
/// mismatch is an error unless `force` is set.
pub fn load_policy(cfg: &RunConfig, dir: &Path, force: bool) -> Result<Policy, HarnessError> {
    let (policy, _) = load_checkpoint(dir, Some(&cfg.env_hash()), force)?;
    Ok(policy)
}

fn header(cfg: &RunConfig, router: &str, seed: u64) -> Aggregates {
    Aggregates {
        router: router.to_string(),
        seed,
        config_hash: cfg.env_hash(),
        ..Aggregates::default()
    }
}

/// Route `requests` with `router` and run the simulator until every admitted
/// request completes.
pub fn run_requests(
    cfg: &RunConfig,
    router: &mut dyn Router,
    requests: Vec<Request>,
    seed: u64,
) -> Result<MetricsRecord, HarnessError> {
    let mut env = Env::new(cfg, requests, seed)?;
    let observe = router.observation_kind();
    while let Some(d) = env.next_decision(observe)? {
        let ctx = RouteContext {
            snapshot: &d.snapshot,
            request: &d.request,
            predictions: &d.predictions,
            observation: d.observation.as_deref(),
        };
        let action = router.route(&ctx)?;
        env.apply(&d, action, false)?;
    }
    let name = router.kind().name();
    Ok(env.finish(header(cfg, name, seed))?.0)
}

/// One evaluation episode on workload seed `seed`.
pub fn run_episode(
    cfg: &RunConfig,
    router: &mut dyn Router,
    seed: u64,
) -> Result<MetricsRecord, HarnessError> {
    let requests = cfg.requests(seed)?;
    run_requests(cfg, router, requests, seed)
}
