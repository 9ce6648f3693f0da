use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{RewardKind, RunConfig};
use super::env::{Applied, Env};
use super::metrics::{write_json, MetricsRecord};
use super::{header, HarnessError};
use crate::action::Action;
use crate::agent::save_checkpoint;
use crate::agent::{Observation, Replay, Transition};
use crate::agent::{ActMode, AgentError, Policy, SacAgent, UpdateStats};
use crate::impact::{baseline_reward, qos_reward, ImpactReport};
use crate::neural::checkpoint::round_to_f32;
use crate::rng::{derive_seed, rng_for};
use crate::simcore::Completion;
use crate::workload::Request;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LEARNING_CURVE_FILE: &str = "learning_curve.csv";

const AGENT_STREAM: u64 = 0xA6E7;
const ACT_STREAM: u64 = 0xAC7;
const EPISODE_STREAM: u64 = 0xE915;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveRow {
    pub step: u64,
    pub episode: u64,
    pub updates: u64,
    /// Mean per-decision reward of the greedy evaluation episode.
    pub eval_reward: f64,
    pub eval_avg_qos: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best policy by evaluation average QoS, rounded to f32 storage
    /// precision. The initialization when no evaluation ran.
    pub policy: Policy,
    pub best_step: u64,
    pub best_eval_qos: Option<f64>,
    pub curve: Vec<LearningCurveRow>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub metrics: MetricsRecord,
    pub mean_reward: f64,
}

/// A decision waiting for the completions that follow it.
struct Pending {
    state: Arc<Observation>,
    mask: Vec<bool>,
    action: usize,
    request: Request,
    applied: Applied,
}

impl Pending {
    /// Reward once the completions up to the next decision are known. A
    /// memory rejection is charged as a drop.
    fn reward(&self, window: &[Completion], kind: RewardKind, latency_req_ms: f64) -> f64 {
        match kind {
            RewardKind::Completion => baseline_reward(window, latency_req_ms),
            RewardKind::Qos => {
                let report: Option<&ImpactReport> = self.applied.impact.as_ref();
                qos_reward(
                    window,
                    self.applied.effective,
                    report,
                    &self.request,
                    latency_req_ms,
                )
                .reward
            }
        }
    }
}

/// Greedy episode of `policy` on workload seed `seed`, with the mean reward
/// the learner would have received.
pub fn greedy_eval(
    cfg: &RunConfig,
    policy: &Policy,
    reward: RewardKind,
    seed: u64,
) -> Result<EvalSummary, HarnessError> {
    let mut env = Env::new(cfg, cfg.requests(seed)?, seed)?;
    let kind = policy.nets.kind;
    let mut rng = rng_for(0);
    let mut pending: Option<Pending> = None;
    let (mut total, mut n) = (0.0, 0usize);
    while let Some(d) = env.next_decision(Some(kind))? {
        if let Some(p) = pending.take() {
            total += p.reward(&d.window, reward, cfg.latency_req_ms);
            n += 1;
        }
        let obs = d.observation.clone().expect("observation requested");
        let a = policy.act(&obs, &d.mask, ActMode::Greedy, &mut rng)?;
        let applied = env.apply(&d, Action::from_index(a), reward == RewardKind::Qos)?;
        pending = Some(Pending {
            state: obs,
            mask: d.mask.clone(),
            action: a,
            request: d.request.clone(),
            applied,
        });
    }
    let (metrics, tail) = env.finish(header(cfg, cfg.router.name(), seed))?;
    if let Some(p) = pending {
        total += p.reward(&tail, reward, cfg.latency_req_ms);
        n += 1;
    }
    Ok(EvalSummary {
        metrics,
        mean_reward: if n == 0 { 0.0 } else { total / n as f64 },
    })
}

fn rounded(policy: &Policy) -> Policy {
    let mut p = policy.clone();
    round_to_f32(&mut p.store);
    p
}

/// Interleaved rollout and SAC updates for `cfg.sac.steps` decisions, with a
/// greedy evaluation every `cfg.train.eval_interval` decisions. `on_eval`
/// sees each learning-curve row as it is produced.
pub fn train(
    cfg: &RunConfig,
    mut on_eval: impl FnMut(&LearningCurveRow),
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let kind = cfg.learner_encoder()?;
    let reward = cfg.learner_reward();
    let sac = cfg.sac;
    let mut agent = SacAgent::new(sac, kind, cfg.n_experts(), derive_seed(cfg.seed, AGENT_STREAM))?;
    let mut replay = Replay::new(sac.replay_capacity)?;
    let mut act_rng = rng_for(derive_seed(cfg.seed, ACT_STREAM));
    let mut best = rounded(&agent.policy);
    let (mut best_step, mut best_qos) = (0, None::<f64>);
    let mut curve = Vec::new();
    let mut stats = UpdateStats::default();
    let (mut step, mut episode) = (0u64, 0u64);
    let with_impact = reward == RewardKind::Qos;

    while step < sac.steps {
        let seed = derive_seed_from_episode(cfg.seed, episode);
        let requests = cfg.requests(seed)?;
        if requests.is_empty() {
            return Err(HarnessError::Config("training workload has no arrivals".into()));
        }
        let mut env = Env::new(cfg, requests, seed)?;
        let mut pending: Option<Pending> = None;
        while step < sac.steps {
            let Some(d) = env.next_decision(Some(kind))? else {
                break;
            };
            let obs = d.observation.clone().expect("observation requested");
            if let Some(p) = pending.take() {
                let r = p.reward(&d.window, reward, cfg.latency_req_ms);
                replay.push(Transition {
                    state: p.state,
                    mask: p.mask,
                    action: p.action,
                    reward: r,
                    next_state: obs.clone(),
                    next_mask: d.mask.clone(),
                    done: false,
                })?;
            }
            let a = agent
                .policy
                .act(&obs, &d.mask, ActMode::Sample, &mut act_rng)?;
            let applied = env.apply(&d, Action::from_index(a), with_impact)?;
            pending = Some(Pending {
                state: obs,
                mask: d.mask.clone(),
                action: a,
                request: d.request.clone(),
                applied,
            });
            step += 1;

            if step >= sac.warmup as u64 && step % sac.update_every as u64 == 0 && !replay.is_empty() {
                let batch = agent.sample_batch(&replay)?;
                stats = match agent.update(&batch) {
                    Ok(s) => s,
                    Err(e @ AgentError::Diverged { .. }) => {
                        return Err(HarnessError::Diverged {
                            step,
                            source: e,
                            last_good: Box::new(best),
                        })
                    }
                    Err(e) => return Err(e.into()),
                };
            }
            if step % cfg.train.eval_interval == 0 {
                let ev = greedy_eval(cfg, &agent.policy, reward, cfg.train.eval_seed)?;
                let row = LearningCurveRow {
                    step,
                    episode,
                    updates: agent.updates,
                    eval_reward: ev.mean_reward,
                    eval_avg_qos: ev.metrics.aggregates.avg_qos,
                    critic_loss: stats.critic_loss,
                    actor_loss: stats.actor_loss,
                    entropy: stats.entropy,
                };
                if best_qos.is_none_or(|b| row.eval_avg_qos > b) {
                    best = rounded(&agent.policy);
                    best_qos = Some(row.eval_avg_qos);
                    best_step = step;
                }
                on_eval(&row);
                curve.push(row);
            }
        }
        episode += 1;
    }
    Ok(TrainOutcome {
        policy: best,
        best_step,
        best_eval_qos: best_qos,
        curve,
    })
}

/// Workload seed of training episode `episode`; never equal to a small
/// literal evaluation seed in practice.
fn derive_seed_from_episode(seed: u64, episode: u64) -> u64 {
    derive_seed(derive_seed(seed, EPISODE_STREAM), episode)
}

/// Train and persist `checkpoint/`, `learning_curve.csv` and `config.json`
/// under `out`. On divergence the last good checkpoint is still written.
pub fn train_to_dir(
    cfg: &RunConfig,
    out: &Path,
    on_eval: impl FnMut(&LearningCurveRow),
) -> Result<TrainOutcome, HarnessError> {
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let hash = cfg.env_hash();
    let outcome = match train(cfg, on_eval) {
        Ok(o) => o,
        Err(HarnessError::Diverged {
            step,
            source,
            last_good,
        }) => {
            save_checkpoint(&out.join(CHECKPOINT_DIR), &last_good, &cfg.sac, 0, &hash)?;
            return Err(HarnessError::Diverged {
                step,
                source,
                last_good,
            });
        }
        Err(e) => return Err(e),
    };
    save_checkpoint(
        &out.join(CHECKPOINT_DIR),
        &outcome.policy,
        &cfg.sac,
        outcome.best_step,
        &hash,
    )?;
    let mut w = csv::Writer::from_path(out.join(LEARNING_CURVE_FILE))?;
    if outcome.curve.is_empty() {
        w.write_record([
            "step",
            "episode",
            "updates",
            "eval_reward",
            "eval_avg_qos",
            "critic_loss",
            "actor_loss",
            "entropy",
        ])?;
    }
    for row in &outcome.curve {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(outcome)
}
