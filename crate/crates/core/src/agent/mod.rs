//! Discrete soft actor-critic over a shared state encoder.
//!
//! The encoder (attention graph encoder or a flat expert-feature layer)
//! feeds a categorical actor and twin critics, all two-layer perceptrons over
//! the embedding. Action 0 is drop; action `n + 1` routes to expert `n`.
//! Critic and actor gradients both reach the encoder.

mod checkpoint;
mod replay;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use replay::{Observation, Replay, ReplayError, Transition};

use crate::neural::han::han_encode_batch;
use crate::neural::layers::Linear;
use crate::neural::{
    Adam, AdamConfig, Grads, HanConfig, HanParams, Mat, Mlp, NResult, NeuralError, ParamStore,
    Tape, Var,
};
use crate::rng::rng_for;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("non-finite loss after update {update}: critic {critic}, actor {actor}")]
    Diverged {
        update: u64,
        critic: f64,
        actor: f64,
    },
    #[error("no valid action in mask")]
    EmptyMask,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("observation kind does not match the encoder")]
    ObservationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Han,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    /// Fixed entropy temperature.
    pub alpha: f64,
    pub lr: f64,
    pub tau: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment decisions collected during training.
    pub steps: u64,
    /// Decisions collected before the first update.
    pub warmup: usize,
    /// Decisions between updates.
    pub update_every: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub max_grad_norm: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            alpha: 0.2,
            lr: 3e-4,
            tau: 0.005,
            replay_capacity: 100_000,
            batch_size: 256,
            steps: 50_000,
            warmup: 1_000,
            update_every: 1,
            hidden: 64,
            heads: 4,
            mlp_hidden: 64,
            max_grad_norm: Some(10.0),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.update_every == 0 {
            return bad("batch, capacity and update interval must be positive");
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be divisible by heads");
        }
        Ok(())
    }
}

// One encoder lives per agent, so the size gap between variants is harmless.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
enum Encoder {
    Han(HanParams),
    Flat(Linear),
}

/// Parameter handles of encoder, actor and twin critics.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub kind: EncoderKind,
    pub n_experts: usize,
    encoder: Encoder,
    actor: Mlp,
    q1: Mlp,
    q2: Mlp,
}

pub struct HeadOutputs {
    pub logits: Var,
    pub q1: Var,
    pub q2: Var,
}

impl Networks {
    pub fn new(
        store: &mut ParamStore,
        kind: EncoderKind,
        n_experts: usize,
        cfg: &SacConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = cfg.hidden;
        let encoder = match kind {
            EncoderKind::Han => Encoder::Han(HanParams::new(
                store,
                "han",
                HanConfig {
                    n_experts,
                    hidden: d,
                    heads: cfg.heads,
                },
                rng,
            )),
            EncoderKind::Flat => Encoder::Flat(Linear::new(store, "flat", 3 * n_experts, d, rng)),
        };
        let dims = [d, cfg.mlp_hidden, n_experts + 1];
        Networks {
            kind,
            n_experts,
            encoder,
            actor: Mlp::new(store, "actor", &dims, rng),
            q1: Mlp::new(store, "q1", &dims, rng),
            q2: Mlp::new(store, "q2", &dims, rng),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_experts + 1
    }

    /// Stacked `B × hidden` embeddings.
    pub fn encode(&self, tape: &mut Tape, obs: &[&Observation]) -> NResult<Var> {
        match &self.encoder {
            Encoder::Han(p) => {
                let mut graphs = Vec::with_capacity(obs.len());
                for o in obs {
                    let Observation::Graph(g) = o else {
                        return Err(NeuralError::Invalid("expected a graph observation".into()));
                    };
                    graphs.push(g);
                }
                han_encode_batch(tape, &graphs, p)
            }
            Encoder::Flat(lin) => {
                let width = 3 * self.n_experts;
                let mut data = Vec::with_capacity(obs.len() * width);
                for o in obs {
                    match o {
                        Observation::Flat(v) if v.len() == width => data.extend_from_slice(v),
                        _ => {
                            return Err(NeuralError::Invalid(format!(
                                "expected {width} flat features"
                            )))
                        }
                    }
                }
                let x = tape.constant(Mat::from_vec(obs.len(), width, data));
                let h = lin.forward(tape, x)?;
                Ok(tape.elu(h))
            }
        }
    }

    pub fn heads(&self, tape: &mut Tape, emb: Var) -> NResult<HeadOutputs> {
        Ok(HeadOutputs {
            logits: self.actor.forward(tape, emb)?,
            q1: self.q1.forward(tape, emb)?,
            q2: self.q2.forward(tape, emb)?,
        })
    }

    pub fn logits(&self, store: &ParamStore, obs: &Observation) -> NResult<Vec<f64>> {
        let mut tape = Tape::new(store);
        let emb = self.encode(&mut tape, &[obs])?;
        let l = self.actor.forward(&mut tape, emb)?;
        Ok(tape.value(l).data.clone())
    }
}

/// Log-probabilities of the masked categorical; invalid entries are `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, AgentError> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(AgentError::EmptyMask);
    }
    let lse = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - lse } else { f64::NEG_INFINITY })
        .collect())
}

pub fn masked_probs(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, AgentError> {
    Ok(masked_log_softmax(logits, mask)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Highest-probability action; ties go to the lowest index.
pub fn greedy_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn sample_action(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// `y = r + γ(1−done) Σ_a π(a|s′)(min Q̄(s′,a) − α log π(a|s′))` over valid `a`.
#[allow(clippy::too_many_arguments)]
pub fn critic_target(
    reward: f64,
    done: bool,
    gamma: f64,
    alpha: f64,
    next_probs: &[f64],
    next_log_probs: &[f64],
    next_min_q: &[f64],
    next_mask: &[bool],
) -> f64 {
    if done {
        return reward;
    }
    let v: f64 = (0..next_probs.len())
        .filter(|&a| next_mask[a] && next_probs[a] > 0.0)
        .map(|a| next_probs[a] * (next_min_q[a] - alpha * next_log_probs[a]))
        .sum();
    reward + gamma * v
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub q_mean: f64,
    pub grad_norm: f64,
}

/// Frozen network and parameters for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub nets: Networks,
    pub store: ParamStore,
}

impl Policy {
    pub fn probs(&self, obs: &Observation, mask: &[bool]) -> Result<Vec<f64>, AgentError> {
        let logits = self.nets.logits(&self.store, obs)?;
        masked_probs(&logits, mask)
    }

    pub fn act(
        &self,
        obs: &Observation,
        mask: &[bool],
        mode: ActMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, AgentError> {
        let p = self.probs(obs, mask)?;
        Ok(match mode {
            ActMode::Greedy => greedy_action(&p),
            ActMode::Sample => sample_action(&p, rng),
        })
    }
}

/// Learner state: online and target parameters, optimizer, replay sampler.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub policy: Policy,
    pub target: ParamStore,
    opt: Adam,
    sampler: ChaCha8Rng,
    pub updates: u64,
}

impl SacAgent {
    pub fn new(
        cfg: SacConfig,
        kind: EncoderKind,
        n_experts: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed);
        let nets = Networks::new(&mut store, kind, n_experts, &cfg, &mut rng);
        Ok(Self::from_parts(cfg, Policy { nets, store }, seed))
    }

    pub fn from_parts(cfg: SacConfig, policy: Policy, seed: u64) -> Self {
        let opt = Adam::new(
            AdamConfig {
                max_grad_norm: cfg.max_grad_norm,
                ..AdamConfig::with_lr(cfg.lr)
            },
            &policy.store,
        );
        SacAgent {
            cfg,
            target: policy.store.clone(),
            policy,
            opt,
            sampler: rng_for(crate::rng::derive_seed(seed, 0x5a)),
            updates: 0,
        }
    }

    pub fn sample_batch<'r>(&mut self, replay: &'r Replay) -> Result<Vec<&'r Transition>, AgentError> {
        Ok(replay.sample(self.cfg.batch_size, &mut self.sampler)?)
    }

    /// Per-sample critic targets for `batch`.
    pub fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>, AgentError> {
        let nets = &self.policy.nets;
        let next: Vec<&Observation> = batch.iter().map(|t| t.next_state.as_ref()).collect();
        let a = nets.n_actions();

        let mut tape = Tape::new(&self.policy.store);
        let emb = nets.encode(&mut tape, &next)?;
        let logits = nets.actor.forward(&mut tape, emb)?;
        let logits = tape.value(logits).clone();

        let mut ttape = Tape::new(&self.target);
        let temb = nets.encode(&mut ttape, &next)?;
        let h = nets.heads(&mut ttape, temb)?;
        let (q1, q2) = (ttape.value(h.q1), ttape.value(h.q2));

        let mut ys = Vec::with_capacity(batch.len());
        for (b, t) in batch.iter().enumerate() {
            let logp = masked_log_softmax(logits.row(b), &t.next_mask)?;
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let min_q: Vec<f64> = (0..a).map(|k| q1.get(b, k).min(q2.get(b, k))).collect();
            ys.push(critic_target(
                t.reward,
                t.done,
                self.cfg.gamma,
                self.cfg.alpha,
                &probs,
                &logp,
                &min_q,
                &t.next_mask,
            ));
        }
        Ok(ys)
    }

    /// One gradient step on twin-critic MSE plus the policy loss, followed by
    /// a soft target update.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateStats, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::Replay(ReplayError::Empty));
        }
        let ys = self.targets(batch)?;
        let nets = &self.policy.nets;
        let n_b = batch.len() as f64;
        let a = nets.n_actions();
        let alpha = self.cfg.alpha;

        let states: Vec<&Observation> = batch.iter().map(|t| t.state.as_ref()).collect();
        let mut tape = Tape::new(&self.policy.store);
        let emb = nets.encode(&mut tape, &states)?;
        let h = nets.heads(&mut tape, emb)?;
        let (logits, q1, q2) = (tape.value(h.logits), tape.value(h.q1), tape.value(h.q2));

        let mut d_logits = Mat::zeros(batch.len(), a);
        let mut d_q1 = Mat::zeros(batch.len(), a);
        let mut d_q2 = Mat::zeros(batch.len(), a);
        let mut stats = UpdateStats::default();
        for (b, t) in batch.iter().enumerate() {
            let act = t.action;
            let (e1, e2) = (q1.get(b, act) - ys[b], q2.get(b, act) - ys[b]);
            stats.critic_loss += 0.5 * (e1 * e1 + e2 * e2) / n_b;
            stats.q_mean += 0.5 * (q1.get(b, act) + q2.get(b, act)) / n_b;
            d_q1.set(b, act, e1 / n_b);
            d_q2.set(b, act, e2 / n_b);

            let logp = masked_log_softmax(logits.row(b), &t.mask)?;
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            // dL/dπ_a for L = Σ π_a (α log π_a − min Q_a).
            let g: Vec<f64> = (0..a)
                .map(|k| {
                    if t.mask[k] {
                        alpha * logp[k] + alpha - q1.get(b, k).min(q2.get(b, k))
                    } else {
                        0.0
                    }
                })
                .collect();
            let pg: f64 = (0..a).map(|k| probs[k] * g[k]).sum();
            for k in 0..a {
                if t.mask[k] {
                    d_logits.set(b, k, probs[k] * (g[k] - pg) / n_b);
                    stats.actor_loss += probs[k]
                        * (alpha * logp[k] - q1.get(b, k).min(q2.get(b, k)))
                        / n_b;
                }
            }
            stats.entropy += entropy(&probs) / n_b;
        }
        if !stats.critic_loss.is_finite() || !stats.actor_loss.is_finite() {
            return Err(AgentError::Diverged {
                update: self.updates,
                critic: stats.critic_loss,
                actor: stats.actor_loss,
            });
        }
        let mut grads = Grads::zeros_like(&self.policy.store);
        tape.backward(&[(h.logits, d_logits), (h.q1, d_q1), (h.q2, d_q2)], &mut grads)?;
        drop(tape);
        if !grads.all_finite() {
            return Err(AgentError::Diverged {
                update: self.updates,
                critic: stats.critic_loss,
                actor: stats.actor_loss,
            });
        }
        stats.grad_norm = self.opt.step(&mut self.policy.store, &grads);
        self.target.soft_update_from(&self.policy.store, self.cfg.tau);
        self.updates += 1;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn masking_zeroes_invalid_actions() {
        let p = masked_probs(&[0.3, 1.0, 2.0, -1.0], &[true, true, false, true]).unwrap();
        assert_eq!(p[2], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            masked_probs(&[1.0], &[false]),
            Err(AgentError::EmptyMask)
        ));
    }

    #[test]
    fn uniform_logits_are_uniform() {
        let p = masked_probs(&[0.7; 4], &[true; 4]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let h = entropy(&p);
        assert!((h - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let p = masked_probs(&[1.0, 3.0, 3.0, 0.0], &[true; 4]).unwrap();
        assert_eq!(greedy_action(&p), 1);
    }

    #[test]
    fn critic_target_examples() {
        let y = critic_target(
            1.0,
            false,
            0.9,
            0.2,
            &[0.5, 0.5],
            &[0.5f64.ln(), 0.5f64.ln()],
            &[2.0, 4.0],
            &[true, true],
        );
        let oracle = 1.0 + 0.9 * (0.5 * 2.0 + 0.5 * 4.0 + 0.2 * 2f64.ln());
        assert!((y - oracle).abs() < 1e-12);
        assert!((y - 3.8247).abs() < 1e-4);
        assert_eq!(
            critic_target(1.5, true, 0.9, 0.2, &[1.0], &[0.0], &[9.0], &[true]),
            1.5
        );
        let y = critic_target(1.0, false, 0.9, 0.0, &[0.0, 1.0], &[f64::NEG_INFINITY, 0.0], &[5.0, 7.0], &[true, true]);
        assert!((y - (1.0 + 0.9 * 7.0)).abs() < 1e-12);
    }

    fn flat_transition(x: f64, action: usize, reward: f64) -> Transition {
        let obs = Arc::new(Observation::Flat(vec![x, 1.0 - x, 0.5]));
        Transition {
            state: obs.clone(),
            mask: vec![true, true],
            action,
            reward,
            next_state: obs,
            next_mask: vec![true, true],
            done: true,
        }
    }

    fn small_cfg() -> SacConfig {
        SacConfig {
            batch_size: 16,
            hidden: 16,
            mlp_hidden: 16,
            lr: 1e-3,
            ..SacConfig::default()
        }
    }

    #[test]
    fn gamma_zero_targets_are_rewards() {
        let cfg = SacConfig {
            gamma: 0.0,
            ..small_cfg()
        };
        let agent = SacAgent::new(cfg, EncoderKind::Flat, 1, 1).unwrap();
        let mut ts: Vec<Transition> = (0..5).map(|i| flat_transition(0.1 * i as f64, i % 2, i as f64)).collect();
        for t in &mut ts {
            t.done = false;
        }
        let batch: Vec<&Transition> = ts.iter().collect();
        assert_eq!(agent.targets(&batch).unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn hard_target_copy_with_unit_tau() {
        let cfg = SacConfig { tau: 1.0, ..small_cfg() };
        let mut agent = SacAgent::new(cfg, EncoderKind::Flat, 1, 2).unwrap();
        let ts = [flat_transition(0.3, 1, 1.0), flat_transition(0.6, 0, 0.0)];
        let batch: Vec<&Transition> = ts.iter().collect();
        agent.update(&batch).unwrap();
        assert_eq!(agent.target, agent.policy.store);
    }

    #[test]
    fn updates_are_deterministic() {
        let ts = [flat_transition(0.3, 1, 1.0), flat_transition(0.6, 0, 0.0)];
        let batch: Vec<&Transition> = ts.iter().collect();
        let run = || {
            let mut agent = SacAgent::new(small_cfg(), EncoderKind::Flat, 1, 3).unwrap();
            agent.update(&batch).unwrap();
            agent.update(&batch).unwrap();
            agent.policy.store
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bandit_converges_to_better_arm() {
        let mut replay = Replay::new(10_000).unwrap();
        let mut rng = rng_for(11);
        for _ in 0..2_000 {
            let x: f64 = rng.random_range(0.0..1.0);
            let arm = rng.random_range(0..2usize);
            replay.push(flat_transition(x, arm, if arm == 1 { 1.0 } else { 0.0 })).unwrap();
        }
        let mut agent = SacAgent::new(small_cfg(), EncoderKind::Flat, 1, 12).unwrap();
        for _ in 0..5_000 {
            let idx = replay.sample_indices(agent.cfg.batch_size, &mut agent.sampler).unwrap();
            let all: Vec<&Transition> = replay.iter().collect();
            let batch: Vec<&Transition> = idx.iter().map(|&i| all[i]).collect();
            agent.update(&batch).unwrap();
        }
        let mut hits = 0;
        for _ in 0..1_000 {
            let x: f64 = rng.random_range(0.0..1.0);
            let obs = Observation::Flat(vec![x, 1.0 - x, 0.5]);
            let p = agent.policy.probs(&obs, &[true, true]).unwrap();
            hits += usize::from(greedy_action(&p) == 1);
        }
        assert!(hits >= 950, "{hits}");
    }
}
