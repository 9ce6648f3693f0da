//! Routing strategies behind one trait, registered by name.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{action_mask, Action};
use crate::agent::{ActMode, AgentError, EncoderKind, Observation, Policy};
use crate::predictor::Predictions;
use crate::rng::rng_for;
use crate::simcore::GlobalSnapshot;
use crate::workload::Request;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("unknown router '{0}' (known: rr, sqf, greedy, baseline-rl, qos-rl)")]
    Unknown(String),
    #[error("router '{0}' needs a checkpoint")]
    MissingCheckpoint(&'static str),
    #[error("checkpoint encoder {found:?} does not fit router '{router}'")]
    EncoderMismatch {
        router: &'static str,
        found: EncoderKind,
    },
    #[error("checkpoint has {found} experts, environment has {expected}")]
    ExpertCount { expected: usize, found: usize },
    #[error("router '{0}' needs an observation")]
    MissingObservation(&'static str),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RouterKind {
    #[serde(rename = "rr")]
    RoundRobin,
    #[serde(rename = "sqf")]
    ShortestQueueFirst,
    #[serde(rename = "greedy")]
    GreedyScore,
    #[serde(rename = "baseline-rl")]
    BaselineRl,
    #[serde(rename = "qos-rl")]
    QosAwareRl,
}

impl RouterKind {
    pub const ALL: [RouterKind; 5] = [
        RouterKind::RoundRobin,
        RouterKind::ShortestQueueFirst,
        RouterKind::GreedyScore,
        RouterKind::BaselineRl,
        RouterKind::QosAwareRl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RouterKind::RoundRobin => "rr",
            RouterKind::ShortestQueueFirst => "sqf",
            RouterKind::GreedyScore => "greedy",
            RouterKind::BaselineRl => "baseline-rl",
            RouterKind::QosAwareRl => "qos-rl",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, RouterKind::BaselineRl | RouterKind::QosAwareRl)
    }

    /// Encoder a learned router of this kind trains by default.
    pub fn encoder(self) -> Option<EncoderKind> {
        match self {
            RouterKind::BaselineRl => Some(EncoderKind::Flat),
            RouterKind::QosAwareRl => Some(EncoderKind::Han),
            _ => None,
        }
    }
}

impl fmt::Display for RouterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RouterKind {
    type Err = RouterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RouterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RouterError::Unknown(s.to_string()))
    }
}

/// Everything a router may look at for one decision.
pub struct RouteContext<'a> {
    pub snapshot: &'a GlobalSnapshot,
    pub request: &'a Request,
    pub predictions: &'a Predictions,
    /// Encoder input, present when the router asked for one.
    pub observation: Option<&'a Observation>,
}

impl RouteContext<'_> {
    pub fn mask(&self) -> Vec<bool> {
        action_mask(self.snapshot.experts.iter().map(|e| e.waiting_full()))
    }
}

pub trait Router {
    fn kind(&self) -> RouterKind;

    /// Encoder input this router consumes, if any.
    fn observation_kind(&self) -> Option<EncoderKind> {
        None
    }

    fn route(&mut self, ctx: &RouteContext) -> Result<Action, RouterError>;
}

#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    cursor: usize,
}

impl Router for RoundRobin {
    fn kind(&self) -> RouterKind {
        RouterKind::RoundRobin
    }

    fn route(&mut self, ctx: &RouteContext) -> Result<Action, RouterError> {
        let n = ctx.snapshot.experts.len();
        for step in 0..n {
            let k = (self.cursor + step) % n;
            if !ctx.snapshot.experts[k].waiting_full() {
                self.cursor = (k + 1) % n;
                return Ok(Action::Expert(k));
            }
        }
        Ok(Action::Drop)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ShortestQueueFirst;

impl Router for ShortestQueueFirst {
    fn kind(&self) -> RouterKind {
        RouterKind::ShortestQueueFirst
    }

    fn route(&mut self, ctx: &RouteContext) -> Result<Action, RouterError> {
        Ok(ctx
            .snapshot
            .experts
            .iter()
            .filter(|e| !e.waiting_full())
            .min_by_key(|e| (e.load(), e.id))
            .map_or(Action::Drop, |e| Action::Expert(e.id)))
    }
}

/// Highest predicted score regardless of load; drops when that expert's
/// waiting queue is full.
#[derive(Debug, Clone, Default)]
pub struct GreedyScore;

impl Router for GreedyScore {
    fn kind(&self) -> RouterKind {
        RouterKind::GreedyScore
    }

    fn route(&mut self, ctx: &RouteContext) -> Result<Action, RouterError> {
        let buckets = &ctx.predictions.score_buckets;
        let mut best = 0;
        for (k, &b) in buckets.iter().enumerate() {
            if b > buckets[best] {
                best = k;
            }
        }
        if ctx.snapshot.experts[best].waiting_full() {
            Ok(Action::Drop)
        } else {
            Ok(Action::Expert(best))
        }
    }
}

/// Frozen learned policy acting greedily under the full-queue mask.
#[derive(Debug, Clone)]
pub struct LearnedRouter {
    kind: RouterKind,
    policy: Policy,
    rng: ChaCha8Rng,
}

impl LearnedRouter {
    pub fn new(kind: RouterKind, policy: Policy, n_experts: usize) -> Result<Self, RouterError> {
        let name = kind.name();
        if !kind.is_learned() {
            return Err(RouterError::Unknown(name.to_string()));
        }
        if policy.nets.n_experts != n_experts {
            return Err(RouterError::ExpertCount {
                expected: n_experts,
                found: policy.nets.n_experts,
            });
        }
        // The ablation's no-abstraction variant is a qos-rl router over the
        // flat encoder, so only baseline-rl pins its encoder.
        if kind == RouterKind::BaselineRl && policy.nets.kind != EncoderKind::Flat {
            return Err(RouterError::EncoderMismatch {
                router: name,
                found: policy.nets.kind,
            });
        }
        Ok(LearnedRouter {
            kind,
            policy,
            rng: rng_for(0),
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }
}

impl Router for LearnedRouter {
    fn kind(&self) -> RouterKind {
        self.kind
    }

    fn observation_kind(&self) -> Option<EncoderKind> {
        Some(self.policy.nets.kind)
    }

    fn route(&mut self, ctx: &RouteContext) -> Result<Action, RouterError> {
        let obs = ctx
            .observation
            .ok_or(RouterError::MissingObservation(self.kind.name()))?;
        let a = self
            .policy
            .act(obs, &ctx.mask(), ActMode::Greedy, &mut self.rng)?;
        Ok(Action::from_index(a))
    }
}

/// Arguments shared by router factories.
pub struct RouterArgs {
    pub n_experts: usize,
    pub policy: Option<Policy>,
}

type Factory = Box<dyn Fn(RouterArgs) -> Result<Box<dyn Router>, RouterError> + Send + Sync>;

/// Name → factory table.
pub struct RouterRegistry {
    factories: BTreeMap<&'static str, (RouterKind, Factory)>,
}

impl Default for RouterRegistry {
    fn default() -> Self {
        let mut r = RouterRegistry {
            factories: BTreeMap::new(),
        };
        r.register(RouterKind::RoundRobin, |_| Ok(Box::new(RoundRobin::default())));
        r.register(RouterKind::ShortestQueueFirst, |_| Ok(Box::new(ShortestQueueFirst)));
        r.register(RouterKind::GreedyScore, |_| Ok(Box::new(GreedyScore)));
        for kind in [RouterKind::BaselineRl, RouterKind::QosAwareRl] {
            r.register(kind, move |args: RouterArgs| {
                let policy = args
                    .policy
                    .ok_or(RouterError::MissingCheckpoint(kind.name()))?;
                Ok(Box::new(LearnedRouter::new(kind, policy, args.n_experts)?))
            });
        }
        r
    }
}

impl RouterRegistry {
    pub fn register<F>(&mut self, kind: RouterKind, factory: F)
    where
        F: Fn(RouterArgs) -> Result<Box<dyn Router>, RouterError> + Send + Sync + 'static,
    {
        self.factories.insert(kind.name(), (kind, Box::new(factory)));
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, name: &str, args: RouterArgs) -> Result<Box<dyn Router>, RouterError> {
        let (_, f) = self
            .factories
            .get(name)
            .ok_or_else(|| RouterError::Unknown(name.to_string()))?;
        f(args)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Networks, SacConfig};
    use crate::neural::ParamStore;
    use crate::simcore::ExpertView;
    use crate::stategraph::synthetic_graph;
    use rand::Rng;

    fn snapshot(loads: &[(usize, usize)]) -> GlobalSnapshot {
        GlobalSnapshot {
            now_ms: 0.0,
            experts: loads
                .iter()
                .enumerate()
                .map(|(id, &(r, w))| ExpertView {
                    id,
                    mem_frac: 0.0,
                    n_running: r,
                    n_waiting: w,
                    run_cap: 5,
                    wait_cap: 5,
                    running: vec![],
                    waiting: vec![],
                })
                .collect(),
        }
    }

    fn request(n: usize) -> Request {
        Request {
            id: 0,
            arrival_ms: 0.0,
            prompt_tokens: 10,
            scores: vec![0.5; n],
            out_lens: vec![10; n],
        }
    }

    fn preds(buckets: Vec<usize>) -> Predictions {
        let n = buckets.len();
        Predictions {
            score_values: buckets.iter().map(|&b| (b as f64 + 0.5) / 10.0).collect(),
            score_buckets: buckets,
            length_buckets: vec![0; n],
            length_values: vec![0.05; n],
        }
    }

    fn run(router: &mut dyn Router, snap: &GlobalSnapshot, p: &Predictions) -> Action {
        let req = request(snap.experts.len());
        router
            .route(&RouteContext {
                snapshot: snap,
                request: &req,
                predictions: p,
                observation: None,
            })
            .unwrap()
    }

    #[test]
    fn round_robin_cycles_and_skips() {
        let p = preds(vec![0; 3]);
        let mut rr = RoundRobin::default();
        let open = snapshot(&[(0, 0); 3]);
        let seq: Vec<_> = (0..4).map(|_| run(&mut rr, &open, &p)).collect();
        assert_eq!(seq, [0, 1, 2, 0].map(Action::Expert));

        let mut rr = RoundRobin::default();
        let one_full = snapshot(&[(0, 0), (5, 5), (0, 0)]);
        let seq: Vec<_> = (0..4).map(|_| run(&mut rr, &one_full, &p)).collect();
        assert_eq!(seq, [0, 2, 0, 2].map(Action::Expert));

        let all_full = snapshot(&[(5, 5); 3]);
        assert_eq!(run(&mut rr, &all_full, &p), Action::Drop);
    }

    #[test]
    fn shortest_queue_examples() {
        let p = preds(vec![0; 3]);
        let mut s = ShortestQueueFirst;
        assert_eq!(run(&mut s, &snapshot(&[(3, 0), (1, 0), (2, 0)]), &p), Action::Expert(1));
        assert_eq!(run(&mut s, &snapshot(&[(2, 0), (2, 0), (2, 0)]), &p), Action::Expert(0));
        assert_eq!(run(&mut s, &snapshot(&[(5, 5), (4, 0), (5, 5)]), &p), Action::Expert(1));
        assert_eq!(run(&mut s, &snapshot(&[(5, 5), (5, 5)]), &p), Action::Drop);
    }

    #[test]
    fn greedy_score_examples() {
        let mut g = GreedyScore;
        let open = snapshot(&[(0, 0); 3]);
        assert_eq!(run(&mut g, &open, &preds(vec![5, 7, 6])), Action::Expert(1));
        assert_eq!(run(&mut g, &open, &preds(vec![4, 4, 4])), Action::Expert(0));
        let best_full = snapshot(&[(0, 0), (5, 5), (0, 0)]);
        assert_eq!(run(&mut g, &best_full, &preds(vec![5, 7, 6])), Action::Drop);
    }

    #[test]
    fn registry_knows_all_names() {
        let reg = RouterRegistry::default();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, vec!["baseline-rl", "greedy", "qos-rl", "rr", "sqf"]);
        for k in RouterKind::ALL {
            assert_eq!(k.name().parse::<RouterKind>().unwrap(), k);
        }
        assert!(matches!(
            reg.build("qos-rl", RouterArgs { n_experts: 3, policy: None }),
            Err(RouterError::MissingCheckpoint(_))
        ));
        assert!(matches!(
            reg.build("bert", RouterArgs { n_experts: 3, policy: None }),
            Err(RouterError::Unknown(_))
        ));
    }

    fn random_policy(n: usize, seed: u64) -> Policy {
        let mut store = ParamStore::new();
        let nets = Networks::new(
            &mut store,
            EncoderKind::Han,
            n,
            &SacConfig::default(),
            &mut rng_for(seed),
        );
        Policy { nets, store }
    }

    #[test]
    fn learned_router_is_deterministic_and_masked() {
        let n = 3;
        let mut router = LearnedRouter::new(RouterKind::QosAwareRl, random_policy(n, 1), n).unwrap();
        let mut rng = rng_for(2);
        let mut seen = [0usize; 4];
        for _ in 0..1_000 {
            let loads: Vec<(usize, usize)> = (0..n)
                .map(|_| {
                    let full = rng.random_range(0..4) == 0;
                    (rng.random_range(0..=5), if full { 5 } else { rng.random_range(0..5) })
                })
                .collect();
            let snap = snapshot(&loads);
            let g = synthetic_graph(n, rng.random_range(0..8), rng.random_range(0..8), &mut rng);
            let obs = Observation::Graph(g);
            let req = request(n);
            let p = preds(vec![0; n]);
            let ctx = RouteContext {
                snapshot: &snap,
                request: &req,
                predictions: &p,
                observation: Some(&obs),
            };
            let a = router.route(&ctx).unwrap();
            assert_eq!(a, router.route(&ctx).unwrap());
            if let Action::Expert(k) = a {
                assert!(!snap.experts[k].waiting_full());
            }
            seen[a.index()] += 1;
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
    }
}
