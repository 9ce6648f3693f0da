use std::collections::HashMap;
use std::sync::Arc;

use super::config::RunConfig;
use super::metrics::{aggregate, Aggregates, GpuSample, MetricsRecord, RowSlot};
use super::HarnessError;
use crate::action::{action_mask, Action};
use crate::agent::{EncoderKind, Observation};
use crate::impact::{assess_impact, ImpactReport};
use crate::predictor::{Predictions, Predictor};
use crate::simcore::{Admission, Completion, GlobalSnapshot, Simulator};
use crate::stategraph::{build_graph, expert_level_features, ArrivedRequest, FeatureScales};
use crate::workload::Request;

/// State presented at one arrival.
#[derive(Debug, Clone)]
pub struct Decision {
    pub request: Request,
    pub snapshot: GlobalSnapshot,
    pub predictions: Predictions,
    pub mask: Vec<bool>,
    pub observation: Option<Arc<Observation>>,
    /// Completions since the previous decision, ordered by completion time.
    pub window: Vec<Completion>,
}

#[derive(Debug, Clone)]
pub struct Applied {
    /// `Drop` when the router dropped or the expert rejected for memory.
    pub effective: Action,
    pub forced_drop: bool,
    /// Impact on the chosen expert's running requests, when requested.
    pub impact: Option<ImpactReport>,
}

/// One episode over a fixed request list: arrivals are routed in order and
/// the simulator runs between them.
pub struct Env<'c> {
    cfg: &'c RunConfig,
    sim: Simulator,
    predictor: Predictor,
    scales: FeatureScales,
    requests: Vec<Request>,
    next: usize,
    preds: HashMap<u64, (Vec<f64>, Vec<f64>)>,
    slots: Vec<RowSlot>,
    slot_of: HashMap<u64, usize>,
    gpu: Vec<GpuSample>,
    n_samples: u64,
}

impl<'c> Env<'c> {
    pub fn new(cfg: &'c RunConfig, requests: Vec<Request>, seed: u64) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let n = cfg.n_experts();
        if let Some(r) = requests
            .iter()
            .find(|r| r.scores.len() != n || r.out_lens.len() != n)
        {
            return Err(HarnessError::Config(format!(
                "request {} carries ground truth for {} experts, config has {n}",
                r.id,
                r.scores.len()
            )));
        }
        let predictor = Predictor::new(cfg.predictor_for(seed), cfg.profiles.max_tokens)?;
        let sim = Simulator::new(&cfg.profiles, cfg.run_cap, cfg.wait_cap)
            .with_routing_overhead(cfg.routing_overhead_ms);
        Ok(Env {
            cfg,
            sim,
            predictor,
            scales: cfg.scales(),
            requests,
            next: 0,
            preds: HashMap::new(),
            slots: Vec::new(),
            slot_of: HashMap::new(),
            gpu: Vec::new(),
            n_samples: 0,
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn n_requests(&self) -> usize {
        self.requests.len()
    }

    fn next_sample_ms(&self) -> f64 {
        self.n_samples as f64 * self.cfg.gpu_sample_ms
    }

    fn sample_gpu(&mut self, t_ms: f64) {
        for e in self.sim.experts() {
            self.gpu.push(GpuSample {
                t_ms,
                expert: e.id,
                e_n: e.mem_used() / e.profile.kv_capacity,
            });
        }
        self.n_samples += 1;
    }

    fn record(&mut self, done: &[Completion]) -> Result<(), HarnessError> {
        for c in done {
            let i = *self
                .slot_of
                .get(&c.id)
                .ok_or(HarnessError::Invariant(format!("unknown completion {}", c.id)))?;
            self.slots[i].complete(c, self.cfg.latency_req_ms);
            self.preds.remove(&c.id);
        }
        Ok(())
    }

    /// Advance to `t_ms`, sampling GPU usage on the way.
    fn advance_to(&mut self, t_ms: f64) -> Result<Vec<Completion>, HarnessError> {
        let mut out = Vec::new();
        while self.next_sample_ms() <= t_ms {
            let ts = self.next_sample_ms();
            out.extend(self.sim.advance_until(ts)?);
            self.sample_gpu(ts);
        }
        out.extend(self.sim.advance_until(t_ms)?);
        self.record(&out)?;
        Ok(out)
    }

    /// Advance to the next arrival and describe it; `None` once every request
    /// has been routed.
    pub fn next_decision(
        &mut self,
        observe: Option<EncoderKind>,
    ) -> Result<Option<Decision>, HarnessError> {
        let Some(request) = self.requests.get(self.next).cloned() else {
            return Ok(None);
        };
        let now = request.arrival_ms;
        let window = self.advance_to(now)?;
        let snapshot = self.sim.snapshot(now);
        let predictions = self.predictor.predict_all(&request);
        let observation = observe.map(|kind| {
            Arc::new(match kind {
                EncoderKind::Flat => Observation::Flat(expert_level_features(&snapshot)),
                EncoderKind::Han => Observation::Graph(build_graph(
                    &snapshot,
                    &ArrivedRequest {
                        prompt: request.prompt_tokens,
                        elapsed_ms: now - request.arrival_ms,
                        score_values: predictions.score_values.clone(),
                        length_values: predictions.length_values.clone(),
                    },
                    |id, n| {
                        self.preds
                            .get(&id)
                            .map_or((0.0, 0.0), |(s, d)| (s[n], d[n]))
                    },
                    &self.scales,
                )),
            })
        });
        let mask = action_mask(snapshot.experts.iter().map(|e| e.waiting_full()));
        Ok(Some(Decision {
            request,
            snapshot,
            predictions,
            mask,
            observation,
            window,
        }))
    }

    /// Carry out `action` for the request of `d`.
    pub fn apply(
        &mut self,
        d: &Decision,
        action: Action,
        with_impact: bool,
    ) -> Result<Applied, HarnessError> {
        if !d.mask.get(action.index()).copied().unwrap_or(false) {
            return Err(HarnessError::MaskedAction(action.index()));
        }
        let r = &d.request;
        let now = r.arrival_ms;
        self.slot_of.insert(r.id, self.slots.len());
        self.next += 1;
        let Action::Expert(n) = action else {
            self.slots.push(RowSlot::dropped(r.id, false));
            return Ok(Applied {
                effective: Action::Drop,
                forced_drop: false,
                impact: None,
            });
        };
        let impact = if with_impact {
            let p = &self.cfg.profiles.experts[n];
            let inputs = self.sim.impact_inputs(n, now)?;
            Some(assess_impact(
                p.k1,
                p.k2,
                &inputs,
                r.prompt_tokens,
                r.out_lens[n],
                self.cfg.latency_req_ms,
            )?)
        } else {
            None
        };
        match self.sim.route_into(n, r, now)? {
            Admission::Accepted => {
                self.slots
                    .push(RowSlot::routed(r.id, n, r.scores[n], r.out_lens[n]));
                self.preds.insert(
                    r.id,
                    (
                        d.predictions.score_values.clone(),
                        d.predictions.length_values.clone(),
                    ),
                );
                Ok(Applied {
                    effective: action,
                    forced_drop: false,
                    impact,
                })
            }
            Admission::Rejected(_) => {
                self.slots.push(RowSlot::dropped(r.id, true));
                Ok(Applied {
                    effective: Action::Drop,
                    forced_drop: true,
                    impact,
                })
            }
        }
    }

    /// Run every resident to completion. Returns the final metrics and the
    /// completions after the last decision.
    pub fn finish(mut self, header: Aggregates) -> Result<(MetricsRecord, Vec<Completion>), HarnessError> {
        if self.next != self.requests.len() {
            return Err(HarnessError::Invariant(format!(
                "episode finished after {} of {} decisions",
                self.next,
                self.requests.len()
            )));
        }
        let mut tail = Vec::new();
        while !self.sim.is_idle() {
            let ts = self.next_sample_ms();
            let done = self.sim.advance_until(ts)?;
            self.record(&done)?;
            tail.extend(done);
            self.sample_gpu(ts);
        }
        let rest = self.sim.run_to_completion()?;
        self.record(&rest)?;
        tail.extend(rest);
        if let Some(s) = self.slots.iter().find(|s| s.row.dropped == 0 && s.split.is_none()) {
            return Err(HarnessError::Invariant(format!(
                "request {} never completed",
                s.row.id
            )));
        }
        let aggregates = aggregate(
            &self.slots,
            self.cfg.n_experts(),
            self.cfg.latency_req_ms,
            header,
        );
        let record = MetricsRecord {
            rows: self.slots.into_iter().map(|s| s.row).collect(),
            aggregates,
            gpu_usage: self.gpu,
        };
        Ok((record, tail))
    }
}
