//! Event-driven simulation of iteration-level scheduling across experts.
//!
//! Each expert alternates between single-request prefill iterations and
//! batched decode iterations. The engine keeps one pending `IterationEnd`
//! per busy expert plus `Arrival` wake-ups for requests that become ready
//! after the routing delay. Events at the same instant are ordered
//! `IterationEnd` before `Arrival`, then by expert/request id.
//!
//! Starting a new iteration is deferred until the clock moves past the
//! instant at which the expert became free, so a request routed at time `t`
//! is seen by an expert whose iteration ended exactly at `t`.

mod expert;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub use expert::{
    Admission, Completion, ExpertSim, IterationOutcome, RejectReason, Resident,
};

use crate::workload::{ProfileSet, Request};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("expert {expert}: memory invariant breached (used {mem_used}, reserved {mem_reserved}, capacity {capacity})")]
    MemoryInvariant {
        expert: usize,
        mem_used: f64,
        mem_reserved: f64,
        capacity: f64,
    },
    #[error("request {0} is already resident")]
    DuplicateRequest(u64),
    #[error("no expert {0}")]
    UnknownExpert(usize),
    #[error("time {target} is before the clock {clock}")]
    TimeTravel { target: f64, clock: f64 },
    #[error("request {id} routed at {now} before its arrival {arrival}")]
    EarlyRouting { id: u64, now: f64, arrival: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    IterationEnd { expert: usize },
    Arrival { request: u64, expert: usize },
}

impl EventKind {
    fn rank(&self) -> (u8, u64) {
        match *self {
            EventKind::IterationEnd { expert } => (0, expert as u64),
            EventKind::Arrival { request, .. } => (1, request),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SimEvent {
    time_ms: f64,
    kind: EventKind,
    seq: u64,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_ms
            .total_cmp(&self.time_ms)
            .then_with(|| other.kind.rank().cmp(&self.kind.rank()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One line of the optional debug event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub t_ms: f64,
    pub expert: usize,
    pub kind: &'static str,
    pub req: Option<u64>,
}

/// Per-request view inside a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestView {
    pub id: u64,
    pub prompt: u32,
    pub tokens_done: u32,
    pub arrival_ms: f64,
    pub elapsed_ms: f64,
    /// KV share of the expert's capacity held by this request.
    pub mem_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpertView {
    pub id: usize,
    /// Fraction of KV capacity used by running requests.
    pub mem_frac: f64,
    pub n_running: usize,
    pub n_waiting: usize,
    pub run_cap: usize,
    pub wait_cap: usize,
    pub running: Vec<RequestView>,
    pub waiting: Vec<RequestView>,
}

impl ExpertView {
    pub fn waiting_full(&self) -> bool {
        self.n_waiting >= self.wait_cap
    }

    pub fn load(&self) -> usize {
        self.n_running + self.n_waiting
    }
}

/// Read-only view of every expert at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalSnapshot {
    pub now_ms: f64,
    pub experts: Vec<ExpertView>,
}

/// Inputs the impact estimator needs for one resident.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidentImpactInput {
    pub id: u64,
    pub prompt: u32,
    pub out_len: u32,
    pub tokens_done: u32,
    pub score: f64,
    /// Per-token latency the request would end with if nothing else were
    /// routed to its expert.
    pub projected_latency: f64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    experts: Vec<ExpertSim>,
    clock: f64,
    queue: BinaryHeap<SimEvent>,
    seq: u64,
    resident_ids: HashSet<u64>,
    routing_overhead_ms: f64,
    log: Option<Vec<LogEntry>>,
}

impl Simulator {
    pub fn new(profiles: &ProfileSet, run_cap: usize, wait_cap: usize) -> Self {
        let experts = profiles
            .experts
            .iter()
            .enumerate()
            .map(|(i, p)| ExpertSim::new(i, p.clone(), run_cap, wait_cap))
            .collect();
        Self {
            experts,
            clock: 0.0,
            queue: BinaryHeap::new(),
            seq: 0,
            resident_ids: HashSet::new(),
            routing_overhead_ms: 0.0,
            log: None,
        }
    }

    /// Delay between a routing decision and the request becoming eligible
    /// for prefill.
    pub fn with_routing_overhead(mut self, ms: f64) -> Self {
        self.routing_overhead_ms = ms;
        self
    }

    pub fn with_event_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn experts(&self) -> &[ExpertSim] {
        &self.experts
    }

    pub fn expert(&self, n: usize) -> Option<&ExpertSim> {
        self.experts.get(n)
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.experts.iter().all(|e| e.is_empty())
    }

    pub fn event_log(&self) -> Option<&[LogEntry]> {
        self.log.as_deref()
    }

    pub fn write_event_log<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for e in self.log.iter().flatten() {
            writeln!(w, "{}", serde_json::to_string(e).map_err(std::io::Error::from)?)?;
        }
        Ok(())
    }

    fn push(&mut self, time_ms: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(SimEvent {
            time_ms,
            kind,
            seq: self.seq,
        });
    }

    fn record(&mut self, t_ms: f64, expert: usize, kind: &'static str, req: Option<u64>) {
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry {
                t_ms,
                expert,
                kind,
                req,
            });
        }
    }

    /// Route `request` to expert `n` at `now_ms`. On acceptance the request
    /// joins the waiting queue and becomes eligible for prefill after the
    /// routing overhead.
    pub fn route_into(
        &mut self,
        n: usize,
        request: &Request,
        now_ms: f64,
    ) -> Result<Admission, SimError> {
        if n >= self.experts.len() {
            return Err(SimError::UnknownExpert(n));
        }
        if now_ms < request.arrival_ms {
            return Err(SimError::EarlyRouting {
                id: request.id,
                now: now_ms,
                arrival: request.arrival_ms,
            });
        }
        if self.resident_ids.contains(&request.id) {
            return Err(SimError::DuplicateRequest(request.id));
        }
        let ready_ms = now_ms + self.routing_overhead_ms;
        let resident = Resident {
            id: request.id,
            arrival_ms: request.arrival_ms,
            ready_ms,
            prompt: request.prompt_tokens,
            out_len: request.out_lens[n],
            score: request.scores[n],
            tokens_done: 0,
            prefill_start_ms: None,
        };
        let admission = self.experts[n].route_into(resident);
        if admission == Admission::Accepted {
            self.resident_ids.insert(request.id);
            self.push(
                ready_ms,
                EventKind::Arrival {
                    request: request.id,
                    expert: n,
                },
            );
            self.record(now_ms, n, "enqueue", Some(request.id));
        }
        Ok(admission)
    }

    fn kick_idle(&mut self) {
        let now = self.clock;
        for n in 0..self.experts.len() {
            if self.experts[n].is_busy() {
                continue;
            }
            match self.experts[n].step_iteration(now) {
                IterationOutcome::Prefill { request, end_ms } => {
                    self.record(now, n, "prefill", Some(request));
                    self.push(end_ms, EventKind::IterationEnd { expert: n });
                }
                IterationOutcome::Decode { end_ms } => {
                    self.record(now, n, "decode", None);
                    self.push(end_ms, EventKind::IterationEnd { expert: n });
                }
                IterationOutcome::Idle => {}
            }
        }
    }

    /// Process every event at the earliest pending instant.
    fn process_next_instant(&mut self, out: &mut Vec<Completion>) -> Result<(), SimError> {
        let Some(first) = self.queue.pop() else {
            return Ok(());
        };
        self.clock = first.time_ms;
        let mut ev = Some(first);
        while let Some(e) = ev {
            match e.kind {
                EventKind::IterationEnd { expert } => {
                    let done = self.experts[expert].finish_iteration()?;
                    for c in &done {
                        self.resident_ids.remove(&c.id);
                        self.record(e.time_ms, expert, "complete", Some(c.id));
                    }
                    out.extend(done);
                }
                EventKind::Arrival { request, expert } => {
                    self.record(e.time_ms, expert, "ready", Some(request));
                }
            }
            ev = match self.queue.peek() {
                Some(next) if next.time_ms == self.clock => self.queue.pop(),
                _ => None,
            };
        }
        Ok(())
    }

    /// Process all events with time ≤ `t_ms` and move the clock to `t_ms`.
    /// Completions are returned ordered by (completion time, request id).
    pub fn advance_until(&mut self, t_ms: f64) -> Result<Vec<Completion>, SimError> {
        if t_ms < self.clock {
            return Err(SimError::TimeTravel {
                target: t_ms,
                clock: self.clock,
            });
        }
        let mut out = Vec::new();
        loop {
            if self.clock < t_ms {
                self.kick_idle();
            }
            match self.queue.peek() {
                Some(ev) if ev.time_ms <= t_ms => self.process_next_instant(&mut out)?,
                _ => break,
            }
        }
        self.clock = t_ms;
        sort_completions(&mut out);
        Ok(out)
    }

    /// Run until every admitted request has completed.
    pub fn run_to_completion(&mut self) -> Result<Vec<Completion>, SimError> {
        let mut out = Vec::new();
        loop {
            self.kick_idle();
            if self.queue.is_empty() {
                break;
            }
            self.process_next_instant(&mut out)?;
        }
        sort_completions(&mut out);
        Ok(out)
    }

    pub fn snapshot(&self, now_ms: f64) -> GlobalSnapshot {
        let experts = self
            .experts
            .iter()
            .map(|e| {
                let cap = e.profile.kv_capacity;
                let kv = e.profile.per_token_kv;
                let view = |r: &Resident, running: bool| RequestView {
                    id: r.id,
                    prompt: r.prompt,
                    tokens_done: if running { r.tokens_done } else { 0 },
                    arrival_ms: r.arrival_ms,
                    elapsed_ms: now_ms - r.arrival_ms,
                    mem_share: if running {
                        kv * (r.prompt + r.tokens_done) as f64 / cap
                    } else {
                        0.0
                    },
                };
                let mut running: Vec<RequestView> =
                    e.running().iter().map(|r| view(r, true)).collect();
                running.sort_by_key(|r| r.id);
                let mut waiting: Vec<RequestView> = e.waiting().map(|r| view(r, false)).collect();
                waiting.sort_by_key(|r| r.id);
                ExpertView {
                    id: e.id,
                    mem_frac: e.mem_used() / cap,
                    n_running: e.n_running(),
                    n_waiting: e.n_waiting(),
                    run_cap: e.run_cap,
                    wait_cap: e.wait_cap,
                    running,
                    waiting,
                }
            })
            .collect();
        GlobalSnapshot { now_ms, experts }
    }

    /// Running requests of expert `n` with their no-interference latency
    /// projections, ordered by request id.
    pub fn impact_inputs(&self, n: usize, now_ms: f64) -> Result<Vec<ResidentImpactInput>, SimError> {
        let e = self.experts.get(n).ok_or(SimError::UnknownExpert(n))?;
        let projected = e.project_completions(now_ms)?;
        let mut out: Vec<ResidentImpactInput> = e
            .running()
            .iter()
            .map(|r| {
                let done = projected
                    .iter()
                    .find(|c| c.id == r.id)
                    .expect("every resident completes in projection");
                ResidentImpactInput {
                    id: r.id,
                    prompt: r.prompt,
                    out_len: r.out_len,
                    tokens_done: r.tokens_done,
                    score: r.score,
                    projected_latency: done.latency_per_token(),
                }
            })
            .collect();
        out.sort_by_key(|r| r.id);
        Ok(out)
    }
}

fn sort_completions(v: &mut [Completion]) {
    v.sort_by(|a, b| {
        a.completion_ms
            .total_cmp(&b.completion_ms)
            .then(a.id.cmp(&b.id))
    });
}
