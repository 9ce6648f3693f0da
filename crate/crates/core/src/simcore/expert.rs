use std::collections::VecDeque;

use serde::Serialize;

use super::SimError;
use crate::workload::ExpertProfile;

/// Per-request state while resident on an expert.
#[derive(Debug, Clone, PartialEq)]
pub struct Resident {
    pub id: u64,
    pub arrival_ms: f64,
    /// Earliest time the expert may start prefilling this request.
    pub ready_ms: f64,
    pub prompt: u32,
    /// True output length on this expert.
    pub out_len: u32,
    /// True generation score on this expert.
    pub score: f64,
    pub tokens_done: u32,
    pub prefill_start_ms: Option<f64>,
}

impl Resident {
    fn footprint(&self, per_token_kv: f64) -> f64 {
        per_token_kv * (self.prompt + self.out_len) as f64
    }
}

/// A finished request with its timing breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Completion {
    pub id: u64,
    pub expert: usize,
    pub arrival_ms: f64,
    pub ready_ms: f64,
    pub prefill_start_ms: f64,
    pub completion_ms: f64,
    pub prompt: u32,
    pub out_len: u32,
    pub score: f64,
}

impl Completion {
    /// Average latency per token, ms/token.
    pub fn latency_per_token(&self) -> f64 {
        (self.completion_ms - self.arrival_ms) / self.out_len as f64
    }

    pub fn routing_ms(&self) -> f64 {
        self.ready_ms - self.arrival_ms
    }

    pub fn wait_ms(&self) -> f64 {
        self.prefill_start_ms - self.ready_ms
    }

    pub fn inference_ms(&self) -> f64 {
        self.completion_ms - self.prefill_start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    QueueFull,
    MemoryExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Rejected(RejectReason),
}

/// What the expert does in the iteration it just started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterationOutcome {
    Prefill { request: u64, end_ms: f64 },
    Decode { end_ms: f64 },
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InFlight {
    Prefill { end_ms: f64 },
    Decode { end_ms: f64 },
}

/// One edge expert: FIFO waiting queue, running batch, KV ledger, and the
/// iteration currently executing.
#[derive(Debug, Clone)]
pub struct ExpertSim {
    pub id: usize,
    pub profile: ExpertProfile,
    pub run_cap: usize,
    pub wait_cap: usize,
    running: Vec<Resident>,
    waiting: VecDeque<Resident>,
    /// Slots held by running requests' KV caches.
    mem_used: f64,
    /// Lifetime footprint of every admitted request (waiting + running).
    mem_reserved: f64,
    in_flight: Option<InFlight>,
    /// Prefilling request, removed from `waiting` while its iteration runs.
    prefilling: Option<Resident>,
}

impl ExpertSim {
    pub fn new(id: usize, profile: ExpertProfile, run_cap: usize, wait_cap: usize) -> Self {
        Self {
            id,
            profile,
            run_cap,
            wait_cap,
            running: Vec::new(),
            waiting: VecDeque::new(),
            mem_used: 0.0,
            mem_reserved: 0.0,
            in_flight: None,
            prefilling: None,
        }
    }

    pub fn running(&self) -> &[Resident] {
        &self.running
    }

    /// Waiting requests in FIFO order, including one whose prefill is in
    /// flight (it has not joined the running batch yet).
    pub fn waiting(&self) -> impl Iterator<Item = &Resident> {
        self.prefilling.iter().chain(self.waiting.iter())
    }

    pub fn n_running(&self) -> usize {
        self.running.len()
    }

    pub fn n_waiting(&self) -> usize {
        self.waiting.len() + usize::from(self.prefilling.is_some())
    }

    pub fn mem_used(&self) -> f64 {
        self.mem_used
    }

    pub fn mem_reserved(&self) -> f64 {
        self.mem_reserved
    }

    pub fn is_busy(&self) -> bool {
        self.in_flight.is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.running.is_empty() && self.waiting.is_empty() && self.prefilling.is_none()
    }

    pub fn iteration_end_ms(&self) -> Option<f64> {
        self.in_flight.map(|f| match f {
            InFlight::Prefill { end_ms } | InFlight::Decode { end_ms } => end_ms,
        })
    }

    pub fn can_enqueue(&self) -> bool {
        self.n_waiting() < self.wait_cap
    }

    /// Admission control: a waiting slot and the full lifetime KV footprint
    /// must both be available.
    pub fn route_into(&mut self, resident: Resident) -> Admission {
        if !self.can_enqueue() {
            return Admission::Rejected(RejectReason::QueueFull);
        }
        let need = resident.footprint(self.profile.per_token_kv);
        if self.mem_reserved + need > self.profile.kv_capacity {
            return Admission::Rejected(RejectReason::MemoryExhausted);
        }
        self.mem_reserved += need;
        self.waiting.push_back(resident);
        Admission::Accepted
    }

    /// Decode cost of one iteration over the current batch.
    pub fn decode_duration(&self) -> f64 {
        let resident_tokens: u64 = self
            .running
            .iter()
            .map(|r| (r.prompt + r.tokens_done) as u64)
            .sum();
        self.profile.k2 * resident_tokens as f64
    }

    /// Start the next iteration at `now_ms` if there is work. Prefill of a
    /// ready waiting head takes priority over decoding.
    pub fn step_iteration(&mut self, now_ms: f64) -> IterationOutcome {
        debug_assert!(self.in_flight.is_none(), "iteration already in flight");
        let head_ready = self.waiting.front().is_some_and(|h| h.ready_ms <= now_ms);
        if head_ready && self.running.len() < self.run_cap {
            let mut head = self.waiting.pop_front().expect("checked");
            head.prefill_start_ms = Some(now_ms);
            let end_ms = now_ms + self.profile.k1 * head.prompt as f64;
            let id = head.id;
            self.prefilling = Some(head);
            self.in_flight = Some(InFlight::Prefill { end_ms });
            return IterationOutcome::Prefill {
                request: id,
                end_ms,
            };
        }
        if !self.running.is_empty() {
            let end_ms = now_ms + self.decode_duration();
            self.in_flight = Some(InFlight::Decode { end_ms });
            return IterationOutcome::Decode { end_ms };
        }
        IterationOutcome::Idle
    }

    /// Apply the effects of the in-flight iteration and return the requests
    /// that completed at its end.
    pub fn finish_iteration(&mut self) -> Result<Vec<Completion>, SimError> {
        let kv = self.profile.per_token_kv;
        let mut done = Vec::new();
        match self.in_flight.take() {
            None => return Ok(done),
            Some(InFlight::Prefill { end_ms }) => {
                let mut r = self.prefilling.take().expect("prefill without request");
                r.tokens_done = 1;
                self.mem_used += kv * (r.prompt + 1) as f64;
                if r.tokens_done >= r.out_len {
                    done.push(self.complete(r, end_ms));
                } else {
                    self.running.push(r);
                }
            }
            Some(InFlight::Decode { end_ms }) => {
                let mut still = Vec::with_capacity(self.running.len());
                for mut r in std::mem::take(&mut self.running) {
                    r.tokens_done += 1;
                    self.mem_used += kv;
                    if r.tokens_done >= r.out_len {
                        done.push(self.complete(r, end_ms));
                    } else {
                        still.push(r);
                    }
                }
                self.running = still;
            }
        }
        self.check_memory()?;
        Ok(done)
    }

    fn complete(&mut self, r: Resident, end_ms: f64) -> Completion {
        let kv = self.profile.per_token_kv;
        self.mem_used -= kv * (r.prompt + r.tokens_done) as f64;
        self.mem_reserved -= r.footprint(kv);
        if self.running.is_empty() && self.waiting.is_empty() && self.prefilling.is_none() {
            // Clear accumulated rounding once the expert drains.
            self.mem_used = self.mem_used.max(0.0);
        }
        Completion {
            id: r.id,
            expert: self.id,
            arrival_ms: r.arrival_ms,
            ready_ms: r.ready_ms,
            prefill_start_ms: r.prefill_start_ms.unwrap_or(end_ms),
            completion_ms: end_ms,
            prompt: r.prompt,
            out_len: r.out_len,
            score: r.score,
        }
    }

    fn check_memory(&self) -> Result<(), SimError> {
        let cap = self.profile.kv_capacity;
        let tol = 1e-9 * cap.max(1.0);
        if self.mem_used > self.mem_reserved + tol || self.mem_reserved > cap + tol {
            return Err(SimError::MemoryInvariant {
                expert: self.id,
                mem_used: self.mem_used,
                mem_reserved: self.mem_reserved,
                capacity: cap,
            });
        }
        Ok(())
    }

    /// Run a copy of this expert to completion assuming no further
    /// arrivals. Returns completions in completion order.
    pub fn project_completions(&self, now_ms: f64) -> Result<Vec<Completion>, SimError> {
        let mut sim = self.clone();
        let mut out = Vec::new();
        let mut t = now_ms;
        loop {
            if let Some(end) = sim.iteration_end_ms() {
                t = end;
                out.extend(sim.finish_iteration()?);
                continue;
            }
            if let IterationOutcome::Idle = sim.step_iteration(t) {
                match sim.waiting.front() {
                    Some(h) if h.ready_ms > t => t = h.ready_ms,
                    _ => break,
                }
            }
        }
        Ok(out)
    }
}
