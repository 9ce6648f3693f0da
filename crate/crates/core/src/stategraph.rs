//! Request/expert feature construction and the typed graph fed to the
//! attention encoder.
//!
//! Node types: one arrived request, `N` experts, every running request and
//! every waiting request. Edge types: running→expert, waiting→expert,
//! arrived→expert and expert→arrived. Nothing is padded; the graph grows and
//! shrinks with occupancy.

use serde::{Deserialize, Serialize};

use crate::simcore::{GlobalSnapshot, RequestView};

pub const REQUEST_FEATURES: usize = 6;
pub const EXPERT_BASE_FEATURES: usize = 3;

/// Normalization constants fixed at config load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScales {
    pub max_prompt: f64,
    pub max_tokens: f64,
    pub latency_req_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestFeatures {
    pub p_norm: f64,
    pub s_hat: f64,
    pub d_hat: f64,
    pub e: f64,
    pub d_cur: f64,
    pub l_cur: f64,
}

impl RequestFeatures {
    pub fn to_array(&self) -> [f64; REQUEST_FEATURES] {
        [self.p_norm, self.s_hat, self.d_hat, self.e, self.d_cur, self.l_cur]
    }
}

/// Features of a resident request. Waiting requests report no memory share
/// and no generated tokens; their latency term is the queueing time so far.
pub fn build_request_features(
    view: &RequestView,
    s_hat: f64,
    d_hat: f64,
    scales: &FeatureScales,
) -> RequestFeatures {
    let per_token = view.elapsed_ms.max(0.0) / view.tokens_done.max(1) as f64;
    RequestFeatures {
        p_norm: (view.prompt as f64 / scales.max_prompt).min(1.0),
        s_hat,
        d_hat,
        e: view.mem_share.clamp(0.0, 1.0),
        d_cur: (view.tokens_done as f64 / scales.max_tokens).min(1.0),
        l_cur: per_token / scales.latency_req_ms,
    }
}

/// The request being routed.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivedRequest {
    pub prompt: u32,
    pub elapsed_ms: f64,
    /// Predicted score feature per expert, expert-index order.
    pub score_values: Vec<f64>,
    /// Predicted length feature per expert, expert-index order.
    pub length_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub n_experts: usize,
    /// `[p_norm, s_0, d_0, …, s_{N-1}, d_{N-1}, e, d_cur, l_cur]`.
    pub arrived: Vec<f64>,
    /// Row-major, `expert_width()` columns: memory fraction, running and
    /// waiting occupancy, then a one-hot expert id.
    pub experts: Vec<f64>,
    /// Row-major, `REQUEST_FEATURES` columns.
    pub running: Vec<f64>,
    pub waiting: Vec<f64>,
    /// Destination expert of each running node.
    pub running_expert: Vec<usize>,
    /// Destination expert of each waiting node.
    pub waiting_expert: Vec<usize>,
}

impl HeteroGraph {
    pub fn arrived_width(n_experts: usize) -> usize {
        4 + 2 * n_experts
    }

    pub fn expert_width(n_experts: usize) -> usize {
        EXPERT_BASE_FEATURES + n_experts
    }

    pub fn n_running(&self) -> usize {
        self.running_expert.len()
    }

    pub fn n_waiting(&self) -> usize {
        self.waiting_expert.len()
    }

    pub fn node_count(&self) -> usize {
        1 + self.n_experts + self.n_running() + self.n_waiting()
    }

    /// Directed edge count over all four edge types.
    pub fn edge_count(&self) -> usize {
        self.n_running() + self.n_waiting() + 2 * self.n_experts
    }

    pub fn expert_row(&self, n: usize) -> &[f64] {
        let w = Self::expert_width(self.n_experts);
        &self.experts[n * w..(n + 1) * w]
    }

    pub fn running_row(&self, i: usize) -> &[f64] {
        &self.running[i * REQUEST_FEATURES..(i + 1) * REQUEST_FEATURES]
    }

    pub fn waiting_row(&self, i: usize) -> &[f64] {
        &self.waiting[i * REQUEST_FEATURES..(i + 1) * REQUEST_FEATURES]
    }

    pub fn all_finite(&self) -> bool {
        self.arrived
            .iter()
            .chain(&self.experts)
            .chain(&self.running)
            .chain(&self.waiting)
            .all(|v| v.is_finite())
    }
}

/// Build the typed graph. `resident_predictions(id, expert)` returns the
/// `(s_hat, d_hat)` feature values recorded when the resident was routed.
pub fn build_graph<F>(
    snapshot: &GlobalSnapshot,
    arrived: &ArrivedRequest,
    resident_predictions: F,
    scales: &FeatureScales,
) -> HeteroGraph
where
    F: Fn(u64, usize) -> (f64, f64),
{
    let n = snapshot.experts.len();
    let mut arrived_feats = Vec::with_capacity(HeteroGraph::arrived_width(n));
    arrived_feats.push((arrived.prompt as f64 / scales.max_prompt).min(1.0));
    for k in 0..n {
        arrived_feats.push(arrived.score_values[k]);
        arrived_feats.push(arrived.length_values[k]);
    }
    arrived_feats.extend([0.0, 0.0, arrived.elapsed_ms.max(0.0) / scales.latency_req_ms]);

    let mut experts = Vec::with_capacity(n * HeteroGraph::expert_width(n));
    let mut running = Vec::new();
    let mut waiting = Vec::new();
    let mut running_expert = Vec::new();
    let mut waiting_expert = Vec::new();
    for ev in &snapshot.experts {
        experts.push(ev.mem_frac);
        experts.push(ev.n_running as f64 / ev.run_cap.max(1) as f64);
        experts.push(ev.n_waiting as f64 / ev.wait_cap.max(1) as f64);
        experts.extend((0..n).map(|k| if k == ev.id { 1.0 } else { 0.0 }));
        for r in &ev.running {
            let (s, d) = resident_predictions(r.id, ev.id);
            running.extend(build_request_features(r, s, d, scales).to_array());
            running_expert.push(ev.id);
        }
        for r in &ev.waiting {
            let (s, d) = resident_predictions(r.id, ev.id);
            waiting.extend(build_request_features(r, s, d, scales).to_array());
            waiting_expert.push(ev.id);
        }
    }
    HeteroGraph {
        n_experts: n,
        arrived: arrived_feats,
        experts,
        running,
        waiting,
        running_expert,
        waiting_expert,
    }
}

/// Flat expert-level features `(e_n, running/run_cap, waiting/wait_cap)` for
/// every expert, used by the baseline learner.
pub fn expert_level_features(snapshot: &GlobalSnapshot) -> Vec<f64> {
    snapshot
        .experts
        .iter()
        .flat_map(|ev| {
            [
                ev.mem_frac,
                ev.n_running as f64 / ev.run_cap.max(1) as f64,
                ev.n_waiting as f64 / ev.wait_cap.max(1) as f64,
            ]
        })
        .collect()
}

/// Random graph with in-range features, for probing encoders.
pub fn synthetic_graph<R: rand::Rng>(
    n_experts: usize,
    n_running: usize,
    n_waiting: usize,
    rng: &mut R,
) -> HeteroGraph {
    let mut unit = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.0..1.0)).collect() };
    let mut experts = Vec::new();
    for k in 0..n_experts {
        experts.extend(unit(EXPERT_BASE_FEATURES));
        experts.extend((0..n_experts).map(|j| if j == k { 1.0 } else { 0.0 }));
    }
    let running = unit(n_running * REQUEST_FEATURES);
    let waiting = unit(n_waiting * REQUEST_FEATURES);
    let arrived = unit(HeteroGraph::arrived_width(n_experts));
    let running_expert = (0..n_running).map(|_| rng.random_range(0..n_experts)).collect();
    let waiting_expert = (0..n_waiting).map(|_| rng.random_range(0..n_experts)).collect();
    HeteroGraph {
        n_experts,
        arrived,
        experts,
        running,
        waiting,
        running_expert,
        waiting_expert,
    }
}
