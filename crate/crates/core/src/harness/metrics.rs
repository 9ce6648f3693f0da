use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::impact::qos;
use crate::simcore::Completion;

pub const REQUESTS_FILE: &str = "requests.csv";
pub const AGGREGATES_FILE: &str = "aggregates.json";
pub const GPU_USAGE_FILE: &str = "gpu_usage.csv";

/// Outcome of one request. Latency fields are empty for drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub id: u64,
    /// Expert index, or -1 for a drop.
    pub action: i64,
    pub s: Option<f64>,
    pub d: Option<u32>,
    pub l_ms_per_tok: Option<f64>,
    pub phi: f64,
    /// 1 when dropped, including memory rejections.
    pub dropped: u8,
    pub wait_ms: Option<f64>,
    pub e2e_ms: Option<f64>,
}

/// Latency split of one completed request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Decomposition {
    pub routing_ms: f64,
    pub wait_ms: f64,
    pub inference_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpuSample {
    pub t_ms: f64,
    pub expert: usize,
    pub e_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Aggregates {
    pub router: String,
    pub seed: u64,
    pub config_hash: String,
    pub n_requests: usize,
    pub n_completed: usize,
    pub n_dropped: usize,
    /// Drops caused by memory rejection after a routing choice.
    pub n_forced_drops: usize,
    /// Mean φ over all requests, drops counted as 0.
    pub avg_qos: f64,
    /// Mean latency per token over completed requests.
    pub avg_latency_per_token: f64,
    /// Completed requests with l > L, over completed requests.
    pub violation_rate: f64,
    pub drop_rate: f64,
    pub avg_e2e_ms: f64,
    pub avg_routing_ms: f64,
    pub avg_wait_ms: f64,
    pub avg_inference_ms: f64,
    /// Fraction of all requests admitted to each expert.
    pub expert_share: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub rows: Vec<RequestRow>,
    pub aggregates: Aggregates,
    pub gpu_usage: Vec<GpuSample>,
}

/// Per-request bookkeeping while an episode runs.
#[derive(Debug, Clone)]
pub(crate) struct RowSlot {
    pub row: RequestRow,
    pub split: Option<Decomposition>,
    pub forced: bool,
}

impl RowSlot {
    pub fn dropped(id: u64, forced: bool) -> Self {
        RowSlot {
            row: RequestRow {
                id,
                action: -1,
                s: None,
                d: None,
                l_ms_per_tok: None,
                phi: 0.0,
                dropped: 1,
                wait_ms: None,
                e2e_ms: None,
            },
            split: None,
            forced,
        }
    }

    pub fn routed(id: u64, expert: usize, s: f64, d: u32) -> Self {
        RowSlot {
            row: RequestRow {
                id,
                action: expert as i64,
                s: Some(s),
                d: Some(d),
                l_ms_per_tok: None,
                phi: 0.0,
                dropped: 0,
                wait_ms: None,
                e2e_ms: None,
            },
            split: None,
            forced: false,
        }
    }

    pub fn complete(&mut self, c: &Completion, latency_req_ms: f64) {
        let l = c.latency_per_token();
        self.row.l_ms_per_tok = Some(l);
        self.row.phi = qos(c.score, l, latency_req_ms);
        self.row.wait_ms = Some(c.wait_ms());
        self.row.e2e_ms = Some(c.completion_ms - c.arrival_ms);
        self.split = Some(Decomposition {
            routing_ms: c.routing_ms(),
            wait_ms: c.wait_ms(),
            inference_ms: c.inference_ms(),
        });
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub(crate) fn aggregate(
    slots: &[RowSlot],
    n_experts: usize,
    latency_req_ms: f64,
    header: Aggregates,
) -> Aggregates {
    let n = slots.len();
    let completed: Vec<&RowSlot> = slots.iter().filter(|s| s.split.is_some()).collect();
    let n_dropped = slots.iter().filter(|s| s.row.dropped == 1).count();
    let mut share = vec![0.0; n_experts];
    for s in slots.iter().filter(|s| s.row.dropped == 0) {
        share[s.row.action as usize] += 1.0;
    }
    if n > 0 {
        share.iter_mut().for_each(|x| *x /= n as f64);
    }
    let lat = |s: &&RowSlot| s.row.l_ms_per_tok.unwrap_or(0.0);
    let split = |s: &&RowSlot| s.split.expect("completed");
    let violations = completed.iter().filter(|s| lat(s) > latency_req_ms).count();
    Aggregates {
        n_requests: n,
        n_completed: completed.len(),
        n_dropped,
        n_forced_drops: slots.iter().filter(|s| s.forced).count(),
        avg_qos: mean(slots.iter().map(|s| s.row.phi)),
        avg_latency_per_token: mean(completed.iter().map(lat)),
        violation_rate: if completed.is_empty() {
            0.0
        } else {
            violations as f64 / completed.len() as f64
        },
        drop_rate: if n == 0 { 0.0 } else { n_dropped as f64 / n as f64 },
        avg_e2e_ms: mean(completed.iter().map(|s| s.row.e2e_ms.unwrap_or(0.0))),
        avg_routing_ms: mean(completed.iter().map(|s| split(s).routing_ms)),
        avg_wait_ms: mean(completed.iter().map(|s| split(s).wait_ms)),
        avg_inference_ms: mean(completed.iter().map(|s| split(s).inference_ms)),
        expert_share: share,
        ..header
    }
}

impl MetricsRecord {
    /// Write `requests.csv`, `aggregates.json` and `gpu_usage.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(REQUESTS_FILE))?;
        if self.rows.is_empty() {
            w.write_record([
                "id",
                "action",
                "s",
                "d",
                "l_ms_per_tok",
                "phi",
                "dropped",
                "wait_ms",
                "e2e_ms",
            ])?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(GPU_USAGE_FILE))?;
        if self.gpu_usage.is_empty() {
            w.write_record(["t_ms", "expert", "e_n"])?;
        }
        for g in &self.gpu_usage {
            w.serialize(g)?;
        }
        w.flush()?;

        write_json(&dir.join(AGGREGATES_FILE), &self.aggregates)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Read back a `requests.csv`.
pub fn read_requests_csv(path: &Path) -> Result<Vec<RequestRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
