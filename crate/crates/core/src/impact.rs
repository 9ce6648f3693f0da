//! Action-impact estimation and reward functions.
//!
//! The estimator shares the simulator's linear cost model: routing request
//! `j` to an expert blocks its residents for one prefill of `p_j` tokens, then
//! adds `p_j + k` resident tokens to the `k`-th joint decode iteration.

use serde::Serialize;
use thiserror::Error;

use crate::action::Action;
use crate::simcore::{Completion, ResidentImpactInput};
use crate::workload::Request;

#[derive(Debug, Error, PartialEq)]
pub enum ImpactError {
    #[error("resident {0} has zero output length")]
    ZeroResidentLength(u64),
    #[error("resident {id} progress {done} exceeds length {len}")]
    Progress { id: u64, done: u32, len: u32 },
    #[error("incoming request has zero output length")]
    ZeroIncomingLength,
}

/// `φ = s·1[l ≤ L]`.
pub fn qos(score: f64, latency_per_token: f64, latency_req_ms: f64) -> f64 {
    if latency_per_token <= latency_req_ms {
        score
    } else {
        0.0
    }
}

pub fn prefill_latency(k1: f64, prompt: u32) -> f64 {
    k1 * prompt as f64
}

/// `k2·Σ(p_i + d_i)` over `(prompt, tokens_done)` pairs.
pub fn decode_latency(k2: f64, residents: &[(u32, u32)]) -> f64 {
    k2 * residents
        .iter()
        .map(|&(p, d)| p as f64 + d as f64)
        .sum::<f64>()
}

/// `Σ_{k=1}^{K} (p + k) = p·K + K(K+1)/2`.
pub fn partial_sum(p: u32, k: u32) -> f64 {
    let (p, k) = (p as f64, k as f64);
    p * k + k * (k + 1.0) / 2.0
}

/// Resident-side inputs to the latency increase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidentLoad {
    pub id: u64,
    pub out_len: u32,
    pub tokens_done: u32,
}

/// Increase in per-token latency of resident `i` if a request with prompt
/// `p_j` and length `d_j` is admitted now.
pub fn latency_increase(
    k1: f64,
    k2: f64,
    p_j: u32,
    d_j: u32,
    i: ResidentLoad,
) -> Result<f64, ImpactError> {
    if i.out_len == 0 {
        return Err(ImpactError::ZeroResidentLength(i.id));
    }
    if i.tokens_done > i.out_len {
        return Err(ImpactError::Progress {
            id: i.id,
            done: i.tokens_done,
            len: i.out_len,
        });
    }
    if d_j == 0 {
        return Err(ImpactError::ZeroIncomingLength);
    }
    let overlap = (i.out_len - i.tokens_done).min(d_j);
    Ok((k1 * p_j as f64 + k2 * partial_sum(p_j, overlap)) / i.out_len as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactEntry {
    pub id: u64,
    pub score: f64,
    pub l_base: f64,
    pub l_plus: f64,
    pub l_proj: f64,
    pub would_violate: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ImpactReport {
    pub entries: Vec<ImpactEntry>,
    pub penalty_total: f64,
}

impl ImpactReport {
    pub fn violators(&self) -> impl Iterator<Item = &ImpactEntry> {
        self.entries.iter().filter(|e| e.would_violate)
    }
}

/// Project every running resident of the chosen expert. `l_base` is each
/// resident's no-interference final per-token latency.
pub fn assess_impact(
    k1: f64,
    k2: f64,
    residents: &[ResidentImpactInput],
    p_j: u32,
    d_j: u32,
    latency_req_ms: f64,
) -> Result<ImpactReport, ImpactError> {
    let mut report = ImpactReport::default();
    for r in residents {
        let l_plus = latency_increase(
            k1,
            k2,
            p_j,
            d_j,
            ResidentLoad {
                id: r.id,
                out_len: r.out_len,
                tokens_done: r.tokens_done,
            },
        )?;
        let l_proj = r.projected_latency + l_plus;
        let would_violate = l_proj >= latency_req_ms;
        if would_violate {
            report.penalty_total += r.score;
        }
        report.entries.push(ImpactEntry {
            id: r.id,
            score: r.score,
            l_base: r.projected_latency,
            l_plus,
            l_proj,
            would_violate,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RewardBreakdown {
    pub completed_gain: f64,
    pub violation_penalty: f64,
    pub drop_penalty: f64,
    pub reward: f64,
}

fn completed_gain(completions: &[Completion], latency_req_ms: f64) -> f64 {
    completions
        .iter()
        .map(|c| qos(c.score, c.latency_per_token(), latency_req_ms))
        .sum()
}

/// Reward of one routing decision. `completions` is the window since the
/// previous decision; `report` is the impact on the chosen expert and is
/// ignored for drops.
pub fn qos_reward(
    completions: &[Completion],
    action: Action,
    report: Option<&ImpactReport>,
    request: &Request,
    latency_req_ms: f64,
) -> RewardBreakdown {
    let completed_gain = completed_gain(completions, latency_req_ms);
    let (violation_penalty, drop_penalty) = match action {
        Action::Drop => (0.0, request.best_score()),
        Action::Expert(_) => (report.map_or(0.0, |r| r.penalty_total), 0.0),
    };
    RewardBreakdown {
        completed_gain,
        violation_penalty,
        drop_penalty,
        reward: completed_gain - violation_penalty - drop_penalty,
    }
}

/// Completion-only reward of the baseline learner.
pub fn baseline_reward(completions: &[Completion], latency_req_ms: f64) -> f64 {
    completed_gain(completions, latency_req_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(len: u32, done: u32) -> ResidentLoad {
        ResidentLoad {
            id: 1,
            out_len: len,
            tokens_done: done,
        }
    }

    fn completion(score: f64, out_len: u32, e2e_ms: f64) -> Completion {
        Completion {
            id: 0,
            expert: 0,
            arrival_ms: 0.0,
            ready_ms: 0.0,
            prefill_start_ms: 0.0,
            completion_ms: e2e_ms,
            prompt: 10,
            out_len,
            score,
        }
    }

    fn request(scores: Vec<f64>) -> Request {
        Request {
            id: 0,
            arrival_ms: 0.0,
            prompt_tokens: 10,
            out_lens: vec![10; scores.len()],
            scores,
        }
    }

    fn resident(id: u64, len: u32, done: u32, score: f64, l: f64) -> ResidentImpactInput {
        ResidentImpactInput {
            id,
            prompt: 50,
            out_len: len,
            tokens_done: done,
            score,
            projected_latency: l,
        }
    }

    #[test]
    fn phase_latencies() {
        assert!((prefill_latency(0.1, 100) - 10.0).abs() < 1e-12);
        assert_eq!(decode_latency(0.001, &[]), 0.0);
        assert!((decode_latency(0.001, &[(100, 50), (30, 10)]) - 0.190).abs() < 1e-12);
    }

    #[test]
    fn latency_increase_examples() {
        let l = latency_increase(0.1, 0.001, 100, 300, load(200, 150)).unwrap();
        assert!((l - 0.081375).abs() < 1e-12);
        let l = latency_increase(0.1, 0.001, 100, 1, load(200, 150)).unwrap();
        assert!((l - 0.050505).abs() < 1e-12);
        let l = latency_increase(0.1, 0.001, 100, 300, load(200, 200)).unwrap();
        assert!((l - 10.0 / 200.0).abs() < 1e-12);
    }

    #[test]
    fn latency_increase_rejects_bad_inputs() {
        assert_eq!(
            latency_increase(0.1, 0.001, 100, 3, load(0, 0)),
            Err(ImpactError::ZeroResidentLength(1))
        );
        assert!(latency_increase(0.1, 0.001, 100, 3, load(5, 6)).is_err());
        assert_eq!(
            latency_increase(0.1, 0.001, 100, 0, load(5, 1)),
            Err(ImpactError::ZeroIncomingLength)
        );
    }

    #[test]
    fn partial_sum_matches_loop() {
        for p in [0u32, 1, 100, 512] {
            for k in 0..=400u32 {
                let looped: f64 = (1..=k).map(|i| (p + i) as f64).sum();
                assert_eq!(partial_sum(p, k), looped);
            }
        }
    }

    #[test]
    fn empty_expert_has_no_penalty() {
        let r = assess_impact(0.1, 0.001, &[], 100, 10, 30.0).unwrap();
        assert_eq!(r.penalty_total, 0.0);
    }

    #[test]
    fn threshold_crossing_counts() {
        let r = assess_impact(0.1, 0.001, &[resident(4, 100, 10, 0.7, 29.95)], 100, 5, 30.0)
            .unwrap();
        assert!(r.entries[0].would_violate);
        assert_eq!(r.penalty_total, 0.7);
    }

    #[test]
    fn three_residents_recomputed() {
        let (k1, k2, p, d) = (0.3, 0.01, 120u32, 40u32);
        let rs = [
            resident(1, 100, 90, 0.5, 28.0),
            resident(2, 30, 2, 0.6, 10.0),
            resident(3, 60, 59, 0.9, 29.9),
        ];
        let r = assess_impact(k1, k2, &rs, p, d, 30.0).unwrap();
        // Overlaps: min(10, 40), min(28, 40), min(1, 40).
        let expect = [
            28.0 + (36.0 + 0.01 * (120.0 * 10.0 + 55.0)) / 100.0,
            10.0 + (36.0 + 0.01 * (120.0 * 28.0 + 406.0)) / 30.0,
            29.9 + (36.0 + 0.01 * 121.0) / 60.0,
        ];
        for (e, x) in r.entries.iter().zip(expect) {
            assert!((e.l_proj - x).abs() < 1e-12, "{} vs {x}", e.l_proj);
        }
        assert_eq!(
            r.entries.iter().map(|e| e.would_violate).collect::<Vec<_>>(),
            vec![false, false, true]
        );
        assert_eq!(r.penalty_total, 0.9);
    }

    #[test]
    fn reward_examples() {
        let done = [completion(0.8, 10, 100.0)];
        let report = ImpactReport {
            entries: vec![],
            penalty_total: 0.5,
        };
        let req = request(vec![0.2, 0.3]);
        let r = qos_reward(&done, Action::Expert(0), Some(&report), &req, 30.0);
        assert!((r.reward - 0.3).abs() < 1e-12);

        let req = request(vec![0.4, 0.9, 0.1]);
        let r = qos_reward(&[], Action::Drop, None, &req, 30.0);
        assert_eq!(r.reward, -0.9);
        assert_eq!(r.drop_penalty, 0.9);

        let r = qos_reward(&[], Action::Expert(1), Some(&ImpactReport::default()), &req, 30.0);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn baseline_reward_examples() {
        let window = [completion(0.8, 10, 100.0), completion(0.6, 10, 400.0)];
        assert_eq!(baseline_reward(&window, 30.0), 0.8);
        assert_eq!(baseline_reward(&[], 30.0), 0.0);
        assert_eq!(baseline_reward(&window[1..], 30.0), 0.0);
    }

    proptest! {
        #[test]
        fn monotone_in_incoming_request(
            p in 1u32..512, d in 1u32..300, len in 1u32..300, frac in 0.0f64..=1.0,
        ) {
            let done = (len as f64 * frac).floor() as u32;
            let i = load(len, done);
            let base = latency_increase(0.3, 0.01, p, d, i).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!(latency_increase(0.3, 0.01, p + 1, d, i).unwrap() >= base);
            prop_assert!(latency_increase(0.3, 0.01, p, d + 1, i).unwrap() >= base);
        }

        #[test]
        fn linear_in_cost_coefficients(
            p in 1u32..512, d in 1u32..300, len in 1u32..300, c in 0.1f64..10.0,
        ) {
            let i = load(len, len / 2);
            let both = latency_increase(0.3, 0.01, p, d, i).unwrap();
            let pre = latency_increase(0.3, 0.0, p, d, i).unwrap();
            let dec = latency_increase(0.0, 0.01, p, d, i).unwrap();
            prop_assert!((both - pre - dec).abs() <= 1e-9 * both.max(1.0));
            let scaled = latency_increase(0.3 * c, 0.01 * c, p, d, i).unwrap();
            prop_assert!((scaled - c * both).abs() <= 1e-9 * scaled.max(1.0));
        }

        #[test]
        fn reward_bounded_by_gain(
            scores in proptest::collection::vec(0.0f64..=1.0, 0..6),
            penalty in 0.0f64..3.0,
            drop in proptest::bool::ANY,
        ) {
            let window: Vec<Completion> =
                scores.iter().map(|&s| completion(s, 10, 200.0)).collect();
            let report = ImpactReport { entries: vec![], penalty_total: penalty };
            let action = if drop { Action::Drop } else { Action::Expert(0) };
            let req = request(vec![0.5, 0.7]);
            let r = qos_reward(&window, action, Some(&report), &req, 30.0);
            prop_assert!(r.reward <= r.completed_gain);
            prop_assert_eq!(
                r.reward == r.completed_gain,
                r.violation_penalty == 0.0 && r.drop_penalty == 0.0
            );
        }
    }
}
