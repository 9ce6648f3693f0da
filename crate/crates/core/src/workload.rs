//! Request streams: synthetic Poisson/bursty generators, per-expert ground
//! truth sampling, and the line-delimited JSON trace format.
//!
//! Trace files start with a header object `{"version":1,"experts":N}`,
//! followed by one row per request:
//! `{"t_ms":float,"p":int,"experts":[{"s":float,"d":int}, ...]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_for};

pub const DEFAULT_MAX_TOKENS: u32 = 300;
pub const DEFAULT_MAX_PROMPT: u32 = 512;
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("arrival rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("horizon must be non-negative, got {0}")]
    NegativeHorizon(f64),
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: arrival {t_ms} ms is earlier than the previous row")]
    Ordering { line: usize, t_ms: f64 },
    #[error("line {line}: expected {expected} expert entries, found {found}")]
    Schema {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace spans zero duration")]
    ZeroDuration,
}

/// Serving characteristics and ground-truth distributions of one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub score_mean: f64,
    pub score_std: f64,
    pub length_mean: f64,
    pub length_std: f64,
    /// KV capacity in token slots.
    pub kv_capacity: f64,
    /// Prefill slope, ms per prompt token.
    pub k1: f64,
    /// Decode slope, ms per resident token per iteration.
    pub k2: f64,
    /// Token slots consumed per resident token.
    #[serde(default = "default_per_token_kv")]
    pub per_token_kv: f64,
}

fn default_per_token_kv() -> f64 {
    1.0
}

impl ExpertProfile {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Profile(m.to_string()));
        if !(0.0..=1.0).contains(&self.score_mean) {
            return bad("score_mean must lie in [0,1]");
        }
        if self.score_std < 0.0 || self.length_std < 0.0 {
            return bad("standard deviations must be non-negative");
        }
        if self.length_mean < 1.0 {
            return bad("length_mean must be at least 1");
        }
        if !(self.kv_capacity > 0.0) {
            return bad("kv_capacity must be positive");
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return bad("k1 and k2 must be positive");
        }
        if !(self.per_token_kv > 0.0) {
            return bad("per_token_kv must be positive");
        }
        Ok(())
    }
}

/// The experts of one deployment plus the shared prompt distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub experts: Vec<ExpertProfile>,
    pub prompt_mean: f64,
    pub prompt_std: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_max_prompt")]
    pub max_prompt: u32,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

fn default_max_prompt() -> u32 {
    DEFAULT_MAX_PROMPT
}

impl ProfileSet {
    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.experts.is_empty() {
            return Err(WorkloadError::Profile("at least one expert required".into()));
        }
        for e in &self.experts {
            e.validate()?;
        }
        if self.prompt_mean < 1.0 || self.prompt_std < 0.0 {
            return Err(WorkloadError::Profile("invalid prompt distribution".into()));
        }
        if self.max_tokens < 1 || self.max_prompt < 1 {
            return Err(WorkloadError::Profile("max_tokens/max_prompt must be >= 1".into()));
        }
        Ok(())
    }
}

/// One user request with its per-expert ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_ms: f64,
    pub prompt_tokens: u32,
    /// Generation score each expert would achieve, in `[0,1]`.
    pub scores: Vec<f64>,
    /// Output length each expert would produce, in `[1, max_tokens]`.
    pub out_lens: Vec<u32>,
}

impl Request {
    pub fn best_score(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }
}

/// Exponential inter-arrival times with mean `1000 / rate_per_s` ms.
pub fn poisson_arrivals(
    rate_per_s: f64,
    horizon_ms: f64,
    seed: u64,
) -> Result<Vec<f64>, WorkloadError> {
    poisson_arrivals_capped(rate_per_s, horizon_ms, usize::MAX, seed)
}

/// Poisson arrivals that stop at the horizon or after `max` arrivals,
/// whichever comes first. The first `max` arrivals equal those of
/// [`poisson_arrivals`].
pub fn poisson_arrivals_capped(
    rate_per_s: f64,
    horizon_ms: f64,
    max: usize,
    seed: u64,
) -> Result<Vec<f64>, WorkloadError> {
    if !(rate_per_s > 0.0) || !rate_per_s.is_finite() {
        return Err(WorkloadError::InvalidRate(rate_per_s));
    }
    let exp = Exp::new(rate_per_s / 1000.0).map_err(|_| WorkloadError::InvalidRate(rate_per_s))?;
    renewal(horizon_ms, max, seed, |rng| exp.sample(rng))
}

/// Gamma-distributed gaps with the given mean rate. `shape < 1` gives a
/// burstier-than-Poisson stream (coefficient of variation `1/sqrt(shape)`).
pub fn bursty_arrivals(
    rate_per_s: f64,
    shape: f64,
    horizon_ms: f64,
    seed: u64,
) -> Result<Vec<f64>, WorkloadError> {
    bursty_arrivals_capped(rate_per_s, shape, horizon_ms, usize::MAX, seed)
}

pub fn bursty_arrivals_capped(
    rate_per_s: f64,
    shape: f64,
    horizon_ms: f64,
    max: usize,
    seed: u64,
) -> Result<Vec<f64>, WorkloadError> {
    if !(rate_per_s > 0.0) || !(shape > 0.0) {
        return Err(WorkloadError::InvalidRate(rate_per_s));
    }
    let mean_gap = 1000.0 / rate_per_s;
    let gamma =
        Gamma::new(shape, mean_gap / shape).map_err(|_| WorkloadError::InvalidRate(rate_per_s))?;
    renewal(horizon_ms, max, seed, |rng| {
        let gap: f64 = gamma.sample(rng);
        gap.max(1e-6)
    })
}

fn renewal(
    horizon_ms: f64,
    max: usize,
    seed: u64,
    mut gap: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> f64,
) -> Result<Vec<f64>, WorkloadError> {
    if !(horizon_ms >= 0.0) {
        return Err(WorkloadError::NegativeHorizon(horizon_ms));
    }
    let mut rng = rng_for(seed);
    let mut out = Vec::new();
    let mut t = 0.0;
    while out.len() < max {
        t += gap(&mut rng);
        if t >= horizon_ms {
            break;
        }
        out.push(t);
    }
    Ok(out)
}

fn clipped_normal<R: Rng>(rng: &mut R, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (mean + std * z).clamp(lo, hi)
}

/// Draw one request's prompt length and per-expert truth from clipped
/// Gaussians.
pub fn sample_request(profiles: &ProfileSet, id: u64, arrival_ms: f64, seed: u64) -> Request {
    let mut rng = rng_for(seed);
    let max_prompt = profiles.max_prompt as f64;
    let max_tokens = profiles.max_tokens as f64;
    let prompt = clipped_normal(&mut rng, profiles.prompt_mean, profiles.prompt_std, 1.0, max_prompt)
        .round()
        .clamp(1.0, max_prompt) as u32;
    let mut scores = Vec::with_capacity(profiles.n_experts());
    let mut out_lens = Vec::with_capacity(profiles.n_experts());
    for e in &profiles.experts {
        scores.push(clipped_normal(&mut rng, e.score_mean, e.score_std, 0.0, 1.0));
        let len = clipped_normal(&mut rng, e.length_mean, e.length_std, 1.0, max_tokens)
            .round()
            .clamp(1.0, max_tokens);
        out_lens.push(len as u32);
    }
    Request {
        id,
        arrival_ms,
        prompt_tokens: prompt,
        scores,
        out_lens,
    }
}

/// Attach sampled ground truth to a list of arrival times. Request `i` gets
/// id `i` and a seed derived from `(seed, i)`.
pub fn requests_from_arrivals(profiles: &ProfileSet, arrivals: &[f64], seed: u64) -> Vec<Request> {
    arrivals
        .iter()
        .enumerate()
        .map(|(i, &t)| sample_request(profiles, i as u64, t, derive_seed(seed, i as u64 + 1)))
        .collect()
}

/// Poisson workload with sampled ground truth.
pub fn poisson_workload(
    profiles: &ProfileSet,
    rate_per_s: f64,
    horizon_ms: f64,
    seed: u64,
) -> Result<Vec<Request>, WorkloadError> {
    profiles.validate()?;
    let arrivals = poisson_arrivals(rate_per_s, horizon_ms, derive_seed(seed, 0))?;
    Ok(requests_from_arrivals(profiles, &arrivals, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertTruth {
    pub s: f64,
    pub d: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_ms: f64,
    pub p: u32,
    pub experts: Vec<ExpertTruth>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceHeader {
    version: u32,
    experts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n_experts: usize,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn from_requests(n_experts: usize, requests: &[Request]) -> Self {
        let rows = requests
            .iter()
            .map(|r| TraceRow {
                t_ms: r.arrival_ms,
                p: r.prompt_tokens,
                experts: r
                    .scores
                    .iter()
                    .zip(&r.out_lens)
                    .map(|(&s, &d)| ExpertTruth { s, d })
                    .collect(),
            })
            .collect();
        Trace { n_experts, rows }
    }

    /// Requests with ids equal to row positions.
    pub fn to_requests(&self) -> Vec<Request> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| Request {
                id: i as u64,
                arrival_ms: row.t_ms,
                prompt_tokens: row.p,
                scores: row.experts.iter().map(|e| e.s).collect(),
                out_lens: row.experts.iter().map(|e| e.d).collect(),
            })
            .collect()
    }

    /// Mean arrival rate in requests per second, measured over the gaps
    /// between the first and last arrival.
    pub fn observed_rate_per_s(&self) -> Result<f64, WorkloadError> {
        let (first, last) = match (self.rows.first(), self.rows.last()) {
            (Some(f), Some(l)) => (f.t_ms, l.t_ms),
            _ => return Err(WorkloadError::EmptyTrace),
        };
        let span = last - first;
        if !(span > 0.0) {
            return Err(WorkloadError::ZeroDuration);
        }
        Ok((self.rows.len() - 1) as f64 * 1000.0 / span)
    }

    pub fn write<P: AsRef<Path>>(&self, path: P) -> Result<(), WorkloadError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), WorkloadError> {
        let header = TraceHeader {
            version: TRACE_VERSION,
            experts: self.n_experts,
        };
        let to_err = |e: serde_json::Error| WorkloadError::Io(e.into());
        writeln!(w, "{}", serde_json::to_string(&header).map_err(to_err)?)?;
        for row in &self.rows {
            writeln!(w, "{}", serde_json::to_string(row).map_err(to_err)?)?;
        }
        Ok(())
    }
}

pub fn load_trace<P: AsRef<Path>>(path: P) -> Result<Trace, WorkloadError> {
    parse_trace(BufReader::new(File::open(path)?))
}

pub fn parse_trace<R: BufRead>(reader: R) -> Result<Trace, WorkloadError> {
    let mut lines = reader.lines().enumerate();
    let header: TraceHeader = loop {
        match lines.next() {
            None => return Err(WorkloadError::EmptyTrace),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| WorkloadError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            }
        }
    };
    if header.version != TRACE_VERSION {
        return Err(WorkloadError::UnsupportedVersion(header.version));
    }
    let mut rows: Vec<TraceRow> = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let row: TraceRow = serde_json::from_str(&line).map_err(|e| WorkloadError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if row.experts.len() != header.experts {
            return Err(WorkloadError::Schema {
                line: lineno,
                expected: header.experts,
                found: row.experts.len(),
            });
        }
        if !row.t_ms.is_finite() || row.p < 1 {
            return Err(WorkloadError::Parse {
                line: lineno,
                msg: "arrival must be finite and prompt at least 1 token".into(),
            });
        }
        if row.experts.iter().any(|e| !(0.0..=1.0).contains(&e.s) || e.d < 1) {
            return Err(WorkloadError::Parse {
                line: lineno,
                msg: "scores must lie in [0,1] and lengths be at least 1".into(),
            });
        }
        if let Some(prev) = rows.last() {
            if row.t_ms < prev.t_ms {
                return Err(WorkloadError::Ordering {
                    line: lineno,
                    t_ms: row.t_ms,
                });
            }
        }
        rows.push(row);
    }
    Ok(Trace {
        n_experts: header.experts,
        rows,
    })
}

/// Uniformly rescale arrival times so the observed rate becomes
/// `target_rate_per_s`. Gap ratios are preserved.
pub fn rescale_trace(trace: &Trace, target_rate_per_s: f64) -> Result<Trace, WorkloadError> {
    if !(target_rate_per_s > 0.0) {
        return Err(WorkloadError::InvalidRate(target_rate_per_s));
    }
    let factor = trace.observed_rate_per_s()? / target_rate_per_s;
    let rows = trace
        .rows
        .iter()
        .map(|r| TraceRow {
            t_ms: r.t_ms * factor,
            ..r.clone()
        })
        .collect();
    Ok(Trace {
        n_experts: trace.n_experts,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn profiles() -> ProfileSet {
        ProfileSet {
            experts: vec![
                ExpertProfile {
                    score_mean: 0.6,
                    score_std: 0.1,
                    length_mean: 100.0,
                    length_std: 30.0,
                    kv_capacity: 12000.0,
                    k1: 0.3,
                    k2: 0.01,
                    per_token_kv: 1.0,
                },
                ExpertProfile {
                    score_mean: 0.8,
                    score_std: 0.0,
                    length_mean: 50.0,
                    length_std: 0.0,
                    kv_capacity: 12000.0,
                    k1: 0.3,
                    k2: 0.01,
                    per_token_kv: 1.0,
                },
            ],
            prompt_mean: 200.0,
            prompt_std: 80.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_prompt: DEFAULT_MAX_PROMPT,
        }
    }

    #[test]
    fn empty_horizon_gives_no_arrivals() {
        assert!(poisson_arrivals(5.0, 0.0, 1).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_rate_and_horizon() {
        assert!(matches!(
            poisson_arrivals(0.0, 10.0, 1),
            Err(WorkloadError::InvalidRate(_))
        ));
        assert!(matches!(
            poisson_arrivals(-1.0, 10.0, 1),
            Err(WorkloadError::InvalidRate(_))
        ));
        assert!(matches!(
            poisson_arrivals(1.0, -1.0, 1),
            Err(WorkloadError::NegativeHorizon(_))
        ));
    }

    #[test]
    fn poisson_mean_gap() {
        let ts = poisson_arrivals(5.0, 1e7, 42).unwrap();
        assert!(ts.len() > 40_000);
        let mean_gap = ts.last().unwrap() / ts.len() as f64;
        assert!((mean_gap - 200.0).abs() / 200.0 < 0.02, "mean gap {mean_gap}");
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
        assert!(*ts.last().unwrap() < 1e7);
    }

    #[test]
    fn poisson_is_seeded() {
        let a = poisson_arrivals(5.0, 1e5, 3).unwrap();
        let b = poisson_arrivals(5.0, 1e5, 3).unwrap();
        assert_eq!(a, b);
        let c = poisson_arrivals(5.0, 1e5, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_score_distribution() {
        let p = profiles();
        let r = sample_request(&p, 0, 0.0, 9);
        assert_eq!(r.scores[1], 0.8);
        assert_eq!(r.out_lens[1], 50);
        assert_eq!(r, sample_request(&p, 0, 0.0, 9));
    }

    /// Mean of N(mu, sigma) clipped to [0,1], by midpoint quadrature of
    /// E[clamp(X)] = ∫ clamp(x) φ(x) dx.
    fn clipped_normal_mean(mu: f64, sigma: f64) -> f64 {
        let n = 200_000;
        let lo = mu - 10.0 * sigma;
        let hi = mu + 10.0 * sigma;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            let pdf = (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            acc += x.clamp(0.0, 1.0) * pdf * h;
        }
        acc
    }

    #[test]
    fn clipped_score_mean_matches_quadrature() {
        let mut p = profiles();
        p.experts[0].score_mean = 0.6;
        p.experts[0].score_std = 0.1;
        let oracle = clipped_normal_mean(0.6, 0.1);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|i| sample_request(&p, i, 0.0, derive_seed(5, i)).scores[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - oracle).abs() < 0.01, "{mean} vs {oracle}");
    }

    #[test]
    fn sampled_values_in_range() {
        let mut p = profiles();
        p.experts[0].score_std = 2.0;
        p.experts[0].length_std = 500.0;
        for i in 0..2000 {
            let r = sample_request(&p, i, 0.0, i);
            assert!(r.scores.iter().all(|s| (0.0..=1.0).contains(s)));
            assert!(r.out_lens.iter().all(|&d| (1..=300).contains(&d)));
            assert!((1..=512).contains(&r.prompt_tokens));
        }
    }

    fn trace_text(rows: &[&str], n: usize) -> String {
        let mut s = format!("{{\"version\":1,\"experts\":{n}}}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn parses_well_formed_trace() {
        let txt = trace_text(
            &[
                r#"{"t_ms":0.0,"p":10,"experts":[{"s":0.5,"d":3},{"s":0.7,"d":4}]}"#,
                r#"{"t_ms":5.0,"p":12,"experts":[{"s":0.5,"d":3},{"s":0.7,"d":4}]}"#,
                r#"{"t_ms":5.0,"p":14,"experts":[{"s":0.5,"d":3},{"s":0.7,"d":4}]}"#,
            ],
            2,
        );
        let t = parse_trace(txt.as_bytes()).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.n_experts, 2);
    }

    #[test]
    fn ordering_error_names_line() {
        let txt = trace_text(
            &[
                r#"{"t_ms":10.0,"p":10,"experts":[{"s":0.5,"d":3}]}"#,
                r#"{"t_ms":5.0,"p":10,"experts":[{"s":0.5,"d":3}]}"#,
            ],
            1,
        );
        match parse_trace(txt.as_bytes()) {
            Err(WorkloadError::Ordering { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_error_on_column_mismatch() {
        let five = (0..5).map(|_| r#"{"s":0.5,"d":3}"#).collect::<Vec<_>>().join(",");
        let row = format!(r#"{{"t_ms":0.0,"p":10,"experts":[{five}]}}"#);
        let txt = trace_text(&[&row], 6);
        assert!(matches!(
            parse_trace(txt.as_bytes()),
            Err(WorkloadError::Schema {
                line: 2,
                expected: 6,
                found: 5
            })
        ));
    }

    #[test]
    fn malformed_row_and_version() {
        let txt = trace_text(&["{not json"], 1);
        assert!(matches!(
            parse_trace(txt.as_bytes()),
            Err(WorkloadError::Parse { line: 2, .. })
        ));
        let txt = "{\"version\":2,\"experts\":1}\n";
        assert!(matches!(
            parse_trace(txt.as_bytes()),
            Err(WorkloadError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn trace_file_roundtrip() {
        let p = profiles();
        let reqs = poisson_workload(&p, 5.0, 5000.0, 1).unwrap();
        let t = Trace::from_requests(2, &reqs);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.write(&path).unwrap();
        let back = load_trace(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_requests(), reqs);
    }

    fn toy_trace(times: &[f64]) -> Trace {
        Trace {
            n_experts: 1,
            rows: times
                .iter()
                .map(|&t| TraceRow {
                    t_ms: t,
                    p: 10,
                    experts: vec![ExpertTruth { s: 0.5, d: 5 }],
                })
                .collect(),
        }
    }

    #[test]
    fn rescale_identity_and_doubling() {
        let t = toy_trace(&[0.0, 100.0, 130.0, 400.0]);
        let rate = t.observed_rate_per_s().unwrap();
        let same = rescale_trace(&t, rate).unwrap();
        assert_eq!(same, t);
        let fast = rescale_trace(&t, 2.0 * rate).unwrap();
        for (a, b) in t.rows.windows(2).zip(fast.rows.windows(2)) {
            assert_eq!(b[1].t_ms - b[0].t_ms, (a[1].t_ms - a[0].t_ms) / 2.0);
        }
    }

    #[test]
    fn rescale_bursty_trace_hits_target() {
        let arrivals = bursty_arrivals(11.0, 0.3, 3.0e6, 8).unwrap();
        let reqs = requests_from_arrivals(&profiles(), &arrivals, 8);
        let t = Trace::from_requests(2, &reqs);
        let r = rescale_trace(&t, 5.0).unwrap();
        let rate = r.observed_rate_per_s().unwrap();
        assert!((rate - 5.0).abs() / 5.0 < 0.01, "{rate}");
    }

    #[test]
    fn rescale_rejects_zero_duration() {
        assert!(matches!(
            rescale_trace(&toy_trace(&[3.0]), 5.0),
            Err(WorkloadError::ZeroDuration)
        ));
        assert!(matches!(
            rescale_trace(&toy_trace(&[3.0, 3.0]), 5.0),
            Err(WorkloadError::ZeroDuration)
        ));
    }
}
