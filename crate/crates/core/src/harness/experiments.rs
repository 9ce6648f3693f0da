use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RewardKind, RunConfig};
use super::metrics::{write_json, MetricsRecord};
use super::train::{train_to_dir, LearningCurveRow};
use super::{build_router, run_episode, HarnessError};
use crate::agent::{EncoderKind, Policy};
use crate::policies::RouterKind;
use crate::predictor::PredictorMode;

pub const COMPARE_FILE: &str = "comparison";
pub const ABLATION_FILE: &str = "ablation";

/// Relative improvement `(a − b) / b`; `None` when `b` is zero.
pub fn improvement(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        None
    } else {
        Some((a - b) / b)
    }
}

/// Evaluate `cfg.router` on every seed.
pub fn evaluate_seeds(
    cfg: &RunConfig,
    policy: Option<&Policy>,
    seeds: &[u64],
) -> Result<Vec<MetricsRecord>, HarnessError> {
    seeds
        .iter()
        .map(|&s| {
            let mut router = build_router(cfg, policy.cloned())?;
            run_episode(cfg, router.as_mut(), s)
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub router: String,
    pub avg_qos: f64,
    pub avg_latency_per_token: f64,
    pub violation_rate: f64,
    pub drop_rate: f64,
    /// `(avg_qos − reference) / reference`.
    pub improvement: Option<f64>,
    pub per_seed_qos: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub reference: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    pub fn row(&self, router: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.router == router)
    }

    /// Write `comparison.csv` and `comparison.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{COMPARE_FILE}.csv")))?;
        w.write_record([
            "router",
            "avg_qos",
            "avg_latency_per_token",
            "violation_rate",
            "drop_rate",
            "improvement",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.router.clone(),
                r.avg_qos.to_string(),
                r.avg_latency_per_token.to_string(),
                r.violation_rate.to_string(),
                r.drop_rate.to_string(),
                r.improvement.map_or(String::new(), |x| x.to_string()),
            ])?;
        }
        w.flush()?;
        write_json(&dir.join(format!("{COMPARE_FILE}.json")), self)
    }
}

/// Evaluate each `(config, policy)` run on `seeds` and relate its average
/// QoS to the run labelled `reference`. All runs must share one environment.
pub fn compare(
    runs: &[(RunConfig, Option<Policy>)],
    reference: &str,
    seeds: &[u64],
) -> Result<CompareTable, HarnessError> {
    let Some((first, _)) = runs.first() else {
        return Err(HarnessError::Config("nothing to compare".into()));
    };
    let hash = first.env_hash();
    for (cfg, _) in runs {
        if cfg.env_hash() != hash {
            return Err(HarnessError::WorkloadMismatch(format!(
                "router '{}' uses a different environment than '{}'",
                cfg.router,
                first.router
            )));
        }
    }
    let mut rows = Vec::new();
    for (cfg, policy) in runs {
        let recs = evaluate_seeds(cfg, policy.as_ref(), seeds)?;
        let pick = |f: fn(&MetricsRecord) -> f64| mean(&recs.iter().map(f).collect::<Vec<_>>());
        rows.push(CompareRow {
            router: cfg.router.name().to_string(),
            avg_qos: pick(|m| m.aggregates.avg_qos),
            avg_latency_per_token: pick(|m| m.aggregates.avg_latency_per_token),
            violation_rate: pick(|m| m.aggregates.violation_rate),
            drop_rate: pick(|m| m.aggregates.drop_rate),
            improvement: None,
            per_seed_qos: recs.iter().map(|m| m.aggregates.avg_qos).collect(),
        });
    }
    let base = rows
        .iter()
        .find(|r| r.router == reference)
        .map(|r| r.avg_qos)
        .ok_or_else(|| HarnessError::Config(format!("reference router '{reference}' not compared")))?;
    for r in &mut rows {
        r.improvement = improvement(r.avg_qos, base);
    }
    Ok(CompareTable {
        reference: reference.to_string(),
        seeds: seeds.to_vec(),
        config_hash: hash,
        rows,
    })
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub encoder: EncoderKind,
    pub score: PredictorMode,
    pub length: PredictorMode,
}

impl AblationVariant {
    /// The training config of this variant.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.router = RouterKind::QosAwareRl;
        cfg.train.encoder = Some(self.encoder);
        cfg.train.reward = Some(RewardKind::Qos);
        cfg.predictor.score.mode = Some(self.score);
        cfg.predictor.length.mode = Some(self.length);
        cfg
    }
}

pub fn ablation_variants() -> [AblationVariant; 6] {
    use EncoderKind::{Flat, Han};
    use PredictorMode::{Emulated as P, Zero as Z};
    let v = |name, encoder, score, length| AblationVariant {
        name,
        encoder,
        score,
        length,
    };
    [
        v("full", Han, P, P),
        v("no-DSA", Flat, P, P),
        v("PS+PL", Han, P, P),
        v("ZS+PL", Han, Z, P),
        v("PS+ZL", Han, P, Z),
        v("ZS+ZL", Han, Z, Z),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub encoder: EncoderKind,
    pub score: PredictorMode,
    pub length: PredictorMode,
    pub avg_qos: f64,
    pub per_seed_qos: Vec<f64>,
    pub best_eval_qos: Option<f64>,
    /// Set when this row reuses another variant's trained policy.
    pub shared_with: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{ABLATION_FILE}.csv")))?;
        w.write_record(["variant", "encoder", "score", "length", "avg_qos"])?;
        let mode = |m: PredictorMode| match m {
            PredictorMode::Zero => "zero",
            _ => "predicted",
        };
        for r in &self.rows {
            w.write_record([
                r.variant.clone(),
                format!("{:?}", r.encoder).to_lowercase(),
                mode(r.score).to_string(),
                mode(r.length).to_string(),
                r.avg_qos.to_string(),
            ])?;
        }
        w.flush()?;
        write_json(&dir.join(format!("{ABLATION_FILE}.json")), self)
    }
}

/// Train every ablation variant under `out/<variant>/` and evaluate it on
/// `seeds`. Variants with identical settings share one training run.
pub fn ablate(
    base: &RunConfig,
    seeds: &[u64],
    out: &Path,
    mut on_eval: impl FnMut(&str, &LearningCurveRow),
) -> Result<AblationTable, HarnessError> {
    let mut rows: Vec<AblationRow> = Vec::new();
    for v in ablation_variants() {
        if let Some(prev) = rows
            .iter()
            .find(|r| (r.encoder, r.score, r.length) == (v.encoder, v.score, v.length))
        {
            let mut row = prev.clone();
            row.shared_with = Some(prev.variant.clone());
            row.variant = v.name.to_string();
            rows.push(row);
            continue;
        }
        let cfg = v.apply(base);
        let outcome = train_to_dir(&cfg, &out.join(v.name), |r| on_eval(v.name, r))?;
        let recs = evaluate_seeds(&cfg, Some(&outcome.policy), seeds)?;
        let per_seed: Vec<f64> = recs.iter().map(|m| m.aggregates.avg_qos).collect();
        rows.push(AblationRow {
            variant: v.name.to_string(),
            encoder: v.encoder,
            score: v.score,
            length: v.length,
            avg_qos: mean(&per_seed),
            per_seed_qos: per_seed,
            best_eval_qos: outcome.best_eval_qos,
            shared_with: None,
        });
    }
    let table = AblationTable {
        seeds: seeds.to_vec(),
        rows,
    };
    table.write_dir(out)?;
    Ok(table)
}
