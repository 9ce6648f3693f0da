use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qrouted_core::agent::Policy;
use qrouted_core::harness::{
    self, ablate, build_router, compare, evaluate_seeds, load_policy, run_episode, train_to_dir,
    LearningCurveRow, RunConfig, WorkloadSpec,
};
use qrouted_core::policies::RouterKind;
use qrouted_core::workload::Trace;

const TRACE_FILE: &str = "trace.jsonl";
const SUMMARY_FILE: &str = "summary.json";

#[derive(Parser)]
#[command(name = "qrouted", version, about = "QoS-aware routing of LLM requests across experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured workload and write it as a trace file.
    GenTrace(Common),
    /// Run one episode with one router and write per-request metrics.
    Simulate(WithCheckpoint),
    /// Train a learned router and keep the best checkpoint.
    Train(Common),
    /// Evaluate a router greedily over the configured evaluation seeds.
    Evaluate(WithCheckpoint),
    /// Evaluate several routers on a shared workload.
    Compare(CompareArgs),
    /// Train and evaluate the encoder and predictor ablation grid.
    Ablate(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed. For simulate and evaluate it selects the
    /// workload; for train and ablate it seeds the learner.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config router.
    #[arg(long)]
    router: Option<RouterKind>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Accept a checkpoint trained on a different environment.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory of a learned router; defaults to the config's.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CompareArgs {
    /// One config per compared run; repeat the flag.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Routers to run on every config; each config's own router otherwise.
    #[arg(long, value_delimiter = ',')]
    routers: Vec<RouterKind>,
    /// Reference router for the relative improvement.
    #[arg(long, default_value = "rr")]
    router: RouterKind,
    /// Single workload seed instead of the configured evaluation seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Learned-router checkpoints as ROUTER=DIR; repeat the flag.
    #[arg(long, value_parser = parse_checkpoint)]
    checkpoint: Vec<(RouterKind, PathBuf)>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn parse_checkpoint(s: &str) -> Result<(RouterKind, PathBuf), String> {
    let (kind, dir) = s
        .split_once('=')
        .ok_or_else(|| format!("expected ROUTER=DIR, got '{s}'"))?;
    let kind = kind.parse::<RouterKind>().map_err(|e| e.to_string())?;
    Ok((kind, PathBuf::from(dir)))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = load_config(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(r) = c.router {
        cfg.router = r;
    }
    Ok(cfg)
}

/// The policy a learned router needs, or `None` for heuristics.
fn policy_for(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    force: bool,
) -> Result<Option<Policy>> {
    if !cfg.router.is_learned() {
        return Ok(None);
    }
    let Some(dir) = checkpoint.or(cfg.checkpoint.as_deref()) else {
        bail!(
            "router '{}' needs a checkpoint: pass --checkpoint or set it in the config",
            cfg.router.name()
        );
    };
    let policy = load_policy(cfg, dir, force)
        .with_context(|| format!("loading checkpoint {}", dir.display()))?;
    Ok(Some(policy))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn print_eval(label: &str, row: &LearningCurveRow) {
    println!(
        "{label}step {:>8}  episode {:>4}  eval qos {:.4}  eval reward {:.4}",
        row.step, row.episode, row.eval_avg_qos, row.eval_reward
    );
}

fn gen_trace(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    if matches!(cfg.workload, WorkloadSpec::Trace { .. }) {
        bail!("gen-trace needs a synthetic workload, the config already names a trace");
    }
    let requests = cfg.requests(cfg.seed)?;
    std::fs::create_dir_all(&c.out)?;
    let path = c.out.join(TRACE_FILE);
    Trace::from_requests(cfg.n_experts(), &requests).write(&path)?;
    println!("{} requests -> {}", requests.len(), path.display());
    Ok(())
}

fn simulate(a: &WithCheckpoint) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let policy = policy_for(&cfg, a.checkpoint.as_deref(), a.common.force)?;
    let mut router = build_router(&cfg, policy)?;
    let record = run_episode(&cfg, router.as_mut(), cfg.seed)?;
    record.write_dir(&a.common.out)?;
    let g = &record.aggregates;
    println!(
        "{}: avg qos {:.4}, violation rate {:.4}, drop rate {:.4} over {} requests -> {}",
        g.router,
        g.avg_qos,
        g.violation_rate,
        g.drop_rate,
        g.n_requests,
        a.common.out.display()
    );
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    if !cfg.router.is_learned() {
        bail!("router '{}' is not trainable", cfg.router.name());
    }
    let outcome = train_to_dir(&cfg, &c.out, |r| print_eval("", r))?;
    match outcome.best_eval_qos {
        Some(q) => println!("best eval qos {q:.4} at step {}", outcome.best_step),
        None => println!("no evaluation ran; checkpoint holds the initialization"),
    }
    println!("checkpoint -> {}", c.out.join(harness::CHECKPOINT_DIR).display());
    Ok(())
}

fn evaluate(a: &WithCheckpoint) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let policy = policy_for(&cfg, a.checkpoint.as_deref(), a.common.force)?;
    let seeds = match a.common.seed {
        Some(s) => vec![s],
        None => cfg.eval_seeds.clone(),
    };
    let records = evaluate_seeds(&cfg, policy.as_ref(), &seeds)?;
    let mut per_seed = Vec::new();
    for (seed, rec) in seeds.iter().zip(&records) {
        rec.write_dir(&a.common.out.join(format!("seed-{seed}")))?;
        per_seed.push(rec.aggregates.avg_qos);
        println!("seed {seed}: avg qos {:.4}", rec.aggregates.avg_qos);
    }
    let mean = |f: fn(&harness::Aggregates) -> f64| {
        records.iter().map(|r| f(&r.aggregates)).sum::<f64>() / records.len().max(1) as f64
    };
    let summary = json!({
        "router": cfg.router.name(),
        "config_hash": cfg.env_hash(),
        "seeds": seeds,
        "per_seed_qos": per_seed,
        "avg_qos": mean(|g| g.avg_qos),
        "avg_latency_per_token": mean(|g| g.avg_latency_per_token),
        "violation_rate": mean(|g| g.violation_rate),
        "drop_rate": mean(|g| g.drop_rate),
    });
    write_json(&a.common.out.join(SUMMARY_FILE), &summary)?;
    println!("mean avg qos {:.4} -> {}", mean(|g| g.avg_qos), a.common.out.display());
    Ok(())
}

fn compare_cmd(a: &CompareArgs) -> Result<()> {
    let mut runs = Vec::new();
    let mut seeds = None;
    for path in &a.config {
        let base = load_config(Some(path))?;
        seeds.get_or_insert_with(|| match a.seed {
            Some(s) => vec![s],
            None => base.eval_seeds.clone(),
        });
        let kinds = if a.routers.is_empty() {
            vec![base.router]
        } else {
            a.routers.clone()
        };
        for kind in kinds {
            let cfg = RunConfig {
                router: kind,
                ..base.clone()
            };
            let ckpt = a
                .checkpoint
                .iter()
                .find(|(k, _)| *k == kind)
                .map(|(_, d)| d.as_path());
            let policy = policy_for(&cfg, ckpt, a.force)?;
            runs.push((cfg, policy));
        }
    }
    let seeds = seeds.unwrap_or_default();
    let table = compare(&runs, a.router.name(), &seeds)?;
    table.write_dir(&a.out)?;
    for r in &table.rows {
        let imp = r
            .improvement
            .map_or("n/a".to_string(), |x| format!("{:+.2}%", 100.0 * x));
        println!(
            "{:<12} avg qos {:.4}  violation {:.4}  drop {:.4}  vs {}: {imp}",
            r.router,
            r.avg_qos,
            r.violation_rate,
            r.drop_rate,
            table.reference
        );
    }
    Ok(())
}

fn ablate_cmd(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    let seeds = cfg.eval_seeds.clone();
    let table = ablate(&cfg, &seeds, &c.out, |name, r| print_eval(&format!("[{name}] "), r))?;
    for r in &table.rows {
        println!("{:<8} avg qos {:.4}", r.variant, r.avg_qos);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenTrace(c) => gen_trace(c),
        Command::Simulate(a) => simulate(a),
        Command::Train(c) => train(c),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Ablate(c) => ablate_cmd(c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
