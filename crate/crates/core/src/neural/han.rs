//! Two-layer heterogeneous attention encoder over the routing state graph.
//!
//! Layer 1 updates the arrived node and every expert node; layer 2 updates
//! only the arrived node, which is all the receptive field of the output
//! needs. Each update is `ELU(semantic(relations) + own projection)`.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::layers::{
    edge_type_attention, semantic_attention_segmented, EdgeAttention, EdgeList, Linear,
    SemanticAttention,
};
use super::mat::Mat;
use super::params::ParamStore;
use super::tape::{HeadMode, NResult, Tape, Var};
use crate::stategraph::{HeteroGraph, REQUEST_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HanConfig {
    pub n_experts: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl HanConfig {
    pub fn new(n_experts: usize) -> Self {
        HanConfig {
            n_experts,
            hidden: 64,
            heads: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HanParams {
    pub cfg: HanConfig,
    pub proj1_arrived: Linear,
    pub proj1_expert: Linear,
    pub proj1_running: Linear,
    pub proj1_waiting: Linear,
    pub att1_running_expert: EdgeAttention,
    pub att1_waiting_expert: EdgeAttention,
    pub att1_arrived_expert: EdgeAttention,
    pub att1_expert_arrived: EdgeAttention,
    pub sem1_expert: SemanticAttention,
    pub sem1_arrived: SemanticAttention,
    pub proj2_arrived: Linear,
    pub proj2_expert: Linear,
    pub att2_expert_arrived: EdgeAttention,
    pub sem2_arrived: SemanticAttention,
}

impl HanParams {
    pub fn new(store: &mut ParamStore, name: &str, cfg: HanConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden;
        let h = cfg.heads;
        assert!(h > 0 && d.is_multiple_of(h), "hidden must divide into heads");
        let arrived_in = HeteroGraph::arrived_width(cfg.n_experts);
        let expert_in = HeteroGraph::expert_width(cfg.n_experts);
        let l1 = |s: &str| format!("{name}.l1.{s}");
        let l2 = |s: &str| format!("{name}.l2.{s}");
        HanParams {
            cfg,
            proj1_arrived: Linear::new(store, &l1("proj.arrived"), arrived_in, d, rng),
            proj1_expert: Linear::new(store, &l1("proj.expert"), expert_in, d, rng),
            proj1_running: Linear::new(store, &l1("proj.running"), REQUEST_FEATURES, d, rng),
            proj1_waiting: Linear::new(store, &l1("proj.waiting"), REQUEST_FEATURES, d, rng),
            att1_running_expert: EdgeAttention::new(store, &l1("att.running_expert"), d, h, HeadMode::Concat, rng),
            att1_waiting_expert: EdgeAttention::new(store, &l1("att.waiting_expert"), d, h, HeadMode::Concat, rng),
            att1_arrived_expert: EdgeAttention::new(store, &l1("att.arrived_expert"), d, h, HeadMode::Concat, rng),
            att1_expert_arrived: EdgeAttention::new(store, &l1("att.expert_arrived"), d, h, HeadMode::Concat, rng),
            sem1_expert: SemanticAttention::new(store, &l1("sem.expert"), d, rng),
            sem1_arrived: SemanticAttention::new(store, &l1("sem.arrived"), d, rng),
            proj2_arrived: Linear::new(store, &l2("proj.arrived"), d, d, rng),
            proj2_expert: Linear::new(store, &l2("proj.expert"), d, d, rng),
            att2_expert_arrived: EdgeAttention::new(store, &l2("att.expert_arrived"), d, h, HeadMode::Average, rng),
            sem2_arrived: SemanticAttention::new(store, &l2("sem.arrived"), d, rng),
        }
    }
}

/// Attention weights produced during one encode, for inspection.
#[derive(Debug, Clone, Default)]
pub struct HanTrace {
    pub edge_alphas: Vec<(Var, Rc<Vec<usize>>)>,
    pub betas: Vec<Var>,
}

/// Edge lists of the four relations over a disjoint union of graphs.
/// Expert `k` of graph `b` is node `b·N + k`; arrived node `b` belongs to
/// graph `b`.
pub struct GraphEdges {
    pub running_expert: EdgeList,
    pub waiting_expert: EdgeList,
    pub arrived_expert: EdgeList,
    pub expert_arrived: EdgeList,
    /// Graph index of every expert node.
    pub expert_seg: Rc<Vec<usize>>,
    /// Graph index of every arrived node.
    pub arrived_seg: Rc<Vec<usize>>,
}

impl GraphEdges {
    pub fn of(g: &HeteroGraph) -> Self {
        Self::union(&[g])
    }

    pub fn union(graphs: &[&HeteroGraph]) -> Self {
        let n = graphs.first().map_or(0, |g| g.n_experts);
        let b_n = graphs.len();
        let mut run = (Vec::new(), Vec::new());
        let mut wait = (Vec::new(), Vec::new());
        for (b, g) in graphs.iter().enumerate() {
            for &k in &g.running_expert {
                run.0.push(run.0.len());
                run.1.push(b * n + k);
            }
            for &k in &g.waiting_expert {
                wait.0.push(wait.0.len());
                wait.1.push(b * n + k);
            }
        }
        let arrived_src: Vec<usize> = (0..b_n).flat_map(|b| std::iter::repeat_n(b, n)).collect();
        GraphEdges {
            running_expert: EdgeList::new(run.0, run.1),
            waiting_expert: EdgeList::new(wait.0, wait.1),
            arrived_expert: EdgeList::new(arrived_src.clone(), (0..b_n * n).collect()),
            expert_arrived: EdgeList::new((0..b_n * n).collect(), arrived_src.clone()),
            expert_seg: Rc::new(arrived_src),
            arrived_seg: Rc::new((0..b_n).collect()),
        }
    }
}

/// Encode `g` to the arrived node's `1 × hidden` embedding.
pub fn han_encode(tape: &mut Tape, g: &HeteroGraph, p: &HanParams) -> NResult<Var> {
    han_encode_batch_traced(tape, &[g], p, None)
}

pub fn han_encode_traced(
    tape: &mut Tape,
    g: &HeteroGraph,
    p: &HanParams,
    trace: Option<&mut HanTrace>,
) -> NResult<Var> {
    han_encode_batch_traced(tape, &[g], p, trace)
}

/// Encode a batch to stacked `B × hidden` arrived embeddings. Graphs are
/// processed as one disjoint union; the result matches encoding each graph
/// alone.
pub fn han_encode_batch(tape: &mut Tape, graphs: &[&HeteroGraph], p: &HanParams) -> NResult<Var> {
    han_encode_batch_traced(tape, graphs, p, None)
}

fn stack(graphs: &[&HeteroGraph], width: usize, f: impl Fn(&HeteroGraph) -> &[f64]) -> Mat {
    let data: Vec<f64> = graphs.iter().flat_map(|g| f(g).iter().copied()).collect();
    Mat::from_vec(data.len() / width.max(1), width, data)
}

pub fn han_encode_batch_traced(
    tape: &mut Tape,
    graphs: &[&HeteroGraph],
    p: &HanParams,
    mut trace: Option<&mut HanTrace>,
) -> NResult<Var> {
    let n = p.cfg.n_experts;
    if graphs.is_empty() {
        return Err(super::tape::NeuralError::Invalid("empty graph batch".into()));
    }
    if let Some(g) = graphs.iter().find(|g| g.n_experts != n) {
        return Err(super::tape::NeuralError::Invalid(format!(
            "graph has {} experts, encoder expects {n}",
            g.n_experts
        )));
    }
    let b_n = graphs.len();
    let e = GraphEdges::union(graphs);
    let x_arr = tape.constant(stack(graphs, HeteroGraph::arrived_width(n), |g| &g.arrived));
    let x_exp = tape.constant(stack(graphs, HeteroGraph::expert_width(n), |g| &g.experts));
    let x_run = tape.constant(stack(graphs, REQUEST_FEATURES, |g| &g.running));
    let x_wait = tape.constant(stack(graphs, REQUEST_FEATURES, |g| &g.waiting));

    let h_arr = p.proj1_arrived.forward(tape, x_arr)?;
    let h_exp = p.proj1_expert.forward(tape, x_exp)?;
    let h_run = p.proj1_running.forward(tape, x_run)?;
    let h_wait = p.proj1_waiting.forward(tape, x_wait)?;

    let note = |alpha: Var, dst: &Rc<Vec<usize>>, trace: &mut Option<&mut HanTrace>| {
        if let Some(t) = trace.as_deref_mut() {
            t.edge_alphas.push((alpha, dst.clone()));
        }
    };
    let n_exp = b_n * n;

    // Layer 1, expert destinations.
    let a = edge_type_attention(tape, h_run, h_exp, &e.running_expert, n_exp, &p.att1_running_expert)?;
    note(a.alpha, &e.running_expert.dst, &mut trace);
    let b = edge_type_attention(tape, h_wait, h_exp, &e.waiting_expert, n_exp, &p.att1_waiting_expert)?;
    note(b.alpha, &e.waiting_expert.dst, &mut trace);
    let c = edge_type_attention(tape, h_arr, h_exp, &e.arrived_expert, n_exp, &p.att1_arrived_expert)?;
    note(c.alpha, &e.arrived_expert.dst, &mut trace);
    let fused = semantic_attention_segmented(
        tape,
        &[a.out, b.out, c.out],
        &p.sem1_expert,
        e.expert_seg.clone(),
        b_n,
    )?;
    if let Some(t) = trace.as_deref_mut() {
        t.betas.push(fused.beta);
    }
    let z = tape.add(fused.out, h_exp)?;
    let h1_exp = tape.elu(z);

    // Layer 1, arrived destination.
    let a = edge_type_attention(tape, h_exp, h_arr, &e.expert_arrived, b_n, &p.att1_expert_arrived)?;
    note(a.alpha, &e.expert_arrived.dst, &mut trace);
    let fused =
        semantic_attention_segmented(tape, &[a.out], &p.sem1_arrived, e.arrived_seg.clone(), b_n)?;
    if let Some(t) = trace.as_deref_mut() {
        t.betas.push(fused.beta);
    }
    let z = tape.add(fused.out, h_arr)?;
    let h1_arr = tape.elu(z);

    // Layer 2, arrived destination only.
    let h2_arr = p.proj2_arrived.forward(tape, h1_arr)?;
    let h2_exp = p.proj2_expert.forward(tape, h1_exp)?;
    let a = edge_type_attention(tape, h2_exp, h2_arr, &e.expert_arrived, b_n, &p.att2_expert_arrived)?;
    note(a.alpha, &e.expert_arrived.dst, &mut trace);
    let fused =
        semantic_attention_segmented(tape, &[a.out], &p.sem2_arrived, e.arrived_seg.clone(), b_n)?;
    if let Some(t) = trace {
        t.betas.push(fused.beta);
    }
    let z = tape.add(fused.out, h2_arr)?;
    Ok(tape.elu(z))
}
