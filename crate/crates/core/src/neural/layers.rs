use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::mat::Mat;
use super::params::{ParamId, ParamStore};
use super::tape::{HeadMode, NResult, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), d_in, d_out, d_in, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, d_out, d_in, rng);
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> NResult<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Affine layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> NResult<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Edges of one relation, as parallel source/destination index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
}

impl EdgeList {
    pub fn new(src: Vec<usize>, dst: Vec<usize>) -> Self {
        assert_eq!(src.len(), dst.len());
        EdgeList {
            src: Rc::new(src),
            dst: Rc::new(dst),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Attention vectors of one relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttention {
    pub a_src: ParamId,
    pub a_dst: ParamId,
    pub heads: usize,
    pub mode: HeadMode,
}

impl EdgeAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mode: HeadMode,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let rows = match mode {
            HeadMode::Concat => 1,
            HeadMode::Average => heads,
        };
        let fan = match mode {
            HeadMode::Concat => dim / heads,
            HeadMode::Average => dim,
        };
        let a_src = store.add_uniform(format!("{name}.a_src"), rows, dim, fan, rng);
        let a_dst = store.add_uniform(format!("{name}.a_dst"), rows, dim, fan, rng);
        EdgeAttention {
            a_src,
            a_dst,
            heads,
            mode,
        }
    }
}

pub struct AttentionOut {
    /// `n_dst × D` aggregated embedding.
    pub out: Var,
    /// `E × H` attention weights.
    pub alpha: Var,
}

/// Node-level attention over one relation. Scores are
/// `ELU(a_srcᵀ h_src + a_dstᵀ h_dst)` per head, normalized over each
/// destination's incoming edges; messages are the projected source rows.
pub fn edge_type_attention(
    tape: &mut Tape,
    h_src: Var,
    h_dst: Var,
    edges: &EdgeList,
    n_dst: usize,
    att: &EdgeAttention,
) -> NResult<AttentionOut> {
    let msg = tape.gather_rows(h_src, edges.src.clone())?;
    let dst_rows = tape.gather_rows(h_dst, edges.dst.clone())?;
    let a_src = tape.param(att.a_src);
    let a_dst = tape.param(att.a_dst);
    let s_src = tape.head_dot(msg, a_src, att.heads, att.mode)?;
    let s_dst = tape.head_dot(dst_rows, a_dst, att.heads, att.mode)?;
    let s = tape.add(s_src, s_dst)?;
    let s = tape.elu(s);
    let alpha = tape.edge_softmax(s, edges.dst.clone(), n_dst)?;
    let out = tape.aggregate(alpha, msg, edges.dst.clone(), n_dst, att.mode)?;
    Ok(AttentionOut { out, alpha })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticAttention {
    pub k: ParamId,
    pub b: ParamId,
    pub q: ParamId,
}

impl SemanticAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = store.add_uniform(format!("{name}.k"), dim, dim, dim, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, dim, dim, rng);
        let q = store.add_uniform(format!("{name}.q"), 1, dim, dim, rng);
        SemanticAttention { k, b, q }
    }
}

pub struct SemanticOut {
    pub out: Var,
    /// `S × T` relation weights, one row per segment.
    pub beta: Var,
}

/// Relation-level fusion: `w_t = mean_i qᵀ tanh(K z_{t,i} + b)`,
/// `β = softmax(w)`, output `Σ β_t z_t`.
pub fn semantic_attention(
    tape: &mut Tape,
    zs: &[Var],
    sem: &SemanticAttention,
) -> NResult<SemanticOut> {
    let rows = zs.first().map_or(0, |&z| tape.value(z).rows);
    semantic_attention_segmented(tape, zs, sem, Rc::new(vec![0; rows]), 1)
}

/// Semantic attention over a batch of disjoint graphs: relation scores are
/// averaged and normalized per segment, so each graph gets its own `β` row.
pub fn semantic_attention_segmented(
    tape: &mut Tape,
    zs: &[Var],
    sem: &SemanticAttention,
    seg: Rc<Vec<usize>>,
    n_seg: usize,
) -> NResult<SemanticOut> {
    let k = tape.param(sem.k);
    let b = tape.param(sem.b);
    let q = tape.param(sem.q);
    let mut scores = Vec::with_capacity(zs.len());
    for &z in zs {
        let t = tape.matmul(z, k)?;
        let t = tape.add_bias(t, b)?;
        let t = tape.tanh(t);
        let s = tape.row_dot(t, q)?;
        scores.push(tape.segment_mean(s, seg.clone(), n_seg)?);
    }
    let w = tape.concat_cols(&scores)?;
    let beta = tape.softmax(w);
    let out = tape.segment_weighted_sum(beta, zs, seg)?;
    Ok(SemanticOut { out, beta })
}

/// Identity-initialized linear layer with zero bias, for tests and probes.
pub fn identity_linear(store: &mut ParamStore, name: &str, dim: usize) -> Linear {
    let w = store.add(format!("{name}.w"), Mat::identity(dim));
    let b = store.add(format!("{name}.b"), Mat::zeros(1, dim));
    Linear {
        w,
        b,
        d_in: dim,
        d_out: dim,
    }
}
