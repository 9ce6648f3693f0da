//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! A tape borrows a parameter store for reading; parameter leaves are
//! materialized once per tape. `backward` accumulates parameter gradients
//! into a `Grads` buffer from caller-supplied output gradients.

use std::borrow::Cow;
use std::rc::Rc;

use thiserror::Error;

use super::mat::{dot, Mat};
use super::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of range {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type NResult<T> = Result<T, NeuralError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How per-head attention outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// Head `h` scores and aggregates its own `D/H`-wide slice; slices are
    /// concatenated.
    Concat,
    /// Every head scores the full `D`-wide message; head outputs are averaged.
    Average,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Elu(usize),
    Relu(usize),
    Tanh(usize),
    GatherRows(usize, Rc<Vec<usize>>),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    HeadDot { x: usize, a: usize, heads: usize, mode: HeadMode },
    EdgeSoftmax { s: usize, dst: Rc<Vec<usize>>, n_dst: usize },
    Aggregate { alpha: usize, msg: usize, dst: Rc<Vec<usize>>, mode: HeadMode },
    SegmentMean { a: usize, seg: Rc<Vec<usize>>, n_seg: usize },
    RowDot(usize, usize),
    Softmax(usize),
    SegmentWeightedSum { beta: usize, zs: Vec<usize>, seg: Rc<Vec<usize>> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::RowDot(a, b) => vec![*a, *b],
            Op::Elu(a) | Op::Relu(a) | Op::Tanh(a) | Op::Softmax(a) | Op::GatherRows(a, _) => vec![*a],
            Op::SegmentMean { a, .. } => vec![*a],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::HeadDot { x, a, .. } => vec![*x, *a],
            Op::EdgeSoftmax { s, .. } => vec![*s],
            Op::Aggregate { alpha, msg, .. } => vec![*alpha, *msg],
            Op::SegmentWeightedSum { beta, zs, .. } => {
                let mut v = zs.clone();
                v.push(*beta);
                v
            }
        }
    }
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    values: Vec<Cow<'a, Mat>>,
    ops: Vec<Op>,
    /// Whether a parameter is reachable backwards from each value.
    requires: Vec<bool>,
    param_cache: Vec<Option<usize>>,
}

fn shape_err(op: &'static str, a: &Mat, b: &Mat) -> NeuralError {
    NeuralError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn head_width(cols: usize, heads: usize, op: &'static str) -> NResult<usize> {
    if heads == 0 || !cols.is_multiple_of(heads) {
        return Err(NeuralError::Invalid(format!(
            "{op}: width {cols} not divisible by {heads} heads"
        )));
    }
    Ok(cols / heads)
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            values: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
            param_cache: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let req = matches!(op, Op::Param(_)) || op.inputs().iter().any(|&i| self.requires[i]);
        self.requires.push(req);
        self.values.push(Cow::Owned(value));
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(i) = self.param_cache[id.0] {
            return Var(i);
        }
        let store = self.store;
        self.requires.push(true);
        self.values.push(Cow::Borrowed(store.get(id)));
        self.ops.push(Op::Param(id));
        let v = Var(self.values.len() - 1);
        self.param_cache[id.0] = Some(v.0);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> NResult<Var> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        if x.cols != y.rows {
            return Err(shape_err("matmul", x, y));
        }
        let out = x.matmul(y);
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    /// Adds a `1×m` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> NResult<Var> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        if y.rows != 1 || x.cols != y.cols {
            return Err(shape_err("add_bias", x, y));
        }
        let mut out = Mat::clone(x);
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&y.data) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> NResult<Var> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        if x.shape() != y.shape() {
            return Err(shape_err("add", x, y));
        }
        let mut out = Mat::clone(x);
        out.add_assign(y);
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = &self.values[a.0];
        let out = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|&v| f(v)).collect());
        self.push(out, op)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> NResult<Var> {
        let x = &self.values[a.0];
        let mut out = Mat::zeros(idx.len(), x.cols);
        for (r, &i) in idx.iter().enumerate() {
            if i >= x.rows {
                return Err(NeuralError::Index {
                    op: "gather_rows",
                    index: i,
                    len: x.rows,
                });
            }
            out.row_mut(r).copy_from_slice(x.row(i));
        }
        Ok(self.push(out, Op::GatherRows(a.0, idx)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> NResult<Var> {
        let cols = parts
            .first()
            .map(|v| self.values[v.0].cols)
            .ok_or_else(|| NeuralError::Invalid("concat_rows: no inputs".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = &self.values[p.0];
            if m.cols != cols {
                return Err(shape_err("concat_rows", &self.values[parts[0].0], m));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let out = Mat::from_vec(rows, cols, data);
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|v| v.0).collect())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> NResult<Var> {
        let rows = parts
            .first()
            .map(|v| self.values[v.0].rows)
            .ok_or_else(|| NeuralError::Invalid("concat_cols: no inputs".into()))?;
        let mut cols = 0;
        for p in parts {
            let m = &self.values[p.0];
            if m.rows != rows {
                return Err(shape_err("concat_cols", &self.values[parts[0].0], m));
            }
            cols += m.cols;
        }
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let m = &self.values[p.0];
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|v| v.0).collect())))
    }

    /// Per-head attention logits. `x` is `E×D`. In `Concat` mode `a` is
    /// `1×D` and head `h` dots its slice; in `Average` mode `a` is `H×D`.
    /// Output is `E×H`.
    pub fn head_dot(&mut self, x: Var, a: Var, heads: usize, mode: HeadMode) -> NResult<Var> {
        let (xm, am) = (&self.values[x.0], &self.values[a.0]);
        let expected = match mode {
            HeadMode::Concat => (1, xm.cols),
            HeadMode::Average => (heads, xm.cols),
        };
        if am.shape() != expected {
            return Err(shape_err("head_dot", xm, am));
        }
        let dh = head_width(xm.cols, heads, "head_dot")?;
        let mut out = Mat::zeros(xm.rows, heads);
        for e in 0..xm.rows {
            let row = xm.row(e);
            for h in 0..heads {
                let v = match mode {
                    HeadMode::Concat => {
                        dot(&row[h * dh..(h + 1) * dh], &am.data[h * dh..(h + 1) * dh])
                    }
                    HeadMode::Average => dot(row, am.row(h)),
                };
                out.set(e, h, v);
            }
        }
        Ok(self.push(out, Op::HeadDot { x: x.0, a: a.0, heads, mode }))
    }

    /// Softmax of each column over the rows sharing a destination.
    pub fn edge_softmax(&mut self, s: Var, dst: Rc<Vec<usize>>, n_dst: usize) -> NResult<Var> {
        let sm = &self.values[s.0];
        if sm.rows != dst.len() {
            return Err(NeuralError::Invalid(format!(
                "edge_softmax: {} scores for {} edges",
                sm.rows,
                dst.len()
            )));
        }
        if let Some(&bad) = dst.iter().find(|&&d| d >= n_dst) {
            return Err(NeuralError::Index {
                op: "edge_softmax",
                index: bad,
                len: n_dst,
            });
        }
        let h = sm.cols;
        let mut max = vec![f64::NEG_INFINITY; n_dst * h];
        for (e, &d) in dst.iter().enumerate() {
            for k in 0..h {
                let m = &mut max[d * h + k];
                *m = m.max(sm.get(e, k));
            }
        }
        let mut out = Mat::zeros(sm.rows, h);
        let mut sum = vec![0.0; n_dst * h];
        for (e, &d) in dst.iter().enumerate() {
            for k in 0..h {
                let v = (sm.get(e, k) - max[d * h + k]).exp();
                out.set(e, k, v);
                sum[d * h + k] += v;
            }
        }
        for (e, &d) in dst.iter().enumerate() {
            for k in 0..h {
                out.set(e, k, out.get(e, k) / sum[d * h + k]);
            }
        }
        Ok(self.push(out, Op::EdgeSoftmax { s: s.0, dst, n_dst }))
    }

    /// Attention-weighted sum of edge messages into destination rows.
    /// Destinations without edges receive zeros.
    pub fn aggregate(
        &mut self,
        alpha: Var,
        msg: Var,
        dst: Rc<Vec<usize>>,
        n_dst: usize,
        mode: HeadMode,
    ) -> NResult<Var> {
        let (am, mm) = (&self.values[alpha.0], &self.values[msg.0]);
        if am.rows != mm.rows || am.rows != dst.len() {
            return Err(shape_err("aggregate", am, mm));
        }
        let heads = am.cols;
        let dh = head_width(mm.cols, heads, "aggregate")?;
        let mut out = Mat::zeros(n_dst, mm.cols);
        for (e, &d) in dst.iter().enumerate() {
            if d >= n_dst {
                return Err(NeuralError::Index {
                    op: "aggregate",
                    index: d,
                    len: n_dst,
                });
            }
            let m = mm.row(e);
            match mode {
                HeadMode::Concat => {
                    for h in 0..heads {
                        let w = am.get(e, h);
                        let o = &mut out.row_mut(d)[h * dh..(h + 1) * dh];
                        for (x, y) in o.iter_mut().zip(&m[h * dh..(h + 1) * dh]) {
                            *x += w * y;
                        }
                    }
                }
                HeadMode::Average => {
                    let w = am.row(e).iter().sum::<f64>() / heads as f64;
                    for (x, y) in out.row_mut(d).iter_mut().zip(m) {
                        *x += w * y;
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Aggregate {
                alpha: alpha.0,
                msg: msg.0,
                dst,
                mode,
            },
        ))
    }

    /// Column means, `n×m → 1×m`. An empty input yields zeros.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.values[a.0].rows;
        self.segment_mean(a, Rc::new(vec![0; n]), 1)
            .expect("segment ids are in range")
    }

    /// Column means per row segment, `n×m → n_seg×m`; row `r` belongs to
    /// segment `seg[r]`. Empty segments yield zeros.
    pub fn segment_mean(&mut self, a: Var, seg: Rc<Vec<usize>>, n_seg: usize) -> NResult<Var> {
        let x = &self.values[a.0];
        if seg.len() != x.rows || seg.iter().any(|&k| k >= n_seg) {
            return Err(NeuralError::Invalid(format!(
                "segment_mean: {} ids for {} rows, {n_seg} segments",
                seg.len(),
                x.rows
            )));
        }
        let mut out = Mat::zeros(n_seg, x.cols);
        let mut count = vec![0usize; n_seg];
        for (r, &k) in seg.iter().enumerate() {
            count[k] += 1;
            for (o, v) in out.row_mut(k).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        for (k, &c) in count.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f64;
                out.row_mut(k).iter_mut().for_each(|v| *v *= inv);
            }
        }
        Ok(self.push(out, Op::SegmentMean { a: a.0, seg, n_seg }))
    }

    /// Row-wise dot with a `1×m` vector, `n×m → n×1`.
    pub fn row_dot(&mut self, x: Var, q: Var) -> NResult<Var> {
        let (xm, qm) = (&self.values[x.0], &self.values[q.0]);
        if qm.rows != 1 || qm.cols != xm.cols {
            return Err(shape_err("row_dot", xm, qm));
        }
        let data = (0..xm.rows).map(|r| dot(xm.row(r), &qm.data)).collect();
        let out = Mat::from_vec(xm.rows, 1, data);
        Ok(self.push(out, Op::RowDot(x.0, q.0)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let mut out = Mat::clone(x);
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::Softmax(a.0))
    }

    /// `Σ_r β_r Z_r` for a `1×R` weight row and `R` equally shaped inputs.
    pub fn weighted_sum(&mut self, beta: Var, zs: &[Var]) -> NResult<Var> {
        let rows = zs.first().map_or(0, |z| self.values[z.0].rows);
        self.segment_weighted_sum(beta, zs, Rc::new(vec![0; rows]))
    }

    /// Row `i` of the output is `Σ_r β[seg[i], r] · Z_r[i]` for an `S×R`
    /// weight matrix and `R` equally shaped inputs.
    pub fn segment_weighted_sum(
        &mut self,
        beta: Var,
        zs: &[Var],
        seg: Rc<Vec<usize>>,
    ) -> NResult<Var> {
        let bm = &self.values[beta.0];
        if bm.cols != zs.len() || zs.is_empty() {
            return Err(NeuralError::Invalid(format!(
                "weighted_sum: {} weights for {} inputs",
                bm.cols,
                zs.len()
            )));
        }
        let first = &self.values[zs[0].0];
        if seg.len() != first.rows || seg.iter().any(|&k| k >= bm.rows) {
            return Err(NeuralError::Invalid(format!(
                "weighted_sum: {} segment ids for {} rows, {} weight rows",
                seg.len(),
                first.rows,
                bm.rows
            )));
        }
        let mut out = Mat::zeros(first.rows, first.cols);
        for (r, z) in zs.iter().enumerate() {
            let zm = &self.values[z.0];
            if zm.shape() != out.shape() {
                return Err(shape_err("weighted_sum", first, zm));
            }
            for (i, &k) in seg.iter().enumerate() {
                let w = bm.get(k, r);
                for (o, v) in out.row_mut(i).iter_mut().zip(zm.row(i)) {
                    *o += w * v;
                }
            }
        }
        Ok(self.push(
            out,
            Op::SegmentWeightedSum {
                beta: beta.0,
                zs: zs.iter().map(|v| v.0).collect(),
                seg,
            },
        ))
    }

    fn acc(&self, g: &mut [Option<Mat>], i: usize, d: Mat) {
        if !self.requires[i] {
            return;
        }
        match &mut g[i] {
            Some(m) => m.add_assign(&d),
            slot @ None => *slot = Some(d),
        }
    }

    /// Propagate `seeds` (output gradients) back to parameters, adding into
    /// `grads`. Seeds must match their variables' shapes.
    pub fn backward(&self, seeds: &[(Var, Mat)], grads: &mut Grads) -> NResult<()> {
        let n = self.values.len();
        let mut g: Vec<Option<Mat>> = vec![None; n];
        for (v, s) in seeds {
            let val = &self.values[v.0];
            if val.shape() != s.shape() {
                return Err(shape_err("backward seed", val, s));
            }
            self.acc(&mut g, v.0, s.clone());
        }
        for i in (0..n).rev() {
            let Some(gi) = g[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param(id) => grads.values[id.0].add_assign(&gi),
                Op::MatMul(a, b) => {
                    if self.requires[*a] {
                        let da = gi.matmul_t(&self.values[*b]);
                        self.acc(&mut g, *a, da);
                    }
                    if self.requires[*b] {
                        let db = self.values[*a].t_matmul(&gi);
                        self.acc(&mut g, *b, db);
                    }
                }
                Op::AddBias(a, b) => {
                    let mut db = Mat::zeros(1, gi.cols);
                    for r in 0..gi.rows {
                        for (o, v) in db.data.iter_mut().zip(gi.row(r)) {
                            *o += v;
                        }
                    }
                    self.acc(&mut g, *a, gi);
                    self.acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    self.acc(&mut g, *a, gi.clone());
                    self.acc(&mut g, *b, gi);
                }
                Op::Elu(a) => {
                    let y = &self.values[i];
                    let d = zip_map(&gi, y, |gv, yv| if yv > 0.0 { gv } else { gv * (yv + 1.0) });
                    self.acc(&mut g, *a, d);
                }
                Op::Relu(a) => {
                    let x = &self.values[*a];
                    let d = zip_map(&gi, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    self.acc(&mut g, *a, d);
                }
                Op::Tanh(a) => {
                    let y = &self.values[i];
                    let d = zip_map(&gi, y, |gv, yv| gv * (1.0 - yv * yv));
                    self.acc(&mut g, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let x = &self.values[*a];
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, v) in d.row_mut(src).iter_mut().zip(gi.row(r)) {
                            *o += v;
                        }
                    }
                    self.acc(&mut g, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let m = &self.values[p];
                        let len = m.rows * m.cols;
                        let d = Mat::from_vec(m.rows, m.cols, gi.data[off..off + len].to_vec());
                        self.acc(&mut g, p, d);
                        off += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let m = &self.values[p];
                        let mut d = Mat::zeros(m.rows, m.cols);
                        for r in 0..m.rows {
                            d.row_mut(r).copy_from_slice(&gi.row(r)[off..off + m.cols]);
                        }
                        self.acc(&mut g, p, d);
                        off += m.cols;
                    }
                }
                Op::HeadDot { x, a, heads, mode } => {
                    let (xm, am) = (&self.values[*x], &self.values[*a]);
                    let dh = xm.cols / heads;
                    let mut dx = Mat::zeros(xm.rows, xm.cols);
                    let mut da = Mat::zeros(am.rows, am.cols);
                    for e in 0..xm.rows {
                        for h in 0..*heads {
                            let gv = gi.get(e, h);
                            if gv == 0.0 {
                                continue;
                            }
                            match mode {
                                HeadMode::Concat => {
                                    for c in h * dh..(h + 1) * dh {
                                        dx.data[e * xm.cols + c] += gv * am.data[c];
                                        da.data[c] += gv * xm.get(e, c);
                                    }
                                }
                                HeadMode::Average => {
                                    for c in 0..xm.cols {
                                        dx.data[e * xm.cols + c] += gv * am.get(h, c);
                                        da.data[h * am.cols + c] += gv * xm.get(e, c);
                                    }
                                }
                            }
                        }
                    }
                    self.acc(&mut g, *x, dx);
                    self.acc(&mut g, *a, da);
                }
                Op::EdgeSoftmax { s, dst, n_dst } => {
                    let y = &self.values[i];
                    let h = y.cols;
                    let mut inner = vec![0.0; n_dst * h];
                    for (e, &d) in dst.iter().enumerate() {
                        for k in 0..h {
                            inner[d * h + k] += y.get(e, k) * gi.get(e, k);
                        }
                    }
                    let mut ds = Mat::zeros(y.rows, h);
                    for (e, &d) in dst.iter().enumerate() {
                        for k in 0..h {
                            ds.set(e, k, y.get(e, k) * (gi.get(e, k) - inner[d * h + k]));
                        }
                    }
                    self.acc(&mut g, *s, ds);
                }
                Op::Aggregate { alpha, msg, dst, mode } => {
                    let (am, mm) = (&self.values[*alpha], &self.values[*msg]);
                    let heads = am.cols;
                    let dh = mm.cols / heads;
                    let mut dalpha = Mat::zeros(am.rows, am.cols);
                    let mut dmsg = Mat::zeros(mm.rows, mm.cols);
                    for (e, &d) in dst.iter().enumerate() {
                        let go = gi.row(d);
                        let m = mm.row(e);
                        match mode {
                            HeadMode::Concat => {
                                for h in 0..heads {
                                    let sl = h * dh..(h + 1) * dh;
                                    dalpha.set(e, h, dot(&go[sl.clone()], &m[sl.clone()]));
                                    let w = am.get(e, h);
                                    for c in sl {
                                        dmsg.data[e * mm.cols + c] = w * go[c];
                                    }
                                }
                            }
                            HeadMode::Average => {
                                let gd = dot(go, m) / heads as f64;
                                for h in 0..heads {
                                    dalpha.set(e, h, gd);
                                }
                                let w = am.row(e).iter().sum::<f64>() / heads as f64;
                                for (o, v) in dmsg.row_mut(e).iter_mut().zip(go) {
                                    *o = w * v;
                                }
                            }
                        }
                    }
                    self.acc(&mut g, *alpha, dalpha);
                    self.acc(&mut g, *msg, dmsg);
                }
                Op::SegmentMean { a, seg, n_seg } => {
                    let x = &self.values[*a];
                    let mut count = vec![0usize; *n_seg];
                    for &k in seg.iter() {
                        count[k] += 1;
                    }
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for (r, &k) in seg.iter().enumerate() {
                        let inv = 1.0 / count[k] as f64;
                        for (o, v) in d.row_mut(r).iter_mut().zip(gi.row(k)) {
                            *o = inv * v;
                        }
                    }
                    self.acc(&mut g, *a, d);
                }
                Op::RowDot(x, q) => {
                    let (xm, qm) = (&self.values[*x], &self.values[*q]);
                    let mut dx = Mat::zeros(xm.rows, xm.cols);
                    let mut dq = Mat::zeros(1, qm.cols);
                    for r in 0..xm.rows {
                        let gv = gi.data[r];
                        for c in 0..xm.cols {
                            dx.data[r * xm.cols + c] = gv * qm.data[c];
                            dq.data[c] += gv * xm.get(r, c);
                        }
                    }
                    self.acc(&mut g, *x, dx);
                    self.acc(&mut g, *q, dq);
                }
                Op::Softmax(a) => {
                    let y = &self.values[i];
                    let mut d = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let inner = dot(y.row(r), gi.row(r));
                        for c in 0..y.cols {
                            d.set(r, c, y.get(r, c) * (gi.get(r, c) - inner));
                        }
                    }
                    self.acc(&mut g, *a, d);
                }
                Op::SegmentWeightedSum { beta, zs, seg } => {
                    let bm = &self.values[*beta];
                    let mut db = Mat::zeros(bm.rows, bm.cols);
                    for (r, &z) in zs.iter().enumerate() {
                        let zm = &self.values[z];
                        let mut dz = Mat::zeros(zm.rows, zm.cols);
                        for (i, &k) in seg.iter().enumerate() {
                            let (gr, zr) = (gi.row(i), zm.row(i));
                            db.data[k * bm.cols + r] += dot(gr, zr);
                            let w = bm.get(k, r);
                            for (o, v) in dz.row_mut(i).iter_mut().zip(gr) {
                                *o = w * v;
                            }
                        }
                        self.acc(&mut g, z, dz);
                    }
                    self.acc(&mut g, *beta, db);
                }
            }
        }
        Ok(())
    }
}


fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    Mat::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// Numerically stable in-place softmax. Entries equal to `-inf` get zero
/// probability.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
