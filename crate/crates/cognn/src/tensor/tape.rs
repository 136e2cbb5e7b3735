//! The reverse-mode tape.
//!
//! Every tracked tensor operation appends one node to a [`Tape`]; the node
//! stores the operation kind, the input node ids, and shared handles to
//! whatever forward data its vector-Jacobian product needs. [`run_backward`]
//! replays the nodes in reverse, accumulating gradients, and returns the
//! gradients of all leaf nodes. A tape is built per forward pass, consumed by
//! one backward pass, and dropped.
//!
//! All kernels are sequential with a fixed accumulation order, so results are
//! bit-reproducible for identical inputs.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{ActKind, Tensor, GUARD_EPS};

/// One operand of a tape node: the producing node id (`None` for constants
/// that never receive gradient) plus a handle to its forward data.
pub(crate) struct In {
    pub id: Option<usize>,
    pub data: Rc<Vec<f64>>,
}

/// Elementwise binary kinds.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum EwiseKind {
    Add,
    Sub,
    Mul,
}

/// How the right-hand operand of an elementwise op maps onto the left one.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bcast {
    /// Same shape.
    Full,
    /// `b` is a `[1, cols]` row repeated down the rows.
    Row,
    /// `b` is a `[rows, 1]` column repeated across the columns.
    Col,
    /// `b` is a single element.
    Scalar,
}

pub(crate) enum Op {
    Leaf,
    Matmul {
        a: In,
        b: In,
        m: usize,
        k: usize,
        n: usize,
    },
    Ewise {
        kind: EwiseKind,
        bcast: Bcast,
        a: In,
        b: In,
        rows: usize,
        cols: usize,
    },
    Scale {
        a: In,
        c: f64,
    },
    /// Add a scalar constant; gradient passes through untouched.
    Offset {
        a: In,
    },
    Recip {
        a: In,
        out: Rc<Vec<f64>>,
    },
    Abs {
        a: In,
    },
    ClampMin {
        a: In,
        limit: f64,
    },
    Act {
        kind: ActKind,
        a: In,
        out: Rc<Vec<f64>>,
    },
    Softmax {
        a: In,
        out: Rc<Vec<f64>>,
        rows: usize,
        cols: usize,
        /// 1 = across each row (the common case), 0 = down each column.
        axis: usize,
    },
    LogSoftmax {
        a: In,
        out: Rc<Vec<f64>>,
        rows: usize,
        cols: usize,
    },
    Sum {
        a: In,
    },
    GatherRows {
        a: In,
        idx: Rc<Vec<u32>>,
        cols: usize,
    },
    SegmentSum {
        a: In,
        seg: Rc<Vec<u32>>,
        cols: usize,
    },
    /// `out[dst[e], :] += w[e] * h[src[e], :]` over all arcs `e`.
    EdgeScatter {
        h: In,
        w: In,
        src: Rc<Vec<u32>>,
        dst: Rc<Vec<u32>>,
        cols: usize,
    },
    /// Rowwise `num / den` with rows of `den <= GUARD_EPS` forced to zero.
    MeanGuard {
        num: In,
        den: In,
        out: Rc<Vec<f64>>,
        rows: usize,
        cols: usize,
    },
    /// Forward takes externally supplied values; backward is the identity
    /// into the soft input (the straight-through estimator).
    StraightThrough {
        soft: In,
    },
    /// Mean cross-entropy of row-softmaxed logits against integer labels.
    CrossEntropy {
        logits: In,
        probs: Rc<Vec<f64>>,
        labels: Rc<Vec<u32>>,
        rows: usize,
        cols: usize,
    },
}

pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
}

struct TapeInner {
    nodes: Vec<Node>,
    spent: bool,
}

/// A recording of one forward pass. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                spent: false,
            })),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Record a node and wrap its output as a tracked tensor.
    pub(crate) fn push(&self, op: Op, shape: Vec<usize>, data: Rc<Vec<f64>>) -> Tensor {
        let id = {
            let mut inner = self.inner.borrow_mut();
            inner.nodes.push(Node {
                op,
                shape: shape.clone(),
            });
            inner.nodes.len() - 1
        };
        Tensor::tracked(shape, data, self.clone(), id)
    }

    /// Register an untracked tensor as a gradient-receiving leaf.
    pub fn leaf(&self, t: &Tensor) -> Result<Tensor> {
        if t.is_tracked() {
            return Err(Error::Contract(
                "leaf(): tensor is already tracked on a tape".into(),
            ));
        }
        Ok(self.push(Op::Leaf, t.shape().to_vec(), t.data_rc()))
    }
}

/// Gradients of leaf nodes, keyed by the leaf's node id.
pub struct Gradients {
    map: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to `leaf`, if `leaf` received one.
    pub fn get(&self, leaf: &Tensor) -> Option<&Tensor> {
        leaf.node_id().and_then(|id| self.map.get(&id))
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], id: usize, numel: usize) -> &'g mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; numel])
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of an activation at input `x` with forward output `y`.
fn act_deriv(kind: ActKind, x: f64, y: f64) -> f64 {
    match kind {
        ActKind::Identity => 1.0,
        ActKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActKind::Gelu => {
            // Tanh-form GELU, differentiated exactly.
            let c = (2.0 / std::f64::consts::PI).sqrt();
            let u = c * (x + 0.044715 * x * x * x);
            let t = u.tanh();
            let du = c * (1.0 + 3.0 * 0.044715 * x * x);
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        }
        ActKind::Softplus => sigmoid(x),
        ActKind::Tanh => 1.0 - y * y,
    }
}

/// Run reverse accumulation from the scalar node `loss_id` and collect leaf
/// gradients. Consumes the tape: a second call is a contract error.
pub(crate) fn run_backward(tape: &Tape, loss_id: usize) -> Result<Gradients> {
    {
        let mut inner = tape.inner.borrow_mut();
        if inner.spent {
            return Err(Error::Contract(
                "backward(): tape has already been consumed".into(),
            ));
        }
        inner.spent = true;
    }
    let inner = tape.inner.borrow();
    let nodes = &inner.nodes;

    let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    grads[loss_id] = Some(vec![1.0]);

    for id in (0..=loss_id).rev() {
        if matches!(nodes[id].op, Op::Leaf) {
            continue; // leaf gradients stay put for collection
        }
        let Some(g) = grads[id].take() else { continue };
        match &nodes[id].op {
            Op::Leaf => unreachable!(),
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, m * k);
                    let bd = &b.data[..];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for (kk, dv) in darow.iter_mut().enumerate() {
                            let brow = &bd[kk * n..(kk + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            *dv += s;
                        }
                    }
                }
                if let Some(bi) = b.id {
                    let db = slot(&mut grads, bi, k * n);
                    let ad = &a.data[..];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &ad[i * k..(i + 1) * k];
                        for (kk, &av) in arow.iter().enumerate() {
                            let dbrow = &mut db[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                dbrow[j] += av * grow[j];
                            }
                        }
                    }
                }
            }
            Op::Ewise {
                kind,
                bcast,
                a,
                b,
                rows,
                cols,
            } => {
                let (rows, cols) = (*rows, *cols);
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, rows * cols);
                    match kind {
                        EwiseKind::Add | EwiseKind::Sub => {
                            for (dv, gv) in da.iter_mut().zip(g.iter()) {
                                *dv += gv;
                            }
                        }
                        EwiseKind::Mul => {
                            let bd = &b.data[..];
                            match bcast {
                                Bcast::Full => {
                                    for i in 0..rows * cols {
                                        da[i] += g[i] * bd[i];
                                    }
                                }
                                Bcast::Row => {
                                    for r in 0..rows {
                                        for c in 0..cols {
                                            da[r * cols + c] += g[r * cols + c] * bd[c];
                                        }
                                    }
                                }
                                Bcast::Col => {
                                    for r in 0..rows {
                                        for c in 0..cols {
                                            da[r * cols + c] += g[r * cols + c] * bd[r];
                                        }
                                    }
                                }
                                Bcast::Scalar => {
                                    for i in 0..rows * cols {
                                        da[i] += g[i] * bd[0];
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(bi) = b.id {
                    let sign = if *kind == EwiseKind::Sub { -1.0 } else { 1.0 };
                    let db_len = b.data.len();
                    let db = slot(&mut grads, bi, db_len);
                    let ad = &a.data[..];
                    // For Mul the contribution is g * a; for Add/Sub it is ±g.
                    let term = |idx: usize| -> f64 {
                        if *kind == EwiseKind::Mul {
                            g[idx] * ad[idx]
                        } else {
                            sign * g[idx]
                        }
                    };
                    match bcast {
                        Bcast::Full => {
                            for i in 0..rows * cols {
                                db[i] += term(i);
                            }
                        }
                        Bcast::Row => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    db[c] += term(r * cols + c);
                                }
                            }
                        }
                        Bcast::Col => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    db[r] += term(r * cols + c);
                                }
                            }
                        }
                        Bcast::Scalar => {
                            for i in 0..rows * cols {
                                db[0] += term(i);
                            }
                        }
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for (dv, gv) in da.iter_mut().zip(g.iter()) {
                        *dv += c * gv;
                    }
                }
            }
            Op::Offset { a } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for (dv, gv) in da.iter_mut().zip(g.iter()) {
                        *dv += gv;
                    }
                }
            }
            Op::Recip { a, out } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for i in 0..da.len() {
                        da[i] -= out[i] * out[i] * g[i];
                    }
                }
            }
            Op::Abs { a } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for i in 0..da.len() {
                        let s = if a.data[i] > 0.0 {
                            1.0
                        } else if a.data[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        da[i] += s * g[i];
                    }
                }
            }
            Op::ClampMin { a, limit } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for i in 0..da.len() {
                        if a.data[i] >= *limit {
                            da[i] += g[i];
                        }
                    }
                }
            }
            Op::Act { kind, a, out } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for i in 0..da.len() {
                        da[i] += act_deriv(*kind, a.data[i], out[i]) * g[i];
                    }
                }
            }
            Op::Softmax {
                a,
                out,
                rows,
                cols,
                axis,
            } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, rows * cols);
                    if *axis == 1 {
                        for r in 0..*rows {
                            let y = &out[r * cols..(r + 1) * cols];
                            let gr = &g[r * cols..(r + 1) * cols];
                            let mut dot = 0.0;
                            for j in 0..*cols {
                                dot += gr[j] * y[j];
                            }
                            let dr = &mut da[r * cols..(r + 1) * cols];
                            for j in 0..*cols {
                                dr[j] += y[j] * (gr[j] - dot);
                            }
                        }
                    } else {
                        for c in 0..*cols {
                            let mut dot = 0.0;
                            for r in 0..*rows {
                                dot += g[r * cols + c] * out[r * cols + c];
                            }
                            for r in 0..*rows {
                                let y = out[r * cols + c];
                                da[r * cols + c] += y * (g[r * cols + c] - dot);
                            }
                        }
                    }
                }
            }
            Op::LogSoftmax { a, out, rows, cols } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, rows * cols);
                    for r in 0..*rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mut s = 0.0;
                        for j in 0..*cols {
                            s += gr[j];
                        }
                        let yr = &out[r * cols..(r + 1) * cols];
                        let dr = &mut da[r * cols..(r + 1) * cols];
                        for j in 0..*cols {
                            dr[j] += gr[j] - yr[j].exp() * s;
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for dv in da.iter_mut() {
                        *dv += g[0];
                    }
                }
            }
            Op::GatherRows { a, idx, cols } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for (r, &srow) in idx.iter().enumerate() {
                        let s = srow as usize;
                        for j in 0..*cols {
                            da[s * cols + j] += g[r * cols + j];
                        }
                    }
                }
            }
            Op::SegmentSum { a, seg, cols } => {
                if let Some(ai) = a.id {
                    let da = slot(&mut grads, ai, a.data.len());
                    for (i, &s) in seg.iter().enumerate() {
                        let s = s as usize;
                        for j in 0..*cols {
                            da[i * cols + j] += g[s * cols + j];
                        }
                    }
                }
            }
            Op::EdgeScatter {
                h,
                w,
                src,
                dst,
                cols,
            } => {
                let cols = *cols;
                if let Some(hi) = h.id {
                    let dh = slot(&mut grads, hi, h.data.len());
                    for e in 0..src.len() {
                        let s = src[e] as usize;
                        let t = dst[e] as usize;
                        let we = w.data[e];
                        let grow = &g[t * cols..(t + 1) * cols];
                        let drow = &mut dh[s * cols..(s + 1) * cols];
                        for j in 0..cols {
                            drow[j] += we * grow[j];
                        }
                    }
                }
                if let Some(wi) = w.id {
                    let dw = slot(&mut grads, wi, w.data.len());
                    for e in 0..src.len() {
                        let s = src[e] as usize;
                        let t = dst[e] as usize;
                        let hrow = &h.data[s * cols..(s + 1) * cols];
                        let grow = &g[t * cols..(t + 1) * cols];
                        let mut dot = 0.0;
                        for j in 0..cols {
                            dot += hrow[j] * grow[j];
                        }
                        dw[e] += dot;
                    }
                }
            }
            Op::MeanGuard {
                num,
                den,
                out,
                rows,
                cols,
            } => {
                let (rows, cols) = (*rows, *cols);
                if let Some(ni) = num.id {
                    let dn = slot(&mut grads, ni, rows * cols);
                    for r in 0..rows {
                        let dv = den.data[r];
                        if dv > GUARD_EPS {
                            for j in 0..cols {
                                dn[r * cols + j] += g[r * cols + j] / dv;
                            }
                        }
                    }
                }
                if let Some(di) = den.id {
                    let dd = slot(&mut grads, di, rows);
                    for r in 0..rows {
                        let dv = den.data[r];
                        if dv > GUARD_EPS {
                            let mut dot = 0.0;
                            for j in 0..cols {
                                dot += g[r * cols + j] * out[r * cols + j];
                            }
                            dd[r] -= dot / dv;
                        }
                    }
                }
            }
            Op::StraightThrough { soft } => {
                if let Some(si) = soft.id {
                    let ds = slot(&mut grads, si, soft.data.len());
                    for (dv, gv) in ds.iter_mut().zip(g.iter()) {
                        *dv += gv;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
                rows,
                cols,
            } => {
                if let Some(li) = logits.id {
                    let dl = slot(&mut grads, li, rows * cols);
                    let inv = 1.0 / *rows as f64;
                    for r in 0..*rows {
                        let lab = labels[r] as usize;
                        for j in 0..*cols {
                            let onehot = if j == lab { 1.0 } else { 0.0 };
                            dl[r * cols + j] += g[0] * (probs[r * cols + j] - onehot) * inv;
                        }
                    }
                }
            }
        }
    }

    let mut map = HashMap::new();
    for (id, node) in nodes.iter().enumerate() {
        if matches!(node.op, Op::Leaf) {
            if let Some(g) = grads[id].take() {
                map.insert(id, Tensor::from_parts(node.shape.clone(), Rc::new(g)));
            }
        }
    }
    Ok(Gradients { map })
}
