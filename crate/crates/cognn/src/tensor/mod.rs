//! Dense f64 matrices with optional reverse-mode tracking.
//!
//! Every tensor is a 2-D row-major matrix (`[rows, cols]`; column vectors are
//! `[n, 1]`, scalars `[1, 1]`). Operations compute eagerly; when an operand is
//! tracked on a [`Tape`] the result is tracked too and records enough state
//! for the backward pass. Untracked operands act as constants and receive no
//! gradient.
//!
//! The op set is the minimum a gated message-passing model needs: matmul,
//! broadcasting elementwise arithmetic, activations, row softmaxes, row
//! gather/scatter, weighted edge scatter, a guarded rowwise division for mean
//! aggregation, straight-through estimation, and two reductions (sum, mean
//! cross-entropy).

mod optim;
mod tape;

pub use optim::{glorot_uniform, AdamState, Bindings, Param};
pub use tape::{Gradients, Tape};

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use tape::{Bcast, EwiseKind, In, Op};

/// Rows of a guarded mean whose total weight is at or below this threshold
/// are defined as zero (the "empty neighborhood" convention).
pub(crate) const GUARD_EPS: f64 = 1e-12;

/// Elementwise activation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ActKind {
    Identity,
    Relu,
    Gelu,
    Softplus,
    Tanh,
}

fn act_forward(kind: ActKind, x: f64) -> f64 {
    match kind {
        ActKind::Identity => x,
        ActKind::Relu => x.max(0.0),
        ActKind::Gelu => {
            let c = (2.0 / std::f64::consts::PI).sqrt();
            0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
        }
        ActKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        ActKind::Tanh => x.tanh(),
    }
}

/// A 2-D f64 tensor. Cloning shares the underlying buffer.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<(Tape, usize)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        write!(
            f,
            "Tensor{:?} tracked={} {:?}{}",
            self.shape,
            self.is_tracked(),
            preview,
            if self.data.len() > 8 { "…" } else { "" }
        )
    }
}

impl Tensor {
    /// Build a `[rows, cols]` tensor from row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.len() != 2 {
            return Err(Error::Shape(format!(
                "tensors are 2-D matrices, got shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            shape: vec![rows, cols],
            data: Rc::new(vec![0.0; rows * cols]),
            node: None,
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Tensor {
        Tensor {
            shape: vec![rows, cols],
            data: Rc::new(vec![1.0; rows * cols]),
            node: None,
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Tensor {
        Tensor {
            shape: vec![rows, cols],
            data: Rc::new(vec![value; rows * cols]),
            node: None,
        }
    }

    /// A `[1, 1]` scalar.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::full(1, 1, value)
    }

    pub(crate) fn tracked(shape: Vec<usize>, data: Rc<Vec<f64>>, tape: Tape, id: usize) -> Tensor {
        Tensor {
            shape,
            data,
            node: Some((tape, id)),
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Rc<Vec<f64>>) -> Tensor {
        Tensor {
            shape,
            data,
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.data)
    }

    /// Element at `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    fn as_in(&self) -> In {
        In {
            id: self.node_id(),
            data: self.data_rc(),
        }
    }

    /// The tape shared by the tracked operands, if any. Mixing tapes is a
    /// contract error.
    fn joint_tape(inputs: &[&Tensor]) -> Result<Option<Tape>> {
        let mut found: Option<Tape> = None;
        for t in inputs {
            if let Some((tape, _)) = &t.node {
                match &found {
                    None => found = Some(tape.clone()),
                    Some(prev) if prev.same_tape(tape) => {}
                    Some(_) => {
                        return Err(Error::Contract(
                            "operands are tracked on different tapes".into(),
                        ))
                    }
                }
            }
        }
        Ok(found)
    }

    fn emit(inputs: &[&Tensor], op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let data = Rc::new(data);
        match Tensor::joint_tape(inputs)? {
            Some(tape) => Ok(tape.push(op, shape, data)),
            None => Ok(Tensor::from_parts(shape, data)),
        }
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (rhs.rows(), rhs.cols());
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: {:?} · {:?} has mismatched inner dims",
                self.shape, rhs.shape
            )));
        }
        let a = &self.data[..];
        let b = &rhs.data[..];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Tensor::emit(
            &[self, rhs],
            Op::Matmul {
                a: self.as_in(),
                b: rhs.as_in(),
                m,
                k,
                n,
            },
            vec![m, n],
            out,
        )
    }

    fn ewise(&self, rhs: &Tensor, kind: EwiseKind) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        let bcast = if rhs.shape == self.shape {
            Bcast::Full
        } else if rhs.rows() == 1 && rhs.cols() == cols {
            Bcast::Row
        } else if rhs.cols() == 1 && rhs.rows() == rows {
            Bcast::Col
        } else if rhs.numel() == 1 {
            Bcast::Scalar
        } else {
            return Err(Error::Shape(format!(
                "elementwise: cannot broadcast {:?} onto {:?} (only the right operand broadcasts)",
                rhs.shape, self.shape
            )));
        };
        let a = &self.data[..];
        let b = &rhs.data[..];
        let mut out = vec![0.0; rows * cols];
        let apply = |x: f64, y: f64| match kind {
            EwiseKind::Add => x + y,
            EwiseKind::Sub => x - y,
            EwiseKind::Mul => x * y,
        };
        match bcast {
            Bcast::Full => {
                for i in 0..rows * cols {
                    out[i] = apply(a[i], b[i]);
                }
            }
            Bcast::Row => {
                for r in 0..rows {
                    for c in 0..cols {
                        out[r * cols + c] = apply(a[r * cols + c], b[c]);
                    }
                }
            }
            Bcast::Col => {
                for r in 0..rows {
                    for c in 0..cols {
                        out[r * cols + c] = apply(a[r * cols + c], b[r]);
                    }
                }
            }
            Bcast::Scalar => {
                for i in 0..rows * cols {
                    out[i] = apply(a[i], b[0]);
                }
            }
        }
        Tensor::emit(
            &[self, rhs],
            Op::Ewise {
                kind,
                bcast,
                a: self.as_in(),
                b: rhs.as_in(),
                rows,
                cols,
            },
            vec![rows, cols],
            out,
        )
    }

    /// Elementwise sum; `rhs` may be a matching matrix, a `[1, cols]` row, a
    /// `[rows, 1]` column, or a scalar.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.ewise(rhs, EwiseKind::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.ewise(rhs, EwiseKind::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.ewise(rhs, EwiseKind::Mul)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let out = self.data.iter().map(|x| c * x).collect();
        Tensor::emit(
            &[self],
            Op::Scale {
                a: self.as_in(),
                c,
            },
            self.shape.clone(),
            out,
        )
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let out = self.data.iter().map(|x| x + c).collect();
        Tensor::emit(
            &[self],
            Op::Offset { a: self.as_in() },
            self.shape.clone(),
            out,
        )
    }

    /// Elementwise reciprocal.
    pub fn recip(&self) -> Result<Tensor> {
        let out: Vec<f64> = self.data.iter().map(|x| 1.0 / x).collect();
        let rc = Rc::new(out);
        let op = Op::Recip {
            a: self.as_in(),
            out: Rc::clone(&rc),
        };
        match Tensor::joint_tape(&[self])? {
            Some(tape) => Ok(tape.push(op, self.shape.clone(), rc)),
            None => Ok(Tensor::from_parts(self.shape.clone(), rc)),
        }
    }

    /// Elementwise absolute value (subgradient 0 at the kink).
    pub fn abs(&self) -> Result<Tensor> {
        let out = self.data.iter().map(|x| x.abs()).collect();
        Tensor::emit(&[self], Op::Abs { a: self.as_in() }, self.shape.clone(), out)
    }

    /// Elementwise `max(x, limit)`. Gradient passes where `x >= limit`.
    pub fn clamp_min(&self, limit: f64) -> Result<Tensor> {
        let out = self.data.iter().map(|x| x.max(limit)).collect();
        Tensor::emit(
            &[self],
            Op::ClampMin {
                a: self.as_in(),
                limit,
            },
            self.shape.clone(),
            out,
        )
    }

    /// Apply an elementwise activation.
    pub fn activation(&self, kind: ActKind) -> Result<Tensor> {
        if kind == ActKind::Identity {
            return Ok(self.clone());
        }
        let out: Vec<f64> = self.data.iter().map(|&x| act_forward(kind, x)).collect();
        let rc = Rc::new(out);
        let op = Op::Act {
            kind,
            a: self.as_in(),
            out: Rc::clone(&rc),
        };
        match Tensor::joint_tape(&[self])? {
            Some(tape) => Ok(tape.push(op, self.shape.clone(), rc)),
            None => Ok(Tensor::from_parts(self.shape.clone(), rc)),
        }
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.activation(ActKind::Relu)
    }

    pub fn gelu(&self) -> Result<Tensor> {
        self.activation(ActKind::Gelu)
    }

    pub fn softplus(&self) -> Result<Tensor> {
        self.activation(ActKind::Softplus)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.activation(ActKind::Tanh)
    }

    /// Softmax along `axis` (1 = each row sums to one, 0 = each column).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis > 1 {
            return Err(Error::Invalid(format!(
                "softmax axis must be 0 or 1, got {axis}"
            )));
        }
        let (rows, cols) = (self.rows(), self.cols());
        let a = &self.data[..];
        let mut out = vec![0.0; rows * cols];
        if axis == 1 {
            for r in 0..rows {
                let x = &a[r * cols..(r + 1) * cols];
                let y = &mut out[r * cols..(r + 1) * cols];
                softmax_slice(x, y, 1);
            }
        } else {
            // Column softmax via strided passes.
            for c in 0..cols {
                let mut maxv = f64::NEG_INFINITY;
                for r in 0..rows {
                    maxv = maxv.max(a[r * cols + c]);
                }
                let mut z = 0.0;
                for r in 0..rows {
                    let e = (a[r * cols + c] - maxv).exp();
                    out[r * cols + c] = e;
                    z += e;
                }
                for r in 0..rows {
                    out[r * cols + c] /= z;
                }
            }
        }
        let rc = Rc::new(out);
        let op = Op::Softmax {
            a: self.as_in(),
            out: Rc::clone(&rc),
            rows,
            cols,
            axis,
        };
        match Tensor::joint_tape(&[self])? {
            Some(tape) => Ok(tape.push(op, self.shape.clone(), rc)),
            None => Ok(Tensor::from_parts(self.shape.clone(), rc)),
        }
    }

    /// Row-wise log-softmax, computed stably.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        let a = &self.data[..];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let x = &a[r * cols..(r + 1) * cols];
            let mut maxv = f64::NEG_INFINITY;
            for &v in x {
                maxv = maxv.max(v);
            }
            let mut z = 0.0;
            for &v in x {
                z += (v - maxv).exp();
            }
            let lse = maxv + z.ln();
            let y = &mut out[r * cols..(r + 1) * cols];
            for (j, &v) in x.iter().enumerate() {
                y[j] = v - lse;
            }
        }
        let rc = Rc::new(out);
        let op = Op::LogSoftmax {
            a: self.as_in(),
            out: Rc::clone(&rc),
            rows,
            cols,
        };
        match Tensor::joint_tape(&[self])? {
            Some(tape) => Ok(tape.push(op, self.shape.clone(), rc)),
            None => Ok(Tensor::from_parts(self.shape.clone(), rc)),
        }
    }

    /// Sum of all elements, as a `[1, 1]` tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data.iter().sum();
        Tensor::emit(&[self], Op::Sum { a: self.as_in() }, vec![1, 1], vec![s])
    }

    /// Select rows: `out[r, :] = self[idx[r], :]`.
    pub fn gather_rows(&self, idx: &[u32]) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        for &i in idx {
            if i as usize >= rows {
                return Err(Error::Invalid(format!(
                    "gather_rows: index {i} out of range for {rows} rows"
                )));
            }
        }
        let a = &self.data[..];
        let mut out = vec![0.0; idx.len() * cols];
        for (r, &srow) in idx.iter().enumerate() {
            let s = srow as usize;
            out[r * cols..(r + 1) * cols].copy_from_slice(&a[s * cols..(s + 1) * cols]);
        }
        Tensor::emit(
            &[self],
            Op::GatherRows {
                a: self.as_in(),
                idx: Rc::new(idx.to_vec()),
                cols,
            },
            vec![idx.len(), cols],
            out,
        )
    }

    /// Sum rows into segments: `out[seg[i], :] += self[i, :]`.
    pub fn segment_sum(&self, seg: &[u32], num_segments: usize) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        if seg.len() != rows {
            return Err(Error::Shape(format!(
                "segment_sum: {} segment ids for {rows} rows",
                seg.len()
            )));
        }
        for &s in seg {
            if s as usize >= num_segments {
                return Err(Error::Invalid(format!(
                    "segment_sum: segment id {s} out of range for {num_segments} segments"
                )));
            }
        }
        let a = &self.data[..];
        let mut out = vec![0.0; num_segments * cols];
        for (i, &s) in seg.iter().enumerate() {
            let s = s as usize;
            let arow = &a[i * cols..(i + 1) * cols];
            let orow = &mut out[s * cols..(s + 1) * cols];
            for j in 0..cols {
                orow[j] += arow[j];
            }
        }
        Tensor::emit(
            &[self],
            Op::SegmentSum {
                a: self.as_in(),
                seg: Rc::new(seg.to_vec()),
                cols,
            },
            vec![num_segments, cols],
            out,
        )
    }

    /// Rowwise guarded division: `out[r, :] = num[r, :] / den[r]`, except rows
    /// whose denominator is at or below [`GUARD_EPS`] become zero. `den` must
    /// be `[rows, 1]`.
    pub fn mean_guard(&self, den: &Tensor) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        if den.shape() != [rows, 1] {
            return Err(Error::Shape(format!(
                "mean_guard: denominator must be [{rows}, 1], got {:?}",
                den.shape()
            )));
        }
        let n = &self.data[..];
        let d = &den.data[..];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            if d[r] > GUARD_EPS {
                for j in 0..cols {
                    out[r * cols + j] = n[r * cols + j] / d[r];
                }
            }
        }
        let rc = Rc::new(out);
        let op = Op::MeanGuard {
            num: self.as_in(),
            den: den.as_in(),
            out: Rc::clone(&rc),
            rows,
            cols,
        };
        match Tensor::joint_tape(&[self, den])? {
            Some(tape) => Ok(tape.push(op, vec![rows, cols], rc)),
            None => Ok(Tensor::from_parts(vec![rows, cols], rc)),
        }
    }

    /// Straight-through estimator: the forward value is `hard`, the backward
    /// pass treats the op as the identity on `self` (the soft input).
    pub fn straight_through(&self, hard: Vec<f64>) -> Result<Tensor> {
        if hard.len() != self.numel() {
            return Err(Error::Shape(format!(
                "straight_through: hard values have {} elements, soft input {}",
                hard.len(),
                self.numel()
            )));
        }
        Tensor::emit(
            &[self],
            Op::StraightThrough { soft: self.as_in() },
            self.shape.clone(),
            hard,
        )
    }

    /// Mean cross-entropy between row-softmaxed logits and integer labels.
    pub fn cross_entropy(&self, labels: &[u32]) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        if labels.len() != rows {
            return Err(Error::Shape(format!(
                "cross_entropy: {} labels for {rows} rows",
                labels.len()
            )));
        }
        for &l in labels {
            if l as usize >= cols {
                return Err(Error::Invalid(format!(
                    "cross_entropy: label {l} out of range for {cols} classes"
                )));
            }
        }
        let a = &self.data[..];
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for r in 0..rows {
            let x = &a[r * cols..(r + 1) * cols];
            let mut maxv = f64::NEG_INFINITY;
            for &v in x {
                maxv = maxv.max(v);
            }
            let mut z = 0.0;
            for &v in x {
                z += (v - maxv).exp();
            }
            let lse = maxv + z.ln();
            let p = &mut probs[r * cols..(r + 1) * cols];
            for (j, &v) in x.iter().enumerate() {
                p[j] = (v - lse).exp();
            }
            loss -= x[labels[r] as usize] - lse;
        }
        loss /= rows as f64;
        Tensor::emit(
            &[self],
            Op::CrossEntropy {
                logits: self.as_in(),
                probs: Rc::new(probs),
                labels: Rc::new(labels.to_vec()),
                rows,
                cols,
            },
            vec![1, 1],
            vec![loss],
        )
    }

    /// Inverted dropout. With `rate == 0` or outside training this is the
    /// identity (bit-exact: the same tensor). Otherwise each element is kept
    /// with probability `1 - rate` and scaled by `1 / (1 - rate)`; mask draws
    /// consume the generator in row-major order.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if rate == 0.0 || !training {
            return Ok(self.clone());
        }
        use rand::Rng;
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.gen::<f64>() < keep { inv } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(&self.shape, mask)?;
        self.mul(&mask)
    }

    /// Run the backward pass from this scalar, consuming the tape.
    pub fn backward(&self) -> Result<Gradients> {
        let Some((tape, id)) = &self.node else {
            return Err(Error::Contract(
                "backward(): tensor is not tracked on a tape".into(),
            ));
        };
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward(): loss must be scalar, got shape {:?}",
                self.shape
            )));
        }
        tape::run_backward(tape, *id)
    }
}

fn softmax_slice(x: &[f64], y: &mut [f64], _axis: usize) {
    let mut maxv = f64::NEG_INFINITY;
    for &v in x {
        maxv = maxv.max(v);
    }
    let mut z = 0.0;
    for (j, &v) in x.iter().enumerate() {
        let e = (v - maxv).exp();
        y[j] = e;
        z += e;
    }
    for v in y.iter_mut() {
        *v /= z;
    }
}

/// Weighted scatter along arcs: `out[dst[e], :] += w[e] * h[src[e], :]`.
///
/// `w` must be `[arcs, 1]`; `src`/`dst` index rows of `h` / the output. The
/// accumulation order is the arc order, so results are deterministic.
pub fn edge_scatter(
    h: &Tensor,
    w: &Tensor,
    src: &Rc<Vec<u32>>,
    dst: &Rc<Vec<u32>>,
    out_rows: usize,
) -> Result<Tensor> {
    let cols = h.cols();
    let arcs = src.len();
    if dst.len() != arcs {
        return Err(Error::Shape(format!(
            "edge_scatter: {} sources vs {} destinations",
            arcs,
            dst.len()
        )));
    }
    if w.shape() != [arcs, 1] {
        return Err(Error::Shape(format!(
            "edge_scatter: weights must be [{arcs}, 1], got {:?}",
            w.shape()
        )));
    }
    let h_rows = h.rows();
    for e in 0..arcs {
        if src[e] as usize >= h_rows || dst[e] as usize >= out_rows {
            return Err(Error::Invalid(format!(
                "edge_scatter: arc {e} = ({}, {}) out of range",
                src[e], dst[e]
            )));
        }
    }
    let hd = h.data();
    let wd = w.data();
    let mut out = vec![0.0; out_rows * cols];
    for e in 0..arcs {
        let s = src[e] as usize;
        let t = dst[e] as usize;
        let we = wd[e];
        let hrow = &hd[s * cols..(s + 1) * cols];
        let orow = &mut out[t * cols..(t + 1) * cols];
        for j in 0..cols {
            orow[j] += we * hrow[j];
        }
    }
    Tensor::emit(
        &[h, w],
        Op::EdgeScatter {
            h: h.as_in(),
            w: w.as_in(),
            src: Rc::clone(src),
            dst: Rc::clone(dst),
            cols,
        },
        vec![out_rows, cols],
        out,
    )
}
