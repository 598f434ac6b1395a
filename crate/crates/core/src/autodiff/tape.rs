//! Reverse-mode differentiation over a flat operation record.
//!
//! Nodes are appended in evaluation order, so the record is already
//! topologically sorted; `backward` walks it once in reverse. Leaves created
//! with [`Tape::param`] keep their gradient across `backward` calls until
//! [`Tape::zero_grad`].

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::tensor::{matmul_at_into, matmul_bt_into, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Right operand is `[1, n]`, repeated over every row of the left.
    Row,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    RowSoftmax(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Transpose(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d { x: usize, kernel: usize, width: usize },
    MaxOverTime { x: usize, argmax: Vec<usize> },
    Sum(usize),
    Mean(usize),
    WeightedBce {
        logits: usize,
        targets: Rc<Tensor>,
        pos_weight: f64,
    },
    CrossEntropy { logits: usize, label: usize },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Operation record for one forward/backward pass. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    check_finite: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Report an error from any op whose output is not finite.
    pub fn set_check_finite(&self, on: bool) {
        self.check_finite.set(on);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Non-trainable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if self.check_finite.get() && !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Accumulated gradient of a leaf, if any was produced.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.nodes.borrow()[v.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Propagates `d loss / d leaf` into every trainable leaf, adding to any
    /// gradient already stored there.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let leaf_grads = {
            let nodes = self.nodes.borrow();
            let loss_node = &nodes[loss.id];
            if !loss_node.value.is_scalar() {
                return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
            }
            let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.id + 1);
            adj.resize_with(loss.id + 1, || None);
            adj[loss.id] = Some(vec![1.0]);
            let mut leaf_grads = Vec::new();
            for id in (0..=loss.id).rev() {
                let Some(g) = adj[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    leaf_grads.push((id, g));
                } else {
                    backprop_node(&nodes, &mut adj, node, &g);
                }
            }
            leaf_grads
        };
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    // ---- forward ops -------------------------------------------------------

    pub fn matmul<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let (av, bv) = (self.value_of(a.id), self.value_of(b.id));
        let out = av.matmul(&bv)?;
        self.push("matmul", out, Op::MatMul(a.id, b.id), &[a.id, b.id])
    }

    fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
        if a.shape() == b.shape() {
            Ok(Broadcast::Same)
        } else if b.rows() == 1 && b.cols() == a.cols() {
            Ok(Broadcast::Row)
        } else {
            Err(Error::Shape {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    }

    fn binary<'t>(
        &'t self,
        name: &'static str,
        a: Var<'t>,
        b: Var<'t>,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize, Broadcast) -> Op,
    ) -> Result<Var<'t>> {
        let (av, bv) = (self.value_of(a.id), self.value_of(b.id));
        let kind = Self::broadcast_kind(name, &av, &bv)?;
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match kind {
                    Broadcast::Same => bv.data()[i],
                    Broadcast::Row => bv.data()[i % cols],
                };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, out, op(a.id, b.id, kind), &[a.id, b.id])
    }

    /// Elementwise sum; `b` may be a `[1, n]` row broadcast over `a`'s rows.
    pub fn add<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale<'t>(&'t self, a: Var<'t>, c: f64) -> Result<Var<'t>> {
        let out = self.value_of(a.id).map(|x| x * c);
        self.push("scale", out, Op::Scale(a.id, c), &[a.id])
    }

    pub fn add_scalar<'t>(&'t self, a: Var<'t>, c: f64) -> Result<Var<'t>> {
        let out = self.value_of(a.id).map(|x| x + c);
        self.push("add_scalar", out, Op::AddScalar(a.id), &[a.id])
    }

    fn unary<'t>(
        &'t self,
        name: &'static str,
        a: Var<'t>,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var<'t>> {
        let out = self.value_of(a.id).map(f);
        self.push(name, out, op(a.id), &[a.id])
    }

    pub fn relu<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        self.unary("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn sigmoid<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        self.unary("tanh", a, f64::tanh, Op::Tanh)
    }

    pub fn exp<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        self.unary("exp", a, f64::exp, Op::Exp)
    }

    pub fn log<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        self.unary("log", a, f64::ln, Op::Log)
    }

    /// Softmax along each row. Columns flagged in `key_mask` get exactly zero
    /// weight in every row.
    pub fn row_softmax<'t>(&'t self, a: Var<'t>, key_mask: Option<&[bool]>) -> Result<Var<'t>> {
        let av = self.value_of(a.id);
        let (rows, cols) = (av.rows(), av.cols());
        if let Some(m) = key_mask {
            if m.len() != cols {
                return Err(Error::Shape {
                    op: "row_softmax mask",
                    lhs: av.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
            if m.iter().all(|&x| x) {
                return Err(Error::AllKeysMasked { row: 0 });
            }
        }
        let masked = |j: usize| key_mask.is_some_and(|m| m[j]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = av.row_slice(r);
            let max = (0..cols)
                .filter(|&j| !masked(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..cols {
                if !masked(j) {
                    let e = (row[j] - max).exp();
                    out[r * cols + j] = e;
                    total += e;
                }
            }
            for o in &mut out[r * cols..(r + 1) * cols] {
                *o /= total;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), out)?;
        self.push("row_softmax", out, Op::RowSoftmax(a.id), &[a.id])
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::invalid("concat needs at least one input and axis 0 or 1"));
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| self.value_of(p.id)).collect();
        let out = if axis == 0 {
            let cols = values[0].cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for v in &values {
                if v.cols() != cols {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: values[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, cols, data)
        } else {
            let rows = values[0].rows();
            let mut cols = 0;
            for v in &values {
                if v.rows() != rows {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: values[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
                cols += v.cols();
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for v in &values {
                    data.extend_from_slice(v.row_slice(r));
                }
            }
            Tensor::matrix(rows, cols, data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push("concat", out, Op::Concat { inputs: ids.clone(), axis }, &ids)
    }

    /// Half-open range `[start, end)` along `axis` (0 = rows, 1 = columns).
    pub fn slice<'t>(&'t self, a: Var<'t>, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let av = self.value_of(a.id);
        let (rows, cols) = (av.rows(), av.cols());
        let extent = if axis == 0 { rows } else { cols };
        if axis > 1 || start > end || end > extent {
            return Err(Error::Shape {
                op: "slice",
                lhs: av.shape().to_vec(),
                rhs: vec![axis, start, end],
            });
        }
        let out = if axis == 0 {
            Tensor::matrix(end - start, cols, av.data()[start * cols..end * cols].to_vec())
        } else {
            let mut data = Vec::with_capacity(rows * (end - start));
            for r in 0..rows {
                data.extend_from_slice(&av.row_slice(r)[start..end]);
            }
            Tensor::matrix(rows, end - start, data)
        };
        self.push("slice", out, Op::Slice { x: a.id, axis, start }, &[a.id])
    }

    pub fn transpose<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        let out = self.value_of(a.id).transpose();
        self.push("transpose", out, Op::Transpose(a.id), &[a.id])
    }

    /// Row-wise normalisation with learned `[1, n]` gain and bias, ε = 1e-5.
    pub fn layer_norm<'t>(&'t self, x: Var<'t>, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let xv = self.value_of(x.id);
        let (gv, bv) = (self.value_of(gain.id), self.value_of(bias.id));
        let (rows, cols) = (xv.rows(), xv.cols());
        for p in [&gv, &bv] {
            if p.rows() != 1 || p.cols() != cols {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat[r * cols + j] = h;
                out[r * cols + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::matrix(rows, cols, out);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x: x.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            &[x.id, gain.id, bias.id],
        )
    }

    /// Valid 1-D cross-correlation along the row (time) axis.
    ///
    /// `x` is `[T, d]` (one row per time step), `kernel` is `[n, width·d]` with
    /// each row holding `width` consecutive taps of `d` features. The result is
    /// `[T − width + 1, n]`.
    pub fn conv1d_valid<'t>(&'t self, x: Var<'t>, kernel: Var<'t>, width: usize) -> Result<Var<'t>> {
        let (xv, kv) = (self.value_of(x.id), self.value_of(kernel.id));
        let (steps, d) = (xv.rows(), xv.cols());
        if width == 0 || width > steps || kv.cols() != width * d {
            return Err(Error::Shape {
                op: "conv1d_valid",
                lhs: xv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        }
        let out_len = steps - width + 1;
        let n = kv.rows();
        let mut out = vec![0.0; out_len * n];
        let span = width * d;
        for t in 0..out_len {
            let window = &xv.data()[t * d..t * d + span];
            for j in 0..n {
                let k = kv.row_slice(j);
                out[t * n + j] = window.iter().zip(k).map(|(a, b)| a * b).sum();
            }
        }
        let out = Tensor::matrix(out_len, n, out);
        self.push(
            "conv1d_valid",
            out,
            Op::Conv1d {
                x: x.id,
                kernel: kernel.id,
                width,
            },
            &[x.id, kernel.id],
        )
    }

    /// Column-wise maximum over the first `valid` rows, giving `[1, n]`. Ties
    /// resolve to the earliest row.
    pub fn max_over_time<'t>(&'t self, x: Var<'t>, valid: usize) -> Result<Var<'t>> {
        let xv = self.value_of(x.id);
        let (rows, cols) = (xv.rows(), xv.cols());
        if valid == 0 || valid > rows {
            return Err(Error::Shape {
                op: "max_over_time",
                lhs: xv.shape().to_vec(),
                rhs: vec![valid],
            });
        }
        let mut argmax = vec![0; cols];
        let mut out = vec![f64::NEG_INFINITY; cols];
        for r in 0..valid {
            for (j, &v) in xv.row_slice(r).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = r;
                }
            }
        }
        let out = Tensor::row(out);
        self.push("max_over_time", out, Op::MaxOverTime { x: x.id, argmax }, &[x.id])
    }

    pub fn sum<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        let s = self.value_of(a.id).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a.id), &[a.id])
    }

    pub fn mean<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>> {
        let av = self.value_of(a.id);
        let m = av.data().iter().sum::<f64>() / av.numel() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a.id), &[a.id])
    }

    /// Mean over all entries of the binary cross-entropy between
    /// `sigmoid(logits)` and `targets`, with positive targets weighted by
    /// `pos_weight`. Evaluated in a form that is stable for large logits.
    pub fn weighted_bce_with_logits<'t>(
        &'t self,
        logits: Var<'t>,
        targets: &Tensor,
        pos_weight: f64,
    ) -> Result<Var<'t>> {
        let lv = self.value_of(logits.id);
        if lv.shape() != targets.shape() {
            return Err(Error::Shape {
                op: "weighted_bce_with_logits",
                lhs: lv.shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| pos_weight * y * softplus(-x) + (1.0 - y) * softplus(x))
            .sum();
        let out = Tensor::scalar(total / lv.numel() as f64);
        self.push(
            "weighted_bce_with_logits",
            out,
            Op::WeightedBce {
                logits: logits.id,
                targets: Rc::new(targets.clone()),
                pos_weight,
            },
            &[logits.id],
        )
    }

    /// `−ln softmax(logits)[label]` for a `[1, C]` logit row.
    pub fn cross_entropy_logits<'t>(&'t self, logits: Var<'t>, label: usize) -> Result<Var<'t>> {
        let lv = self.value_of(logits.id);
        if lv.rows() != 1 {
            return Err(Error::Shape {
                op: "cross_entropy_logits",
                lhs: lv.shape().to_vec(),
                rhs: vec![1, lv.cols()],
            });
        }
        if label >= lv.cols() {
            return Err(Error::InvalidLabel {
                label,
                num_classes: lv.cols(),
            });
        }
        let lse = log_sum_exp(lv.data());
        let out = Tensor::scalar(lse - lv.data()[label]);
        self.push(
            "cross_entropy_logits",
            out,
            Op::CrossEntropy {
                logits: logits.id,
                label,
            },
            &[logits.id],
        )
    }

    /// Reparameterised draw `mu + exp(logvar / 2) · noise`.
    pub fn gaussian_sample<'t>(&'t self, mu: Var<'t>, logvar: Var<'t>, noise: Tensor) -> Result<Var<'t>> {
        let std = self.exp(self.scale(logvar, 0.5)?)?;
        let noise = self.constant(noise);
        let spread = self.mul(std, noise)?;
        self.add(mu, spread)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.matmul(self, other)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.add(self, other)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.sub(self, other)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.mul(self, other)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.tape.scale(self, c)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.tape.relu(self)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.tape.sigmoid(self)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.tape.tanh(self)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.tape.exp(self)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.tape.log(self)
    }

    pub fn t(self) -> Result<Var<'t>> {
        self.tape.transpose(self)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.tape.sum(self)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.tape.mean(self)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Vec<f64>>], id: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let numel = nodes[id].value.numel();
    Some(adj[id].get_or_insert_with(|| vec![0.0; numel]))
}

fn backprop_node(nodes: &[Node], adj: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if let Some(ga) = slot(nodes, adj, *a) {
                matmul_bt_into(g, bv.data(), ga, m, n, k);
            }
            if let Some(gb) = slot(nodes, adj, *b) {
                matmul_at_into(av.data(), g, gb, m, k, n);
            }
        }
        Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if let Some(ga) = slot(nodes, adj, *a) {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            }
            let cols = out.cols();
            if let Some(gb) = slot(nodes, adj, *b) {
                for (i, y) in g.iter().enumerate() {
                    let j = match kind {
                        Broadcast::Same => i,
                        Broadcast::Row => i % cols,
                    };
                    gb[j] += sign * y;
                }
            }
        }
        Op::Mul(a, b, kind) => {
            let (av, bv) = (Rc::clone(&nodes[*a].value), Rc::clone(&nodes[*b].value));
            let cols = out.cols();
            let bidx = |i: usize| match kind {
                Broadcast::Same => i,
                Broadcast::Row => i % cols,
            };
            if let Some(ga) = slot(nodes, adj, *a) {
                for (i, y) in g.iter().enumerate() {
                    ga[i] += y * bv.data()[bidx(i)];
                }
            }
            if let Some(gb) = slot(nodes, adj, *b) {
                for (i, y) in g.iter().enumerate() {
                    gb[bidx(i)] += y * av.data()[i];
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = slot(nodes, adj, *a) {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += c * y;
                }
            }
        }
        Op::AddScalar(a) => {
            if let Some(ga) = slot(nodes, adj, *a) {
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            }
        }
        Op::Relu(a) => {
            let av = Rc::clone(&nodes[*a].value);
            if let Some(ga) = slot(nodes, adj, *a) {
                for ((x, y), v) in ga.iter_mut().zip(g).zip(av.data()) {
                    if *v > 0.0 {
                        *x += y;
                    }
                }
            }
        }
        Op::Sigmoid(a) => elementwise_from_output(nodes, adj, *a, out, g, |y| y * (1.0 - y)),
        Op::Tanh(a) => elementwise_from_output(nodes, adj, *a, out, g, |y| 1.0 - y * y),
        Op::Exp(a) => elementwise_from_output(nodes, adj, *a, out, g, |y| y),
        Op::Log(a) => {
            let av = Rc::clone(&nodes[*a].value);
            if let Some(ga) = slot(nodes, adj, *a) {
                for ((x, y), v) in ga.iter_mut().zip(g).zip(av.data()) {
                    *x += y / v;
                }
            }
        }
        Op::RowSoftmax(a) => {
            let cols = out.cols();
            if let Some(ga) = slot(nodes, adj, *a) {
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        ga[r * cols + j] += y[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let cols = out.cols();
            let mut offset = 0;
            for &inp in inputs {
                let (ir, ic) = (nodes[inp].value.rows(), nodes[inp].value.cols());
                if let Some(gi) = slot(nodes, adj, inp) {
                    if *axis == 0 {
                        for (x, y) in gi.iter_mut().zip(&g[offset * cols..(offset + ir) * cols]) {
                            *x += y;
                        }
                    } else {
                        for r in 0..ir {
                            for c in 0..ic {
                                gi[r * ic + c] += g[r * cols + offset + c];
                            }
                        }
                    }
                }
                offset += if *axis == 0 { ir } else { ic };
            }
        }
        Op::Slice { x, axis, start } => {
            let src_cols = nodes[*x].value.cols();
            let (orows, ocols) = (out.rows(), out.cols());
            if let Some(gx) = slot(nodes, adj, *x) {
                for r in 0..orows {
                    for c in 0..ocols {
                        let (sr, sc) = if *axis == 0 { (r + start, c) } else { (r, c + start) };
                        gx[sr * src_cols + sc] += g[r * ocols + c];
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (rows, cols) = (out.rows(), out.cols());
            if let Some(ga) = slot(nodes, adj, *a) {
                for r in 0..rows {
                    for c in 0..cols {
                        ga[c * rows + r] += g[r * cols + c];
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (rows, cols) = (out.rows(), out.cols());
            let gain_v = Rc::clone(&nodes[*gain].value);
            if let Some(gb) = slot(nodes, adj, *bias) {
                for r in 0..rows {
                    for j in 0..cols {
                        gb[j] += g[r * cols + j];
                    }
                }
            }
            if let Some(gg) = slot(nodes, adj, *gain) {
                for r in 0..rows {
                    for j in 0..cols {
                        gg[j] += g[r * cols + j] * xhat[r * cols + j];
                    }
                }
            }
            if let Some(gx) = slot(nodes, adj, *x) {
                let n = cols as f64;
                for r in 0..rows {
                    let dxhat: Vec<f64> = (0..cols).map(|j| g[r * cols + j] * gain_v.data()[j]).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / n;
                    let mean_dx = dxhat
                        .iter()
                        .zip(&xhat[r * cols..(r + 1) * cols])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / n;
                    for j in 0..cols {
                        gx[r * cols + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * cols + j] * mean_dx);
                    }
                }
            }
        }
        Op::Conv1d { x, kernel, width } => {
            let (xv, kv) = (Rc::clone(&nodes[*x].value), Rc::clone(&nodes[*kernel].value));
            let d = xv.cols();
            let span = width * d;
            let (out_len, n) = (out.rows(), out.cols());
            if let Some(gk) = slot(nodes, adj, *kernel) {
                for t in 0..out_len {
                    let window = &xv.data()[t * d..t * d + span];
                    for j in 0..n {
                        let gv = g[t * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for (acc, w) in gk[j * span..(j + 1) * span].iter_mut().zip(window) {
                            *acc += gv * w;
                        }
                    }
                }
            }
            if let Some(gx) = slot(nodes, adj, *x) {
                for t in 0..out_len {
                    for j in 0..n {
                        let gv = g[t * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for (acc, k) in gx[t * d..t * d + span].iter_mut().zip(kv.row_slice(j)) {
                            *acc += gv * k;
                        }
                    }
                }
            }
        }
        Op::MaxOverTime { x, argmax } => {
            let cols = out.cols();
            if let Some(gx) = slot(nodes, adj, *x) {
                for (j, &r) in argmax.iter().enumerate() {
                    gx[r * cols + j] += g[j];
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(nodes, adj, *a) {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
        }
        Op::Mean(a) => {
            if let Some(ga) = slot(nodes, adj, *a) {
                let scale = g[0] / ga.len() as f64;
                for x in ga.iter_mut() {
                    *x += scale;
                }
            }
        }
        Op::WeightedBce {
            logits,
            targets,
            pos_weight,
        } => {
            let lv = Rc::clone(&nodes[*logits].value);
            if let Some(gl) = slot(nodes, adj, *logits) {
                let scale = g[0] / lv.numel() as f64;
                for ((acc, &x), &y) in gl.iter_mut().zip(lv.data()).zip(targets.data()) {
                    let s = sigmoid(x);
                    *acc += scale * (-pos_weight * y * (1.0 - s) + (1.0 - y) * s);
                }
            }
        }
        Op::CrossEntropy { logits, label } => {
            let lv = Rc::clone(&nodes[*logits].value);
            if let Some(gl) = slot(nodes, adj, *logits) {
                let lse = log_sum_exp(lv.data());
                for (j, (acc, &x)) in gl.iter_mut().zip(lv.data()).enumerate() {
                    let p = (x - lse).exp();
                    let target = if j == *label { 1.0 } else { 0.0 };
                    *acc += g[0] * (p - target);
                }
            }
        }
    }
}

fn elementwise_from_output(
    nodes: &[Node],
    adj: &mut [Option<Vec<f64>>],
    a: usize,
    out: &Tensor,
    g: &[f64],
    deriv: impl Fn(f64) -> f64,
) {
    if let Some(ga) = slot(nodes, adj, a) {
        for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
            *x += y * deriv(*o);
        }
    }
}
