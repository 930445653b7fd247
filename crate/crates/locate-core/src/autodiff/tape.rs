//! Reverse-mode automatic differentiation on a tape.
//!
//! Forward evaluation is eager: every operation computes its output tensor
//! immediately and records a node describing how it was produced. [`backward`]
//! then walks the recorded nodes once, in reverse, accumulating adjoints.
//!
//! Rules the tape enforces, because silent numeric corruption is the worst
//! failure mode a training run can have:
//!
//! * every operation checks its output for non-finite values and fails
//!   loudly, naming the operation;
//! * every gradient is checked the same way during the backward sweep;
//! * `backward` requires a scalar (single-element) loss;
//! * a tape can be differentiated exactly once — running `backward` again, or
//!   recording new operations afterwards, is an error rather than a wrong
//!   answer.
//!
//! Nodes that provably cannot influence any differentiable leaf (constants
//! and everything derived only from constants) are skipped during the sweep.
//!
//! Elementwise binary operations broadcast their *second* operand toward the
//! first under the trailing-dimension rule; the adjoint of broadcasting is a
//! sum over the broadcast axes (`Tensor::reduce_to`).

use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`]. Cheap to copy; only meaningful
/// with the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    /// Differentiable leaf. The optional name is reported in diagnostics.
    Leaf(Option<String>),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Minimum(usize, usize),
    Maximum(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Abs(usize),
    Ln(usize),
    Powf(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        axis: usize,
        eps: f64,
    },
    InterpSample {
        x: usize,
        pos: usize,
    },
    Sum {
        x: usize,
        axis: Option<usize>,
    },
    Mean {
        x: usize,
        axis: Option<usize>,
    },
    MaxReduce {
        x: usize,
        axis: Option<usize>,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Reshape(usize),
    SliceRows {
        x: usize,
        start: usize,
        len: usize,
    },
}

impl Op {
    /// Name for error messages; named leaves report their name.
    fn label(&self) -> String {
        match self {
            Op::Leaf(Some(name)) => format!("leaf `{name}`"),
            other => other.name().to_string(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Leaf(_) => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Minimum(..) => "minimum",
            Op::Maximum(..) => "maximum",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Abs(..) => "abs",
            Op::Ln(..) => "ln",
            Op::Powf(..) => "powf",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::InterpSample { .. } => "interp_sample",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::MaxReduce { .. } => "max_reduce",
            Op::Concat { .. } => "concat",
            Op::Reshape(..) => "reshape",
            Op::SliceRows { .. } => "slice_rows",
        }
    }
}

struct Node {
    value: Tensor,
    /// Whether this value depends on any differentiable leaf.
    requires: bool,
    op: Op,
}

/// Records a computation and differentiates it.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The forward value of a variable.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// The gradient of the loss with respect to `v`, if `backward` has run
    /// and the value participates in the differentiable graph.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn check_var(&self, v: Var, op: &'static str) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::UnknownVariable {
                id: v.0,
                len: self.nodes.len(),
            });
        }
        let _ = op;
        Ok(())
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires: bool) -> Result<Var> {
        if self.done {
            return Err(Error::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.label() });
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            requires,
            op,
        });
        Ok(Var(id))
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    // ---- leaves ----

    /// Record a value that gradients will never be needed for (input data,
    /// precomputed tables). Branches that depend only on constants are
    /// skipped by the backward sweep.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Constant, t, false)
    }

    /// Record a differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf(None), t, true)
    }

    /// Record a named differentiable leaf; the name shows up in diagnostics.
    pub fn named_leaf(&mut self, name: &str, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf(Some(name.to_string())), t, true)
    }

    // ---- elementwise binary (second operand broadcasts) ----

    fn binary(
        &mut self,
        op: fn(usize, usize) -> Op,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let made = op(a.0, b.0);
        let name = made.name();
        self.check_var(a, name)?;
        self.check_var(b, name)?;
        let out = self.val(a).broadcast_zip(self.val(b), name, f)?;
        let req = self.requires(a) || self.requires(b);
        self.push(made, out, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Div, a, b, |x, y| x / y)
    }

    /// Elementwise minimum. On ties the gradient flows to the first operand.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Minimum, a, b, f64::min)
    }

    /// Elementwise maximum. On ties the gradient flows to the first operand.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Maximum, a, b, f64::max)
    }

    // ---- scalar-argument ops ----

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.check_var(a, "scale")?;
        let out = self.val(a).map(|v| v * k);
        let req = self.requires(a);
        self.push(Op::Scale(a.0, k), out, req)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        self.check_var(a, "add_scalar")?;
        let out = self.val(a).map(|v| v + k);
        let req = self.requires(a);
        self.push(Op::AddScalar(a.0), out, req)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Elementwise power with a constant, non-negative exponent.
    pub fn powf(&mut self, a: Var, k: f64) -> Result<Var> {
        self.check_var(a, "powf")?;
        let out = self.val(a).map(|v| v.powf(k));
        let req = self.requires(a);
        self.push(Op::Powf(a.0, k), out, req)
    }

    // ---- elementwise unary ----

    fn unary(&mut self, op: fn(usize) -> Op, a: Var, f: fn(f64) -> f64) -> Result<Var> {
        let made = op(a.0);
        self.check_var(a, made.name())?;
        let out = self.val(a).map(f);
        let req = self.requires(a);
        self.push(made, out, req)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Relu, a, |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Sigmoid, a, sigmoid)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Abs, a, f64::abs)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Ln, a, f64::ln)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a, "matmul")?;
        self.check_var(b, "matmul")?;
        let out = self.val(a).matmul(self.val(b))?;
        let req = self.requires(a) || self.requires(b);
        self.push(Op::Matmul(a.0, b.0), out, req)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check_var(a, "transpose")?;
        let out = self.val(a).transposed()?;
        let req = self.requires(a);
        self.push(Op::Transpose(a.0), out, req)
    }

    // ---- normalization ----

    /// Softmax along `axis`, numerically stabilized by subtracting the lane
    /// maximum before exponentiating.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_var(a, "softmax")?;
        let x = self.val(a);
        let (outer, len, inner) = axis_split(x.shape(), axis)?;
        let mut out = vec![0.0; x.numel()];
        let xd = x.data();
        for o in 0..outer {
            for r in 0..inner {
                let at = |l: usize| (o * len + l) * inner + r;
                let mut m = f64::NEG_INFINITY;
                for l in 0..len {
                    m = m.max(xd[at(l)]);
                }
                let mut s = 0.0;
                for l in 0..len {
                    let e = (xd[at(l)] - m).exp();
                    out[at(l)] = e;
                    s += e;
                }
                for l in 0..len {
                    out[at(l)] /= s;
                }
            }
        }
        let shape = x.shape().to_vec();
        let req = self.requires(a);
        self.push(Op::Softmax { x: a.0, axis }, Tensor::new(shape, out)?, req)
    }

    /// Layer normalization along `axis` with affine gain and bias. Gain and
    /// bias broadcast toward `x` under the trailing rule, so for an `[C, T]`
    /// input normalized along axis 0 they should be shaped `[C, 1]`.
    pub fn layer_norm(&mut self, x: Var, axis: usize, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        self.check_var(x, "layer_norm")?;
        self.check_var(gain, "layer_norm")?;
        self.check_var(bias, "layer_norm")?;
        let normalized = layer_norm_normalize(self.val(x), axis, eps)?;
        let scaled = normalized.broadcast_zip(self.val(gain), "layer_norm", |a, g| a * g)?;
        let out = scaled.broadcast_zip(self.val(bias), "layer_norm", |a, b| a + b)?;
        let req = self.requires(x) || self.requires(gain) || self.requires(bias);
        self.push(
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                axis,
                eps,
            },
            out,
            req,
        )
    }

    // ---- sampling ----

    /// Linearly interpolated read of a `[C, T]` signal at fractional
    /// positions `pos` (rank 1, length Q), producing `[C, Q]`.
    ///
    /// The signal is zero-padded: positions outside `[0, T-1]` blend with
    /// zeros, so a sample fades out continuously as it leaves the support
    /// instead of clamping. The gradient with respect to a position is the
    /// local slope `x[t+1] - x[t]`; at exact integer positions the right
    /// slope is used.
    pub fn interp_sample(&mut self, x: Var, pos: Var) -> Result<Var> {
        self.check_var(x, "interp_sample")?;
        self.check_var(pos, "interp_sample")?;
        let xv = self.val(x);
        let [c, t] = xv.dims2("interp_sample")?;
        let pv = self.val(pos);
        if pv.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "interp_sample",
                lhs: xv.shape().to_vec(),
                rhs: pv.shape().to_vec(),
            });
        }
        let q = pv.numel();
        let mut out = vec![0.0; c * q];
        let xd = xv.data();
        for (j, &p) in pv.data().iter().enumerate() {
            let t0 = p.floor();
            let w1 = p - t0;
            let w0 = 1.0 - w1;
            let t1 = t0 + 1.0;
            // Bounds-check in f64: a cast first would saturate for absurd
            // positions and the index arithmetic would overflow.
            for ch in 0..c {
                let mut v = 0.0;
                if t0 >= 0.0 && t0 < t as f64 {
                    v += w0 * xd[ch * t + t0 as usize];
                }
                if t1 >= 0.0 && t1 < t as f64 {
                    v += w1 * xd[ch * t + t1 as usize];
                }
                out[ch * q + j] = v;
            }
        }
        let req = self.requires(x) || self.requires(pos);
        self.push(
            Op::InterpSample { x: x.0, pos: pos.0 },
            Tensor::new(vec![c, q], out)?,
            req,
        )
    }

    // ---- reductions (the reduced axis is dropped; full reduction gives [1]) ----

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_var(a, "sum")?;
        let out = reduce_forward(self.val(a), axis, Reduce::Sum)?;
        let req = self.requires(a);
        self.push(Op::Sum { x: a.0, axis }, out, req)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_var(a, "mean")?;
        let out = reduce_forward(self.val(a), axis, Reduce::Mean)?;
        let req = self.requires(a);
        self.push(Op::Mean { x: a.0, axis }, out, req)
    }

    /// Max-reduction. The gradient flows to the first maximal element of each
    /// lane.
    pub fn max_reduce(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.check_var(a, "max_reduce")?;
        let out = reduce_forward(self.val(a), axis, Reduce::Max)?;
        let req = self.requires(a);
        self.push(Op::MaxReduce { x: a.0, axis }, out, req)
    }

    // ---- shape surgery ----

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidConfig {
                field: "concat",
                problem: "needs at least one input".into(),
            });
        }
        for &v in xs {
            self.check_var(v, "concat")?;
        }
        let first = self.val(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::AxisOutOfRange { axis, shape: first });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.val(v).shape();
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &n)| d != axis && n != first[d])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis)?;
        let mut out = vec![0.0; shape.iter().product()];
        let mut acc = 0;
        for &v in xs {
            let xv = self.val(v);
            let len_i = xv.shape()[axis];
            let xd = xv.data();
            for o in 0..outer {
                let src = &xd[o * len_i * inner..(o + 1) * len_i * inner];
                let dst_start = (o * total + acc) * inner;
                out[dst_start..dst_start + len_i * inner].copy_from_slice(src);
            }
            acc += len_i;
        }
        let req = xs.iter().any(|&v| self.requires(v));
        self.push(
            Op::Concat {
                xs: xs.iter().map(|v| v.0).collect(),
                axis,
            },
            Tensor::new(shape, out)?,
            req,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check_var(a, "reshape")?;
        let out = self.val(a).reshaped(shape)?;
        let req = self.requires(a);
        self.push(Op::Reshape(a.0), out, req)
    }

    /// Contiguous rows `start..start+len` along axis 0.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check_var(a, "slice_rows")?;
        let xv = self.val(a);
        let shape = xv.shape();
        if shape.is_empty() || start + len > shape[0] {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: shape.to_vec(),
                rhs: vec![start, len],
            });
        }
        let inner: usize = shape[1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[0] = len;
        let data = xv.data()[start * inner..(start + len) * inner].to_vec();
        let req = self.requires(a);
        self.push(
            Op::SliceRows {
                x: a.0,
                start,
                len,
            },
            Tensor::new(out_shape, data)?,
            req,
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Fills the gradient slots readable
    /// through [`Tape::grad`] and consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.done {
            return Err(Error::TapeConsumed);
        }
        self.check_var(loss, "backward")?;
        if self.val(loss).numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.val(loss).shape().to_vec(),
            });
        }
        self.done = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.val(loss).shape(), 1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires {
                continue;
            }
            let Some(g) = grads[id].clone() else {
                continue;
            };
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    op: self.nodes[id].op.label(),
                });
            }
            self.propagate(id, &g, &mut grads)?;
        }
        self.grads = grads;
        Ok(())
    }

    /// Add `delta` — produced while differentiating node `from` — into the
    /// adjoint slot of node `to`, skipping nodes that cannot influence any
    /// leaf. A non-finite delta is reported against the op that produced it.
    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        from: usize,
        to: usize,
        delta: Tensor,
    ) -> Result<()> {
        if !self.nodes[to].requires {
            return Ok(());
        }
        if !delta.is_finite() {
            return Err(Error::NonFiniteGradient {
                op: self.nodes[from].op.label(),
            });
        }
        match &mut grads[to] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        // Clone the op descriptor so `self` stays shared below.
        let op = self.nodes[id].op.clone();
        let val = |i: usize| &self.nodes[i].value;
        match op {
            Op::Constant | Op::Leaf(_) => {}
            Op::Add(a, b) => {
                self.accumulate(grads, id, a, g.clone())?;
                self.accumulate(grads, id, b, g.reduce_to(val(b).shape())?)?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, id, a, g.clone())?;
                self.accumulate(grads, id, b, g.map(|v| -v).reduce_to(val(b).shape())?)?;
            }
            Op::Mul(a, b) => {
                if self.nodes[a].requires {
                    let da = g.broadcast_zip(val(b), "mul", |gv, bv| gv * bv)?;
                    self.accumulate(grads, id, a, da)?;
                }
                if self.nodes[b].requires {
                    let ga = g.broadcast_zip(val(a), "mul", |gv, av| gv * av)?;
                    self.accumulate(grads, id, b, ga.reduce_to(val(b).shape())?)?;
                }
            }
            Op::Div(a, b) => {
                if self.nodes[a].requires {
                    let da = g.broadcast_zip(val(b), "div", |gv, bv| gv / bv)?;
                    self.accumulate(grads, id, a, da)?;
                }
                if self.nodes[b].requires {
                    // d(a/b)/db = -a / b^2
                    let num = g.broadcast_zip(val(a), "div", |gv, av| gv * av)?;
                    let db = num.broadcast_zip(val(b), "div", |nv, bv| -nv / (bv * bv))?;
                    self.accumulate(grads, id, b, db.reduce_to(val(b).shape())?)?;
                }
            }
            Op::Minimum(a, b) => {
                // Ties route to the first operand.
                if self.nodes[a].requires {
                    let da = mask_select(val(a), val(b), g, |x, y| x <= y)?;
                    self.accumulate(grads, id, a, da)?;
                }
                if self.nodes[b].requires {
                    let db = mask_select(val(a), val(b), g, |x, y| x > y)?;
                    self.accumulate(grads, id, b, db.reduce_to(val(b).shape())?)?;
                }
            }
            Op::Maximum(a, b) => {
                if self.nodes[a].requires {
                    let da = mask_select(val(a), val(b), g, |x, y| x >= y)?;
                    self.accumulate(grads, id, a, da)?;
                }
                if self.nodes[b].requires {
                    let db = mask_select(val(a), val(b), g, |x, y| x < y)?;
                    self.accumulate(grads, id, b, db.reduce_to(val(b).shape())?)?;
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, id, a, g.map(|v| v * k))?,
            Op::AddScalar(a) => self.accumulate(grads, id, a, g.clone())?,
            Op::Relu(a) => {
                let x = val(a);
                let da = Tensor::from_fn(x.shape(), |i| {
                    if x.data()[i] > 0.0 {
                        g.data()[i]
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, id, a, da)?;
            }
            Op::Sigmoid(a) => {
                let s = &self.nodes[id].value;
                let da = Tensor::from_fn(s.shape(), |i| {
                    let sv = s.data()[i];
                    g.data()[i] * sv * (1.0 - sv)
                });
                self.accumulate(grads, id, a, da)?;
            }
            Op::Abs(a) => {
                let x = val(a);
                let da = Tensor::from_fn(x.shape(), |i| {
                    let v = x.data()[i];
                    if v > 0.0 {
                        g.data()[i]
                    } else if v < 0.0 {
                        -g.data()[i]
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, id, a, da)?;
            }
            Op::Ln(a) => {
                let x = val(a);
                let da = Tensor::from_fn(x.shape(), |i| g.data()[i] / x.data()[i]);
                self.accumulate(grads, id, a, da)?;
            }
            Op::Powf(a, k) => {
                let x = val(a);
                let da = if k == 0.0 {
                    Tensor::zeros(x.shape())
                } else {
                    Tensor::from_fn(x.shape(), |i| g.data()[i] * k * x.data()[i].powf(k - 1.0))
                };
                self.accumulate(grads, id, a, da)?;
            }
            Op::Matmul(a, b) => {
                if self.nodes[a].requires {
                    let da = g.matmul(&val(b).transposed()?)?;
                    self.accumulate(grads, id, a, da)?;
                }
                if self.nodes[b].requires {
                    let db = val(a).transposed()?.matmul(g)?;
                    self.accumulate(grads, id, b, db)?;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, id, a, g.transposed()?)?,
            Op::Softmax { x, axis } => {
                let y = &self.nodes[id].value;
                let (outer, len, inner) = axis_split(y.shape(), axis)?;
                let mut dx = vec![0.0; y.numel()];
                for o in 0..outer {
                    for r in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + r;
                        let mut dot = 0.0;
                        for l in 0..len {
                            dot += g.data()[at(l)] * y.data()[at(l)];
                        }
                        for l in 0..len {
                            let i = at(l);
                            dx[i] = y.data()[i] * (g.data()[i] - dot);
                        }
                    }
                }
                self.accumulate(grads, id, x, Tensor::new(y.shape().to_vec(), dx)?)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                axis,
                eps,
            } => {
                let xv = val(x);
                let normalized = layer_norm_normalize(xv, axis, eps)?;
                // dy/dbias and dy/dgain reduce over the broadcast axes.
                if self.nodes[bias].requires {
                    self.accumulate(grads, id, bias, g.reduce_to(val(bias).shape())?)?;
                }
                if self.nodes[gain].requires {
                    let dg = Tensor::from_fn(xv.shape(), |i| g.data()[i] * normalized.data()[i]);
                    self.accumulate(grads, id, gain, dg.reduce_to(val(gain).shape())?)?;
                }
                if self.nodes[x].requires {
                    // Push g through the affine part, then through the
                    // normalization lane by lane.
                    let gh = g.broadcast_zip(val(gain), "layer_norm", |gv, gn| gv * gn)?;
                    let (outer, len, inner) = axis_split(xv.shape(), axis)?;
                    let mut dx = vec![0.0; xv.numel()];
                    for o in 0..outer {
                        for r in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + r;
                            let mut mean = 0.0;
                            let mut var = 0.0;
                            for l in 0..len {
                                mean += xv.data()[at(l)];
                            }
                            mean /= len as f64;
                            for l in 0..len {
                                let d = xv.data()[at(l)] - mean;
                                var += d * d;
                            }
                            var /= len as f64;
                            let inv = 1.0 / (var + eps).sqrt();
                            let mut gh_mean = 0.0;
                            let mut ghn_mean = 0.0;
                            for l in 0..len {
                                let i = at(l);
                                gh_mean += gh.data()[i];
                                ghn_mean += gh.data()[i] * normalized.data()[i];
                            }
                            gh_mean /= len as f64;
                            ghn_mean /= len as f64;
                            for l in 0..len {
                                let i = at(l);
                                dx[i] = inv
                                    * (gh.data()[i]
                                        - gh_mean
                                        - normalized.data()[i] * ghn_mean);
                            }
                        }
                    }
                    self.accumulate(grads, id, x, Tensor::new(xv.shape().to_vec(), dx)?)?;
                }
            }
            Op::InterpSample { x, pos } => {
                let xv = val(x);
                let [c, t] = xv.dims2("interp_sample")?;
                let pv = val(pos);
                let q = pv.numel();
                if self.nodes[x].requires {
                    let mut dx = vec![0.0; c * t];
                    for (j, &p) in pv.data().iter().enumerate() {
                        let t0 = p.floor();
                        let w1 = p - t0;
                        let w0 = 1.0 - w1;
                        let t1 = t0 + 1.0;
                        for ch in 0..c {
                            let gv = g.data()[ch * q + j];
                            if t0 >= 0.0 && t0 < t as f64 {
                                dx[ch * t + t0 as usize] += w0 * gv;
                            }
                            if t1 >= 0.0 && t1 < t as f64 {
                                dx[ch * t + t1 as usize] += w1 * gv;
                            }
                        }
                    }
                    self.accumulate(grads, id, x, Tensor::new(vec![c, t], dx)?)?;
                }
                if self.nodes[pos].requires {
                    let mut dp = vec![0.0; q];
                    for (j, &p) in pv.data().iter().enumerate() {
                        let t0 = p.floor();
                        let t1 = t0 + 1.0;
                        let mut acc = 0.0;
                        for ch in 0..c {
                            let x0 = if t0 >= 0.0 && t0 < t as f64 {
                                xv.data()[ch * t + t0 as usize]
                            } else {
                                0.0
                            };
                            let x1 = if t1 >= 0.0 && t1 < t as f64 {
                                xv.data()[ch * t + t1 as usize]
                            } else {
                                0.0
                            };
                            acc += g.data()[ch * q + j] * (x1 - x0);
                        }
                        dp[j] = acc;
                    }
                    self.accumulate(grads, id, pos, Tensor::new(vec![q], dp)?)?;
                }
            }
            Op::Sum { x, axis } => {
                let dx = spread_reduce_grad(val(x).shape(), axis, g, 1.0)?;
                self.accumulate(grads, id, x, dx)?;
            }
            Op::Mean { x, axis } => {
                let shape = val(x).shape();
                let scale = match axis {
                    None => 1.0 / val(x).numel() as f64,
                    Some(ax) => 1.0 / shape[ax] as f64,
                };
                let dx = spread_reduce_grad(shape, axis, g, scale)?;
                self.accumulate(grads, id, x, dx)?;
            }
            Op::MaxReduce { x, axis } => {
                let xv = val(x);
                let mut dx = Tensor::zeros(xv.shape());
                match axis {
                    None => {
                        // First global maximum takes the gradient.
                        let mut best = 0;
                        for (i, &v) in xv.data().iter().enumerate() {
                            if v > xv.data()[best] {
                                best = i;
                            }
                        }
                        dx.data_mut()[best] = g.data()[0];
                    }
                    Some(ax) => {
                        let (outer, len, inner) = axis_split(xv.shape(), ax)?;
                        for o in 0..outer {
                            for r in 0..inner {
                                let at = |l: usize| (o * len + l) * inner + r;
                                let mut best = 0;
                                for l in 1..len {
                                    if xv.data()[at(l)] > xv.data()[at(best)] {
                                        best = l;
                                    }
                                }
                                dx.data_mut()[at(best)] = g.data()[o * inner + r];
                            }
                        }
                    }
                }
                self.accumulate(grads, id, x, dx)?;
            }
            Op::Concat { xs, axis } => {
                let total = self.nodes[id].value.shape()[axis];
                let (outer, _, inner) = axis_split(self.nodes[id].value.shape(), axis)?;
                let mut acc = 0;
                for xi in xs {
                    let xshape = self.nodes[xi].value.shape().to_vec();
                    let len_i = xshape[axis];
                    if self.nodes[xi].requires {
                        let mut dx = vec![0.0; xshape.iter().product()];
                        for o in 0..outer {
                            let src_start = (o * total + acc) * inner;
                            let dst_start = o * len_i * inner;
                            dx[dst_start..dst_start + len_i * inner]
                                .copy_from_slice(&g.data()[src_start..src_start + len_i * inner]);
                        }
                        self.accumulate(grads, id, xi, Tensor::new(xshape, dx)?)?;
                    }
                    acc += len_i;
                }
            }
            Op::Reshape(a) => {
                self.accumulate(grads, id, a, g.reshaped(val(a).shape())?)?;
            }
            Op::SliceRows { x, start, len } => {
                let xshape = val(x).shape().to_vec();
                let inner: usize = xshape[1..].iter().product();
                let mut dx = Tensor::zeros(&xshape);
                dx.data_mut()[start * inner..(start + len) * inner].copy_from_slice(g.data());
                let _ = len;
                self.accumulate(grads, id, x, dx)?;
            }
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    // Evaluate from the side that keeps the exponential small.
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// g where `keep(a, b)` holds (with b broadcast toward a), zero elsewhere.
fn mask_select(
    a: &Tensor,
    b: &Tensor,
    g: &Tensor,
    keep: fn(f64, f64) -> bool,
) -> Result<Tensor> {
    let mask = a.broadcast_zip(b, "mask", move |x, y| if keep(x, y) { 1.0 } else { 0.0 })?;
    Ok(Tensor::from_fn(g.shape(), |i| g.data()[i] * mask.data()[i]))
}

enum Reduce {
    Sum,
    Mean,
    Max,
}

fn reduce_forward(x: &Tensor, axis: Option<usize>, kind: Reduce) -> Result<Tensor> {
    match axis {
        None => {
            let v = match kind {
                Reduce::Sum => x.data().iter().sum(),
                Reduce::Mean => x.data().iter().sum::<f64>() / x.numel() as f64,
                Reduce::Max => x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            Ok(Tensor::scalar(v))
        }
        Some(ax) => {
            let (outer, len, inner) = axis_split(x.shape(), ax)?;
            let mut shape = x.shape().to_vec();
            shape.remove(ax);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for r in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + r;
                    let v = match kind {
                        Reduce::Sum => (0..len).map(|l| x.data()[at(l)]).sum(),
                        Reduce::Mean => {
                            (0..len).map(|l| x.data()[at(l)]).sum::<f64>() / len as f64
                        }
                        Reduce::Max => (0..len)
                            .map(|l| x.data()[at(l)])
                            .fold(f64::NEG_INFINITY, f64::max),
                    };
                    out[o * inner + r] = v;
                }
            }
            Tensor::new(shape, out)
        }
    }
}

/// Broadcast a reduced gradient back over the reduced axis, scaled.
fn spread_reduce_grad(
    shape: &[usize],
    axis: Option<usize>,
    g: &Tensor,
    scale: f64,
) -> Result<Tensor> {
    match axis {
        None => Ok(Tensor::full(shape, g.data()[0] * scale)),
        Some(ax) => {
            let (outer, len, inner) = axis_split(shape, ax)?;
            let mut dx = vec![0.0; shape.iter().product()];
            for o in 0..outer {
                for r in 0..inner {
                    let gv = g.data()[o * inner + r] * scale;
                    for l in 0..len {
                        dx[(o * len + l) * inner + r] = gv;
                    }
                }
            }
            Tensor::new(shape.to_vec(), dx)
        }
    }
}

fn layer_norm_normalize(x: &Tensor, axis: usize, eps: f64) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let mut out = vec![0.0; x.numel()];
    for o in 0..outer {
        for r in 0..inner {
            let at = |l: usize| (o * len + l) * inner + r;
            let mut mean = 0.0;
            for l in 0..len {
                mean += x.data()[at(l)];
            }
            mean /= len as f64;
            let mut var = 0.0;
            for l in 0..len {
                let d = x.data()[at(l)] - mean;
                var += d * d;
            }
            var /= len as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for l in 0..len {
                let i = at(l);
                out[i] = (x.data()[i] - mean) * inv;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
