//! Reverse-mode automatic differentiation over tensor-valued operations.
//!
//! A [`Tape`] records every primitive in call order together with its
//! output value. [`Tape::backward`] walks the record in exact reverse order
//! and accumulates vector-Jacobian products into the leaves. Every recorded
//! output is checked for NaN/Inf, so numerical blow-ups surface as
//! [`Error::NonFinite`] naming the offending primitive instead of
//! propagating silently.
//!
//! Leaves created with [`Tape::param`] require gradients; leaves created
//! with [`Tape::constant`] do not, and backward skips every branch that
//! only depends on constants.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvGeometry, Elementwise, Pair, PoolGeometry, PoolMode};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used in diagnostics and for fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Add,
    Sub,
    Hadamard,
    Sigmoid,
    Tanh,
    Relu,
    Scale,
    OneMinus,
    Pool,
    GlobalAvgPool,
    Affine,
    Softmax,
    Concat,
    Mean,
    Mask,
    Sum,
    NegLog,
    Reshape,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Hadamard => "hadamard",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Scale => "scale",
            OpKind::OneMinus => "one_minus",
            OpKind::Pool => "pool2d",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Affine => "affine",
            OpKind::Softmax => "softmax",
            OpKind::Concat => "concat",
            OpKind::Mean => "mean",
            OpKind::Mask => "mask",
            OpKind::Sum => "sum",
            OpKind::NegLog => "neg_log",
            OpKind::Reshape => "reshape",
        }
    }

    /// Parses the names produced by [`OpKind::name`].
    pub fn from_name(name: &str) -> Option<Self> {
        const ALL: [OpKind; 20] = [
            OpKind::Leaf,
            OpKind::Conv2d,
            OpKind::Add,
            OpKind::Sub,
            OpKind::Hadamard,
            OpKind::Sigmoid,
            OpKind::Tanh,
            OpKind::Relu,
            OpKind::Scale,
            OpKind::OneMinus,
            OpKind::Pool,
            OpKind::GlobalAvgPool,
            OpKind::Affine,
            OpKind::Softmax,
            OpKind::Concat,
            OpKind::Mean,
            OpKind::Mask,
            OpKind::Sum,
            OpKind::NegLog,
            OpKind::Reshape,
        ];
        ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        pad: Pair,
        stride: Pair,
    },
    Binary(Elementwise, Var, Var),
    Unary(Elementwise, Var),
    Pool {
        input: Var,
        mode: PoolMode,
        window: Pair,
        stride: Pair,
    },
    GlobalAvgPool(Var),
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax(Var),
    Concat(Vec<Var>),
    Mean(Vec<Var>),
    Mask(Var, Tensor),
    Sum(Var),
    /// `-ln(max(x[index], floor))`
    NegLog {
        input: Var,
        index: usize,
        floor: f64,
    },
    Reshape(Var, Vec<usize>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Binary(Elementwise::Add, ..) => OpKind::Add,
            Op::Binary(Elementwise::Sub, ..) => OpKind::Sub,
            Op::Binary(..) => OpKind::Hadamard,
            Op::Unary(Elementwise::Sigmoid, _) => OpKind::Sigmoid,
            Op::Unary(Elementwise::Tanh, _) => OpKind::Tanh,
            Op::Unary(Elementwise::Relu, _) => OpKind::Relu,
            Op::Unary(Elementwise::Scale(_), _) => OpKind::Scale,
            Op::Unary(..) => OpKind::OneMinus,
            Op::Pool { .. } => OpKind::Pool,
            Op::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            Op::Affine { .. } => OpKind::Affine,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Concat(_) => OpKind::Concat,
            Op::Mean(_) => OpKind::Mean,
            Op::Mask(..) => OpKind::Mask,
            Op::Sum(_) => OpKind::Sum,
            Op::NegLog { .. } => OpKind::NegLog,
            Op::Reshape(..) => OpKind::Reshape,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernels,
                bias,
                ..
            } => vec![*input, *kernels, *bias],
            Op::Binary(_, a, b) => vec![*a, *b],
            Op::Affine {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::Concat(vs) | Op::Mean(vs) => vs.clone(),
            Op::Unary(_, a)
            | Op::Pool { input: a, .. }
            | Op::GlobalAvgPool(a)
            | Op::Softmax(a)
            | Op::Mask(a, _)
            | Op::Sum(a)
            | Op::NegLog { input: a, .. }
            | Op::Reshape(a, _) => vec![*a],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Ordered record of primitive operations and their values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients of a scalar with respect to every leaf of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`. Leaves the loss does not depend on get zeros.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.grads[var.0]
            .as_ref()
            .expect("gradients are kept for leaves only")
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .expect("gradients are kept for leaves only")
    }
}

fn eval<'a>(op: &Op, val: &dyn Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    Ok(match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::Conv2d {
            input,
            kernels,
            bias,
            pad,
            stride,
        } => {
            let g = ConvGeometry::new(val(*input), val(*kernels), val(*bias), *pad, *stride)?;
            kernels::conv2d_with(val(*input), val(*kernels), val(*bias), &g)
        }
        Op::Binary(e, a, b) => kernels::elementwise(*e, &[val(*a), val(*b)])?,
        Op::Unary(e, a) => kernels::elementwise(*e, &[val(*a)])?,
        Op::Pool {
            input,
            mode,
            window,
            stride,
        } => {
            let g = PoolGeometry::new(val(*input), *window, *stride)?;
            kernels::pool2d_with(val(*input), *mode, &g).0
        }
        Op::GlobalAvgPool(a) => kernels::global_avg_pool(val(*a))?,
        Op::Affine {
            input,
            weight,
            bias,
        } => kernels::affine(val(*input), val(*weight), val(*bias))?,
        Op::Softmax(a) => {
            let x = val(*a);
            if x.rank() != 1 {
                return Err(shape_err(
                    "softmax",
                    format!("expected a vector, got {:?}", x.shape()),
                ));
            }
            kernels::softmax(x)
        }
        Op::Concat(vs) => {
            let parts: Vec<&Tensor> = vs.iter().map(|v| val(*v)).collect();
            kernels::concat_channels(&parts)?
        }
        Op::Mean(vs) => {
            let first = val(*vs.first().ok_or(Error::EmptySequence("mean"))?);
            let mut acc = first.clone();
            for v in &vs[1..] {
                let t = val(*v);
                if t.shape() != first.shape() {
                    return Err(shape_err(
                        "mean",
                        format!("{:?} vs {:?}", t.shape(), first.shape()),
                    ));
                }
                for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                    *a += b;
                }
            }
            let n = vs.len() as f64;
            acc.map(|v| v / n)
        }
        Op::Mask(a, mask) => kernels::elementwise(Elementwise::Hadamard, &[val(*a), mask])?,
        Op::Sum(a) => Tensor::scalar(val(*a).sum()),
        Op::NegLog {
            input,
            index,
            floor,
        } => {
            let x = val(*input);
            let p = *x.data().get(*index).ok_or_else(|| {
                Error::Invalid(format!("index {index} out of range for {:?}", x.shape()))
            })?;
            Tensor::scalar(-libm::log(p.max(*floor)))
        }
        Op::Reshape(a, shape) => val(*a).clone().reshape(shape)?,
    })
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose backward rule for `kind` is deliberately wrong (it
    /// doubles that primitive's contribution). Used as a negative control
    /// for gradient checking.
    pub fn with_backward_fault(kind: OpKind) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Kinds of the recorded entries, in recording order.
    pub fn kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf the caller wants gradients for.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = {
            let nodes = &self.nodes;
            eval(&op, &|v: Var| &nodes[v.0].value)?
        };
        let kind = op.kind();
        if !value.is_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        pad: Pair,
        stride: Pair,
    ) -> Result<Var> {
        self.record(Op::Conv2d {
            input,
            kernels,
            bias,
            pad,
            stride,
        })
    }

    /// Stride-1 convolution with `⌊k/2⌋` zero padding; odd kernels keep the
    /// spatial size.
    pub fn conv2d_same(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let s = self.value(kernels).shape();
        if s.len() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("kernels must be 4-d, got {s:?}"),
            ));
        }
        let pad = Pair::new(s[2] / 2, s[3] / 2);
        self.conv2d(input, kernels, bias, pad, Pair::square(1))
    }

    pub fn elementwise(&mut self, op: Elementwise, operands: &[Var]) -> Result<Var> {
        match (op, operands) {
            (Elementwise::Add | Elementwise::Sub | Elementwise::Hadamard, [a, b]) => {
                self.record(Op::Binary(op, *a, *b))
            }
            (
                Elementwise::Sigmoid
                | Elementwise::Tanh
                | Elementwise::Relu
                | Elementwise::Scale(_)
                | Elementwise::OneMinus,
                [a],
            ) => self.record(Op::Unary(op, *a)),
            _ => Err(Error::Invalid(format!(
                "{op:?} called with {} operand(s)",
                operands.len()
            ))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Elementwise::Add, a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Elementwise::Sub, a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Binary(Elementwise::Hadamard, a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Unary(Elementwise::Sigmoid, a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Unary(Elementwise::Tanh, a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Unary(Elementwise::Relu, a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::Unary(Elementwise::Scale(s), a))
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Unary(Elementwise::OneMinus, a))
    }

    pub fn pool2d(
        &mut self,
        input: Var,
        mode: PoolMode,
        window: Pair,
        stride: Pair,
    ) -> Result<Var> {
        self.record(Op::Pool {
            input,
            mode,
            window,
            stride,
        })
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.record(Op::GlobalAvgPool(input))
    }

    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.record(Op::Affine {
            input,
            weight,
            bias,
        })
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        self.record(Op::Softmax(input))
    }

    /// Concatenation along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::Concat(parts.to_vec()))
    }

    /// Arithmetic mean of equally shaped values.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::Mean(parts.to_vec()))
    }

    /// Pointwise product with a constant tensor.
    pub fn mask(&mut self, input: Var, mask: Tensor) -> Result<Var> {
        self.record(Op::Mask(input, mask))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.record(Op::Sum(input))
    }

    /// `-ln(max(input[index], floor))` as a scalar.
    pub fn neg_log(&mut self, input: Var, index: usize, floor: f64) -> Result<Var> {
        self.record(Op::NegLog {
            input,
            index,
            floor,
        })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape(input, shape.to_vec()))
    }

    /// Recomputes every non-leaf entry from the recorded leaves, in order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                op => eval(op, &|v: Var| &values[v.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every
    /// leaf on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let kind = node.op.kind();
            let factor = if self.fault == Some(kind) { 2.0 } else { 1.0 };
            let mut contribs = self.vjp(node, &g)?;
            for (var, mut c) in contribs.drain(..) {
                if factor != 1.0 {
                    c.iter_mut().for_each(|v| *v *= factor);
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: kind.name() });
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf => Some(match g {
                    Some(data) => Tensor::new(node.value.shape(), data).expect("gradient shape"),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of one entry, for inputs that need them.
    fn vjp(&self, node: &Node, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels,
                bias,
                pad,
                stride,
            } => {
                let geo = ConvGeometry::new(val(*input), val(*kernels), val(*bias), *pad, *stride)?;
                let (gi, gk, gb) = kernels::conv2d_backward(
                    val(*input),
                    val(*kernels),
                    g,
                    &geo,
                    wants(*input),
                    wants(*kernels),
                );
                if let Some(gi) = gi {
                    out.push((*input, gi));
                }
                if let Some(gk) = gk {
                    out.push((*kernels, gk));
                }
                if wants(*bias) {
                    out.push((*bias, gb));
                }
            }
            Op::Binary(e, a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                match e {
                    Elementwise::Add => {
                        if wants(*a) {
                            out.push((*a, g.to_vec()));
                        }
                        if wants(*b) {
                            out.push((*b, g.to_vec()));
                        }
                    }
                    Elementwise::Sub => {
                        if wants(*a) {
                            out.push((*a, g.to_vec()));
                        }
                        if wants(*b) {
                            out.push((*b, g.iter().map(|v| -v).collect()));
                        }
                    }
                    _ => {
                        if wants(*a) {
                            out.push((*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()));
                        }
                        if wants(*b) {
                            out.push((*b, g.iter().zip(va).map(|(g, x)| g * x).collect()));
                        }
                    }
                }
            }
            Op::Unary(e, a) => {
                let y = node.value.data();
                let x = val(*a).data();
                let gi: Vec<f64> = match e {
                    Elementwise::Sigmoid => {
                        g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()
                    }
                    Elementwise::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Elementwise::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Elementwise::Scale(s) => g.iter().map(|g| g * s).collect(),
                    Elementwise::OneMinus => g.iter().map(|g| -g).collect(),
                    _ => unreachable!(),
                };
                out.push((*a, gi));
            }
            Op::Pool {
                input,
                mode,
                window,
                stride,
            } => {
                let geo = PoolGeometry::new(val(*input), *window, *stride)?;
                let gi = match mode {
                    PoolMode::Max => {
                        let (_, argmax) = kernels::pool2d_with(val(*input), *mode, &geo);
                        let mut gi = vec![0.0; val(*input).len()];
                        for (src, gv) in argmax.into_iter().zip(g) {
                            gi[src] += gv;
                        }
                        gi
                    }
                    PoolMode::Avg => kernels::avg_pool_backward(g, &geo),
                };
                out.push((*input, gi));
            }
            Op::GlobalAvgPool(a) => {
                let (_, h, w) = val(*a).chw("global_avg_pool")?;
                let area = (h * w) as f64;
                let mut gi = Vec::with_capacity(val(*a).len());
                for gc in g {
                    gi.extend(core::iter::repeat_n(gc / area, h * w));
                }
                out.push((*a, gi));
            }
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let (d_out, d_in) = kernels::affine_dims(val(*input), val(*weight), val(*bias))?;
                if wants(*input) {
                    let mut gi = vec![0.0; d_in];
                    kernels::gemm_tn_acc(val(*weight).data(), g, &mut gi, d_out, d_in, 1);
                    out.push((*input, gi));
                }
                if wants(*weight) {
                    let x = val(*input).data();
                    let mut gw = Vec::with_capacity(d_out * d_in);
                    for gv in g {
                        gw.extend(x.iter().map(|xv| gv * xv));
                    }
                    out.push((*weight, gw));
                }
                if wants(*bias) {
                    out.push((*bias, g.to_vec()));
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                out.push((*a, g.iter().zip(y).map(|(g, y)| y * (g - dot)).collect()));
            }
            Op::Concat(vs) => {
                let mut offset = 0;
                for v in vs {
                    let n = val(*v).len();
                    if wants(*v) {
                        out.push((*v, g[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::Mean(vs) => {
                let n = vs.len() as f64;
                for v in vs {
                    if wants(*v) {
                        out.push((*v, g.iter().map(|g| g / n).collect()));
                    }
                }
            }
            Op::Mask(a, mask) => {
                out.push((*a, g.iter().zip(mask.data()).map(|(g, m)| g * m).collect()));
            }
            Op::Sum(a) => out.push((*a, vec![g[0]; val(*a).len()])),
            Op::NegLog {
                input,
                index,
                floor,
            } => {
                let mut gi = vec![0.0; val(*input).len()];
                let p = val(*input).data()[*index];
                if p > *floor {
                    gi[*index] = -g[0] / p;
                }
                out.push((*input, gi));
            }
            Op::Reshape(a, _) => out.push((*a, g.to_vec())),
        }
        // Only keep contributions for inputs on the gradient path.
        out.retain(|(v, _)| wants(*v));
        Ok(out)
    }
}
