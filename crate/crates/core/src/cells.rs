//! Gated recurrent cells: the fully-connected GRU, its convolutional
//! counterpart, the stacked variant with bottom-up gate inputs, and the
//! sequence drivers built on top of them.
//!
//! For one layer with input `x_t` and previous state `h`:
//!
//! ```text
//! z  = σ(W_z ∗ x_t + U_z ∗ h + b_z)
//! r  = σ(W_r ∗ x_t + U_r ∗ h + b_r)
//! h̃  = tanh(W ∗ x_t + U ∗ (r ⊙ h) + b)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! where `∗` is a matrix product for [`gru_step`] and a zero-padded
//! stride-1 convolution for [`convgru_step`]. The stacked cell adds
//! `W_zl ∗ h_below` and `W_rl ∗ h_below` to the gate pre-activations only;
//! the candidate sees the lower layer only when the optional `W_hl` kernel
//! is present.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::init;
use crate::kernels::{Pair, PoolMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

macro_rules! nine_fields {
    ($name:ident) => {
        impl<T> $name<T> {
            /// Fields in checkpoint order: `W, W_z, W_r, U, U_z, U_r, b, b_z, b_r`.
            pub const NAMES: [&'static str; 9] =
                ["W", "W_z", "W_r", "U", "U_z", "U_r", "b", "b_z", "b_r"];

            pub fn fields(&self) -> [&T; 9] {
                [
                    &self.w, &self.w_z, &self.w_r, &self.u, &self.u_z, &self.u_r, &self.b,
                    &self.b_z, &self.b_r,
                ]
            }

            pub fn from_fields(f: [T; 9]) -> Self {
                let [w, w_z, w_r, u, u_z, u_r, b, b_z, b_r] = f;
                Self {
                    w,
                    w_z,
                    w_r,
                    u,
                    u_z,
                    u_r,
                    b,
                    b_z,
                    b_r,
                }
            }

            pub fn try_map<U, E>(
                &self,
                mut f: impl FnMut(&T) -> core::result::Result<U, E>,
            ) -> core::result::Result<$name<U>, E> {
                Ok($name {
                    w: f(&self.w)?,
                    w_z: f(&self.w_z)?,
                    w_r: f(&self.w_r)?,
                    u: f(&self.u)?,
                    u_z: f(&self.u_z)?,
                    u_r: f(&self.u_r)?,
                    b: f(&self.b)?,
                    b_z: f(&self.b_z)?,
                    b_r: f(&self.b_r)?,
                })
            }
        }

        impl $name<Tensor> {
            /// Registers every tensor on `tape` as a differentiable leaf.
            pub fn bind(&self, tape: &mut Tape) -> Result<$name<Var>> {
                self.try_map(|t| tape.param(t.clone()))
            }

            /// Number of allocated elements across all nine tensors, or
            /// across the six weight tensors when `include_bias` is false.
            pub fn element_count(&self, include_bias: bool) -> usize {
                let f = self.fields();
                let weights: usize = f[..6].iter().map(|t| t.len()).sum();
                let biases: usize = f[6..].iter().map(|t| t.len()).sum();
                weights + if include_bias { biases } else { 0 }
            }
        }
    };
}

/// Fully-connected GRU: `W*` are `O_h×O_x`, `U*` are `O_h×O_h`, biases `O_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights<T> {
    pub w: T,
    pub w_z: T,
    pub w_r: T,
    pub u: T,
    pub u_z: T,
    pub u_r: T,
    pub b: T,
    pub b_z: T,
    pub b_r: T,
}

nine_fields!(GruWeights);

/// Convolutional GRU layer: `W*` kernels are `O_h×O_x×k1×k2`, `U*` kernels
/// `O_h×O_h×k1×k2`, biases `O_h`. Padding is `⌊k/2⌋` with stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGruWeights<T> {
    pub w: T,
    pub w_z: T,
    pub w_r: T,
    pub u: T,
    pub u_z: T,
    pub u_r: T,
    pub b: T,
    pub b_z: T,
    pub b_r: T,
}

nine_fields!(ConvGruWeights);

/// Dimensions of one convolutional GRU layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub k1: usize,
    pub k2: usize,
    pub input_channels: usize,
    pub hidden_channels: usize,
}

impl GruWeights<Tensor> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[hidden, input]),
            w_z: Tensor::zeros(&[hidden, input]),
            w_r: Tensor::zeros(&[hidden, input]),
            u: Tensor::zeros(&[hidden, hidden]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            b: init::zeros(hidden),
            b_z: init::zeros(hidden),
            b_r: init::zeros(hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for w in [&mut p.w, &mut p.w_z, &mut p.w_r] {
            *w = init::glorot_uniform(&[hidden, input], input, hidden, rng);
        }
        for u in [&mut p.u, &mut p.u_z, &mut p.u_r] {
            *u = init::orthogonal(hidden, rng);
        }
        p
    }
}

impl ConvGruWeights<Tensor> {
    pub fn zeros(d: LayerDims) -> Self {
        let LayerDims {
            k1,
            k2,
            input_channels: ox,
            hidden_channels: oh,
        } = d;
        Self {
            w: Tensor::zeros(&[oh, ox, k1, k2]),
            w_z: Tensor::zeros(&[oh, ox, k1, k2]),
            w_r: Tensor::zeros(&[oh, ox, k1, k2]),
            u: Tensor::zeros(&[oh, oh, k1, k2]),
            u_z: Tensor::zeros(&[oh, oh, k1, k2]),
            u_r: Tensor::zeros(&[oh, oh, k1, k2]),
            b: init::zeros(oh),
            b_z: init::zeros(oh),
            b_r: init::zeros(oh),
        }
    }

    pub fn init<R: Rng + ?Sized>(d: LayerDims, rng: &mut R) -> Result<Self> {
        check_odd(d.k1, d.k2)?;
        let mut p = Self::zeros(d);
        let (ox, oh) = (d.input_channels, d.hidden_channels);
        let area = d.k1 * d.k2;
        for w in [&mut p.w, &mut p.w_z, &mut p.w_r] {
            *w = init::glorot_uniform(&[oh, ox, d.k1, d.k2], ox * area, oh * area, rng);
        }
        for u in [&mut p.u, &mut p.u_z, &mut p.u_r] {
            *u = init::recurrent_kernel(oh, d.k1, d.k2, rng);
        }
        Ok(p)
    }

    pub fn dims(&self) -> LayerDims {
        let s = self.w.shape();
        LayerDims {
            k1: s[2],
            k2: s[3],
            input_channels: s[1],
            hidden_channels: s[0],
        }
    }
}

/// Bottom-up kernels of a stacked layer: `W_zl`, `W_rl` (and optionally
/// `W_hl`) map the pooled lower hidden state `O_h^{l-1}` into this layer's
/// gates.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedExtra<T> {
    pub w_zl: T,
    pub w_rl: T,
    pub w_hl: Option<T>,
}

impl<T> StackedExtra<T> {
    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(&T) -> core::result::Result<U, E>,
    ) -> core::result::Result<StackedExtra<U>, E> {
        Ok(StackedExtra {
            w_zl: f(&self.w_zl)?,
            w_rl: f(&self.w_rl)?,
            w_hl: self.w_hl.as_ref().map(&mut f).transpose()?,
        })
    }

    /// Fields with their checkpoint names.
    pub fn named(&self) -> Vec<(&'static str, &T)> {
        let mut v = alloc::vec![("W_zl", &self.w_zl), ("W_rl", &self.w_rl)];
        if let Some(w) = &self.w_hl {
            v.push(("W_hl", w));
        }
        v
    }
}

impl StackedExtra<Tensor> {
    pub fn zeros(below: usize, hidden: usize, k1: usize, k2: usize, candidate: bool) -> Self {
        Self {
            w_zl: Tensor::zeros(&[hidden, below, k1, k2]),
            w_rl: Tensor::zeros(&[hidden, below, k1, k2]),
            w_hl: candidate.then(|| Tensor::zeros(&[hidden, below, k1, k2])),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        below: usize,
        hidden: usize,
        k1: usize,
        k2: usize,
        candidate: bool,
        rng: &mut R,
    ) -> Self {
        let area = k1 * k2;
        let mut draw =
            || init::glorot_uniform(&[hidden, below, k1, k2], below * area, hidden * area, rng);
        let w_zl = draw();
        let w_rl = draw();
        let w_hl = candidate.then(draw);
        Self { w_zl, w_rl, w_hl }
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<StackedExtra<Var>> {
        self.try_map(|t| tape.param(t.clone()))
    }

    pub fn element_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

fn check_odd(k1: usize, k2: usize) -> Result<()> {
    if k1 % 2 == 0 || k2 % 2 == 0 {
        return Err(Error::Invalid(format!(
            "kernel {k1}×{k2} must have odd sides for size-preserving padding"
        )));
    }
    Ok(())
}

fn zero_bias(tape: &mut Tape, n: usize) -> Result<Var> {
    tape.constant(init::zeros(n))
}

/// `(1 − z) ⊙ h + z ⊙ h̃`
fn blend(tape: &mut Tape, z: Var, h_prev: Var, candidate: Var) -> Result<Var> {
    let keep = tape.one_minus(z)?;
    let kept = tape.hadamard(keep, h_prev)?;
    let fresh = tape.hadamard(z, candidate)?;
    tape.add(kept, fresh)
}

/// One step of the fully-connected GRU on vectors.
pub fn gru_step(tape: &mut Tape, p: &GruWeights<Var>, x: Var, h_prev: Var) -> Result<Var> {
    let hidden = tape.value(p.u).shape()[0];
    if tape.value(h_prev).shape() != [hidden] {
        return Err(shape_err(
            "gru_step",
            format!(
                "state {:?} does not match hidden size {hidden}",
                tape.value(h_prev).shape()
            ),
        ));
    }
    let zero = zero_bias(tape, hidden)?;
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var| -> Result<Var> {
        let wx = tape.affine(x, w, b)?;
        let uh = tape.affine(h_prev, u, zero)?;
        let pre = tape.add(wx, uh)?;
        tape.sigmoid(pre)
    };
    let z = gate(tape, p.w_z, p.u_z, p.b_z)?;
    let r = gate(tape, p.w_r, p.u_r, p.b_r)?;
    let rh = tape.hadamard(r, h_prev)?;
    let wx = tape.affine(x, p.w, p.b)?;
    let urh = tape.affine(rh, p.u, zero)?;
    let pre = tape.add(wx, urh)?;
    let candidate = tape.tanh(pre)?;
    blend(tape, z, h_prev, candidate)
}

fn check_conv_inputs(
    tape: &Tape,
    p: &ConvGruWeights<Var>,
    x: Var,
    h_prev: Var,
    op: &'static str,
) -> Result<usize> {
    let ks = tape.value(p.u).shape();
    if ks.len() != 4 {
        return Err(shape_err(
            op,
            format!("recurrent kernel must be 4-d, got {ks:?}"),
        ));
    }
    check_odd(ks[2], ks[3])?;
    let wk = tape.value(p.w).shape();
    if wk.len() != 4 || wk[2] != ks[2] || wk[3] != ks[3] {
        return Err(shape_err(
            op,
            format!("input kernel {wk:?} vs recurrent kernel {ks:?}"),
        ));
    }
    let hidden = ks[0];
    let (_, xh, xw) = tape.value(x).chw(op)?;
    let (hc, hh, hw) = tape.value(h_prev).chw(op)?;
    if (xh, xw) != (hh, hw) {
        return Err(shape_err(
            op,
            format!("input map {xh}×{xw} vs state map {hh}×{hw}"),
        ));
    }
    if hc != hidden {
        return Err(shape_err(
            op,
            format!("state has {hc} channels, cell has {hidden}"),
        ));
    }
    Ok(hidden)
}

/// One convolutional GRU step on `O_x×N1×N2` input and `O_h×N1×N2` state.
pub fn convgru_step(tape: &mut Tape, p: &ConvGruWeights<Var>, x: Var, h_prev: Var) -> Result<Var> {
    stacked_step_inner(tape, p, None, x, None, h_prev, "convgru_step")
}

/// One stacked convolutional GRU step; `h_below` must already be pooled
/// to the spatial size of `x`.
pub fn stacked_convgru_step(
    tape: &mut Tape,
    p: &ConvGruWeights<Var>,
    extra: &StackedExtra<Var>,
    x: Var,
    h_below: Var,
    h_prev: Var,
) -> Result<Var> {
    let (_, bh, bw) = tape.value(h_below).chw("stacked_convgru_step")?;
    let (_, xh, xw) = tape.value(x).chw("stacked_convgru_step")?;
    if (bh, bw) != (xh, xw) {
        return Err(shape_err(
            "stacked_convgru_step",
            format!("lower state {bh}×{bw} vs input map {xh}×{xw}"),
        ));
    }
    stacked_step_inner(
        tape,
        p,
        Some(extra),
        x,
        Some(h_below),
        h_prev,
        "stacked_convgru_step",
    )
}

fn stacked_step_inner(
    tape: &mut Tape,
    p: &ConvGruWeights<Var>,
    extra: Option<&StackedExtra<Var>>,
    x: Var,
    h_below: Option<Var>,
    h_prev: Var,
    op: &'static str,
) -> Result<Var> {
    let hidden = check_conv_inputs(tape, p, x, h_prev, op)?;
    let zero = zero_bias(tape, hidden)?;
    let below = extra.zip(h_below);

    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, wl: Option<Var>| -> Result<Var> {
        let wx = tape.conv2d_same(x, w, b)?;
        let uh = tape.conv2d_same(h_prev, u, zero)?;
        let mut pre = tape.add(wx, uh)?;
        if let (Some(wl), Some((_, hb))) = (wl, below) {
            let lower = tape.conv2d_same(hb, wl, zero)?;
            pre = tape.add(pre, lower)?;
        }
        tape.sigmoid(pre)
    };
    let z = gate(tape, p.w_z, p.u_z, p.b_z, below.map(|(e, _)| e.w_zl))?;
    let r = gate(tape, p.w_r, p.u_r, p.b_r, below.map(|(e, _)| e.w_rl))?;
    let rh = tape.hadamard(r, h_prev)?;
    let wx = tape.conv2d_same(x, p.w, p.b)?;
    let urh = tape.conv2d_same(rh, p.u, zero)?;
    let mut pre = tape.add(wx, urh)?;
    if let Some((
        StackedExtra {
            w_hl: Some(w_hl), ..
        },
        hb,
    )) = below
    {
        let lower = tape.conv2d_same(hb, *w_hl, zero)?;
        pre = tape.add(pre, lower)?;
    }
    let candidate = tape.tanh(pre)?;
    blend(tape, z, h_prev, candidate)
}

/// Zero initial state matching `input`'s spatial size.
pub fn zero_state(tape: &mut Tape, p: &ConvGruWeights<Var>, input: Var) -> Result<Var> {
    let hidden = tape.value(p.u).shape()[0];
    let (_, h, w) = tape.value(input).chw("zero_state")?;
    tape.constant(Tensor::zeros(&[hidden, h, w]))
}

/// Iterates [`convgru_step`] over a sequence. Returns every hidden state
/// and the final one.
pub fn run_layer(
    tape: &mut Tape,
    p: &ConvGruWeights<Var>,
    inputs: &[Var],
    h0: Var,
) -> Result<(Vec<Var>, Var)> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence("run_layer"));
    }
    let first = tape.value(inputs[0]).shape().to_vec();
    let mut h = h0;
    let mut all = Vec::with_capacity(inputs.len());
    for &x in inputs {
        if tape.value(x).shape() != first.as_slice() {
            return Err(shape_err(
                "run_layer",
                format!(
                    "input {:?} differs from first input {first:?}",
                    tape.value(x).shape()
                ),
            ));
        }
        h = convgru_step(tape, p, x, h)?;
        all.push(h);
    }
    Ok((all, h))
}

/// One layer of a stacked recurrence. The first layer has no `extra`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackLayer<T> {
    pub cell: ConvGruWeights<T>,
    pub extra: Option<StackedExtra<T>>,
}

/// Integer pooling factor taking a `from` map down to `to`.
pub fn pool_factor(from: (usize, usize), to: (usize, usize)) -> Result<Pair> {
    if to.0 == 0 || to.1 == 0 || from.0 % to.0 != 0 || from.1 % to.1 != 0 {
        return Err(shape_err(
            "run_stack",
            format!(
                "cannot pool a {}×{} map to {}×{} with an integer factor",
                from.0, from.1, to.0, to.1
            ),
        ));
    }
    Ok(Pair::new(from.0 / to.0, from.1 / to.1))
}

/// Runs a stack of layers over `percepts[t][l]`, bottom-up at every step:
/// `h^{l-1}_t` is max-pooled to layer `l`'s resolution and fed to that
/// layer's gates. Returns the hidden states per layer, per step.
pub fn run_stack(
    tape: &mut Tape,
    layers: &[StackLayer<Var>],
    percepts: &[Vec<Var>],
) -> Result<Vec<Vec<Var>>> {
    if percepts.is_empty() {
        return Err(Error::EmptySequence("run_stack"));
    }
    if layers.is_empty() {
        return Err(Error::Invalid("run_stack needs at least one layer".into()));
    }
    for (t, step) in percepts.iter().enumerate() {
        if step.len() != layers.len() {
            return Err(shape_err(
                "run_stack",
                format!(
                    "step {t} has {} percepts for {} layers",
                    step.len(),
                    layers.len()
                ),
            ));
        }
    }
    let mut factors = Vec::with_capacity(layers.len());
    factors.push(None);
    for l in 1..layers.len() {
        let (_, h0, w0) = tape.value(percepts[0][l - 1]).chw("run_stack")?;
        let (_, h1, w1) = tape.value(percepts[0][l]).chw("run_stack")?;
        factors.push(Some(pool_factor((h0, w0), (h1, w1))?));
    }

    let mut states = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        states.push(zero_state(tape, &layer.cell, percepts[0][l])?);
    }
    let mut hiddens: Vec<Vec<Var>> = (0..layers.len())
        .map(|_| Vec::with_capacity(percepts.len()))
        .collect();
    for step in percepts {
        for (l, layer) in layers.iter().enumerate() {
            let h = match (&layer.extra, factors[l]) {
                (Some(extra), Some(f)) => {
                    let below = hiddens[l - 1][hiddens[l - 1].len() - 1];
                    let pooled = if f == Pair::square(1) {
                        below
                    } else {
                        tape.pool2d(below, PoolMode::Max, f, f)?
                    };
                    stacked_convgru_step(tape, &layer.cell, extra, step[l], pooled, states[l])?
                }
                _ => convgru_step(tape, &layer.cell, step[l], states[l])?,
            };
            states[l] = h;
            hiddens[l].push(h);
        }
    }
    Ok(hiddens)
}

/// Runs the sequence forward with `fwd` and reversed with `bwd`, then
/// concatenates the two final states along channels (forward first).
pub fn bidirectional_encode(
    tape: &mut Tape,
    fwd: &ConvGruWeights<Var>,
    bwd: &ConvGruWeights<Var>,
    inputs: &[Var],
) -> Result<Var> {
    let first = *inputs
        .first()
        .ok_or(Error::EmptySequence("bidirectional_encode"))?;
    let h0 = zero_state(tape, fwd, first)?;
    let (_, hf) = run_layer(tape, fwd, inputs, h0)?;
    let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
    let h0b = zero_state(tape, bwd, first)?;
    let (_, hb) = run_layer(tape, bwd, &reversed, h0b)?;
    tape.concat(&[hf, hb])
}

/// Parameters of a convolutional GRU layer: `3·k1·k2·(O_x·O_h + O_h·O_h)`
/// weights, plus `3·O_h` biases when requested.
pub fn param_count(d: LayerDims, include_bias: bool) -> usize {
    let LayerDims {
        k1,
        k2,
        input_channels: ox,
        hidden_channels: oh,
    } = d;
    3 * k1 * k2 * (ox * oh + oh * oh) + if include_bias { 3 * oh } else { 0 }
}

/// Bottom-up kernel weights of a stacked layer.
pub fn stacked_extra_count(
    below: usize,
    hidden: usize,
    k1: usize,
    k2: usize,
    candidate: bool,
) -> usize {
    (if candidate { 3 } else { 2 }) * k1 * k2 * below * hidden
}

/// Formula estimate of multiplications for `steps` steps of a
/// convolutional recurrence on an `n1×n2` map.
pub fn conv_multiplications(d: LayerDims, n1: usize, n2: usize, steps: usize) -> u128 {
    let (ox, oh) = (d.input_channels as u128, d.hidden_channels as u128);
    3 * steps as u128 * (n1 * n2) as u128 * (d.k1 * d.k2) as u128 * (ox * oh + oh * oh)
}

/// Formula estimate of multiplications for the same recurrence with
/// fully-connected units over the flattened map.
pub fn dense_multiplications(d: LayerDims, n1: usize, n2: usize, steps: usize) -> u128 {
    let (ox, oh) = (d.input_channels as u128, d.hidden_channels as u128);
    let area = (n1 * n2) as u128;
    3 * steps as u128 * area * area * (ox * oh + oh * oh)
}
