//! Classifier models assembled from the backbone, the recurrent cells and
//! per-level linear+softmax heads.
//!
//! Parameters live in one flat, named list so optimisers and checkpoints can
//! walk them in a fixed order: recurrent layers (`W, W_z, W_r, U, U_z, U_r,
//! b, b_z, b_r` per layer, forward before backward for bidirectional
//! models), then stacked bottom-up kernels, then heads, then the backbone.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::backbone::{self, Backbone, BackboneConfig};
use crate::cells::{self, ConvGruWeights, GruWeights, LayerDims, StackLayer, StackedExtra};
use crate::error::{shape_err, Error, Result};
use crate::init;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Independent convolutional GRU per percept level.
    GruRcn,
    /// Convolutional GRUs with bottom-up connections between levels.
    StackedGruRcn,
    /// Forward and reversed convolutional GRUs per level.
    BidirGruRcn,
    /// Fully-connected GRU on the pooled top percept.
    FcGruBaseline,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::GruRcn => "gru_rcn",
            Architecture::StackedGruRcn => "stacked_gru_rcn",
            Architecture::BidirGruRcn => "bidir_gru_rcn",
            Architecture::FcGruBaseline => "fc_gru_baseline",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            Architecture::GruRcn,
            Architecture::StackedGruRcn,
            Architecture::BidirGruRcn,
            Architecture::FcGruBaseline,
        ]
        .into_iter()
        .find(|a| a.name() == s)
    }
}

/// Input stream: raw frames or temporal differences of frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rgb,
    FrameDiff,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::FrameDiff => "framediff",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "rgb" => Some(Stream::Rgb),
            "framediff" => Some(Stream::FrameDiff),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub backbone: BackboneConfig,
    /// Percept levels fed to the recurrence, bottom-up. Empty means all.
    pub levels: Vec<usize>,
    /// Hidden channels per used level. The fully-connected baseline uses
    /// the last entry.
    pub hidden: Vec<usize>,
    /// Odd side of the recurrent kernels.
    pub kernel: usize,
    pub dropout: f64,
    pub classes: usize,
    pub stream: Stream,
    /// Keep backbone weights fixed during training.
    pub freeze_backbone: bool,
    /// Also feed the pooled lower state into the stacked candidate.
    pub stacked_candidate_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::GruRcn,
            backbone: BackboneConfig::default(),
            levels: Vec::new(),
            hidden: alloc::vec![16, 32, 64],
            kernel: 3,
            dropout: 0.7,
            classes: 8,
            stream: Stream::Rgb,
            freeze_backbone: false,
            stacked_candidate_input: false,
        }
    }
}

impl ModelConfig {
    /// Indices of the percept levels the recurrence consumes.
    pub fn used_levels(&self) -> Vec<usize> {
        if self.architecture == Architecture::FcGruBaseline {
            return alloc::vec![self.backbone.levels() - 1];
        }
        if self.levels.is_empty() {
            (0..self.backbone.levels()).collect()
        } else {
            self.levels.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.classes < 2 {
            return Err(Error::Invalid("model.classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!(
                "model.dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::Invalid(format!(
                "model.kernel {} must be odd",
                self.kernel
            )));
        }
        if self.hidden.contains(&0) || self.hidden.is_empty() {
            return Err(Error::Invalid(
                "model.hidden widths must be positive".into(),
            ));
        }
        let levels = self.used_levels();
        let total = self.backbone.levels();
        if levels.iter().any(|&l| l >= total) || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!(
                "model.levels {levels:?} must be increasing indices below {total}"
            )));
        }
        if self.architecture != Architecture::FcGruBaseline && self.hidden.len() != levels.len() {
            return Err(Error::Invalid(format!(
                "model.hidden has {} widths for {} percept levels",
                self.hidden.len(),
                levels.len()
            )));
        }
        if self.architecture == Architecture::StackedGruRcn {
            let shapes = self.backbone.level_shapes();
            for w in levels.windows(2) {
                let (a, b) = (shapes[w[0]], shapes[w[1]]);
                cells::pool_factor((a[1], a[2]), (b[1], b[2]))?;
            }
        }
        Ok(())
    }

    fn fc_hidden(&self) -> usize {
        *self.hidden.last().expect("validated non-empty")
    }
}

/// Linear classifier `classes × features`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recurrent<T> {
    Independent(Vec<ConvGruWeights<T>>),
    Stacked(Vec<StackLayer<T>>),
    Bidirectional(Vec<(ConvGruWeights<T>, ConvGruWeights<T>)>),
    Dense(GruWeights<T>),
}

/// Structured view over a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub recurrent: Recurrent<T>,
    pub heads: Vec<Head<T>>,
    pub backbone: Backbone<T>,
}

impl ModelParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let shapes = cfg.backbone.level_shapes();
        let levels = cfg.used_levels();
        let k = cfg.kernel;
        let dims = |i: usize, l: usize| LayerDims {
            k1: k,
            k2: k,
            input_channels: shapes[l][0],
            hidden_channels: cfg.hidden[i],
        };
        let recurrent = match cfg.architecture {
            Architecture::GruRcn => Recurrent::Independent(
                levels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| ConvGruWeights::init(dims(i, l), rng))
                    .collect::<Result<_>>()?,
            ),
            Architecture::BidirGruRcn => Recurrent::Bidirectional(
                levels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| {
                        Ok((
                            ConvGruWeights::init(dims(i, l), rng)?,
                            ConvGruWeights::init(dims(i, l), rng)?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            ),
            Architecture::StackedGruRcn => {
                let mut layers = Vec::with_capacity(levels.len());
                for (i, &l) in levels.iter().enumerate() {
                    let cell = ConvGruWeights::init(dims(i, l), rng)?;
                    let extra = (i > 0).then(|| {
                        StackedExtra::init(
                            cfg.hidden[i - 1],
                            cfg.hidden[i],
                            k,
                            k,
                            cfg.stacked_candidate_input,
                            rng,
                        )
                    });
                    layers.push(StackLayer { cell, extra });
                }
                Recurrent::Stacked(layers)
            }
            Architecture::FcGruBaseline => {
                let top = shapes[shapes.len() - 1][0];
                Recurrent::Dense(GruWeights::init(top, cfg.fc_hidden(), rng))
            }
        };
        let heads = head_inputs(cfg)
            .into_iter()
            .map(|features| Head {
                weight: init::glorot_uniform(&[cfg.classes, features], features, cfg.classes, rng),
                bias: init::zeros(cfg.classes),
            })
            .collect();
        let backbone = Backbone::init(&cfg.backbone, rng)?;
        Ok(Self {
            recurrent,
            heads,
            backbone,
        })
    }
}

/// Feature width entering each head.
fn head_inputs(cfg: &ModelConfig) -> Vec<usize> {
    match cfg.architecture {
        Architecture::FcGruBaseline => alloc::vec![cfg.fc_hidden()],
        Architecture::BidirGruRcn => cfg.hidden.iter().map(|h| 2 * h).collect(),
        _ => cfg.hidden.clone(),
    }
}

/// Flattens a structured parameter set into `(layout, names, tensors)`.
fn flatten(p: ModelParams<Tensor>) -> (ModelParams<usize>, Vec<String>, Vec<Tensor>) {
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, t: &Tensor| -> core::result::Result<usize, ()> {
        names.push(name);
        tensors.push(t.clone());
        Ok(tensors.len() - 1)
    };
    fn cell<F: FnMut(String, &Tensor) -> core::result::Result<usize, ()>>(
        w: &ConvGruWeights<Tensor>,
        prefix: &str,
        push: &mut F,
    ) -> ConvGruWeights<usize> {
        let mut i = 0;
        w.try_map(|t| {
            let name = format!("{prefix}.{}", ConvGruWeights::<Tensor>::NAMES[i]);
            i += 1;
            push(name, t)
        })
        .expect("infallible")
    }

    let recurrent = match &p.recurrent {
        Recurrent::Independent(layers) => Recurrent::Independent(
            layers
                .iter()
                .enumerate()
                .map(|(l, w)| cell(w, &format!("rnn.{l}"), &mut push))
                .collect(),
        ),
        Recurrent::Bidirectional(layers) => Recurrent::Bidirectional(
            layers
                .iter()
                .enumerate()
                .map(|(l, (f, b))| {
                    (
                        cell(f, &format!("rnn.{l}.fwd"), &mut push),
                        cell(b, &format!("rnn.{l}.bwd"), &mut push),
                    )
                })
                .collect(),
        ),
        Recurrent::Stacked(layers) => {
            let cells: Vec<_> = layers
                .iter()
                .enumerate()
                .map(|(l, layer)| cell(&layer.cell, &format!("rnn.{l}"), &mut push))
                .collect();
            let extras: Vec<_> = layers
                .iter()
                .enumerate()
                .map(|(l, layer)| {
                    layer.extra.as_ref().map(|e| {
                        let named = e.named();
                        let mut i = 0;
                        e.try_map(|t| {
                            let name = format!("stack.{l}.{}", named[i].0);
                            i += 1;
                            push(name, t)
                        })
                        .expect("infallible")
                    })
                })
                .collect();
            Recurrent::Stacked(
                cells
                    .into_iter()
                    .zip(extras)
                    .map(|(cell, extra)| StackLayer { cell, extra })
                    .collect(),
            )
        }
        Recurrent::Dense(w) => {
            let mut i = 0;
            Recurrent::Dense(
                w.try_map(|t| {
                    let name = format!("rnn.fc.{}", GruWeights::<Tensor>::NAMES[i]);
                    i += 1;
                    push(name, t)
                })
                .expect("infallible"),
            )
        }
    };
    let heads = p
        .heads
        .iter()
        .enumerate()
        .map(|(l, h)| Head {
            weight: push(format!("head.{l}.weight"), &h.weight).expect("infallible"),
            bias: push(format!("head.{l}.bias"), &h.bias).expect("infallible"),
        })
        .collect();
    let mut stage = 0;
    let backbone = p
        .backbone
        .try_map(|t| {
            let name = if stage % 2 == 0 {
                format!("backbone.{}.kernel", stage / 2)
            } else {
                format!("backbone.{}.bias", stage / 2)
            };
            stage += 1;
            push(name, t)
        })
        .expect("infallible");
    (
        ModelParams {
            recurrent,
            heads,
            backbone,
        },
        names,
        tensors,
    )
}

fn map_layout<T: Copy>(layout: &ModelParams<usize>, vals: &[T]) -> ModelParams<T> {
    let f = |i: &usize| -> core::result::Result<T, ()> { Ok(vals[*i]) };
    let recurrent = match &layout.recurrent {
        Recurrent::Independent(v) => {
            Recurrent::Independent(v.iter().map(|w| w.try_map(f).unwrap()).collect())
        }
        Recurrent::Bidirectional(v) => Recurrent::Bidirectional(
            v.iter()
                .map(|(a, b)| (a.try_map(f).unwrap(), b.try_map(f).unwrap()))
                .collect(),
        ),
        Recurrent::Stacked(v) => Recurrent::Stacked(
            v.iter()
                .map(|l| StackLayer {
                    cell: l.cell.try_map(f).unwrap(),
                    extra: l.extra.as_ref().map(|e| e.try_map(f).unwrap()),
                })
                .collect(),
        ),
        Recurrent::Dense(w) => Recurrent::Dense(w.try_map(f).unwrap()),
    };
    ModelParams {
        recurrent,
        heads: layout
            .heads
            .iter()
            .map(|h| Head {
                weight: vals[h.weight],
                bias: vals[h.bias],
            })
            .collect(),
        backbone: layout.backbone.try_map(f).unwrap(),
    }
}

/// A classifier with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: ModelParams<usize>,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Ok(Self::from_params(config, params))
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<Tensor>) -> Self {
        let (layout, names, tensors) = flatten(params);
        Self {
            config,
            layout,
            names,
            tensors,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter names in checkpoint order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Structured copy of the parameters.
    pub fn params(&self) -> ModelParams<Tensor> {
        let idx: Vec<usize> = (0..self.tensors.len()).collect();
        let layout = map_layout(&self.layout, &idx);
        let t = &self.tensors;
        let f = |i: &usize| -> core::result::Result<Tensor, ()> { Ok(t[*i].clone()) };
        ModelParams {
            recurrent: match &layout.recurrent {
                Recurrent::Independent(v) => {
                    Recurrent::Independent(v.iter().map(|w| w.try_map(f).unwrap()).collect())
                }
                Recurrent::Bidirectional(v) => Recurrent::Bidirectional(
                    v.iter()
                        .map(|(a, b)| (a.try_map(f).unwrap(), b.try_map(f).unwrap()))
                        .collect(),
                ),
                Recurrent::Stacked(v) => Recurrent::Stacked(
                    v.iter()
                        .map(|l| StackLayer {
                            cell: l.cell.try_map(f).unwrap(),
                            extra: l.extra.as_ref().map(|e| e.try_map(f).unwrap()),
                        })
                        .collect(),
                ),
                Recurrent::Dense(w) => Recurrent::Dense(w.try_map(f).unwrap()),
            },
            heads: layout
                .heads
                .iter()
                .map(|h| Head {
                    weight: t[h.weight].clone(),
                    bias: t[h.bias].clone(),
                })
                .collect(),
            backbone: layout.backbone.try_map(f).unwrap(),
        }
    }

    /// Replaces every parameter, checking names and shapes.
    pub fn load(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameters, got {}",
                self.tensors.len(),
                named.len()
            )));
        }
        for ((name, t), (own_name, own)) in named.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != own_name || t.shape() != own.shape() {
                return Err(shape_err(
                    "load",
                    format!(
                        "{name} {:?} does not match {own_name} {:?}",
                        t.shape(),
                        own.shape()
                    ),
                ));
            }
        }
        for (own, (_, t)) in self.tensors.iter_mut().zip(named) {
            *own = t.clone();
        }
        Ok(())
    }

    /// Whether the parameter at `index` is updated by training.
    pub fn is_trainable(&self, index: usize) -> bool {
        !(self.config.freeze_backbone && self.names[index].starts_with("backbone."))
    }

    /// Total parameter element count.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers parameters on `tape`: trainable ones as differentiable
    /// leaves, frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape, differentiable: bool) -> Result<Vec<Var>> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if differentiable && self.is_trainable(i) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Class probabilities for a `T×C×H×W` clip, recorded on `tape`.
    /// Dropout is active iff `dropout_rng` is given. Frame-difference clips
    /// store `(d+1)/2`; the backbone sees `d`.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        frames: &Tensor,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let p = map_layout(&self.layout, vars);
        let cfg = &self.config;
        let signed;
        let frames = match cfg.stream {
            Stream::Rgb => frames,
            Stream::FrameDiff => {
                signed = frames.map(|v| 2.0 * v - 1.0);
                &signed
            }
        };
        let percepts = backbone::extract_percepts(tape, &p.backbone, &cfg.backbone, frames)?;
        let levels = cfg.used_levels();
        let seq = |l: usize| -> Vec<Var> { percepts.iter().map(|step| step[l]).collect() };

        let features: Vec<Var> = match &p.recurrent {
            Recurrent::Independent(layers) => {
                let mut out = Vec::with_capacity(layers.len());
                for (w, &l) in layers.iter().zip(&levels) {
                    let inputs = seq(l);
                    let h0 = cells::zero_state(tape, w, inputs[0])?;
                    let (_, last) = cells::run_layer(tape, w, &inputs, h0)?;
                    out.push(tape.global_avg_pool(last)?);
                }
                out
            }
            Recurrent::Bidirectional(layers) => {
                let mut out = Vec::with_capacity(layers.len());
                for ((f, b), &l) in layers.iter().zip(&levels) {
                    let enc = cells::bidirectional_encode(tape, f, b, &seq(l))?;
                    out.push(tape.global_avg_pool(enc)?);
                }
                out
            }
            Recurrent::Stacked(layers) => {
                let chosen: Vec<Vec<Var>> = percepts
                    .iter()
                    .map(|step| levels.iter().map(|&l| step[l]).collect())
                    .collect();
                let hiddens = cells::run_stack(tape, layers, &chosen)?;
                let mut out = Vec::with_capacity(layers.len());
                for h in hiddens {
                    out.push(tape.global_avg_pool(h[h.len() - 1])?);
                }
                out
            }
            Recurrent::Dense(w) => {
                let top = levels[0];
                let hidden = tape.value(w.u).shape()[0];
                let mut h = tape.constant(Tensor::zeros(&[hidden]))?;
                for step in &percepts {
                    let x = tape.global_avg_pool(step[top])?;
                    h = cells::gru_step(tape, w, x, h)?;
                }
                alloc::vec![h]
            }
        };

        let mut rng = dropout_rng;
        let mut probs = Vec::with_capacity(features.len());
        for (feat, head) in features.into_iter().zip(&p.heads) {
            let x = match rng.as_deref_mut() {
                Some(r) if cfg.dropout > 0.0 => {
                    let n = tape.value(feat).len();
                    let mask = dropout_mask(n, cfg.dropout, r);
                    tape.mask(feat, mask)?
                }
                _ => feat,
            };
            let logits = tape.affine(x, head.weight, head.bias)?;
            probs.push(tape.softmax(logits)?);
        }
        if probs.len() == 1 {
            Ok(probs[0])
        } else {
            tape.mean(&probs)
        }
    }

    /// Evaluation-mode class probabilities (no dropout, no gradients).
    pub fn predict(&self, frames: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let out = self.forward_on(&mut tape, &vars, frames, None)?;
        Ok(tape.value(out).clone())
    }

    /// Class probabilities with optional training-mode dropout.
    pub fn forward(&self, frames: &Tensor, training: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let out = self.forward_on(&mut tape, &vars, frames, training)?;
        Ok(tape.value(out).clone())
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 − rate)`.
pub fn dropout_mask(n: usize, rate: f64, rng: &mut dyn RngCore) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    Tensor::from_fn(&[n], |_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

/// Weighted average of two score vectors: `(w_a·a + w_b·b) / (w_a + w_b)`.
pub fn fuse_streams(a: &Tensor, b: &Tensor, weight_a: f64, weight_b: f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "fuse_streams",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if weight_a < 0.0 || weight_b < 0.0 || weight_a + weight_b <= 0.0 {
        return Err(Error::Invalid(format!(
            "stream weights ({weight_a}, {weight_b}) must be non-negative and not both zero"
        )));
    }
    let total = weight_a + weight_b;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (weight_a * x + weight_b * y) / total)
        .collect();
    Tensor::new(a.shape(), data)
}

/// Weight of the appearance stream in two-stream fusion.
pub const APPEARANCE_WEIGHT: f64 = 1.0;
/// Weight of the motion stream in two-stream fusion.
pub const MOTION_WEIGHT: f64 = 2.0;

/// Per-level summary produced by [`describe`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSummary {
    pub level: usize,
    pub input: [usize; 3],
    pub hidden: usize,
    pub kernel: usize,
    /// Recurrent weights, excluding biases.
    pub weights: usize,
    pub biases: usize,
    pub stacked_weights: usize,
    pub conv_multiplications: u128,
    pub dense_multiplications: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub architecture: Architecture,
    pub steps: usize,
    pub levels: Vec<LevelSummary>,
    pub head_parameters: usize,
    pub backbone_parameters: usize,
}

impl ModelSummary {
    pub fn recurrent_parameters(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.weights + l.biases + l.stacked_weights)
            .sum()
    }
}

/// Shapes, exact parameter counts and formula-based multiplication
/// estimates for `steps` time steps.
pub fn describe(cfg: &ModelConfig, steps: usize) -> Result<ModelSummary> {
    cfg.validate()?;
    let shapes = cfg.backbone.level_shapes();
    let levels = cfg.used_levels();
    let k = cfg.kernel;
    let directions = if cfg.architecture == Architecture::BidirGruRcn {
        2
    } else {
        1
    };
    let mut out = Vec::new();
    for (i, &l) in levels.iter().enumerate() {
        let input = shapes[l];
        let (hidden, kernel, map) = if cfg.architecture == Architecture::FcGruBaseline {
            (cfg.fc_hidden(), 1, (1, 1))
        } else {
            (cfg.hidden[i], k, (input[1], input[2]))
        };
        let d = LayerDims {
            k1: kernel,
            k2: kernel,
            input_channels: input[0],
            hidden_channels: hidden,
        };
        let stacked_weights = if cfg.architecture == Architecture::StackedGruRcn && i > 0 {
            cells::stacked_extra_count(cfg.hidden[i - 1], hidden, k, k, cfg.stacked_candidate_input)
        } else {
            0
        };
        out.push(LevelSummary {
            level: l,
            input,
            hidden,
            kernel,
            weights: directions * cells::param_count(d, false),
            biases: directions * 3 * hidden,
            stacked_weights,
            conv_multiplications: directions as u128
                * cells::conv_multiplications(d, map.0, map.1, steps),
            dense_multiplications: directions as u128
                * cells::dense_multiplications(d, map.0, map.1, steps),
        });
    }
    let head_parameters = head_inputs(cfg).iter().map(|f| (f + 1) * cfg.classes).sum();
    let mut prev = cfg.backbone.input[0];
    let mut backbone_parameters = 0;
    for &c in &cfg.backbone.widths {
        backbone_parameters += c * prev * cfg.backbone.kernel * cfg.backbone.kernel + c;
        prev = c;
    }
    Ok(ModelSummary {
        architecture: cfg.architecture,
        steps,
        levels: out,
        head_parameters,
        backbone_parameters,
    })
}

impl core::fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(
            f,
            "architecture: {} ({} steps)",
            self.architecture.name(),
            self.steps
        )?;
        for l in &self.levels {
            writeln!(
                f,
                "  level {}: input {}x{}x{}, hidden {}, kernel {}x{}",
                l.level, l.input[0], l.input[1], l.input[2], l.hidden, l.kernel, l.kernel
            )?;
            writeln!(
                f,
                "    parameters: {} weights + {} biases{}",
                l.weights,
                l.biases,
                if l.stacked_weights > 0 {
                    format!(" + {} bottom-up", l.stacked_weights)
                } else {
                    String::new()
                }
            )?;
            writeln!(
                f,
                "    multiplications (estimate): convolutional {}, fully-connected {}",
                l.conv_multiplications, l.dense_multiplications
            )?;
        }
        writeln!(f, "  heads: {} parameters", self.head_parameters)?;
        writeln!(f, "  backbone: {} parameters", self.backbone_parameters)?;
        write!(
            f,
            "  recurrent total: {}",
            self.recurrent_parameters().to_string()
        )
    }
}
