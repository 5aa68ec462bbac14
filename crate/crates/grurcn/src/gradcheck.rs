//! Finite-difference checks of the recurrent cells and the full model on
//! random small configurations.

use grurcn_core::backbone::BackboneConfig;
use grurcn_core::cells::{self, ConvGruWeights, GruWeights, LayerDims, StackedExtra};
use grurcn_core::model::{Architecture, Model, ModelConfig};
use grurcn_core::tape::{OpKind, Tape, Var};
use grurcn_core::train::{self, GradCheckReport};
use grurcn_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    GruStep,
    ConvGruStep,
    StackedConvGruStep,
    RunLayer,
    Model,
}

impl Target {
    pub const ALL: [Target; 5] = [
        Target::GruStep,
        Target::ConvGruStep,
        Target::StackedConvGruStep,
        Target::RunLayer,
        Target::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::GruStep => "gru_step",
            Target::ConvGruStep => "convgru_step",
            Target::StackedConvGruStep => "stacked_convgru_step",
            Target::RunLayer => "run_layer",
            Target::Model => "gru_rcn_forward_nll",
        }
    }
}

fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// `sum(h ⊙ R)` for a fixed random `R`, so every output element matters
/// with a different weight.
fn project(tape: &mut Tape, h: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = tape.value(h).shape().to_vec();
    let r = tape.constant(uniform(&shape, 1.0, &mut rng))?;
    let p = tape.hadamard(h, r)?;
    tape.sum(p)
}

fn conv_weights(d: LayerDims, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (k1, k2, ox, oh) = (d.k1, d.k2, d.input_channels, d.hidden_channels);
    let mut v = Vec::with_capacity(9);
    for _ in 0..3 {
        v.push(uniform(&[oh, ox, k1, k2], 0.8, rng));
    }
    for _ in 0..3 {
        v.push(uniform(&[oh, oh, k1, k2], 0.8, rng));
    }
    for _ in 0..3 {
        v.push(uniform(&[oh], 0.5, rng));
    }
    v
}

fn conv_bind(vars: &[Var]) -> ConvGruWeights<Var> {
    ConvGruWeights::from_fields(vars[..9].try_into().expect("nine weights"))
}

fn names(prefix: &[&str], extra: &[&str]) -> Vec<String> {
    prefix.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn odd(rng: &mut ChaCha8Rng) -> usize {
    [1, 3][rng.gen_range(0..2)]
}

/// Gradient check of `target` on the random configuration drawn from
/// `seed`. `fault` corrupts one backward rule.
pub fn check(
    target: Target,
    seed: u64,
    tolerance: f64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj_seed = seed ^ 0x5eed;
    let nine = ConvGruWeights::<Tensor>::NAMES;
    match target {
        Target::GruStep => {
            let (ox, oh) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let mut params = vec![
                uniform(&[oh, ox], 0.8, &mut rng),
                uniform(&[oh, ox], 0.8, &mut rng),
                uniform(&[oh, ox], 0.8, &mut rng),
                uniform(&[oh, oh], 0.8, &mut rng),
                uniform(&[oh, oh], 0.8, &mut rng),
                uniform(&[oh, oh], 0.8, &mut rng),
                uniform(&[oh], 0.5, &mut rng),
                uniform(&[oh], 0.5, &mut rng),
                uniform(&[oh], 0.5, &mut rng),
            ];
            params.push(uniform(&[ox], 2.0, &mut rng));
            params.push(uniform(&[oh], 1.0, &mut rng));
            let loss = move |tape: &mut Tape, v: &[Var]| -> Result<Var> {
                let w = GruWeights::from_fields(v[..9].try_into().expect("nine weights"));
                let h = cells::gru_step(tape, &w, v[9], v[10])?;
                project(tape, h, proj_seed)
            };
            train::grad_check(
                &names(&nine, &["x", "h_prev"]),
                &params,
                &loss,
                tolerance,
                fault,
            )
        }
        Target::ConvGruStep | Target::RunLayer => {
            let d = LayerDims {
                k1: odd(&mut rng),
                k2: odd(&mut rng),
                input_channels: rng.gen_range(1..4),
                hidden_channels: rng.gen_range(1..4),
            };
            let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
            let steps = if target == Target::RunLayer { 3 } else { 1 };
            let mut params = conv_weights(d, &mut rng);
            for _ in 0..steps {
                params.push(uniform(&[d.input_channels, h, w], 2.0, &mut rng));
            }
            params.push(uniform(&[d.hidden_channels, h, w], 1.0, &mut rng));
            let mut labels = names(&nine, &[]);
            labels.extend((0..steps).map(|t| format!("x{t}")));
            labels.push("h0".into());
            let loss = move |tape: &mut Tape, v: &[Var]| -> Result<Var> {
                let p = conv_bind(v);
                let xs = &v[9..9 + steps];
                let h0 = v[9 + steps];
                let out = if steps == 1 {
                    cells::convgru_step(tape, &p, xs[0], h0)?
                } else {
                    let (all, _) = cells::run_layer(tape, &p, xs, h0)?;
                    let mut acc = project(tape, all[0], proj_seed)?;
                    for (t, &hs) in all.iter().enumerate().skip(1) {
                        let term = project(tape, hs, proj_seed + t as u64)?;
                        acc = tape.add(acc, term)?;
                    }
                    return Ok(acc);
                };
                project(tape, out, proj_seed)
            };
            train::grad_check(&labels, &params, &loss, tolerance, fault)
        }
        Target::StackedConvGruStep => {
            let d = LayerDims {
                k1: odd(&mut rng),
                k2: odd(&mut rng),
                input_channels: rng.gen_range(1..4),
                hidden_channels: rng.gen_range(1..4),
            };
            let below = rng.gen_range(1..4);
            let candidate = rng.gen::<bool>();
            let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
            let mut params = conv_weights(d, &mut rng);
            let mut labels = names(&nine, &["W_zl", "W_rl"]);
            let count = if candidate { 3 } else { 2 };
            for _ in 0..count {
                params.push(uniform(
                    &[d.hidden_channels, below, d.k1, d.k2],
                    0.8,
                    &mut rng,
                ));
            }
            if candidate {
                labels.push("W_hl".into());
            }
            params.push(uniform(&[d.input_channels, h, w], 2.0, &mut rng));
            params.push(uniform(&[below, h, w], 1.0, &mut rng));
            params.push(uniform(&[d.hidden_channels, h, w], 1.0, &mut rng));
            labels.extend(["x", "h_below", "h_prev"].map(String::from));
            let loss = move |tape: &mut Tape, v: &[Var]| -> Result<Var> {
                let p = conv_bind(v);
                let extra = StackedExtra {
                    w_zl: v[9],
                    w_rl: v[10],
                    w_hl: candidate.then(|| v[11]),
                };
                let i = 9 + count;
                let out = cells::stacked_convgru_step(tape, &p, &extra, v[i], v[i + 1], v[i + 2])?;
                project(tape, out, proj_seed)
            };
            train::grad_check(&labels, &params, &loss, tolerance, fault)
        }
        Target::Model => {
            let cfg = ModelConfig {
                architecture: Architecture::GruRcn,
                backbone: BackboneConfig {
                    input: [1, 8, 8],
                    widths: vec![rng.gen_range(1..4), rng.gen_range(1..4)],
                    pool_factors: vec![2, 2],
                    kernel: 3,
                },
                levels: Vec::new(),
                hidden: vec![rng.gen_range(1..4), rng.gen_range(1..4)],
                kernel: odd(&mut rng),
                dropout: 0.0,
                classes: 2,
                ..ModelConfig::default()
            };
            let mut model = Model::new(cfg, &mut rng)?;
            // zero backbone biases put dead receptive fields exactly on the ReLU kink
            let names = model.names().to_vec();
            for (n, t) in names.iter().zip(model.tensors_mut()) {
                let shape = t.shape().to_vec();
                *t = if shape.len() > 1 {
                    let fan: usize = shape[1..].iter().product();
                    uniform(&shape, 2.5 / (fan as f64).sqrt(), &mut rng)
                } else {
                    uniform(&shape, 0.1, &mut rng)
                };
                if n.starts_with("backbone.") && n.ends_with("bias") {
                    *t = t.map(|v| v.abs() + 0.1);
                }
            }
            let clip = Tensor::from_fn(&[6, 1, 8, 8], |_| rng.gen::<f64>());
            let label = rng.gen_range(0..2);
            let loss = |tape: &mut Tape, v: &[Var]| -> Result<Var> {
                let probs = model.forward_on(tape, v, &clip, None)?;
                train::nll_on_tape(tape, probs, label)
            };
            train::grad_check(model.names(), model.tensors(), &loss, tolerance, fault)
        }
    }
}
