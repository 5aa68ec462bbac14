use grurcn_core::cells::{self, ConvGruWeights, GruWeights, LayerDims, StackLayer, StackedExtra};
use grurcn_core::kernels::{Pair, PoolMode};
use grurcn_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn random_conv(d: LayerDims, rng: &mut ChaCha8Rng) -> ConvGruWeights<Tensor> {
    let LayerDims {
        k1,
        k2,
        input_channels: ox,
        hidden_channels: oh,
    } = d;
    ConvGruWeights {
        w: uniform(&[oh, ox, k1, k2], 0.8, rng),
        w_z: uniform(&[oh, ox, k1, k2], 0.8, rng),
        w_r: uniform(&[oh, ox, k1, k2], 0.8, rng),
        u: uniform(&[oh, oh, k1, k2], 0.8, rng),
        u_z: uniform(&[oh, oh, k1, k2], 0.8, rng),
        u_r: uniform(&[oh, oh, k1, k2], 0.8, rng),
        b: uniform(&[oh], 0.5, rng),
        b_z: uniform(&[oh], 0.5, rng),
        b_r: uniform(&[oh], 0.5, rng),
    }
}

fn random_dims(rng: &mut ChaCha8Rng) -> LayerDims {
    LayerDims {
        k1: [1, 3, 5][rng.gen_range(0..3)],
        k2: [1, 3, 5][rng.gen_range(0..3)],
        input_channels: rng.gen_range(1..5),
        hidden_channels: rng.gen_range(1..5),
    }
}

fn c(t: &mut Tape, v: Tensor) -> Var {
    t.constant(v).unwrap()
}

fn as_matrix(k: &Tensor) -> Tensor {
    let s = k.shape();
    k.clone().reshape(&[s[0], s[1]]).unwrap()
}

#[test]
fn one_by_one_convgru_equals_gru_on_100_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let d = LayerDims {
            k1: 1,
            k2: 1,
            input_channels: rng.gen_range(1..6),
            hidden_channels: rng.gen_range(1..6),
        };
        let p = random_conv(d, &mut rng);
        let x = uniform(&[d.input_channels], 2.0, &mut rng);
        let h = uniform(&[d.hidden_channels], 1.0, &mut rng);

        let mut t = Tape::new();
        let dense = GruWeights {
            w: as_matrix(&p.w),
            w_z: as_matrix(&p.w_z),
            w_r: as_matrix(&p.w_r),
            u: as_matrix(&p.u),
            u_z: as_matrix(&p.u_z),
            u_r: as_matrix(&p.u_r),
            b: p.b.clone(),
            b_z: p.b_z.clone(),
            b_r: p.b_r.clone(),
        }
        .bind(&mut t)
        .unwrap();
        let (xv, hv) = (c(&mut t, x.clone()), c(&mut t, h.clone()));
        let expect = cells::gru_step(&mut t, &dense, xv, hv).unwrap();

        let conv = p.bind(&mut t).unwrap();
        let xm = c(&mut t, x.reshape(&[d.input_channels, 1, 1]).unwrap());
        let hm = c(&mut t, h.reshape(&[d.hidden_channels, 1, 1]).unwrap());
        let got = cells::convgru_step(&mut t, &conv, xm, hm).unwrap();
        let got = t.value(got).clone().reshape(&[d.hidden_channels]).unwrap();
        assert!(got.max_abs_diff(t.value(expect)) <= 1e-12);
    }
}

#[test]
fn stacked_with_zero_extras_or_zero_below_equals_convgru() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..30 {
        let d = random_dims(&mut rng);
        let below = rng.gen_range(1..4);
        let candidate = i % 2 == 0;
        let (n1, n2) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let p = random_conv(d, &mut rng);
        let x = uniform(&[d.input_channels, n1, n2], 2.0, &mut rng);
        let hb = uniform(&[below, n1, n2], 1.0, &mut rng);
        let hp = uniform(&[d.hidden_channels, n1, n2], 1.0, &mut rng);

        let mut t = Tape::new();
        let pv = p.bind(&mut t).unwrap();
        let (xv, hbv, hpv) = (c(&mut t, x), c(&mut t, hb), c(&mut t, hp));
        let plain = cells::convgru_step(&mut t, &pv, xv, hpv).unwrap();

        let zero = StackedExtra::zeros(below, d.hidden_channels, d.k1, d.k2, candidate)
            .bind(&mut t)
            .unwrap();
        let a = cells::stacked_convgru_step(&mut t, &pv, &zero, xv, hbv, hpv).unwrap();
        assert!(t.value(a).max_abs_diff(t.value(plain)) <= 1e-15);

        let random = StackedExtra::init(below, d.hidden_channels, d.k1, d.k2, candidate, &mut rng)
            .bind(&mut t)
            .unwrap();
        let zero_below = c(&mut t, Tensor::zeros(&[below, n1, n2]));
        let b = cells::stacked_convgru_step(&mut t, &pv, &random, xv, zero_below, hpv).unwrap();
        assert!(t.value(b).max_abs_diff(t.value(plain)) <= 1e-15);
    }
}

#[test]
fn stacked_scalar_gate_shift() {
    let sigmoid = |a: f64| 1.0 / (1.0 + (-a).exp());
    let d = LayerDims {
        k1: 1,
        k2: 1,
        input_channels: 1,
        hidden_channels: 1,
    };
    let mut p = ConvGruWeights::zeros(d);
    p.w = Tensor::full(&[1, 1, 1, 1], 1.0);
    p.u = Tensor::full(&[1, 1, 1, 1], 1.0);
    p.b_z = Tensor::vector(&[0.3]);
    let extra = StackedExtra {
        w_zl: Tensor::full(&[1, 1, 1, 1], 1.0),
        w_rl: Tensor::zeros(&[1, 1, 1, 1]),
        w_hl: None,
    };
    let (x, h) = (0.2, 0.8);
    let mut t = Tape::new();
    let pv = p.bind(&mut t).unwrap();
    let ev = extra.bind(&mut t).unwrap();
    let xv = c(&mut t, Tensor::full(&[1, 1, 1], x));
    let hb = c(&mut t, Tensor::full(&[1, 1, 1], 1.0));
    let hp = c(&mut t, Tensor::full(&[1, 1, 1], h));
    let out = cells::stacked_convgru_step(&mut t, &pv, &ev, xv, hb, hp).unwrap();

    let z = sigmoid(0.3 + 1.0);
    let r = 0.5;
    let cand = (x + r * h).tanh();
    let expect = (1.0 - z) * h + z * cand;
    assert!((t.value(out).data()[0] - expect).abs() < 1e-15);
}

#[test]
fn centre_only_kernels_make_each_location_a_scalar_gru() {
    let d = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 1,
        hidden_channels: 1,
    };
    let mut p = ConvGruWeights::zeros(d);
    let mut centre = Tensor::zeros(&[1, 1, 3, 3]);
    centre.data_mut()[4] = 1.0;
    p.w = centre.clone();
    p.u = centre;
    let mut t = Tape::new();
    let pv = p.bind(&mut t).unwrap();
    let x = c(&mut t, Tensor::zeros(&[1, 4, 5]));
    let h = c(&mut t, Tensor::full(&[1, 4, 5], 0.8));
    let out = cells::convgru_step(&mut t, &pv, x, h).unwrap();
    let expect = 0.5 * 0.8 + 0.5 * (0.4f64).tanh();
    for v in t.value(out).data() {
        assert!((v - expect).abs() < 1e-12);
    }
    assert!((expect - 0.589974).abs() < 1e-6);
}

fn saturated(bz: f64, seed: u64) -> (Tensor, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 2,
        hidden_channels: 3,
    };
    let mut p = random_conv(d, &mut rng);
    p.w_z = Tensor::zeros(p.w_z.shape());
    p.u_z = Tensor::zeros(p.u_z.shape());
    p.b_z = Tensor::full(&[3], bz);
    let x = uniform(&[2, 4, 4], 1.0, &mut rng);
    let h = uniform(&[3, 4, 4], 1.0, &mut rng);
    let mut t = Tape::new();
    let pv = p.bind(&mut t).unwrap();
    let (xv, hv) = (c(&mut t, x), c(&mut t, h.clone()));
    let out = cells::convgru_step(&mut t, &pv, xv, hv).unwrap();

    // candidate computed directly
    let mut q = p.clone();
    q.b_z = Tensor::full(&[3], 1e3);
    let mut t2 = Tape::new();
    let qv = q.bind(&mut t2).unwrap();
    let x2 = c(&mut t2, t.value(xv).clone());
    let h2 = c(&mut t2, h.clone());
    let cand = cells::convgru_step(&mut t2, &qv, x2, h2).unwrap();
    (t.value(out).clone(), h, t2.value(cand).clone())
}

#[test]
fn update_gate_saturation() {
    for seed in 0..5 {
        let (out, h, _) = saturated(-40.0, seed);
        assert!(out.max_abs_diff(&h) < 1e-6);
        let (out, _, cand) = saturated(40.0, seed);
        assert!(out.max_abs_diff(&cand) < 1e-6);
    }
}

#[test]
fn update_gate_saturation_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = GruWeights::init(3, 4, &mut rng);
    p.w_z = Tensor::zeros(&[4, 3]);
    p.u_z = Tensor::zeros(&[4, 4]);
    p.b_z = Tensor::full(&[4], -40.0);
    let mut t = Tape::new();
    let pv = p.bind(&mut t).unwrap();
    let x = c(&mut t, uniform(&[3], 1.0, &mut rng));
    let h = c(&mut t, uniform(&[4], 1.0, &mut rng));
    let out = cells::gru_step(&mut t, &pv, x, h).unwrap();
    assert!(t.value(out).max_abs_diff(t.value(h)) < 1e-6);
}

#[test]
fn closed_reset_gate_ignores_previous_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 2,
        hidden_channels: 3,
    };
    let mut p = random_conv(d, &mut rng);
    p.w_r = Tensor::zeros(p.w_r.shape());
    p.u_r = Tensor::zeros(p.u_r.shape());
    p.b_r = Tensor::full(&[3], -60.0);
    // saturate z to 1 so the output is the candidate itself
    p.w_z = Tensor::zeros(p.w_z.shape());
    p.u_z = Tensor::zeros(p.u_z.shape());
    p.b_z = Tensor::full(&[3], 60.0);
    let x = uniform(&[2, 5, 5], 1.0, &mut rng);
    let h1 = uniform(&[3, 5, 5], 1.0, &mut rng);
    let h2 = uniform(&[3, 5, 5], 1.0, &mut rng);
    let run = |h: &Tensor| {
        let mut t = Tape::new();
        let pv = p.bind(&mut t).unwrap();
        let (xv, hv) = (c(&mut t, x.clone()), c(&mut t, h.clone()));
        let out = cells::convgru_step(&mut t, &pv, xv, hv).unwrap();
        t.value(out).clone()
    };
    assert!(run(&h1).max_abs_diff(&run(&h2)) < 1e-9);
}

#[test]
fn translation_equivariance_on_the_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 2,
        hidden_channels: 2,
    };
    let p = random_conv(d, &mut rng);
    let (n1, n2) = (7, 8);
    let x = uniform(&[2, n1, n2], 1.0, &mut rng);
    let shifted = Tensor::from_fn(&[2, n1, n2], |i| {
        let (ch, y, xx) = (i / (n1 * n2), (i / n2) % n1, i % n2);
        if xx == 0 {
            0.0
        } else {
            x.data()[(ch * n1 + y) * n2 + xx - 1]
        }
    });
    let run = |input: &Tensor| {
        let mut t = Tape::new();
        let pv = p.bind(&mut t).unwrap();
        let xv = c(&mut t, input.clone());
        let h0 = cells::zero_state(&mut t, &pv, xv).unwrap();
        let out = cells::convgru_step(&mut t, &pv, xv, h0).unwrap();
        t.value(out).clone()
    };
    let (a, b) = (run(&x), run(&shifted));
    let mut worst: f64 = 0.0;
    for ch in 0..2 {
        for y in 1..n1 - 1 {
            for xx in 2..n2 - 1 {
                let bi = (ch * n1 + y) * n2 + xx;
                worst = worst.max((b.data()[bi] - a.data()[bi - 1]).abs());
            }
        }
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn hidden_keeps_input_size_at_every_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let d = random_dims(&mut rng);
        let (n1, n2, steps) = (
            rng.gen_range(1..7),
            rng.gen_range(1..7),
            rng.gen_range(1..5),
        );
        let p = random_conv(d, &mut rng);
        let mut t = Tape::new();
        let pv = p.bind(&mut t).unwrap();
        let xs: Vec<Var> = (0..steps)
            .map(|_| c(&mut t, uniform(&[d.input_channels, n1, n2], 1.0, &mut rng)))
            .collect();
        let h0 = cells::zero_state(&mut t, &pv, xs[0]).unwrap();
        let (all, last) = cells::run_layer(&mut t, &pv, &xs, h0).unwrap();
        assert_eq!(all.len(), steps);
        assert_eq!(all[steps - 1], last);
        for h in all {
            assert_eq!(t.value(h).shape(), &[d.hidden_channels, n1, n2]);
        }
    }
}

#[test]
fn zero_everything_gives_zero_hiddens() {
    let d = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 2,
        hidden_channels: 3,
    };
    let mut t = Tape::new();
    let pv = ConvGruWeights::zeros(d).bind(&mut t).unwrap();
    let xs: Vec<Var> = (0..3)
        .map(|_| c(&mut t, Tensor::zeros(&[2, 4, 4])))
        .collect();
    let h0 = cells::zero_state(&mut t, &pv, xs[0]).unwrap();
    let (all, _) = cells::run_layer(&mut t, &pv, &xs, h0).unwrap();
    assert!(all
        .iter()
        .all(|&h| t.value(h).data().iter().all(|&v| v == 0.0)));
}

#[test]
fn random_nonzero_inputs_with_zero_params_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let d = LayerDims {
        k1: 3,
        k2: 1,
        input_channels: 2,
        hidden_channels: 3,
    };
    let mut t = Tape::new();
    let pv = ConvGruWeights::zeros(d).bind(&mut t).unwrap();
    let x = c(&mut t, uniform(&[2, 4, 4], 1.0, &mut rng));
    let h = c(&mut t, Tensor::zeros(&[3, 4, 4]));
    let out = cells::convgru_step(&mut t, &pv, x, h).unwrap();
    assert!(t.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn param_count_matches_allocation() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..12 {
        let d = random_dims(&mut rng);
        let p = ConvGruWeights::init(d, &mut rng).unwrap();
        let all: usize = p.fields().iter().map(|t| t.len()).sum();
        let kernels: usize = p.fields()[..6].iter().map(|t| t.len()).sum();
        assert_eq!(cells::param_count(d, true), all);
        assert_eq!(cells::param_count(d, false), kernels);
        assert_eq!(p.element_count(true), all);
        assert_eq!(p.element_count(false), kernels);
        for candidate in [false, true] {
            let below = rng.gen_range(1..5);
            let e = StackedExtra::init(below, d.hidden_channels, d.k1, d.k2, candidate, &mut rng);
            assert_eq!(
                cells::stacked_extra_count(below, d.hidden_channels, d.k1, d.k2, candidate),
                e.element_count()
            );
        }
    }
}

#[test]
fn param_count_examples() {
    let big = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 64,
        hidden_channels: 64,
    };
    assert_eq!(cells::param_count(big, false), 221_184);
    let kernels: usize = ConvGruWeights::zeros(big).fields()[..6]
        .iter()
        .map(|t| t.len())
        .sum();
    assert_eq!(kernels, 221_184);
    let one = LayerDims {
        k1: 1,
        k2: 1,
        input_channels: 1,
        hidden_channels: 1,
    };
    assert_eq!(cells::param_count(one, false), 6);
    assert_eq!(cells::param_count(one, true), 9);
}

#[test]
fn run_layer_is_an_unrolled_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let d = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 2,
        hidden_channels: 3,
    };
    let p = random_conv(d, &mut rng);
    let xs: Vec<Tensor> = (0..4).map(|_| uniform(&[2, 5, 4], 1.0, &mut rng)).collect();
    let h0 = uniform(&[3, 5, 4], 0.5, &mut rng);

    let mut t = Tape::new();
    let pv = p.bind(&mut t).unwrap();
    let vs: Vec<Var> = xs.iter().map(|x| c(&mut t, x.clone())).collect();
    let hv = c(&mut t, h0.clone());
    let (all, _) = cells::run_layer(&mut t, &pv, &vs, hv).unwrap();

    let mut u = Tape::new();
    let pu = p.bind(&mut u).unwrap();
    let mut h = c(&mut u, h0);
    for (step, x) in xs.iter().enumerate() {
        let xv = c(&mut u, x.clone());
        h = cells::convgru_step(&mut u, &pu, xv, h).unwrap();
        assert_eq!(u.value(h).data(), t.value(all[step]).data());
    }

    let mut single = Tape::new();
    let ps = p.bind(&mut single).unwrap();
    let x0 = c(&mut single, xs[0].clone());
    let h0 = c(&mut single, t.value(hv).clone());
    let (_, last) = cells::run_layer(&mut single, &ps, &[x0], h0).unwrap();
    let direct = cells::convgru_step(&mut single, &ps, x0, h0).unwrap();
    assert_eq!(single.value(last).data(), single.value(direct).data());
}

#[test]
fn empty_sequences_are_errors() {
    let d = LayerDims {
        k1: 1,
        k2: 1,
        input_channels: 1,
        hidden_channels: 1,
    };
    let mut t = Tape::new();
    let p = ConvGruWeights::zeros(d).bind(&mut t).unwrap();
    let h0 = c(&mut t, Tensor::zeros(&[1, 1, 1]));
    assert!(cells::run_layer(&mut t, &p, &[], h0).is_err());
    assert!(cells::bidirectional_encode(&mut t, &p, &p, &[]).is_err());
}

#[test]
fn even_kernels_and_mismatched_maps_are_rejected() {
    let mut t = Tape::new();
    let even = LayerDims {
        k1: 2,
        k2: 3,
        input_channels: 1,
        hidden_channels: 1,
    };
    let p = ConvGruWeights::zeros(even).bind(&mut t).unwrap();
    let x = c(&mut t, Tensor::zeros(&[1, 4, 4]));
    let h = c(&mut t, Tensor::zeros(&[1, 4, 4]));
    assert!(cells::convgru_step(&mut t, &p, x, h).is_err());

    let ok = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 1,
        hidden_channels: 1,
    };
    let p = ConvGruWeights::zeros(ok).bind(&mut t).unwrap();
    let small = c(&mut t, Tensor::zeros(&[1, 3, 4]));
    assert!(cells::convgru_step(&mut t, &p, x, small).is_err());
}

fn two_layer_stack(
    rng: &mut ChaCha8Rng,
    zero_extra: bool,
) -> (Vec<StackLayer<Tensor>>, Vec<Vec<Tensor>>) {
    let d0 = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 2,
        hidden_channels: 2,
    };
    let d1 = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 3,
        hidden_channels: 2,
    };
    let extra = if zero_extra {
        StackedExtra::zeros(2, 2, 3, 3, false)
    } else {
        StackedExtra::init(2, 2, 3, 3, false, rng)
    };
    let layers = vec![
        StackLayer {
            cell: random_conv(d0, rng),
            extra: None,
        },
        StackLayer {
            cell: random_conv(d1, rng),
            extra: Some(extra),
        },
    ];
    let percepts = (0..2)
        .map(|_| vec![uniform(&[2, 4, 4], 1.0, rng), uniform(&[3, 2, 2], 1.0, rng)])
        .collect();
    (layers, percepts)
}

fn bind_stack(
    t: &mut Tape,
    layers: &[StackLayer<Tensor>],
    percepts: &[Vec<Tensor>],
) -> (Vec<StackLayer<Var>>, Vec<Vec<Var>>) {
    let lv = layers
        .iter()
        .map(|l| StackLayer {
            cell: l.cell.bind(t).unwrap(),
            extra: l.extra.as_ref().map(|e| e.bind(t).unwrap()),
        })
        .collect();
    let pv = percepts
        .iter()
        .map(|s| s.iter().map(|x| c(t, x.clone())).collect())
        .collect();
    (lv, pv)
}

#[test]
fn run_stack_follows_the_hand_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let (layers, percepts) = two_layer_stack(&mut rng, false);
    let mut t = Tape::new();
    let (lv, pv) = bind_stack(&mut t, &layers, &percepts);
    let got = cells::run_stack(&mut t, &lv, &pv).unwrap();

    let mut u = Tape::new();
    let (lu, pu) = bind_stack(&mut u, &layers, &percepts);
    let mut h0 = c(&mut u, Tensor::zeros(&[2, 4, 4]));
    let mut h1 = c(&mut u, Tensor::zeros(&[2, 2, 2]));
    for step in 0..2 {
        h0 = cells::convgru_step(&mut u, &lu[0].cell, pu[step][0], h0).unwrap();
        let pooled = u
            .pool2d(h0, PoolMode::Max, Pair::square(2), Pair::square(2))
            .unwrap();
        h1 = cells::stacked_convgru_step(
            &mut u,
            &lu[1].cell,
            lu[1].extra.as_ref().unwrap(),
            pu[step][1],
            pooled,
            h1,
        )
        .unwrap();
        assert_eq!(u.value(h0).data(), t.value(got[0][step]).data());
        assert_eq!(u.value(h1).data(), t.value(got[1][step]).data());
    }
}

#[test]
fn run_stack_with_zero_extras_is_independent_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (layers, percepts) = two_layer_stack(&mut rng, true);
    let mut t = Tape::new();
    let (lv, pv) = bind_stack(&mut t, &layers, &percepts);
    let got = cells::run_stack(&mut t, &lv, &pv).unwrap();
    for l in 0..2 {
        let xs: Vec<Var> = pv.iter().map(|s| s[l]).collect();
        let h0 = cells::zero_state(&mut t, &lv[l].cell, xs[0]).unwrap();
        let (all, _) = cells::run_layer(&mut t, &lv[l].cell, &xs, h0).unwrap();
        for step in 0..2 {
            assert!(t.value(all[step]).max_abs_diff(t.value(got[l][step])) <= 1e-15);
        }
    }

    let single = &layers[..1];
    let one: Vec<Vec<Tensor>> = percepts.iter().map(|s| vec![s[0].clone()]).collect();
    let (lv, pv) = bind_stack(&mut t, single, &one);
    let got = cells::run_stack(&mut t, &lv, &pv).unwrap();
    let xs: Vec<Var> = pv.iter().map(|s| s[0]).collect();
    let h0 = cells::zero_state(&mut t, &lv[0].cell, xs[0]).unwrap();
    let (all, _) = cells::run_layer(&mut t, &lv[0].cell, &xs, h0).unwrap();
    assert_eq!(t.value(all[1]).data(), t.value(got[0][1]).data());
}

#[test]
fn run_stack_rejects_unbridgeable_resolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let (layers, mut percepts) = two_layer_stack(&mut rng, false);
    for s in &mut percepts {
        s[1] = uniform(&[3, 3, 3], 1.0, &mut rng);
    }
    let mut t = Tape::new();
    let (lv, pv) = bind_stack(&mut t, &layers, &percepts);
    assert!(cells::run_stack(&mut t, &lv, &pv).is_err());
}

#[test]
fn bidirectional_halves() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..5 {
        let d = random_dims(&mut rng);
        let p = random_conv(d, &mut rng);
        let q = random_conv(d, &mut rng);
        let a = uniform(&[d.input_channels, 3, 4], 1.0, &mut rng);
        let b = uniform(&[d.input_channels, 3, 4], 1.0, &mut rng);
        let oh = d.hidden_channels;
        let half = oh * 12;

        let mut t = Tape::new();
        let pv = p.bind(&mut t).unwrap();
        let qv = q.bind(&mut t).unwrap();
        let (av, bv) = (c(&mut t, a), c(&mut t, b));

        let palindrome = cells::bidirectional_encode(&mut t, &pv, &pv, &[av, bv, av]).unwrap();
        let out = t.value(palindrome);
        assert_eq!(out.shape(), &[2 * oh, 3, 4]);
        let (f, r) = out.data().split_at(half);
        assert!(f.iter().zip(r).all(|(x, y)| (x - y).abs() <= 1e-12));

        let single = cells::bidirectional_encode(&mut t, &pv, &pv, &[av]).unwrap();
        let (f, r) = t.value(single).data().split_at(half);
        assert_eq!(f, r);

        let mixed = cells::bidirectional_encode(&mut t, &pv, &qv, &[av, bv]).unwrap();
        assert_eq!(t.value(mixed).shape()[0], 2 * oh);
    }
}

#[test]
fn run_layer_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let d = LayerDims {
        k1: 3,
        k2: 3,
        input_channels: 2,
        hidden_channels: 3,
    };
    let p = random_conv(d, &mut rng);
    let mut params: Vec<Tensor> = p.fields().iter().map(|t| (*t).clone()).collect();
    for _ in 0..3 {
        params.push(uniform(&[2, 4, 4], 1.0, &mut rng));
    }
    let r = uniform(&[3, 4, 4], 1.0, &mut rng);
    let names: Vec<String> = (0..params.len()).map(|i| format!("p{i}")).collect();
    let loss = |t: &mut Tape, v: &[Var]| {
        let cell = ConvGruWeights::from_fields(v[..9].try_into().unwrap());
        let h0 = cells::zero_state(t, &cell, v[9])?;
        let (_, last) = cells::run_layer(t, &cell, &v[9..12], h0)?;
        let rv = t.constant(r.clone())?;
        let prod = t.hadamard(last, rv)?;
        t.sum(prod)
    };
    let report = grurcn_core::train::grad_check(&names, &params, &loss, 1e-5, None).unwrap();
    assert!(report.passed(), "{report:?}");
}
