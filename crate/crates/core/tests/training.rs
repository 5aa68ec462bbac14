use grurcn_core::backbone::BackboneConfig;
use grurcn_core::data::{self, CropSpec, Pattern, Protocol, SplitSizes, SynthSpec, VideoClip};
use grurcn_core::model::{Architecture, Model, ModelConfig};
use grurcn_core::train::{self, AdamConfig, NoClock, TrainConfig};
use grurcn_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Up versus down at two pixels per frame on a small canvas.
fn toy_spec() -> SynthSpec {
    SynthSpec {
        canvas: 20,
        frames: 8,
        patterns: vec![Pattern::Up, Pattern::Down],
        speeds: vec![2],
        sprite_min: 4,
        sprite_max: 5,
        ..SynthSpec::default()
    }
}

fn toy_model(arch: Architecture, rng: &mut ChaCha8Rng) -> Model {
    let cfg = ModelConfig {
        architecture: arch,
        backbone: BackboneConfig {
            input: [1, 16, 16],
            widths: vec![4],
            pool_factors: vec![2],
            kernel: 3,
        },
        hidden: vec![4],
        classes: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    Model::new(cfg, rng).unwrap()
}

fn toy_train_config(seed: u64) -> TrainConfig {
    let crop = CropSpec {
        ladder: vec![16],
        steps: 6,
        output: 16,
    };
    TrainConfig {
        max_epochs: 50,
        batch_size: 4,
        patience: 5,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        validation: Protocol::single_view(6, 16, 16),
        crop,
        seed,
    }
}

fn toy_data(seed: u64) -> data::Dataset {
    data::generate_dataset(
        &toy_spec(),
        SplitSizes {
            train: 64,
            val: 40,
            test: 2,
        },
        seed,
    )
    .unwrap()
}

/// Block-matching motion energy: which of a two-pixel upward or downward
/// shift better explains each frame pair.
fn motion_energy(clip: &VideoClip) -> usize {
    let (t, _, h, w) = clip.dims();
    let d = clip.frames.data();
    let px = |f: usize, y: usize, x: usize| d[(f * h + y) * w + x];
    let (mut up, mut down) = (0.0, 0.0);
    for f in 0..t - 1 {
        for y in 2..h - 2 {
            for x in 0..w {
                let now = px(f + 1, y, x);
                up += (now - px(f, y + 2, x)).powi(2);
                down += (now - px(f, y - 2, x)).powi(2);
            }
        }
    }
    usize::from(down < up)
}

#[test]
fn toy_task_is_separable_by_motion_energy() {
    let d = toy_data(1);
    for clip in d.train.clips.iter().chain(&d.val.clips) {
        assert_eq!(motion_energy(clip), clip.label);
    }
}

#[test]
fn small_gru_rcn_learns_the_toy_task() {
    let d = toy_data(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = toy_model(Architecture::GruRcn, &mut rng);
    let log = train::train(
        &mut model,
        &toy_train_config(1),
        &d.train.clips,
        &d.val.clips,
        &NoClock,
    )
    .unwrap();
    let best = log.epochs.iter().map(|r| r.val_acc).fold(0.0, f64::max);
    assert!(best >= 0.95, "{:?}", log.epochs);
    assert!(log.epochs.len() <= 50);
}

#[test]
fn patience_zero_runs_one_epoch() {
    let d = toy_data(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = toy_model(Architecture::GruRcn, &mut rng);
    let cfg = TrainConfig {
        patience: 0,
        ..toy_train_config(2)
    };
    let log = train::train(&mut model, &cfg, &d.train.clips, &d.val.clips, &NoClock).unwrap();
    assert_eq!(log.epochs.len(), 1);
    assert_eq!(log.best_epoch, Some(1));
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let d = toy_data(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = toy_model(Architecture::GruRcn, &mut rng);
    let before = model.clone();
    let cfg = TrainConfig {
        max_epochs: 0,
        ..toy_train_config(2)
    };
    let log = train::train(&mut model, &cfg, &d.train.clips, &d.val.clips, &NoClock).unwrap();
    assert!(log.epochs.is_empty() && log.best_epoch.is_none());
    assert_eq!(model, before);
}

#[test]
fn training_is_bit_reproducible() {
    let d = toy_data(3);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = toy_model(Architecture::BidirGruRcn, &mut rng);
        let cfg = TrainConfig {
            max_epochs: 3,
            ..toy_train_config(3)
        };
        let log = train::train(&mut model, &cfg, &d.train.clips, &d.val.clips, &NoClock).unwrap();
        (log, model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    for (x, y) in ma.tensors().iter().zip(mb.tensors()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
    }
}

#[test]
fn kept_parameters_are_the_best_validated_ones() {
    let d = toy_data(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = toy_model(Architecture::GruRcn, &mut rng);
    let cfg = TrainConfig {
        max_epochs: 8,
        patience: 8,
        adam: AdamConfig {
            lr: 5e-2,
            ..AdamConfig::default()
        },
        ..toy_train_config(4)
    };
    let log = train::train(&mut model, &cfg, &d.train.clips, &d.val.clips, &NoClock).unwrap();
    let min = log
        .epochs
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    let best = log.best().unwrap();
    assert_eq!(best.val_loss, min);
    assert!(log.epochs.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    let (loss, acc) = train::validate(&model, &d.val.clips, &cfg.validation).unwrap();
    assert_eq!(loss, best.val_loss);
    assert_eq!(acc, best.val_acc);
}

#[test]
fn frozen_backbone_does_not_move() {
    let d = toy_data(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = toy_model(Architecture::GruRcn, &mut rng);
    let mut cfg = model.config().clone();
    cfg.freeze_backbone = true;
    let mut model_frozen = Model::from_params(cfg, model.params());
    let tc = TrainConfig {
        max_epochs: 2,
        ..toy_train_config(5)
    };
    train::train(
        &mut model_frozen,
        &tc,
        &d.train.clips,
        &d.val.clips,
        &NoClock,
    )
    .unwrap();
    train::train(&mut model, &tc, &d.train.clips, &d.val.clips, &NoClock).unwrap();
    let fresh = toy_model(Architecture::GruRcn, &mut ChaCha8Rng::seed_from_u64(5));
    for (i, name) in fresh.names().iter().enumerate() {
        if name.starts_with("backbone.") {
            assert_eq!(model_frozen.tensors()[i], fresh.tensors()[i]);
            assert_ne!(model.tensors()[i], fresh.tensors()[i]);
        }
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let d = toy_data(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = toy_model(Architecture::GruRcn, &mut rng);
    let cfg = toy_train_config(6);
    assert!(train::train(&mut model, &cfg, &[], &d.val.clips, &NoClock).is_err());
    let mut wrong = d.train.clips.clone();
    wrong[0].label = 5;
    assert!(train::train(&mut model, &cfg, &wrong, &d.val.clips, &NoClock).is_err());
}

#[test]
fn full_models_match_finite_differences() {
    for (arch, tol) in [
        (Architecture::GruRcn, 1e-5),
        (Architecture::StackedGruRcn, 1e-4),
        (Architecture::BidirGruRcn, 1e-4),
        (Architecture::FcGruBaseline, 1e-4),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ModelConfig {
            architecture: arch,
            backbone: BackboneConfig {
                input: [1, 8, 8],
                widths: vec![2, 2],
                pool_factors: vec![2, 2],
                kernel: 3,
            },
            hidden: vec![2, 3],
            classes: 2,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, &mut rng).unwrap();
        let clip = Tensor::from_fn(&[3, 1, 8, 8], |_| rng.gen::<f64>());
        let loss = |tape: &mut Tape, v: &[Var]| {
            let p = model.forward_on(tape, v, &clip, None)?;
            train::nll_on_tape(tape, p, 1)
        };
        let report = train::grad_check(model.names(), model.tensors(), &loss, tol, None).unwrap();
        assert!(report.passed(), "{arch:?}: {report:?}");
    }
}
