use std::path::Path;

use grurcn::checkpoint::{load_checkpoint, save_checkpoint};
use grurcn::dataset::{self, load_dataset, save_dataset};
use grurcn::tensor_io::{decode, encode, read_tensor, write_tensor};
use grurcn_core::backbone::BackboneConfig;
use grurcn_core::data::{generate_dataset, Split, SplitSizes, SynthSpec};
use grurcn_core::model::{Architecture, Model, ModelConfig, Stream};
use grurcn_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn small_spec() -> SynthSpec {
    SynthSpec {
        canvas: 12,
        frames: 5,
        sprite_min: 3,
        sprite_max: 4,
        ..SynthSpec::default()
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn tensors_round_trip_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tmp = tempfile::tempdir().unwrap();
    for shape in [vec![1], vec![3, 4], vec![2, 1, 3, 5], vec![7]] {
        let t = Tensor::from_fn(&shape, |_| rng.gen_range(-1e3..1e3));
        assert_eq!(bits(&decode(&encode(&t)).unwrap()), bits(&t));
        let p = tmp.path().join("t.grcn");
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(bits(&back), bits(&t));
    }
    let odd = Tensor::vector(&[f64::MIN_POSITIVE, -0.0, f64::MAX, 1e-310]);
    assert_eq!(bits(&decode(&encode(&odd)).unwrap()), bits(&odd));
}

#[test]
fn truncated_tensor_file_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("t.grcn");
    let bytes = encode(&Tensor::vector(&[1.0, 2.0, 3.0]));
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_tensor(&p).is_err());
    assert!(read_tensor(&tmp.path().join("missing.grcn")).is_err());
}

#[test]
fn datasets_round_trip_and_files_are_reproducible() {
    let spec = small_spec();
    let sizes = SplitSizes {
        train: 6,
        val: 3,
        test: 4,
    };
    let data = generate_dataset(&spec, sizes, 9).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(a.path(), &spec, 9, &data).unwrap();
    save_dataset(
        b.path(),
        &spec,
        9,
        &generate_dataset(&spec, sizes, 9).unwrap(),
    )
    .unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(a.path().join(dataset::clip_file(Split::Test, 3)).exists());
    assert!(a.path().join("clip_train_0.grcn").exists());

    let (back, back_spec, manifest) = load_dataset(a.path()).unwrap();
    assert_eq!(back_spec, spec);
    assert_eq!(manifest.seed, 9);
    assert_eq!(dataset::manifest_sizes(&manifest), sizes);
    assert_eq!(manifest.class_names, spec.class_names());
    for split in Split::ALL {
        let (x, y) = (data.split(split), back.split(split));
        assert_eq!(x.meta, y.meta);
        for (c, d) in x.clips.iter().zip(&y.clips) {
            assert_eq!(c.label, d.label);
            assert_eq!(bits(&c.frames), bits(&d.frames));
        }
    }

    let other = tempfile::tempdir().unwrap();
    save_dataset(
        other.path(),
        &spec,
        10,
        &generate_dataset(&spec, sizes, 10).unwrap(),
    )
    .unwrap();
    assert_ne!(dir_bytes(a.path()), dir_bytes(other.path()));
}

#[test]
fn corrupt_dataset_manifest_is_rejected() {
    let spec = small_spec();
    let data = generate_dataset(
        &spec,
        SplitSizes {
            train: 1,
            val: 1,
            test: 1,
        },
        2,
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_dataset(tmp.path(), &spec, 2, &data).unwrap();
    let path = tmp.path().join(dataset::MANIFEST);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"label\": ", "\"label\": 9")).unwrap();
    assert!(load_dataset(tmp.path()).is_err());
    std::fs::write(&path, "{}").unwrap();
    assert!(load_dataset(tmp.path()).is_err());
}

#[test]
fn checkpoints_round_trip_every_architecture() {
    for (i, arch) in [
        Architecture::GruRcn,
        Architecture::StackedGruRcn,
        Architecture::BidirGruRcn,
        Architecture::FcGruBaseline,
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let cfg = ModelConfig {
            architecture: arch,
            backbone: BackboneConfig {
                input: [1, 8, 8],
                widths: vec![2, 3],
                pool_factors: vec![2, 2],
                kernel: 3,
            },
            hidden: vec![2, 3],
            classes: 3,
            stream: if i % 2 == 0 {
                Stream::Rgb
            } else {
                Stream::FrameDiff
            },
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, &mut rng).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_checkpoint(tmp.path(), &model).unwrap();
        let back = load_checkpoint(tmp.path()).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.names(), model.names());
        for (x, y) in model.tensors().iter().zip(back.tensors()) {
            assert_eq!(bits(x), bits(y));
        }
        let clip = Tensor::from_fn(&[3, 1, 8, 8], |_| rng.gen::<f64>());
        assert_eq!(
            bits(&model.predict(&clip).unwrap()),
            bits(&back.predict(&clip).unwrap())
        );

        let again = tempfile::tempdir().unwrap();
        save_checkpoint(again.path(), &back).unwrap();
        assert_eq!(dir_bytes(tmp.path()), dir_bytes(again.path()));
    }
}

#[test]
fn checkpoint_with_wrong_shape_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ModelConfig {
        backbone: BackboneConfig {
            input: [1, 8, 8],
            widths: vec![2],
            pool_factors: vec![2],
            kernel: 3,
        },
        hidden: vec![2],
        classes: 2,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, &mut rng).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(tmp.path(), &model).unwrap();
    let first = format!("000_{}.grcn", model.names()[0]);
    write_tensor(&tmp.path().join(first), &Tensor::zeros(&[1])).unwrap();
    assert!(load_checkpoint(tmp.path()).is_err());
    assert!(load_checkpoint(&tmp.path().join("nowhere")).is_err());
}
