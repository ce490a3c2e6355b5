use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinycd::data::{
    checkpoint_dtype, collate, decode_checkpoint, encode_checkpoint, generate_sample, generate_synthetic,
    load_checkpoint, load_dataset, sample_file, save_checkpoint, CheckpointMeta, ShapeKind, Split, SyntheticShape,
    SyntheticSpec,
};
use tinycd::train::{AdamWConfig, OptimizerState};
use tinycd::{DType, Error, ModelConfig, TinyCd};

fn tiny() -> ModelConfig {
    ModelConfig { backbone_widths: vec![4, 6], backbone_strides: vec![2, 2], ..ModelConfig::default() }
}

/// Pixel `(y, x)` is inside when its centre `(y + ½, x + ½)` is.
fn rasterize(s: &SyntheticShape, size: usize) -> Vec<bool> {
    let mut out = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            out[y * size + x] = match s.kind {
                ShapeKind::Rectangle => {
                    (s.cy - s.ry..=s.cy + s.ry).contains(&py) && (s.cx - s.rx..=s.cx + s.rx).contains(&px)
                }
                ShapeKind::Ellipse => {
                    let (u, v) = ((py - s.cy) / s.ry, (px - s.cx) / s.rx);
                    u * u + v * v <= 1.0
                }
            };
        }
    }
    out
}

#[test]
fn synthetic_labels_are_xor_of_occupancy() {
    let spec = SyntheticSpec { size: 32, ..SyntheticSpec::default() };
    for i in 0..20 {
        let s = generate_sample(&spec, Split::Train, i);
        assert!(s.shapes.len() <= spec.max_shapes);
        let mut t1 = vec![false; 32 * 32];
        let mut t2 = vec![false; 32 * 32];
        for shape in &s.shapes {
            assert!(shape.at_t1 || shape.at_t2);
            for (k, inside) in rasterize(shape, 32).into_iter().enumerate() {
                t1[k] |= inside && shape.at_t1;
                t2[k] |= inside && shape.at_t2;
            }
        }
        let expected: Vec<f32> = t1.iter().zip(&t2).map(|(a, b)| if a != b { 1.0 } else { 0.0 }).collect();
        assert_eq!(s.pair.label.data, expected, "sample {i}");
        for (a, b) in s.shapes.iter().zip(s.shapes.iter().skip(1)) {
            let apart = (a.cy - b.cy).abs() >= a.ry + b.ry + 2.0 || (a.cx - b.cx).abs() >= a.rx + b.rx + 2.0;
            assert!(apart);
        }
        for v in s.pair.reference.data.iter().chain(&s.pair.comparison.data) {
            assert_eq!((v * 255.0).round() / 255.0, *v);
        }
    }
}

#[test]
fn synthetic_samples_are_seeded() {
    let spec = SyntheticSpec { size: 16, ..SyntheticSpec::default() };
    let a = generate_sample(&spec, Split::Val, 3);
    assert_eq!(a, generate_sample(&spec, Split::Val, 3));
    assert_ne!(a.pair, generate_sample(&spec, Split::Val, 4).pair);
    assert_ne!(a.pair, generate_sample(&spec, Split::Test, 3).pair);
    let other = SyntheticSpec { seed: 1, ..spec };
    assert_ne!(a.pair, generate_sample(&other, Split::Val, 3).pair);
}

#[test]
fn synthetic_size_must_fit_stride() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { size: 20, count: 1, ..SyntheticSpec::default() };
    let err = generate_synthetic(&spec, dir.path(), Split::Train, 8).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn written_dataset_loads_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { size: 16, count: 5, ..SyntheticSpec::default() };
    generate_synthetic(&spec, dir.path(), Split::Train, 8).unwrap();
    let manifest = load_dataset(dir.path(), Split::Train).unwrap();
    assert_eq!(manifest.len(), 5);
    assert_eq!(manifest.patch_size, (16, 16));
    let loaded = manifest.load_all().unwrap();
    for (i, pair) in loaded.iter().enumerate() {
        assert_eq!(pair, &generate_sample(&spec, Split::Train, i).pair);
    }
    let shapes: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("train/shapes.json")).unwrap()).unwrap();
    assert_eq!(shapes.as_object().unwrap().len(), 5);
}

#[test]
fn incomplete_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { size: 16, count: 3, ..SyntheticSpec::default() };
    generate_synthetic(&spec, dir.path(), Split::Val, 8).unwrap();
    std::fs::remove_file(dir.path().join("val/label").join(sample_file(1))).unwrap();
    let err = load_dataset(dir.path(), Split::Val).unwrap_err();
    assert!(matches!(err, Error::Manifest(_)));
    assert!(err.to_string().contains("synth_00001"), "{err}");

    for sub in ["A", "B", "label"] {
        std::fs::create_dir_all(dir.path().join("test").join(sub)).unwrap();
    }
    assert!(matches!(load_dataset(dir.path(), Split::Test), Err(Error::Usage(_))));
    assert!(load_dataset(Path::new("/nonexistent"), Split::Train).is_err());
}

#[test]
fn collate_names_the_odd_sample() {
    let spec16 = SyntheticSpec { size: 16, ..SyntheticSpec::default() };
    let spec24 = SyntheticSpec { size: 24, ..SyntheticSpec::default() };
    let a = generate_sample(&spec16, Split::Train, 0).pair;
    let mut b = generate_sample(&spec24, Split::Train, 1).pair;
    b.id = "odd_one".into();
    let err = collate::<f32>(&[&a, &b]).unwrap_err();
    assert!(err.to_string().contains("odd_one"), "{err}");
    let (x, y, g) = collate::<f64>(&[&a, &a]).unwrap();
    assert_eq!(x.shape().dims(), [2, 3, 16, 16]);
    assert_eq!(y.shape(), x.shape());
    assert_eq!(g.shape().dims(), [2, 1, 16, 16]);
}

fn trained_state<T: tinycd::Element>(amsgrad: bool) -> (TinyCd<T>, OptimizerState<T>) {
    let model = TinyCd::<T>::new(tiny(), 9).unwrap();
    let mut st = OptimizerState::new(AdamWConfig { amsgrad, ..AdamWConfig::default() }, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = model;
    for _ in 0..2 {
        for p in model.params().iter() {
            let g = (0..p.value().numel()).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
            p.value().set_grad(g).unwrap();
        }
        st.step(model.params_mut(), 1e-2).unwrap();
    }
    (model, st)
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for amsgrad in [false, true] {
        let (model, st) = trained_state::<f32>(amsgrad);
        let meta = CheckpointMeta { epoch: 7, val_f1: Some(0.625) };
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model, Some(&st), &meta).unwrap();
        assert_eq!(checkpoint_dtype(&path).unwrap(), DType::F32);
        let back = load_checkpoint::<f32>(&path, Some(&tiny())).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.model.params().values(), model.params().values());
        assert_eq!(back.optimizer.as_ref(), Some(&st));
        let again = encode_checkpoint(&back.model, back.optimizer.as_ref(), &back.meta).unwrap();
        assert_eq!(again, std::fs::read(&path).unwrap());
    }
    let (model, _) = trained_state::<f64>(false);
    let bytes = encode_checkpoint(&model, None, &CheckpointMeta::default()).unwrap();
    let back = decode_checkpoint::<f64>(&bytes, None).unwrap();
    assert!(back.optimizer.is_none());
    assert_eq!(back.model.params().values(), model.params().values());
    assert_eq!(back.model.config(), &tiny());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (model, st) = trained_state::<f32>(false);
    let bytes = encode_checkpoint(&model, Some(&st), &CheckpointMeta::default()).unwrap();
    for cut in [0, 3, 4, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = decode_checkpoint::<f32>(&bytes[..cut], None).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint::<f32>(&bad, None), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(decode_checkpoint::<f32>(&bad, None).unwrap_err().to_string().contains("version"));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_checkpoint::<f32>(&long, None), Err(Error::Format(_))));
}

#[test]
fn checkpoint_for_other_architecture_lists_mismatches() {
    let (model, _) = trained_state::<f32>(false);
    let bytes = encode_checkpoint(&model, None, &CheckpointMeta::default()).unwrap();
    let wider = ModelConfig { backbone_widths: vec![4, 8], ..tiny() };
    let err = decode_checkpoint::<f32>(&bytes, Some(&wider)).unwrap_err();
    assert!(matches!(err, Error::Compatibility(_)));
    assert!(err.to_string().contains("encoder.block1.conv.weight"), "{err}");
}

#[test]
fn checkpoint_converts_precision_on_load() {
    let (model, _) = trained_state::<f32>(false);
    let bytes = encode_checkpoint(&model, None, &CheckpointMeta::default()).unwrap();
    let wide = decode_checkpoint::<f64>(&bytes, None).unwrap();
    for (a, b) in wide.model.params().values().iter().zip(model.params().values()) {
        assert!(a.iter().zip(&b).all(|(x, y)| *x == *y as f64));
    }
}
