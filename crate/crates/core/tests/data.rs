use std::collections::HashMap;

use pairmix::data::*;
use pairmix::image::{Domain, ImageTensor};
use pairmix::selection::{SelectedSample, SelectionResult, Strategy};
use pairmix::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy(dir: &std::path::Path, seed: u64) -> DatasetManifest {
    let cfg = SynthConfig {
        n_paired: 2,
        n_unpaired: 5,
        n_test: 2,
        image_size: 16,
        seed,
    };
    synth_toy_dataset(&cfg, dir).unwrap()
}

#[test]
fn manifest_round_trip_uses_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 0);
    let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded, m);
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(!text.contains(&*dir.path().to_string_lossy()));
    loaded.check_files().unwrap();
}

#[test]
fn manifest_with_selection_survives_save() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 0);
    let sel = SelectionResult {
        seed: 0,
        strategy: Strategy::Random,
        budget: 1,
        selected: vec![SelectedSample {
            id: "u003".into(),
            index: 3,
            cluster: None,
            mean_distance: None,
        }],
    };
    let hybrid = m.with_selection(&sel).unwrap();
    assert_eq!(hybrid.paired.len(), 3);
    assert_eq!(hybrid.unpaired_x.len(), 5);
    let path = dir.path().join("hybrid.json");
    hybrid.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), hybrid);

    let unknown = SelectionResult {
        selected: vec![SelectedSample {
            id: "nope".into(),
            ..sel.selected[0].clone()
        }],
        ..sel
    };
    assert!(matches!(m.with_selection(&unknown), Err(Error::InvalidInput(_))));
}

#[test]
fn duplicate_ids_and_missing_pairs_are_rejected() {
    let rec = |id: &str, pair: Option<&str>, split: Split| SampleRecord {
        id: id.into(),
        domain: Domain::X,
        path: format!("{id}.png"),
        pair_path: pair.map(String::from),
        split,
        paired: false,
    };
    let root = std::path::Path::new("/data");
    let dup = vec![rec("a", None, Split::Train), rec("a", None, Split::Train)];
    assert!(matches!(DatasetManifest::from_records(root, dup, None), Err(Error::InvalidInput(_))));
    let test_without_pair = vec![rec("t", None, Split::Test)];
    assert!(matches!(
        DatasetManifest::from_records(root, test_without_pair, None),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 0);
    std::fs::remove_file(&m.unpaired_y[2].path).unwrap();
    match m.check_files() {
        Err(Error::MissingFile(p)) => assert_eq!(p, m.unpaired_y[2].path),
        other => panic!("expected missing file, got {other:?}"),
    }
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    toy(a.path(), 4);
    toy(b.path(), 4);
    let read = |root: &std::path::Path| -> HashMap<String, Vec<u8>> {
        let mut out = HashMap::new();
        for sub in ["x", "y"] {
            for e in std::fs::read_dir(root.join(sub)).unwrap() {
                let e = e.unwrap();
                out.insert(format!("{sub}/{}", e.file_name().to_string_lossy()), std::fs::read(e.path()).unwrap());
            }
        }
        out.insert("manifest".into(), std::fs::read(root.join("manifest.json")).unwrap());
        out
    };
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn label_images_use_only_palette_colours() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 2);
    let palette: Vec<[u8; 3]> = toy_colormap().entries().iter().map(|e| e.rgb).collect();
    for e in m.unpaired_y.iter().map(|e| &e.path).chain(m.test.iter().map(|e| &e.y)) {
        let img = image::open(e).unwrap().to_rgb8();
        assert!(img.pixels().all(|p| palette.contains(&p.0)));
    }
}

#[test]
fn every_unpaired_sample_once_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 0);
    for seed in 0..5 {
        let s = build_epoch_schedule(&m, seed, true).unwrap();
        let mut xs = vec![0; 5];
        let mut ys = vec![0; 5];
        for e in &s.entries {
            if let BatchSpec::Unpaired { x, y } = e {
                xs[*x] += 1;
                ys[*y] += 1;
            }
        }
        assert_eq!(xs, vec![1; 5]);
        assert_eq!(ys, vec![1; 5]);
        assert_eq!(s.paired_counts(2), vec![3, 2]);
    }
}

#[test]
fn schedule_needs_samples() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(dir.path(), 0);
    let empty = DatasetManifest {
        paired: vec![],
        ..m.unpaired_only().paired_only()
    };
    assert!(matches!(build_epoch_schedule(&empty, 0, true), Err(Error::EmptyDataset)));
    let one_sided = DatasetManifest {
        unpaired_y: vec![],
        ..m.clone()
    };
    assert!(matches!(build_epoch_schedule(&one_sided, 0, true), Err(Error::InvalidInput(_))));
    let paired_only = build_epoch_schedule(&m.paired_only(), 0, true).unwrap();
    assert_eq!(paired_only.paired_counts(2), vec![1, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pool_never_exceeds_capacity(cap in 0usize..8, n in 0usize..40, seed in any::<u64>()) {
        let mut pool = ImagePool::<f32>::new(cap);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut submitted = Vec::new();
        for i in 0..n {
            let fresh = ndarray::Array3::from_elem((1, 1, 1), i as f32);
            submitted.push(i as f32);
            let out = pool.query(&fresh, &mut rng);
            prop_assert!(submitted.contains(&out[[0, 0, 0]]));
            prop_assert!(pool.len() <= cap);
        }
        prop_assert!(pool.stored().iter().all(|s| submitted.contains(&s[[0, 0, 0]])));
    }

    #[test]
    fn augmentation_keeps_range_and_channels(seed in any::<u64>(), v in -1.0f32..1.0) {
        let cfg = AugmentConfig { load_size: 20, crop_size: 16, flip: true };
        let img = ImageTensor::new(
            ndarray::Array3::from_shape_fn((3, 12, 14), |(c, i, j)| (v + (c + i + j) as f32 * 0.05).clamp(-1.0, 1.0)),
            Domain::X,
        ).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = augment(&img, &cfg, &mut rng).unwrap();
        prop_assert_eq!(out.data.dim(), (3, 16, 16));
        prop_assert!(out.data.iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}

#[test]
fn crop_larger_than_load_is_config_error() {
    let cfg = AugmentConfig {
        load_size: 16,
        crop_size: 20,
        flip: false,
    };
    let img = ImageTensor::<f32>::filled(16, 16, 0.0, Domain::X);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(augment(&img, &cfg, &mut rng), Err(Error::Config(_))));
}
