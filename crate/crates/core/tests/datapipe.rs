use std::collections::HashSet;

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use convgru::datapipe::*;
use convgru::Error;

const SIDE: u32 = 32;

fn params() -> DetectionParams {
    DetectionParams {
        center_crop: SIDE,
        ..DetectionParams::default()
    }
}

/// Black frames; from `start` on, the first `12 + 3k` pixels turn white so
/// the image distance is `sqrt(3 * n)` and strictly rising. Joints jump by
/// `jump` at `start` and by 0.5 from `gate` on.
fn ramp_trial(start: usize, jump: f64, gate: usize) -> TrialRecord {
    let mut frames = Vec::new();
    let mut joints = Vec::new();
    for t in 0..TRIAL_FRAMES {
        let mut img = RgbImage::new(SIDE, SIDE);
        if t >= start {
            let n = 12 + 3 * (t - start) as u32;
            for i in 0..n.min(SIDE * SIDE) {
                img.put_pixel(i % SIDE, i / SIDE, Rgb([255, 255, 255]));
            }
        }
        frames.push(img);
        let d = if t >= gate {
            0.5
        } else if t >= start {
            jump
        } else {
            0.0
        };
        joints.push(vec![d, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }
    TrialRecord {
        participant: "p".into(),
        trial: "t".into(),
        label: 4,
        frames,
        joints,
    }
}

#[test]
fn detect_examples() {
    assert_eq!(detect_start(&ramp_trial(15, 0.2, 90), &params()).unwrap(), 15);
    assert_eq!(detect_start(&ramp_trial(15, 0.1, 20), &params()).unwrap(), 20);
    let mut flat = ramp_trial(15, 0.2, 90);
    let reference = flat.frames[10].clone();
    for f in &mut flat.frames {
        *f = reference.clone();
    }
    assert!(matches!(detect_start(&flat, &params()), Err(Error::NoStart)));
}

#[test]
fn detect_every_planted_frame() {
    for start in 11..=45 {
        assert_eq!(detect_start(&ramp_trial(start, 0.3, 90), &params()).unwrap(), start);
    }
}

#[test]
fn image_distance_is_frobenius_on_unit_scale() {
    let trial = ramp_trial(15, 0.2, 90);
    let store = FrameStore::Memory(trial.frames.clone());
    let s = MotionSeries::compute(&store, &trial.joints, &params()).unwrap();
    for t in 15..40 {
        let n = (12 + 3 * (t - 15)) as f64;
        assert!((s.dx[t] - (3.0 * n).sqrt()).abs() < 1e-12);
    }
    assert!((s.dtheta[15] - 0.2).abs() < 1e-12);
    assert_eq!(s.dx[12], 0.0);
}

#[test]
fn sampling_examples() {
    let s2 = SamplingScheme::table(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(s2.sample_train_from(0, &mut rng), vec![0, 4, 8, 12, 16, 20, 24, 28, 32, 36]);
    let s1 = SamplingScheme::table(1).unwrap();
    assert_eq!(s1.sample_train_from(1, &mut rng), (0..20).map(|k| 1 + 2 * k).collect::<Vec<_>>());
    let tests = s2.sample_test();
    assert_eq!(tests.len(), 4);
    for (s, list) in tests.iter().enumerate() {
        assert_eq!(*list, (0..10).map(|k| s + 4 * k).collect::<Vec<_>>());
    }
    let s6 = SamplingScheme::table(6).unwrap().sample_test();
    assert_eq!(s6, (0..4).map(|b| (10 * b..10 * b + 10).collect()).collect::<Vec<Vec<_>>>());
    let s7 = SamplingScheme::table(7).unwrap().sample_test();
    let starts: Vec<usize> = s7.iter().map(|l| l[0]).collect();
    assert_eq!(starts, vec![0, 1, 20, 21]);
    assert!(s7.iter().all(|l| l.windows(2).all(|w| w[1] - w[0] == 2)));
}

#[test]
fn sampling_contracts_over_many_draws() {
    let lengths = [20, 10, 8, 5, 10, 10, 10];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for id in SamplingScheme::IDS {
        let s = SamplingScheme::table(id).unwrap();
        let mut firsts = HashSet::new();
        for _ in 0..10_000 {
            let v = s.sample_train(&mut rng);
            assert_eq!(v.len(), lengths[id as usize - 1]);
            assert!(v.iter().all(|&i| i < WINDOW_FRAMES));
            firsts.insert(v[0]);
            let gaps: Vec<usize> = v.windows(2).map(|w| w[1] - w[0]).collect();
            if id == 5 {
                assert!(gaps.iter().all(|g| (3..=5).contains(g)));
                assert!(*v.last().unwrap() <= 39);
            } else {
                assert!(gaps.iter().all(|&g| g == gaps[0]));
            }
        }
        assert_eq!(firsts.len(), s.train_starts.len(), "scheme {id}");
        for list in s.sample_test() {
            assert_eq!(list.len(), lengths[id as usize - 1]);
            assert!(list.iter().all(|&i| i < WINDOW_FRAMES));
        }
    }
}

#[test]
fn scheme5_gap_vectors_are_feasible() {
    // Largest first index is 3; gaps sum to at most 36 for a final index of 39.
    let s = SamplingScheme::table(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen_five = false;
    for _ in 0..10_000 {
        let v = s.sample_train_from(3, &mut rng);
        let total: usize = v.windows(2).map(|w| w[1] - w[0]).sum();
        assert!(total <= 36);
        seen_five |= v.windows(2).any(|w| w[1] - w[0] == 5);
    }
    assert!(seen_five);
    assert_eq!(indices_from_gaps(3, &[3; 9]), (1..=10).map(|k| 3 * k).collect::<Vec<_>>());
}

fn textured(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 13 % 256) as u8, (y * 29 % 256) as u8, ((x * y) % 251) as u8]))
}

#[test]
fn augmentation_is_deterministic_per_seed() {
    let img = textured(256, 256);
    let g = CropGeometry::default();
    let n = Normalization::default();
    let j = JitterStrength::default();
    let a = augment_train(&img, &g, &j, &n, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = augment_train(&img, &g, &j, &n, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let c = augment_train(&img, &g, &j, &n, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
    assert_eq!(a.shape(), &[3, 224, 224]);
    assert!(augment_train(&textured(239, 300), &g, &j, &n, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
}

#[test]
fn test_pipeline_is_idempotent_and_matches_identity_augmentation() {
    let img = textured(260, 250);
    let n = Normalization::default();
    let g = CropGeometry::default();
    let a = preprocess_test(&img, &g, &n).unwrap();
    assert_eq!(a.data(), preprocess_test(&img, &g, &n).unwrap().data());
    // With no crop slack the centered crop is the center crop itself.
    let flush = CropGeometry {
        center: 240,
        crop: 240,
        output: 224,
    };
    let id = AugmentParams::identity(&flush);
    assert_eq!(
        augment_with(&img, &flush, &id, &n, (0, 0)).unwrap(),
        preprocess_with(&img, &flush, &n, (0, 0)).unwrap()
    );
    // Identity augmentation on the default geometry is a centered 235 crop.
    let id = AugmentParams::identity(&g);
    assert_eq!(id.crop_offset, (2, 2));
    let manual = {
        let c = crop_planar(&img, 10 + 2, 5 + 2, 235, 255.0);
        let mut v = resize_bilinear(&c, 3, 235, 224);
        normalize(&mut v, 224, &n);
        v
    };
    assert_eq!(augment_with(&img, &g, &id, &n, (0, 0)).unwrap(), manual);
}

#[test]
fn jitter_matches_pointwise_formulas() {
    let mut v = vec![0.2f32, 0.6, 0.4, 0.8, 0.1, 0.3, 0.9, 0.5, 0.7, 0.0, 0.25, 0.75];
    let src = v.clone();
    let p = AugmentParams {
        crop_offset: (0, 0),
        brightness: 1.2,
        contrast: 0.7,
        saturation: 1.3,
        hue: 0.0,
    };
    color_jitter(&mut v, 2, &p);
    let n = 4;
    let mut e: Vec<f64> = src.iter().map(|&x| (x as f64 * 1.2).clamp(0.0, 1.0)).collect();
    let gray = |e: &[f64], i: usize| 0.299 * e[i] + 0.587 * e[n + i] + 0.114 * e[2 * n + i];
    let mean = (0..n).map(|i| gray(&e, i)).sum::<f64>() / n as f64;
    for x in e.iter_mut() {
        *x = (0.7 * *x + 0.3 * mean).clamp(0.0, 1.0);
    }
    let grays: Vec<f64> = (0..n).map(|i| gray(&e, i)).collect();
    for c in 0..3 {
        for i in 0..n {
            let x = &mut e[c * n + i];
            *x = (1.3 * *x - 0.3 * grays[i]).clamp(0.0, 1.0);
        }
    }
    for (a, b) in v.iter().zip(&e) {
        assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
    }
}

fn prepared(frames: Vec<RgbImage>, start: usize) -> PreparedTrial {
    let store = FrameStore::Memory(frames[start..(start + 45).min(frames.len())].to_vec());
    PreparedTrial {
        entry: TrialEntry {
            participant: "p".into(),
            trial: "t".into(),
            label: 2,
            planted_start: None,
        },
        detected_start: start,
        window: make_window(frames.len(), start, 2).unwrap(),
        trial_len: frames.len(),
        frames: store,
    }
}

/// Frame `i` is a flat image of gray level `i + 1`.
fn indexed_frames(side: u32) -> Vec<RgbImage> {
    (0..TRIAL_FRAMES)
        .map(|i| RgbImage::from_pixel(side, side, Rgb([i as u8 + 1; 3])))
        .collect()
}

#[test]
fn missing_frames_are_zeroed_exactly() {
    let trial = prepared(indexed_frames(64), 20);
    let builder = ClipBuilder::new(CropGeometry::scaled(64, 16), Normalization::default());
    let s6 = SamplingScheme::table(6).unwrap();
    for seed in 0..20 {
        let spec = PerturbationSpec::new(PerturbationKind::Missing, 5, seed).unwrap();
        let view = perturb(&trial.window, trial.trial_len, &spec).unwrap();
        assert_eq!(view.zeroed_count(), 5);
        let clips = builder.test_clips(&trial, &s6, &view).unwrap();
        let per = 3 * 16 * 16;
        let zero_frames: usize = clips
            .iter()
            .map(|c| c.data().chunks(per).filter(|f| f.iter().all(|&v| v == 0.0)).count())
            .sum();
        assert_eq!(zero_frames, 5);
    }
}

#[test]
fn frame_rate_keeps_order_and_reads_the_right_frames() {
    let trial = prepared(indexed_frames(64), 20);
    let builder = ClipBuilder::new(CropGeometry::scaled(64, 8), Normalization::default());
    let s6 = SamplingScheme::table(6).unwrap();
    for k in 1..=5 {
        let spec = PerturbationSpec::new(PerturbationKind::FrameRate, k, 3).unwrap();
        let view = perturb(&trial.window, trial.trial_len, &spec).unwrap();
        assert_eq!(view.offsets.len(), 40);
        assert!(view.offsets.windows(2).all(|w| w[0] < w[1]));
        assert!(*view.offsets.last().unwrap() < 40 + k as usize);
        let clips = builder.test_clips(&trial, &s6, &view).unwrap();
        let per = 3 * 8 * 8;
        let levels: Vec<f32> = clips.iter().flat_map(|c| c.data().chunks(per).map(|f| f[0])).collect();
        for (i, &off) in view.offsets.iter().enumerate() {
            let gray = (20 + off + 1) as f32 / 255.0;
            assert!((levels[i] - (gray - 0.5) / 0.5).abs() < 1e-6);
        }
    }
    let late = prepared(indexed_frames(64), 48);
    let spec = PerturbationSpec::new(PerturbationKind::FrameRate, 3, 0).unwrap();
    assert!(perturb(&late.window, late.trial_len, &spec).is_err());
}

#[test]
fn position_shift_moves_the_crop_by_the_bias() {
    // A single marker pixel at the image center, no resize.
    let side = 64u32;
    let mut img = RgbImage::new(side, side);
    img.put_pixel(32, 32, Rgb([255, 255, 255]));
    let geom = CropGeometry {
        center: 60,
        crop: 58,
        output: 60,
    };
    let n = Normalization::default();
    let find = |shift: (i64, i64)| {
        let v = preprocess_with(&img, &geom, &n, shift).unwrap();
        let i = v[..60 * 60].iter().position(|&x| x > 0.0).unwrap();
        ((i % 60) as i64, (i / 60) as i64)
    };
    let (x0, y0) = find((0, 0));
    for seed in 0..50 {
        let spec = PerturbationSpec::new(PerturbationKind::Position, 10, seed).unwrap();
        let view = perturb(&ActionWindow { start: 20, label: 0 }, 90, &spec).unwrap();
        let (x, y) = find(view.shift);
        let (dx, dy) = ((x0 - x) as f64, (y0 - y) as f64);
        assert_eq!((dx as i64, dy as i64), view.shift);
        assert!(((dx * dx + dy * dy).sqrt() - 10.0).abs() <= 0.71, "{dx} {dy}");
    }
}

#[test]
fn perturbations_are_deterministic() {
    let w = ActionWindow { start: 12, label: 0 };
    for kind in PerturbationKind::ALL {
        let spec = PerturbationSpec::new(kind, 3, 77).unwrap();
        assert_eq!(perturb(&w, 90, &spec).unwrap(), perturb(&w, 90, &spec).unwrap());
    }
}

proptest! {
    #[test]
    fn frame_rate_output_is_a_subsequence(k in 1u32..=5, seed in any::<u64>(), start in 10usize..=45) {
        let spec = PerturbationSpec::new(PerturbationKind::FrameRate, k, seed).unwrap();
        let v = perturb(&ActionWindow { start, label: 0 }, 90, &spec).unwrap();
        prop_assert_eq!(v.offsets.len(), WINDOW_FRAMES);
        prop_assert!(v.offsets.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*v.offsets.last().unwrap() < WINDOW_FRAMES + k as usize);
    }

    #[test]
    fn split_is_a_stratified_partition(participants in 1usize..4, seed in any::<u64>()) {
        let mut entries = Vec::new();
        for p in 0..participants {
            for label in 0..9 {
                for t in 0..10 {
                    entries.push(TrialEntry { participant: format!("p{p}"), trial: format!("{label}-{t}"), label, planted_start: None });
                }
            }
        }
        let s = split(&entries, seed);
        let train: HashSet<usize> = s.train.iter().copied().collect();
        let test: HashSet<usize> = s.test.iter().copied().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), entries.len());
        for p in 0..participants {
            for label in 0..9 {
                let n = s.test.iter().filter(|&&i| entries[i].participant == format!("p{p}") && entries[i].label == label).count();
                prop_assert_eq!(n, 2);
            }
        }
    }
}

#[test]
fn dataset_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = ramp_trial(15, 0.2, 90);
    rec.participant = "p0".into();
    rec.trial = "t0".into();
    let entry = TrialEntry {
        participant: "p0".into(),
        trial: "t0".into(),
        label: 4,
        planted_start: Some(15),
    };
    write_trial(dir.path(), &entry, &rec).unwrap();
    let manifest = Manifest {
        name: "tiny".into(),
        synthetic: true,
        frame_count: TRIAL_FRAMES,
        fps: 30.0,
        resolution: [SIDE, SIDE],
        joint_count: 2,
        joint_units: "m".into(),
        normalization: Normalization::default(),
        detection: params(),
        generator: None,
        trials: vec![entry.clone()],
    };
    write_manifest(dir.path(), &manifest).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.manifest, manifest);
    let loaded = ds.load_trial(&entry).unwrap();
    assert_eq!(loaded.frames, rec.frames);
    assert_eq!(loaded.joints, rec.joints);

    let cached = prepare_trial(&ds, &entry, true).unwrap();
    let lazy = prepare_trial(&ds, &entry, false).unwrap();
    assert_eq!((cached.detected_start, cached.window.start), (15, 15));
    assert_eq!(cached.frames.len(), 45);
    assert_eq!(*cached.frames.get(44).unwrap(), *lazy.frames.get(44).unwrap());

    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    std::fs::write(dir.path().join(MANIFEST_FILE), text.replacen("{", "{\n  \"extra\": 1,", 1)).unwrap();
    assert!(Dataset::open(dir.path()).unwrap_err().is_validation());
    write_manifest(dir.path(), &manifest).unwrap();
    std::fs::write(dir.path().join("p0/t0/label.txt"), "7\n").unwrap();
    assert!(ds.load_label(&entry).is_err());
}
