//! Classifier checks against a straight-line reference implementation,
//! frame-order properties, checkpoints and end-to-end gradients.

use convgru::models::{Architecture, Model, ModelConfig, Widths};
use convgru::recurrent::{
    bidirectional, convgru_forward, fuse, gru_vector_step, ConvGruParams, FusionMethod,
    HiddenSequence, UpdateRule, VectorGruParams,
};
use convgru::tensor_core::{
    conv2d, dense, grad_check, leaky_relu, maxpool2d, GradCheckOptions, Padding, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(arch: Architecture, fusion: FusionMethod) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        input_size: 16,
        conv1_stride: 1,
        fusion,
        widths: Widths::uniform(8),
        seed: 17,
        ..ModelConfig::default()
    }
}

fn clip(frames: usize, size: usize, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(&[frames, 3, size, size], -1.0, 1.0, &mut r)
}

fn gates(m: &Model<f64>, prefix: &str) -> ConvGruParams<f64> {
    let names = ["w_zx", "w_zh", "b_z", "w_rx", "w_rh", "b_r", "w_ox", "w_oh", "b_o"];
    ConvGruParams::from_tensors(
        names
            .iter()
            .map(|n| m.param(&format!("{prefix}.{n}")).unwrap().clone())
            .collect(),
    )
    .unwrap()
}

fn vector_gates(m: &Model<f64>, prefix: &str) -> VectorGruParams<f64> {
    let p = |n: &str| m.param(&format!("{prefix}.{n}")).unwrap().clone();
    VectorGruParams {
        w_zx: p("w_zx"),
        w_zh: p("w_zh"),
        b_z: p("b_z"),
        w_rx: p("w_rx"),
        w_rh: p("w_rh"),
        b_r: p("b_r"),
        w_ox: p("w_ox"),
        w_oh: p("w_oh"),
        b_o: p("b_o"),
    }
}

/// Frame-by-frame forward pass written directly against the tensor
/// kernels, without the tape.
fn reference_logits(m: &Model<f64>, clip: &Tensor<f64>) -> Tensor<f64> {
    let cfg = m.config();
    let a = cfg.leaky_alpha;
    let p = |n: &str| m.param(n).unwrap();
    let conv = |x: &Tensor<f64>, name: &str, stride: usize| {
        let y = conv2d(x, p(&format!("{name}.weight")), Some(p(&format!("{name}.bias"))), stride, Padding::Same).unwrap();
        leaky_relu(&y, a)
    };
    let steps = clip.shape()[0];
    let mut trunk = Vec::new();
    for t in 0..steps {
        let x = clip.index0(t).unwrap();
        let x = conv(&x, "conv1", cfg.conv1_stride);
        let x = maxpool2d(&x, 3, 2).unwrap();
        let x = conv(&x, "conv2", 1);
        let x = maxpool2d(&x, 3, 2).unwrap();
        trunk.push(conv(&x, "conv3", 1));
    }
    let avg = |a: &Tensor<f64>, b: &Tensor<f64>| {
        let mut s = a.clone();
        s.add_assign(b).unwrap();
        s.scale_in_place(0.5);
        s
    };
    let l6: Vec<Tensor<f64>> = match cfg.architecture {
        Architecture::Convgru2d2 => {
            let seq = Tensor::stack(&trunk).unwrap();
            let h = bidirectional(&seq, &gates(m, "layer6.fwd"), &gates(m, "layer6.bwd"), cfg.update_rule).unwrap();
            h.forward.iter().zip(h.backward.as_ref().unwrap()).map(|(f, b)| avg(f, b)).collect()
        }
        _ => trunk.iter().map(|x| conv(x, "layer6", 1)).collect(),
    };
    let seq = Tensor::stack(&l6).unwrap();
    let hidden = match cfg.architecture {
        Architecture::Convgru1d => {
            Some(HiddenSequence::new(convgru_forward(&seq, &gates(m, "layer7.fwd"), cfg.update_rule).unwrap(), None).unwrap())
        }
        Architecture::Convgru2d | Architecture::Convgru2d2 => {
            Some(bidirectional(&seq, &gates(m, "layer7.fwd"), &gates(m, "layer7.bwd"), cfg.update_rule).unwrap())
        }
        _ => None,
    };
    let fc = |x: &Tensor<f64>, name: &str| {
        let y = dense(x, p(&format!("{name}.weight")), Some(p(&format!("{name}.bias")))).unwrap();
        leaky_relu(&y, a)
    };
    let out = |x: &Tensor<f64>| dense(x, p("out.weight"), Some(p("out.bias"))).unwrap();
    let flat = |t: &Tensor<f64>| t.reshape(&[t.len()]).unwrap();
    let mean = |xs: &[Tensor<f64>]| {
        let mut s = xs[0].clone();
        for x in &xs[1..] {
            s.add_assign(x).unwrap();
        }
        s.scale_in_place(1.0 / xs.len() as f64);
        s
    };
    match (cfg.architecture, hidden) {
        (Architecture::Spatial, _) => out(&fc(&fc(&flat(&conv(&l6[0], "layer7", 1)), "fc9"), "fc10")),
        (Architecture::GruAlexnet, _) => {
            let l7: Vec<Tensor<f64>> = l6.iter().map(|x| flat(&conv(x, "layer7", 1))).collect();
            let (g9, g10) = (vector_gates(m, "gru9"), vector_gates(m, "gru10"));
            let mut h9 = Tensor::zeros(&[cfg.widths.gru]);
            let mut h10 = Tensor::zeros(&[cfg.widths.gru]);
            let mut logits = Vec::new();
            for x in &l7 {
                h9 = gru_vector_step(x, &h9, &g9).unwrap();
                h10 = gru_vector_step(&h9, &h10, &g10).unwrap();
                logits.push(out(&h10));
            }
            mean(&logits)
        }
        (_, Some(h)) if cfg.fusion == FusionMethod::Flat => {
            let rows = fuse(&h, FusionMethod::Flat).unwrap();
            let per: Vec<Tensor<f64>> = (0..steps).map(|t| fc(&fc(&rows.index0(t).unwrap(), "fc9"), "fc10")).collect();
            out(&mean(&per))
        }
        (_, Some(h)) => out(&fc(&fc(&fuse(&h, cfg.fusion).unwrap(), "fc9"), "fc10")),
        _ => unreachable!(),
    }
}

#[test]
fn forward_matches_reference_for_every_architecture_and_fusion() {
    let fusions = [FusionMethod::LastFlat, FusionMethod::MeanFlat, FusionMethod::LastAvg, FusionMethod::Flat];
    let mut cases = vec![(Architecture::Spatial, FusionMethod::LastFlat), (Architecture::GruAlexnet, FusionMethod::Flat)];
    for arch in [Architecture::Convgru1d, Architecture::Convgru2d, Architecture::Convgru2d2] {
        for f in fusions {
            cases.push((arch, f));
        }
    }
    for (arch, fusion) in cases {
        let m = Model::<f64>::build(tiny(arch, fusion)).unwrap();
        let frames = if arch.single_frame() { 1 } else { 4 };
        let c = clip(frames, 16, 5);
        let got = m.logits(&c).unwrap();
        let want = reference_logits(&m, &c);
        assert!(got.max_abs_diff(&want) <= 1e-10, "{arch} {fusion:?}: {got:?} vs {want:?}");
    }
}

#[test]
fn convgru2d_trace_and_realized_shapes_at_224() {
    let cfg = ModelConfig {
        widths: Widths { fc: 8, ..Widths::default() },
        ..ModelConfig::new(Architecture::Convgru2d)
    };
    let trace = cfg.shape_trace().unwrap();
    assert_eq!(&trace.spatial_extents()[..5], &[224, 56, 27, 27, 13]);
    assert_eq!(trace.feature_len(), 43264);
    // Every forward asserts the realized shapes against the trace.
    let m = Model::<f32>::zeros(cfg).unwrap();
    let maps = m
        .export_feature_maps(&Tensor::zeros(&m.clip_shape(2)), "layer7", &[1])
        .unwrap();
    assert_eq!(maps.len(), 256);
    assert_eq!((maps[0].width, maps[0].height), (13, 13));
}

#[test]
fn frame_order_matters_for_last_flat() {
    let m = Model::<f64>::build(tiny(Architecture::Convgru2d, FusionMethod::LastFlat)).unwrap();
    let c = clip(4, 16, 8);
    let frames: Vec<Tensor<f64>> = [2, 0, 3, 1].iter().map(|&t| c.index0(t).unwrap()).collect();
    let permuted = Tensor::stack(&frames).unwrap();
    assert!(m.logits(&c).unwrap().max_abs_diff(&m.logits(&permuted).unwrap()) > 1e-6);

    // Perturbing only the last frame changes the logits.
    let mut last = c.clone();
    let n = last.len();
    last.data_mut()[n - 1] += 0.5;
    assert!(m.logits(&c).unwrap().max_abs_diff(&m.logits(&last).unwrap()) > 0.0);
}

#[test]
fn mean_flat_is_order_invariant_with_frame_local_recurrence() {
    let mut cfg = tiny(Architecture::Convgru2d, FusionMethod::MeanFlat);
    cfg.update_rule = UpdateRule::PaperLiteral;
    let mut m = Model::<f64>::build(cfg).unwrap();
    for p in m.params_mut() {
        if p.name.starts_with("layer7") && (p.name.ends_with("_zh") || p.name.ends_with("_rh") || p.name.ends_with("_oh")) {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let c = clip(5, 16, 9);
    let frames: Vec<Tensor<f64>> = [4, 2, 0, 3, 1].iter().map(|&t| c.index0(t).unwrap()).collect();
    let permuted = Tensor::stack(&frames).unwrap();
    assert!(m.logits(&c).unwrap().max_abs_diff(&m.logits(&permuted).unwrap()) <= 1e-12);
}

#[test]
fn duplicate_frames_give_repeatable_logits() {
    let m = Model::<f32>::build(tiny(Architecture::Convgru2d, FusionMethod::LastFlat)).unwrap();
    let f = clip(1, 16, 3).index0(0).unwrap().cast::<f32>();
    let c = Tensor::stack(&[f.clone(), f.clone(), f]).unwrap();
    let a = m.logits(&c).unwrap();
    assert!(a.is_finite());
    assert_eq!(a, m.logits(&c).unwrap());
}

#[test]
fn checkpoint_reload_reproduces_logits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Model::<f32>::build(tiny(Architecture::Convgru1d, FusionMethod::LastFlat)).unwrap();
    m.save(&path).unwrap();
    let back = Model::<f32>::load(&path).unwrap();
    assert_eq!(back.parameter_count(), m.parameter_count());
    let c = clip(3, 16, 1).cast::<f32>();
    assert_eq!(m.logits(&c).unwrap(), back.logits(&c).unwrap());
}

#[test]
fn reduced_convgru2d_gradients_for_each_fusion() {
    for fusion in [FusionMethod::LastFlat, FusionMethod::MeanFlat, FusionMethod::LastAvg, FusionMethod::Flat] {
        let cfg = ModelConfig {
            architecture: Architecture::Convgru2d,
            input_size: 16,
            conv1_stride: 1,
            fusion,
            widths: Widths::divided_by(32),
            seed: 2,
            ..ModelConfig::default()
        };
        let m = Model::<f64>::build(cfg).unwrap();
        let c = clip(3, 16, 4);
        let mut inputs: Vec<Tensor<f64>> = m.params().iter().map(|p| p.value.clone()).collect();
        inputs.push(c);
        let n = m.params().len();
        let report = grad_check(
            |g, v| {
                let out = m.forward_vars(g, v[n], &v[..n], None, false)?;
                g.softmax_cross_entropy(out.logits, 3)
            },
            &inputs,
            &GradCheckOptions {
                max_coords: Some(6),
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{fusion:?}: {report:?}");
    }
}
