//! ConvGRU checks: frozen scalar transcripts, symmetry properties, a
//! gate-by-gate second implementation and finite-difference gradients.

use convgru::recurrent::{
    bidirectional, convgru_backward_direction, convgru_cell, convgru_direction, convgru_forward,
    fuse, gru_vector_step, BiasMode, ConvGruParams, Direction, FusionMethod, GateVars,
    HiddenSequence, UpdateRule, VectorGruParams, bias_shape,
};
use convgru::tensor_core::{grad_check, GradCheckOptions, Tensor};
use convgru::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn clip(steps: usize, c: usize, n: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(&[steps, c, n, n], -1.0, 1.0, r)
}

/// Random parameters with nonzero biases so every term contributes.
fn params(c_in: usize, c_h: usize, mode: BiasMode, n: usize, r: &mut ChaCha8Rng) -> ConvGruParams<f64> {
    let bias = bias_shape(c_h, mode, (n, n));
    let mut p = ConvGruParams::init(c_in, c_h, 3, 1, &bias, r);
    for b in [&mut p.b_z, &mut p.b_r, &mut p.b_o] {
        *b = Tensor::uniform(b.shape(), -0.5, 0.5, r);
    }
    p
}

fn reverse_time(seq: &Tensor<f64>) -> Tensor<f64> {
    let steps = seq.shape()[0];
    let frames: Vec<Tensor<f64>> = (0..steps).rev().map(|t| seq.index0(t).unwrap()).collect();
    Tensor::stack(&frames).unwrap()
}

fn max_diff(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

/// One input channel, one hidden channel, a 1x1 map: only the centre tap of
/// each 3x3 input kernel sees data.
fn scalar_params() -> ConvGruParams<f64> {
    let mut p = ConvGruParams::<f64>::zeros(1, 1, 3, 1, &[1]);
    let centre = |v: f64| {
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = v;
        k
    };
    let one = |v: f64| Tensor::new(vec![1, 1, 1, 1], vec![v]).unwrap();
    let bias = |v: f64| Tensor::new(vec![1], vec![v]).unwrap();
    p.w_zx = centre(0.5);
    p.w_zh = one(-0.3);
    p.b_z = bias(0.1);
    p.w_rx = centre(0.2);
    p.w_rh = one(0.4);
    p.b_r = bias(-0.1);
    p.w_ox = centre(0.7);
    p.w_oh = one(0.6);
    p.b_o = bias(0.05);
    p
}

fn scalar_clip() -> Tensor<f64> {
    Tensor::new(vec![2, 1, 1, 1], vec![1.0, -0.5]).unwrap()
}

fn values(maps: &[Tensor<f64>]) -> Vec<f64> {
    maps.iter().map(|m| m.data()[0]).collect()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
    }
}

#[test]
fn scalar_transcript_standard_rule() {
    let p = scalar_params();
    let f = convgru_forward(&scalar_clip(), &p, UpdateRule::Standard).unwrap();
    assert_close(&values(&f), &[0.2250610258857278, -0.028168234179593424], 1e-12);
    let b = convgru_backward_direction(&scalar_clip(), &p, UpdateRule::Standard).unwrap();
    assert_close(&values(&b), &[0.10541969682630048, -0.15656009225654216], 1e-12);
}

#[test]
fn scalar_transcript_literal_rule() {
    let p = scalar_params();
    let f = convgru_forward(&scalar_clip(), &p, UpdateRule::PaperLiteral).unwrap();
    assert_close(&values(&f), &[0.8707173321115231, -0.21100742863440783], 1e-12);
    let b = convgru_backward_direction(&scalar_clip(), &p, UpdateRule::PaperLiteral).unwrap();
    assert_close(&values(&b), &[0.8564971659786527, -0.3878451695846674], 1e-12);
}

#[test]
fn scalar_transcript_in_single_precision() {
    let p = scalar_params();
    let p32 = ConvGruParams::from_tensors(p.tensors().iter().map(|t| t.cast::<f32>()).collect()).unwrap();
    let f = convgru_forward(&scalar_clip().cast::<f32>(), &p32, UpdateRule::Standard).unwrap();
    let got: Vec<f64> = f.iter().map(|m| m.data()[0] as f64).collect();
    assert_close(&got, &[0.2250610258857278, -0.028168234179593424], 1e-6);
}

#[test]
fn time_reversal_over_fifty_instances() {
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let steps = 1 + (seed as usize % 5);
        let seq = clip(steps, 2, 4, &mut r);
        let p = params(2, 3, BiasMode::PerChannel, 4, &mut r);
        let back = convgru_backward_direction(&seq, &p, UpdateRule::Standard).unwrap();
        let mut fwd_rev = convgru_forward(&reverse_time(&seq), &p, UpdateRule::Standard).unwrap();
        fwd_rev.reverse();
        assert!(max_diff(&back, &fwd_rev) <= 1e-12, "seed {seed}");
    }
}

#[test]
fn palindromic_clip_with_shared_parameters() {
    let mut r = rng(77);
    let a = clip(3, 2, 3, &mut r);
    let frames: Vec<Tensor<f64>> = [0, 1, 2, 1, 0].iter().map(|&t| a.index0(t).unwrap()).collect();
    let seq = Tensor::stack(&frames).unwrap();
    let p = params(2, 2, BiasMode::PerChannel, 3, &mut r);
    let f = convgru_forward(&seq, &p, UpdateRule::Standard).unwrap();
    let b = convgru_backward_direction(&seq, &p, UpdateRule::Standard).unwrap();
    for t in 0..5 {
        assert!(f[t].max_abs_diff(&b[4 - t]) <= 1e-12);
    }
}

#[test]
fn layer_matches_gate_by_gate_cell() {
    for rule in [UpdateRule::Standard, UpdateRule::PaperLiteral] {
        for mode in [BiasMode::PerChannel, BiasMode::Spatial] {
            let mut r = rng(9);
            let seq = clip(4, 3, 5, &mut r);
            let p = params(3, 3, mode, 5, &mut r);
            let maps = convgru_forward(&seq, &p, rule).unwrap();
            let mut h = Tensor::zeros(&[3, 5, 5]);
            for (t, m) in maps.iter().enumerate() {
                let cell = convgru_cell(&seq.index0(t).unwrap(), &h, &p, rule).unwrap();
                assert!(cell.h.max_abs_diff(m) <= 1e-12, "{rule:?} {mode:?} t={t}");
                h = cell.h;
            }
        }
    }
}

#[test]
fn bidirectional_composes_two_unidirectional_runs() {
    let mut r = rng(21);
    let seq = clip(4, 2, 4, &mut r);
    let fwd = params(2, 3, BiasMode::PerChannel, 4, &mut r);
    let bwd = params(2, 3, BiasMode::PerChannel, 4, &mut r);
    let bi = bidirectional(&seq, &fwd, &bwd, UpdateRule::Standard).unwrap();
    let f = convgru_forward(&seq, &fwd, UpdateRule::Standard).unwrap();
    let mut b = convgru_forward(&reverse_time(&seq), &bwd, UpdateRule::Standard).unwrap();
    b.reverse();
    assert!(max_diff(&bi.forward, &f) <= 1e-12);
    assert!(max_diff(bi.backward.as_ref().unwrap(), &b) <= 1e-12);

    // Changing the reverse direction leaves the forward maps untouched.
    let other = params(2, 3, BiasMode::PerChannel, 4, &mut r);
    let bi2 = bidirectional(&seq, &fwd, &other, UpdateRule::Standard).unwrap();
    assert_eq!(bi.forward, bi2.forward);
    assert_ne!(bi.backward, bi2.backward);

    let last = fuse(&bi, FusionMethod::LastFlat).unwrap();
    let mut want = f[3].clone();
    want.add_assign(&b[0]).unwrap();
    want.scale_in_place(0.5);
    assert!(last.max_abs_diff(&want.reshape(&[48]).unwrap()) <= 1e-15);
}

#[test]
fn fusion_shapes() {
    let mut r = rng(4);
    let seq = clip(5, 2, 3, &mut r);
    let p = params(2, 4, BiasMode::PerChannel, 3, &mut r);
    let uni = HiddenSequence::new(convgru_forward(&seq, &p, UpdateRule::Standard).unwrap(), None).unwrap();
    let bi = bidirectional(&seq, &p, &p, UpdateRule::Standard).unwrap();
    for h in [&uni, &bi] {
        assert_eq!(fuse(h, FusionMethod::LastFlat).unwrap().shape(), &[36]);
        assert_eq!(fuse(h, FusionMethod::MeanFlat).unwrap().shape(), &[36]);
        assert_eq!(fuse(h, FusionMethod::LastAvg).unwrap().shape(), &[4]);
        assert_eq!(fuse(h, FusionMethod::Flat).unwrap().shape(), &[5, 36]);
    }
}

#[test]
fn literal_rule_rejects_channel_mismatch() {
    let mut r = rng(1);
    let seq = clip(2, 2, 3, &mut r);
    let p = params(2, 3, BiasMode::PerChannel, 3, &mut r);
    let err = convgru_forward(&seq, &p, UpdateRule::PaperLiteral).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
}

#[test]
fn vector_gru_equals_pointwise_convgru() {
    let mut r = rng(12);
    let (input, hidden) = (5, 3);
    let vp = VectorGruParams::<f64>::init(input, hidden, &mut r);
    // A 1x1 ConvGRU with 1x1 input kernels over a 1x1 map.
    let as_kernel = |w: &Tensor<f64>| {
        let s = w.shape();
        w.reshape(&[s[0], s[1], 1, 1]).unwrap()
    };
    let mut cp = ConvGruParams::<f64>::zeros(input, hidden, 1, 1, &[hidden]);
    cp.w_zx = as_kernel(&vp.w_zx);
    cp.w_zh = as_kernel(&vp.w_zh);
    cp.b_z = vp.b_z.clone();
    cp.w_rx = as_kernel(&vp.w_rx);
    cp.w_rh = as_kernel(&vp.w_rh);
    cp.b_r = vp.b_r.clone();
    cp.w_ox = as_kernel(&vp.w_ox);
    cp.w_oh = as_kernel(&vp.w_oh);
    cp.b_o = vp.b_o.clone();
    let seq = clip(3, input, 1, &mut r);
    let maps = convgru_forward(&seq, &cp, UpdateRule::Standard).unwrap();
    let mut h = Tensor::zeros(&[hidden]);
    for (t, m) in maps.iter().enumerate() {
        let x = seq.index0(t).unwrap().reshape(&[input]).unwrap();
        h = gru_vector_step(&x, &h, &vp).unwrap();
        assert!(h.max_abs_diff(&m.reshape(&[hidden]).unwrap()) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gates_stay_in_range_and_state_is_bounded(
        seed in 0u64..10_000, scale in 0.1f64..20.0, literal in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let seq = clip(4, 2, 3, &mut r).map(|v| v * scale);
        let mut p = params(2, 2, BiasMode::PerChannel, 3, &mut r);
        for t in p.tensors_mut() {
            t.scale_in_place(scale);
        }
        let rule = if literal { UpdateRule::PaperLiteral } else { UpdateRule::Standard };
        let bound = if literal { seq.data().iter().fold(1.0f64, |m, v| m.max(v.abs())) } else { 1.0 };
        let mut h = Tensor::zeros(&[2, 3, 3]);
        for t in 0..4 {
            let c = convgru_cell(&seq.index0(t).unwrap(), &h, &p, rule).unwrap();
            prop_assert!(c.z.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(c.r.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(c.o.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
            prop_assert!(c.h.data().iter().all(|&v| v.abs() <= bound + 1e-12));
            h = c.h;
        }
    }

    #[test]
    fn time_reversal_property(seed in 0u64..10_000, steps in 1usize..6) {
        let mut r = rng(seed);
        let seq = clip(steps, 2, 3, &mut r);
        let p = params(2, 2, BiasMode::Spatial, 3, &mut r);
        let back = convgru_backward_direction(&seq, &p, UpdateRule::Standard).unwrap();
        let mut fwd_rev = convgru_forward(&reverse_time(&seq), &p, UpdateRule::Standard).unwrap();
        fwd_rev.reverse();
        prop_assert!(max_diff(&back, &fwd_rev) <= 1e-12);
    }
}

fn layer_grad_error(bidir: bool, rule: UpdateRule, mode: BiasMode, seed: u64) -> f64 {
    let mut r = rng(seed);
    let seq = clip(3, 2, 6, &mut r);
    let fwd = params(2, 2, mode, 6, &mut r);
    let bwd = params(2, 2, mode, 6, &mut r);
    let weights = Tensor::<f64>::uniform(&[2 * 6 * 6], 0.5, 1.5, &mut r);
    let mut inputs = vec![seq];
    inputs.extend(fwd.tensors().into_iter().cloned());
    if bidir {
        inputs.extend(bwd.tensors().into_iter().cloned());
    }
    let report = grad_check(
        |g, v| {
            let f = convgru_direction(g, v[0], &GateVars::from_slice(&v[1..10]), rule, Direction::Forward)?;
            let b = if bidir {
                Some(convgru_direction(g, v[0], &GateVars::from_slice(&v[10..19]), rule, Direction::Backward)?)
            } else {
                None
            };
            let feat = convgru::recurrent::fuse_vars(g, &f, b.as_deref(), FusionMethod::MeanFlat)?;
            let w = g.constant(weights.clone());
            let p = g.mul(feat, w)?;
            let s = g.sum_all(p)?;
            let s = g.scale(s, 0.05)?;
            g.tanh(s)
        },
        &inputs,
        &GradCheckOptions { max_coords: Some(24), seed, ..Default::default() },
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn layer_gradients_match_finite_differences() {
    for bidir in [false, true] {
        for rule in [UpdateRule::Standard, UpdateRule::PaperLiteral] {
            for (seed, mode) in [(1, BiasMode::PerChannel), (2, BiasMode::Spatial)] {
                let e = layer_grad_error(bidir, rule, mode, seed);
                assert!(e <= 1e-4, "bidir={bidir} {rule:?} {mode:?}: {e}");
            }
        }
    }
}

