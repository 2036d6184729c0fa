//! The gradient-check suite run by the command-line tool: every kernel,
//! ConvGRU layers in both directions and reduced end-to-end models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{Architecture, Model, ModelConfig, Widths};
use crate::recurrent::{bias_shape, convgru_direction, fuse_vars, BiasMode, ConvGruParams, Direction, FusionMethod, GateVars, UpdateRule};
use crate::seeds::derive_seed;
use crate::tensor_core::{grad_check, GradCheckOptions, Graph, Padding, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Reduces an output to a scalar with distinct weights per coordinate.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::uniform(g.shape(y), 0.5, 1.5, &mut r);
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    g.sum_all(p)
}

struct Suite {
    eps: f64,
    seed: u64,
    results: Vec<CheckResult>,
}

impl Suite {
    fn run<F>(&mut self, name: impl Into<String>, f: F, inputs: &[Tensor<f64>], max_coords: Option<usize>) -> Result<()>
    where
        F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
    {
        let name = name.into();
        let opts = GradCheckOptions {
            eps: self.eps,
            max_coords,
            seed: derive_seed(self.seed, &[self.results.len() as u64]),
        };
        let report = grad_check(f, inputs, &opts)?;
        log::debug!("{name}: {:.3e} over {} coordinates", report.max_rel_error, report.checked);
        self.results.push(CheckResult {
            name,
            max_rel_error: report.max_rel_error,
            checked: report.checked,
        });
        Ok(())
    }
}

fn kernel_checks(s: &mut Suite) -> Result<()> {
    let seed = s.seed;
    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let ws = derive_seed(seed, &[2]);
    let x = uniform(&[2, 6, 5], &mut r);
    for (pad, stride, name) in [(Padding::Same, 1, "conv2d same"), (Padding::Same, 2, "conv2d same stride 2"), (Padding::Valid, 1, "conv2d valid")] {
        let k = uniform(&[3, 2, 3, 3], &mut r);
        let b = uniform(&[3], &mut r);
        s.run(
            name,
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                weighted_sum(g, y, ws)
            },
            &[x.clone(), k, b],
            None,
        )?;
    }
    let k = uniform(&[2, 2, 3, 3], &mut r);
    let sb = uniform(&[2, 6, 5], &mut r);
    s.run(
        "conv2d spatial bias",
        |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, Padding::Same)?;
            weighted_sum(g, y, ws)
        },
        &[x.clone(), k, sb],
        None,
    )?;
    let big = uniform(&[2, 7, 7], &mut r);
    s.run(
        "maxpool2d",
        |g, v| {
            let y = g.maxpool2d(v[0], 3, 2)?;
            weighted_sum(g, y, ws)
        },
        &[big.clone()],
        None,
    )?;
    s.run(
        "global_avg_pool",
        |g, v| {
            let y = g.global_avg_pool(v[0])?;
            weighted_sum(g, y, ws)
        },
        &[big],
        None,
    )?;
    for (name, op) in [("sigmoid", 0), ("tanh", 1), ("leaky_relu", 2)] {
        s.run(
            name,
            |g, v| {
                let y = match op {
                    0 => g.sigmoid(v[0])?,
                    1 => g.tanh(v[0])?,
                    _ => g.leaky_relu(v[0], 0.1)?,
                };
                weighted_sum(g, y, ws)
            },
            &[x.clone()],
            None,
        )?;
    }
    let xv = uniform(&[7], &mut r);
    let w = uniform(&[4, 7], &mut r);
    let b = uniform(&[4], &mut r);
    s.run(
        "dense",
        |g, v| {
            let y = g.dense(v[0], v[1], Some(v[2]))?;
            weighted_sum(g, y, ws)
        },
        &[xv.clone(), w.clone(), b.clone()],
        None,
    )?;
    let rows = uniform(&[3, 7], &mut r);
    s.run(
        "dense rows + mean_axis0",
        |g, v| {
            let y = g.dense(v[0], v[1], Some(v[2]))?;
            let m = g.mean_axis0(y)?;
            weighted_sum(g, m, ws)
        },
        &[rows, w, b],
        None,
    )?;
    let mask: Vec<f64> = (0..7).map(|_| if r.gen_bool(0.8) { 1.25 } else { 0.0 }).collect();
    s.run(
        "dropout",
        |g, v| {
            let y = g.dropout_with_mask(v[0], mask.clone())?;
            let y = g.tanh(y)?;
            weighted_sum(g, y, ws)
        },
        &[xv],
        None,
    )?;
    let logits = uniform(&[9], &mut r).map(|v| 3.0 * v);
    let label = r.gen_range(0..9);
    s.run("softmax_cross_entropy", |g, v| g.softmax_cross_entropy(v[0], label), &[logits], None)?;
    let a = uniform(&[2, 3, 4], &mut r);
    let c = uniform(&[2, 3, 4], &mut r);
    s.run(
        "add / sub / mul / scale / one_minus / narrow / concat / reshape / mean",
        |g, v| {
            let m = g.mul(v[0], v[1])?;
            let d = g.sub(m, v[0])?;
            let o = g.one_minus(d)?;
            let sc = g.scale(o, 0.7)?;
            let n1 = g.narrow(sc, 1, 1, 2)?;
            let n2 = g.narrow(v[1], 1, 0, 1)?;
            let cat = g.concat(&[n1, n2], 1)?;
            let sum = g.add(cat, v[0])?;
            let flat = g.flatten(sum)?;
            let re = g.reshape(flat, &[4, 6])?;
            let mean = g.mean(&[re, re])?;
            weighted_sum(g, mean, ws)
        },
        &[a, c],
        None,
    )?;
    Ok(())
}

fn convgru_params(c_in: usize, c_h: usize, mode: BiasMode, side: usize, rng: &mut ChaCha8Rng) -> Result<ConvGruParams<f64>> {
    let mut p = ConvGruParams::zeros(c_in, c_h, 3, 1, &bias_shape(c_h, mode, (side, side)));
    for t in p.tensors_mut() {
        *t = Tensor::uniform(t.shape(), -0.8, 0.8, rng);
    }
    p.validate()?;
    Ok(p)
}

fn convgru_checks(s: &mut Suite) -> Result<()> {
    let side = 6;
    for bidir in [false, true] {
        for rule in [UpdateRule::Standard, UpdateRule::PaperLiteral] {
            for mode in [BiasMode::PerChannel, BiasMode::Spatial] {
                let mut r = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, &[3, bidir as u64, rule as u64, mode as u64]));
                let seq = uniform(&[3, 2, side, side], &mut r);
                let fwd = convgru_params(2, 2, mode, side, &mut r)?;
                let bwd = convgru_params(2, 2, mode, side, &mut r)?;
                let ws = r.gen();
                let mut inputs = vec![seq];
                inputs.extend(fwd.tensors().into_iter().cloned());
                if bidir {
                    inputs.extend(bwd.tensors().into_iter().cloned());
                }
                let name = format!(
                    "convgru {} {:?} {:?} (T=3, 6x6, 2->2)",
                    if bidir { "bidirectional" } else { "unidirectional" },
                    rule,
                    mode
                );
                s.run(
                    name,
                    |g, v| {
                        let f = convgru_direction(g, v[0], &GateVars::from_slice(&v[1..10]), rule, Direction::Forward)?;
                        let b = if bidir {
                            Some(convgru_direction(g, v[0], &GateVars::from_slice(&v[10..19]), rule, Direction::Backward)?)
                        } else {
                            None
                        };
                        let feat = fuse_vars(g, &f, b.as_deref(), FusionMethod::MeanFlat)?;
                        let sum = weighted_sum(g, feat, ws)?;
                        let sum = g.scale(sum, 0.05)?;
                        g.tanh(sum)
                    },
                    &inputs,
                    Some(24),
                )?;
            }
        }
    }
    Ok(())
}

fn model_checks(s: &mut Suite) -> Result<()> {
    for fusion in [FusionMethod::LastFlat, FusionMethod::MeanFlat, FusionMethod::LastAvg, FusionMethod::Flat] {
        let cfg = ModelConfig {
            architecture: Architecture::Convgru2d,
            input_size: 16,
            conv1_stride: 1,
            fusion,
            widths: Widths::divided_by(32),
            seed: derive_seed(s.seed, &[4]),
            ..ModelConfig::default()
        };
        let m = Model::<f64>::build(cfg)?;
        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, &[5]));
        let clip = uniform(&m.clip_shape(3), &mut r);
        let label = r.gen_range(0..9);
        let mut inputs: Vec<Tensor<f64>> = m.params().iter().map(|p| p.value.clone()).collect();
        inputs.push(clip);
        let n = m.params().len();
        s.run(
            format!("convgru2d end-to-end {fusion:?} (16x16, widths/32, T=3)"),
            |g, v| {
                let out = m.forward_vars(g, v[n], &v[..n], None, false)?;
                g.softmax_cross_entropy(out.logits, label)
            },
            &inputs,
            Some(6),
        )?;
    }
    Ok(())
}

/// Runs every check and returns the worst relative error of each.
pub fn gradcheck_suite(seed: u64, eps: f64) -> Result<Vec<CheckResult>> {
    let mut s = Suite {
        eps,
        seed,
        results: Vec::new(),
    };
    kernel_checks(&mut s)?;
    convgru_checks(&mut s)?;
    model_checks(&mut s)?;
    Ok(s.results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_is_deterministic() {
        let a = gradcheck_suite(0, 1e-5).unwrap();
        assert!(a.len() >= 25);
        for c in &a {
            assert!(c.checked > 0, "{}", c.name);
            assert!(c.max_rel_error <= 1e-4, "{}: {}", c.name, c.max_rel_error);
        }
        assert_eq!(a, gradcheck_suite(0, 1e-5).unwrap());
    }
}
