//! Central finite-difference check of reverse-mode gradients (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    /// Seed for the coordinate subset.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], requires_grad: bool) -> Result<(Graph<'static, f64>, Vec<Var>, Var)>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone(), requires_grad))
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::shape(format!(
            "gradient check needs a scalar computation, got shape {:?}",
            g.shape(out)
        )));
    }
    Ok((g, vars, out))
}

/// Compares the tape gradient of a scalar computation against central
/// differences `(f(x + eps) - f(x - eps)) / (2 eps)` coordinate by
/// coordinate and reports the largest relative error.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = evaluate(&f, inputs, true)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < input.len() => {
                let mut c = sample(&mut rng, input.len(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let x0 = input.data()[c];
            probe[which].data_mut()[c] = x0 + opts.eps;
            let (gp, _, op) = evaluate(&f, &probe, false)?;
            let fp = gp.value(op).data()[0];
            probe[which].data_mut()[c] = x0 - opts.eps;
            let (gm, _, om) = evaluate(&f, &probe, false)?;
            let fm = gm.value(om).data()[0];
            probe[which].data_mut()[c] = x0;

            let numeric = (fp - fm) / (2.0 * opts.eps);
            let err = relative_error(analytic[which].data()[c], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((which, c));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let x = Tensor::new(vec![4], vec![1.0, 2.0, -3.0, 0.25]).unwrap();
        let report = grad_check(
            |g, v| {
                let p = g.mul(v[0], v[1])?;
                g.sum_all(p)
            },
            &[w, x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-10, "{report:?}");
        assert_eq!(report.checked, 8);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::<f64>::zeros(&[3]);
        let r = grad_check(|g, v| g.scale(v[0], 2.0), &[x], &GradCheckOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }
}
