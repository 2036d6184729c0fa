use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` and the softmax probabilities, whose
/// difference from the one-hot label is the logit gradient.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Vec<T>)> {
    let k = logits.len();
    if logits.rank() != 1 || k < 2 {
        return Err(Error::shape(format!(
            "cross-entropy needs a vector of at least 2 logits, got {:?}",
            logits.shape()
        )));
    }
    if label >= k {
        return Err(Error::OutOfRange(format!("label {label} for {k} classes")));
    }
    let x = logits.data();
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    Ok((lse - x[label], softmax(x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let l = Tensor::<f64>::zeros(&[9]);
        let (loss, p) = softmax_cross_entropy(&l, 4).unwrap();
        assert!((loss - 9f64.ln()).abs() < 1e-12);
        assert!((loss - 2.1972).abs() < 1e-4);
        assert!(p.iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let mut v = vec![0.0f32; 9];
        v[0] = 1000.0;
        let l = Tensor::new(vec![9], v).unwrap();
        let (loss, p) = softmax_cross_entropy(&l, 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn label_out_of_range() {
        let l = Tensor::<f64>::zeros(&[3]);
        assert!(matches!(softmax_cross_entropy(&l, 3), Err(Error::OutOfRange(_))));
    }
}
