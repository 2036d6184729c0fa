use super::tensor::{matmul, MatRef, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Rows and width of a dense-layer input: `[K]` is one row, `[N, K]` is N.
pub(crate) fn dense_rows(input: &[usize], weight: &[usize]) -> Result<usize> {
    if weight.len() != 2 {
        return Err(Error::shape(format!("dense weight must be [out, in], got {weight:?}")));
    }
    let (rows, width) = match input {
        [k] => (1, *k),
        [n, k] => (*n, *k),
        _ => return Err(Error::shape(format!("dense input must be [K] or [N, K], got {input:?}"))),
    };
    if width != weight[1] {
        return Err(Error::shape(format!(
            "dense weight expects width {}, input has {width}",
            weight[1]
        )));
    }
    Ok(rows)
}

pub(crate) fn dense_out_shape(input: &[usize], out: usize) -> Vec<usize> {
    match input {
        [_] => vec![out],
        [n, _] => vec![*n, out],
        _ => unreachable!("validated by dense_rows"),
    }
}

pub(crate) fn dense_forward_raw<T: Scalar>(
    x: &[T],
    rows: usize,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Vec<T> {
    let (out, k) = (weight.shape()[0], weight.shape()[1]);
    let mut y = vec![T::zero(); rows * out];
    matmul(MatRef::new(x, rows, k), MatRef::t(weight.data(), out, k), &mut y, false);
    if let Some(b) = bias {
        for row in y.chunks_mut(out) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
    y
}

/// Affine map `y = W x + b` with `W` shaped `[out, in]`; a `[N, in]` input
/// maps each row independently.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let rows = dense_rows(input.shape(), weight.shape())?;
    if let Some(b) = bias {
        if b.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "dense bias must be [{}], got {:?}",
                weight.shape()[0],
                b.shape()
            )));
        }
    }
    let y = dense_forward_raw(input.data(), rows, weight, bias.map(|b| b.data()));
    Ok(Tensor::from_parts(dense_out_shape(input.shape(), weight.shape()[0]), y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_bias_only() {
        let x = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let eye = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let zero_b = Tensor::<f64>::zeros(&[3]);
        assert_eq!(dense(&x, &eye, Some(&zero_b)).unwrap(), x);
        let b = Tensor::<f64>::new(vec![2], vec![4.0, -1.0]).unwrap();
        let w0 = Tensor::<f64>::zeros(&[2, 3]);
        assert_eq!(dense(&x, &w0, Some(&b)).unwrap(), b);
    }

    #[test]
    fn mismatch_is_an_error() {
        let x = Tensor::<f64>::zeros(&[4]);
        let w = Tensor::<f64>::zeros(&[2, 3]);
        assert!(dense(&x, &w, None).is_err());
    }
}
