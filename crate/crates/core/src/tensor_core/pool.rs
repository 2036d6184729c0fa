use super::conv::{out_dim, Padding};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Spatial layout shared by the pooling kernels: `planes` independent
/// `h x w` maps (all leading axes folded together).
fn planes_of(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(Error::shape(format!(
            "pooling needs at least C x H x W, got {shape:?}"
        )));
    }
    let r = shape.len();
    let planes = shape[..r - 2].iter().product();
    Ok((planes, shape[r - 2], shape[r - 1]))
}

/// Max pooling with VALID windows. Returns the pooled tensor and, for each
/// output element, the flat input index of its (first row-major) maximum.
pub fn maxpool2d_with_argmax<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (planes, h, w) = planes_of(input.shape())?;
    let oh = out_dim(h, window, stride, Padding::Valid)?;
    let ow = out_dim(w, window, stride, Padding::Valid)?;
    let x = input.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = x[best_idx];
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    let mut shape = input.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Ok((Tensor::from_parts(shape, out), arg))
}

pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    maxpool2d_with_argmax(input, window, stride).map(|(t, _)| t)
}

/// Per-channel spatial mean: `C x H x W -> [C]`, `N x C x H x W -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (planes, h, w) = planes_of(input.shape())?;
    let area = h * w;
    let scale = T::one() / T::lit(area as f64);
    let out = input
        .data()
        .chunks(area)
        .map(|c| c.iter().copied().sum::<T>() * scale)
        .collect::<Vec<_>>();
    debug_assert_eq!(out.len(), planes);
    let shape = input.shape()[..input.rank() - 2].to_vec();
    Ok(Tensor::from_parts(shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_4x4_pools_to_ten() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64);
        let (y, arg) = maxpool2d_with_argmax(&x, 3, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
        assert_eq!(arg, vec![10]);
    }

    #[test]
    fn constant_input_routes_to_first_element() {
        let x = Tensor::<f32>::full(&[2, 5, 5], 1.5);
        let (y, arg) = maxpool2d_with_argmax(&x, 3, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.5));
        // window origin of the first output in each plane
        assert_eq!(arg[0], 0);
        assert_eq!(arg[4], 25);
    }

    #[test]
    fn extent_below_window_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5]);
        assert!(matches!(maxpool2d(&x, 3, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn avg_pool_mean() {
        let x = Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::<f64>::full(&[3, 4, 2], -0.75);
        assert_eq!(global_avg_pool(&c).unwrap().data(), &[-0.75; 3]);
    }
}
