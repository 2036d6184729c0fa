use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn leaky_relu_scalar<T: Scalar>(x: T, alpha: T) -> T {
    if x >= T::zero() {
        x
    } else {
        alpha * x
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, alpha: T) -> Tensor<T> {
    x.map(|v| leaky_relu_scalar(v, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!((leaky_relu_scalar(-2.0f64, 0.1) + 0.2).abs() < 1e-15);
        assert_eq!(leaky_relu_scalar(3.0f64, 0.1), 3.0);
        assert_eq!(sigmoid_scalar(-1000.0f64), 0.0);
        assert_eq!(sigmoid_scalar(1000.0f32), 1.0);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let eps = 1e-6;
        let slope = ((eps as f64).tanh() - (-eps as f64).tanh()) / (2.0 * eps);
        assert!((slope - 1.0).abs() < 1e-10);
    }
}
