use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How a configured dropout rate is interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutReading {
    /// The rate is the probability of keeping a unit.
    #[default]
    KeepProbability,
    /// The rate is the probability of zeroing a unit.
    DropProbability,
}

impl DropoutReading {
    pub fn keep_prob(self, rate: f64) -> f64 {
        match self {
            DropoutReading::KeepProbability => rate,
            DropoutReading::DropProbability => 1.0 - rate,
        }
    }
}

pub fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if keep_prob > 0.0 && keep_prob <= 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!(
            "keep probability must lie in (0, 1], got {keep_prob}"
        )))
    }
}

/// Inverted-dropout multipliers: `0` with probability `1 - keep_prob`,
/// otherwise `1 / keep_prob`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, keep_prob: f64, rng: &mut R) -> Vec<T> {
    let scale = T::lit(1.0 / keep_prob);
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < keep_prob {
                scale
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Inverted dropout. Evaluation mode (`training == false`) and
/// `keep_prob == 1` are the identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    keep_prob: f64,
    rng: &mut R,
    training: bool,
) -> Result<Tensor<T>> {
    check_keep_prob(keep_prob)?;
    if !training || keep_prob == 1.0 {
        return Ok(input.clone());
    }
    let mask: Vec<T> = dropout_mask(input.len(), keep_prob, rng);
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Tensor::new(input.shape().to_vec(), data)
}
