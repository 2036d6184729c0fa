use rand::Rng;
use serde::{Deserialize, Serialize};

use super::detect::WINDOW_FRAMES;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Steps {
    Fixed(usize),
    /// Each gap drawn independently from the set.
    Random(Vec<usize>),
}

/// How frame indices are drawn from a 40-frame window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub id: u8,
    pub train_starts: Vec<usize>,
    pub train_steps: Steps,
    pub length: usize,
    pub test_starts: Vec<usize>,
    pub test_step: usize,
}

impl SamplingScheme {
    pub const IDS: [u8; 7] = [1, 2, 3, 4, 5, 6, 7];

    pub fn table(id: u8) -> Result<Self> {
        let fixed = |starts: usize, step: usize, length: usize| SamplingScheme {
            id,
            train_starts: (0..starts).collect(),
            train_steps: Steps::Fixed(step),
            length,
            test_starts: (0..starts).collect(),
            test_step: step,
        };
        Ok(match id {
            1 => fixed(2, 2, 20),
            2 => fixed(4, 4, 10),
            3 => fixed(5, 5, 8),
            4 => fixed(8, 8, 5),
            5 => SamplingScheme {
                id,
                train_starts: (0..4).collect(),
                train_steps: Steps::Random(vec![3, 4, 5]),
                length: 10,
                test_starts: (0..4).collect(),
                test_step: 4,
            },
            6 => SamplingScheme {
                id,
                train_starts: (0..30).collect(),
                train_steps: Steps::Fixed(1),
                length: 10,
                test_starts: vec![0, 10, 20, 30],
                test_step: 1,
            },
            7 => SamplingScheme {
                id,
                train_starts: (0..20).collect(),
                train_steps: Steps::Fixed(2),
                length: 10,
                test_starts: vec![0, 1, 20, 21],
                test_step: 2,
            },
            _ => return Err(Error::config(format!("sampling scheme {id} does not exist (1-7)"))),
        })
    }

    /// Draws the first index, then the rest of the sequence.
    pub fn sample_train<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let first = self.train_starts[rng.gen_range(0..self.train_starts.len())];
        self.sample_train_from(first, rng)
    }

    pub fn sample_train_from<R: Rng + ?Sized>(&self, first: usize, rng: &mut R) -> Vec<usize> {
        match &self.train_steps {
            Steps::Fixed(step) => progression(first, *step, self.length),
            Steps::Random(choices) => loop {
                let gaps: Vec<usize> = (1..self.length).map(|_| choices[rng.gen_range(0..choices.len())]).collect();
                if first + gaps.iter().sum::<usize>() < WINDOW_FRAMES {
                    return indices_from_gaps(first, &gaps);
                }
            },
        }
    }

    pub fn sample_test(&self) -> Vec<Vec<usize>> {
        self.test_starts
            .iter()
            .map(|&s| progression(s, self.test_step, self.length))
            .collect()
    }
}

fn progression(first: usize, step: usize, length: usize) -> Vec<usize> {
    (0..length).map(|k| first + k * step).collect()
}

pub fn indices_from_gaps(first: usize, gaps: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(gaps.len() + 1);
    out.push(first);
    let mut at = first;
    for g in gaps {
        at += g;
        out.push(at);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scheme() {
        assert!(SamplingScheme::table(0).is_err());
        assert!(SamplingScheme::table(8).is_err());
    }

    #[test]
    fn gaps() {
        assert_eq!(indices_from_gaps(3, &[3; 9]), vec![3, 6, 9, 12, 15, 18, 21, 24, 27, 30]);
    }
}
