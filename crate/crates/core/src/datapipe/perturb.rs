use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::detect::{ActionWindow, WINDOW_FRAMES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Take 40 + k frames and drop k of them.
    FrameRate,
    /// Zero k of the 40 preprocessed frames.
    Missing,
    /// Shift the center crop by k pixels.
    Position,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 3] = [PerturbationKind::FrameRate, PerturbationKind::Missing, PerturbationKind::Position];

    pub fn levels(self) -> RangeInclusive<u32> {
        match self {
            PerturbationKind::FrameRate | PerturbationKind::Missing => 1..=5,
            PerturbationKind::Position => 1..=10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::FrameRate => "frame_rate",
            PerturbationKind::Missing => "missing",
            PerturbationKind::Position => "position",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.name().replace('_', "") == key)
            .ok_or_else(|| Error::config(format!("unknown perturbation {s:?}; expected frame_rate, missing or position")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub level: u32,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, level: u32, seed: u64) -> Result<Self> {
        let spec = PerturbationSpec { kind, level, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.kind.levels();
        if !r.contains(&self.level) {
            return Err(Error::OutOfRange(format!(
                "{} level {} outside {}..={}",
                self.kind,
                self.level,
                r.start(),
                r.end()
            )));
        }
        Ok(())
    }
}

/// The 40 frames fed to sampling, as offsets from the window start, plus
/// which of them are blanked and how far the crop is displaced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowView {
    pub offsets: Vec<usize>,
    pub zeroed: Vec<bool>,
    pub shift: (i64, i64),
}

impl WindowView {
    pub fn plain() -> Self {
        WindowView {
            offsets: (0..WINDOW_FRAMES).collect(),
            zeroed: vec![false; WINDOW_FRAMES],
            shift: (0, 0),
        }
    }

    pub fn zeroed_count(&self) -> usize {
        self.zeroed.iter().filter(|z| **z).count()
    }
}

/// Integer crop shift of length `bias` in direction `angle`.
pub fn shift_for(bias: u32, angle: f64) -> (i64, i64) {
    let b = bias as f64;
    ((b * angle.cos()).round() as i64, (b * angle.sin()).round() as i64)
}

/// Applies `spec` to a window of a `trial_len`-frame trial.
pub fn perturb(window: &ActionWindow, trial_len: usize, spec: &PerturbationSpec) -> Result<WindowView> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.level as usize;
    let mut view = WindowView::plain();
    match spec.kind {
        PerturbationKind::FrameRate => {
            let span = WINDOW_FRAMES + k;
            if window.start + span > trial_len {
                return Err(Error::OutOfRange(format!(
                    "frame-rate level {k} needs frames {}..{} of a {trial_len}-frame trial",
                    window.start,
                    window.start + span
                )));
            }
            let mut drop = vec![false; span];
            for i in index::sample(&mut rng, span, k) {
                drop[i] = true;
            }
            view.offsets = (0..span).filter(|&i| !drop[i]).collect();
        }
        PerturbationKind::Missing => {
            for i in index::sample(&mut rng, WINDOW_FRAMES, k) {
                view.zeroed[i] = true;
            }
        }
        PerturbationKind::Position => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            view.shift = shift_for(spec.level, angle);
        }
    }
    Ok(view)
}
