use rand::Rng;

use super::dataset::{Dataset, FrameStore, Normalization, TrialEntry};
use super::detect::{detect_start_in, make_window, ActionWindow, WINDOW_FRAMES};
use super::perturb::{PerturbationKind, WindowView};
use super::sampling::SamplingScheme;
use super::transform::{augment_with, preprocess_with, AugmentParams, CropGeometry, JitterStrength};
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Frames kept past the window end for frame-rate perturbation.
pub const SPARE_FRAMES: usize = 5;

/// A trial after start detection: the window plus the frames it needs.
#[derive(Clone, Debug)]
pub struct PreparedTrial {
    pub entry: TrialEntry,
    pub detected_start: usize,
    pub window: ActionWindow,
    pub trial_len: usize,
    /// Frames from the window start on, at most 45.
    pub frames: FrameStore,
}

impl PreparedTrial {
    pub fn label(&self) -> usize {
        self.window.label
    }
}

/// Detects the start of every listed trial. With `cache` the window frames
/// are decoded once and kept in memory, otherwise they are read per use.
pub fn prepare_trials(ds: &Dataset, indices: &[usize], cache: bool) -> Result<Vec<PreparedTrial>> {
    indices.iter().map(|&i| prepare_trial(ds, &ds.entries()[i], cache)).collect()
}

pub fn prepare_trial(ds: &Dataset, entry: &TrialEntry, cache: bool) -> Result<PreparedTrial> {
    let n = ds.manifest.frame_count;
    let label = ds.load_label(entry)?;
    let joints = ds.load_joints(entry)?;
    let paths: Vec<_> = (0..n).map(|i| ds.frame_path(entry, i)).collect();
    let detected_start = detect_start_in(&FrameStore::Disk(paths.clone()), &joints, &ds.manifest.detection)
        .map_err(|e| match e {
            Error::NoStart => Error::dataset(
                paths[0].parent().unwrap_or(&ds.root),
                "no starting frame satisfies the detection conditions",
            ),
            other => other,
        })?;
    let window = make_window(n, detected_start, label)?;
    let end = (window.start + WINDOW_FRAMES + SPARE_FRAMES).min(n);
    let frames = if cache {
        FrameStore::Memory(
            (window.start..end)
                .map(|i| ds.load_frame(entry, i))
                .collect::<Result<_>>()?,
        )
    } else {
        FrameStore::Disk(paths[window.start..end].to_vec())
    };
    Ok(PreparedTrial {
        entry: entry.clone(),
        detected_start,
        window,
        trial_len: n,
        frames,
    })
}

/// Turns prepared trials into `[T, 3, out, out]` clips.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBuilder {
    pub geometry: CropGeometry,
    pub jitter: JitterStrength,
    pub normalization: Normalization,
}

impl ClipBuilder {
    pub fn new(geometry: CropGeometry, normalization: Normalization) -> Self {
        ClipBuilder {
            geometry,
            jitter: JitterStrength::default(),
            normalization,
        }
    }

    fn frame_len(&self) -> usize {
        let o = self.geometry.output as usize;
        3 * o * o
    }

    fn clip(&self, steps: usize, data: Vec<f32>) -> Result<Tensor<f32>> {
        let o = self.geometry.output as usize;
        Tensor::new(vec![steps, 3, o, o], data)
    }

    /// One training clip: sampled indices, one crop and jitter draw shared
    /// by all frames.
    pub fn train_clip<R: Rng + ?Sized>(&self, trial: &PreparedTrial, scheme: &SamplingScheme, rng: &mut R) -> Result<Tensor<f32>> {
        let indices = scheme.sample_train(rng);
        self.augmented(trial, &indices, rng)
    }

    /// One frame picked uniformly from a sampled sequence, for single-frame
    /// models.
    pub fn train_frame<R: Rng + ?Sized>(&self, trial: &PreparedTrial, scheme: &SamplingScheme, rng: &mut R) -> Result<Tensor<f32>> {
        let indices = scheme.sample_train(rng);
        let pick = indices[rng.gen_range(0..indices.len())];
        self.augmented(trial, &[pick], rng)
    }

    fn augmented<R: Rng + ?Sized>(&self, trial: &PreparedTrial, indices: &[usize], rng: &mut R) -> Result<Tensor<f32>> {
        let params = AugmentParams::draw(&self.geometry, &self.jitter, rng);
        let mut data = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            let img = trial.frames.get(i)?;
            data.extend(augment_with(&img, &self.geometry, &params, &self.normalization, (0, 0))?);
        }
        self.clip(indices.len(), data)
    }

    /// Every test clip of the scheme, drawn from `view`.
    pub fn test_clips(&self, trial: &PreparedTrial, scheme: &SamplingScheme, view: &WindowView) -> Result<Vec<Tensor<f32>>> {
        let lists = scheme.sample_test();
        let mut cache: Vec<Option<Vec<f32>>> = vec![None; WINDOW_FRAMES];
        let mut clips = Vec::with_capacity(lists.len());
        for list in lists {
            let mut data = Vec::with_capacity(list.len() * self.frame_len());
            for &i in &list {
                if cache[i].is_none() {
                    cache[i] = Some(if view.zeroed[i] {
                        vec![0.0; self.frame_len()]
                    } else {
                        let img = trial.frames.get(view.offsets[i])?;
                        preprocess_with(&img, &self.geometry, &self.normalization, view.shift)?
                    });
                }
                data.extend_from_slice(cache[i].as_ref().expect("filled above"));
            }
            clips.push(self.clip(list.len(), data)?);
        }
        Ok(clips)
    }
}

/// Geometry for a source resolution: the standard crops when the frames
/// are large enough, otherwise the same proportions scaled down.
pub fn geometry_for(width: u32, height: u32, output: u32) -> CropGeometry {
    let side = width.min(height);
    if side >= 256 {
        CropGeometry {
            output,
            ..CropGeometry::default()
        }
    } else {
        CropGeometry::scaled(side, output)
    }
}

/// Whether a perturbation kind can be applied to this trial at `level`.
pub fn supports(trial: &PreparedTrial, kind: PerturbationKind, level: u32) -> bool {
    kind != PerturbationKind::FrameRate || trial.window.start + WINDOW_FRAMES + level as usize <= trial.trial_len
}
