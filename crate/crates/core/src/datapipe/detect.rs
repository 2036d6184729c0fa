use image::RgbImage;

use super::dataset::{DetectionParams, FrameStore, TrialRecord};
use crate::error::{Error, Result};

/// Frames the detector requires to stay above the image threshold.
pub const RAMP_FRAMES: usize = 8;
/// Length of an action window.
pub const WINDOW_FRAMES: usize = 40;

/// Center crop of side `size` as `[0, 1]` values, interleaved.
pub fn center_crop_unit(img: &RgbImage, size: u32, pixel_scale: f64) -> Result<Vec<f64>> {
    let (w, h) = img.dimensions();
    if w < size || h < size {
        return Err(Error::config(format!("frame {w}x{h} is smaller than the {size}x{size} detection crop")));
    }
    let (x0, y0) = ((w - size) / 2, (h - size) / 2);
    let mut out = Vec::with_capacity((size * size * 3) as usize);
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            out.extend(img.get_pixel(x, y).0.iter().map(|&v| v as f64 / pixel_scale));
        }
    }
    Ok(out)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Image and joint distances of every frame to the reference frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSeries {
    pub dx: Vec<f64>,
    pub dtheta: Vec<f64>,
}

impl MotionSeries {
    pub fn compute(frames: &FrameStore, joints: &[Vec<f64>], params: &DetectionParams) -> Result<Self> {
        let n = frames.len();
        if joints.len() != n {
            return Err(Error::shape(format!("{n} frames but {} joint rows", joints.len())));
        }
        let r = params.reference_frame;
        if r >= n {
            return Err(Error::OutOfRange(format!("reference frame {r} of {n}")));
        }
        let reference = center_crop_unit(&*frames.get(r)?, params.center_crop, params.pixel_scale)?;
        let mut dx = Vec::with_capacity(n);
        for t in 0..n {
            let x = center_crop_unit(&*frames.get(t)?, params.center_crop, params.pixel_scale)?;
            dx.push(distance(&x, &reference));
        }
        let dtheta = joints.iter().map(|j| distance(j, &joints[r])).collect();
        Ok(MotionSeries { dx, dtheta })
    }
}

/// First frame after `reference` where the image distance stays at or
/// above `delta1` and is non-decreasing for 8 frames and the joint
/// distance is at least `delta2`.
pub fn detect_start_from_series(dx: &[f64], dtheta: &[f64], reference: usize, delta1: f64, delta2: f64) -> Result<usize> {
    let n = dx.len().min(dtheta.len());
    for i in reference + 1..(n + 1).saturating_sub(RAMP_FRAMES) {
        let ramp = &dx[i..i + RAMP_FRAMES];
        if ramp.iter().all(|&v| v >= delta1) && ramp.windows(2).all(|w| w[1] >= w[0]) && dtheta[i] >= delta2 {
            return Ok(i);
        }
    }
    Err(Error::NoStart)
}

pub fn detect_start(trial: &TrialRecord, params: &DetectionParams) -> Result<usize> {
    let store = FrameStore::Memory(trial.frames.clone());
    detect_start_in(&store, &trial.joints, params)
}

pub fn detect_start_in(frames: &FrameStore, joints: &[Vec<f64>], params: &DetectionParams) -> Result<usize> {
    if frames.len() < params.reference_frame + 1 + RAMP_FRAMES {
        return Err(Error::OutOfRange(format!("{}-frame trial is too short for detection", frames.len())));
    }
    let s = MotionSeries::compute(frames, joints, params)?;
    detect_start_from_series(&s.dx, &s.dtheta, params.reference_frame, params.delta1, params.delta2)
}

/// Forty consecutive frames starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionWindow {
    pub start: usize,
    pub label: usize,
}

impl ActionWindow {
    pub fn frame(&self, offset: usize) -> usize {
        self.start + offset
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + WINDOW_FRAMES
    }
}

/// Clamps `start` so the window fits in `trial_len` frames.
pub fn make_window(trial_len: usize, start: usize, label: usize) -> Result<ActionWindow> {
    if trial_len < WINDOW_FRAMES {
        return Err(Error::OutOfRange(format!("{trial_len}-frame trial is shorter than a {WINDOW_FRAMES}-frame window")));
    }
    let last = trial_len - WINDOW_FRAMES;
    let start = if start > last {
        log::warn!("start frame {start} clamped to {last} to fit a {WINDOW_FRAMES}-frame window");
        last
    } else {
        start
    };
    Ok(ActionWindow { start, label })
}
