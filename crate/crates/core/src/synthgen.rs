//! Synthetic pitch-like trials.
//!
//! Every trial idles on a static frame, then an arm sprite extends over
//! eight frames (the detectable start) and the class is carried either by
//! a held release pose or by the order in which a ball visits a ring of
//! positions. In the motion-cued mode all classes show the same set of
//! frames after the start, so only frame order separates them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datapipe::{
    detect_start, geometry_for, write_manifest, write_trial, DetectionParams, Manifest, Normalization, TrialEntry,
    TrialRecord, NUM_CLASSES, TRIAL_FRAMES,
};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

pub const WINDUP_FRAMES: usize = 8;
pub const RING_CELLS: usize = 8;
pub const SUB_OFFSETS: usize = 4;
pub const BALL_FRAMES: usize = RING_CELLS * SUB_OFFSETS;
/// Range planted starts are drawn from when none is fixed.
pub const START_RANGE: std::ops::RangeInclusive<usize> = 11..=45;
pub const MIN_RESOLUTION: u32 = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// The class is a static release pose.
    PoseCued,
    /// The class is the visiting order of the ball.
    #[default]
    MotionCued,
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthMode::PoseCued => "pose_cued",
            SynthMode::MotionCued => "motion_cued",
        })
    }
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('-', "_").as_str() {
            "pose_cued" | "posecued" | "pose" => Ok(SynthMode::PoseCued),
            "motion_cued" | "motioncued" | "motion" => Ok(SynthMode::MotionCued),
            _ => Err(Error::config(format!("unknown synth mode {s:?}; expected pose_cued or motion_cued"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub mode: SynthMode,
    /// Side of the square source frames.
    pub resolution: u32,
    pub trials_per_class: usize,
    pub participants: usize,
    /// Fixed start frame; drawn per trial from 11..=45 when absent.
    pub planted_start: Option<usize>,
    pub seed: u64,
    pub joint_count: usize,
    /// Standard deviation of joint noise in meters.
    pub joint_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            mode: SynthMode::MotionCued,
            resolution: 256,
            trials_per_class: 10,
            participants: 1,
            planted_start: None,
            seed: 0,
            joint_count: 4,
            joint_noise: 0.002,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::config(format!(
                "resolution {} is below the minimum {MIN_RESOLUTION}",
                self.resolution
            )));
        }
        if self.trials_per_class == 0 {
            return Err(Error::config("trials_per_class must be at least 1"));
        }
        if self.participants == 0 || self.participants > self.trials_per_class {
            return Err(Error::config(format!(
                "participants must be in 1..={}",
                self.trials_per_class
            )));
        }
        if let Some(s) = self.planted_start {
            if !(11..=TRIAL_FRAMES - 40).contains(&s) {
                return Err(Error::config(format!("planted start {s} outside 11..={}", TRIAL_FRAMES - 40)));
            }
        }
        if self.joint_count < 4 {
            return Err(Error::config("joint_count must be at least 4"));
        }
        if !(self.joint_noise.is_finite() && self.joint_noise >= 0.0) {
            return Err(Error::config("joint_noise must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn detection(&self) -> DetectionParams {
        DetectionParams {
            center_crop: geometry_for(self.resolution, self.resolution, self.resolution).center,
            ..DetectionParams::default()
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Point {
    x: f64,
    y: f64,
}

impl Point {
    fn offset(self, dir: Point, len: f64) -> Point {
        Point {
            x: self.x + dir.x * len,
            y: self.y + dir.y * len,
        }
    }
}

fn unit(angle: f64) -> Point {
    Point {
        x: angle.cos(),
        y: angle.sin(),
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.x + t * dx - p.x, a.y + t * dy - p.y);
    (qx * qx + qy * qy).sqrt()
}

/// Arm extended along its path to `reach` (0..=1) with the forearm turned
/// by `turn` radians.
#[derive(Clone, Copy, Debug)]
struct ArmPose {
    reach: f64,
    turn: f64,
}

#[derive(Clone, Copy, Debug)]
struct Pose {
    arm: Option<ArmPose>,
    ball: Option<Point>,
}

const ARM_COLOR: [f64; 3] = [1.0, 0.86, 0.18];
const BALL_COLOR: [f64; 3] = [0.95, 0.97, 1.0];

/// Static parts of a dataset: background texture and body geometry.
struct Scene {
    res: u32,
    background: Vec<[f64; 3]>,
    shoulder: Point,
    upper_len: f64,
    fore_len: f64,
    upper_dir: f64,
    fore_dir: f64,
    arm_radius: f64,
    ball_radius: f64,
    ring_radius: f64,
}

impl Scene {
    fn new(spec: &SynthSpec) -> Self {
        let res = spec.resolution;
        let r = res as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0xB0]));
        // Smooth value noise on an 8x8 lattice plus a faint grating.
        let lattice: Vec<[f64; 3]> = (0..81)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let cell = r / 8.0;
        let center = r / 2.0;
        let body = Point { x: 0.66 * r, y: 0.56 * r };
        let mut background = Vec::with_capacity((res * res) as usize);
        for y in 0..res {
            for x in 0..res {
                let (fx, fy) = ((x as f64 + 0.5) / cell, (y as f64 + 0.5) / cell);
                let (ix, iy) = ((fx.floor() as usize).min(7), (fy.floor() as usize).min(7));
                let (tx, ty) = (fx - ix as f64, fy - iy as f64);
                let at = |i: usize, j: usize| lattice[j * 9 + i];
                let mut px = [0.0; 3];
                for (c, v) in px.iter_mut().enumerate() {
                    let n = at(ix, iy)[c] * (1.0 - tx) * (1.0 - ty)
                        + at(ix + 1, iy)[c] * tx * (1.0 - ty)
                        + at(ix, iy + 1)[c] * (1.0 - tx) * ty
                        + at(ix + 1, iy + 1)[c] * tx * ty;
                    let grating = (0.9 * (x as f64 - center) / cell * std::f64::consts::PI).sin() * 0.02;
                    *v = 0.36 + 0.07 * n + grating;
                }
                let p = Point {
                    x: x as f64 + 0.5,
                    y: y as f64 + 0.5,
                };
                let d = ((p.x - body.x).powi(2) + (p.y - body.y).powi(2)).sqrt();
                let cov = (0.1 * r + 0.5 - d).clamp(0.0, 1.0);
                let torso = [0.22, 0.28, 0.52];
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - cov) + torso[c] * cov;
                }
                background.push(px);
            }
        }
        Scene {
            res,
            background,
            shoulder: Point { x: 0.54 * r, y: 0.48 * r },
            upper_len: 0.17 * r,
            fore_len: 0.17 * r,
            upper_dir: 200f64.to_radians(),
            fore_dir: 250f64.to_radians(),
            arm_radius: 0.045 * r,
            ball_radius: 0.05 * r,
            ring_radius: 0.3 * r,
        }
    }

    /// Shoulder, elbow and wrist plus the drawn segments.
    fn arm(&self, pose: ArmPose) -> ([Point; 3], Vec<(Point, Point)>) {
        let s = pose.reach * (self.upper_len + self.fore_len);
        let u1 = unit(self.upper_dir);
        let u2 = unit(self.fore_dir + pose.turn);
        if s <= self.upper_len {
            let tip = self.shoulder.offset(u1, s);
            ([self.shoulder, tip, tip], vec![(self.shoulder, tip)])
        } else {
            let elbow = self.shoulder.offset(u1, self.upper_len);
            let wrist = elbow.offset(u2, s - self.upper_len);
            ([self.shoulder, elbow, wrist], vec![(self.shoulder, elbow), (elbow, wrist)])
        }
    }

    /// Ring position `p` of `RING_CELLS * SUB_OFFSETS`.
    fn ring_position(&self, p: usize) -> Point {
        let c = self.res as f64 / 2.0;
        let a = std::f64::consts::TAU * p as f64 / BALL_FRAMES as f64;
        Point {
            x: c + self.ring_radius * a.cos(),
            y: c + self.ring_radius * a.sin(),
        }
    }

    fn render(&self, pose: &Pose) -> RgbImage {
        let segments = pose.arm.map(|a| self.arm(a).1).unwrap_or_default();
        let mut img = RgbImage::new(self.res, self.res);
        for (i, px) in img.pixels_mut().enumerate() {
            let p = Point {
                x: (i as u32 % self.res) as f64 + 0.5,
                y: (i as u32 / self.res) as f64 + 0.5,
            };
            let mut v = self.background[i];
            let arm_cov = segments
                .iter()
                .map(|&(a, b)| (self.arm_radius + 0.5 - segment_distance(p, a, b)).clamp(0.0, 1.0))
                .fold(0.0, f64::max);
            if arm_cov > 0.0 {
                for c in 0..3 {
                    v[c] = v[c] * (1.0 - arm_cov) + ARM_COLOR[c] * arm_cov;
                }
            }
            if let Some(b) = pose.ball {
                let d = ((p.x - b.x).powi(2) + (p.y - b.y).powi(2)).sqrt();
                let cov = (self.ball_radius + 0.5 - d).clamp(0.0, 1.0);
                for c in 0..3 {
                    v[c] = v[c] * (1.0 - cov) + BALL_COLOR[c] * cov;
                }
            }
            *px = Rgb(v.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        img
    }

    /// Joint coordinates in meters; the frame spans two meters.
    fn joints(&self, pose: &Pose, count: usize) -> Vec<f64> {
        let m = 2.0 / self.res as f64;
        let [s, e, w] = match pose.arm {
            Some(a) => self.arm(a).0,
            None => [self.shoulder; 3],
        };
        let ball = pose.ball.unwrap_or(w);
        let mut pts = vec![s, e, w, ball];
        for k in 4..count {
            pts.push(Point {
                x: self.shoulder.x + 0.05 * self.res as f64 * (k - 3) as f64,
                y: self.shoulder.y + 0.1 * self.res as f64,
            });
        }
        pts.iter().flat_map(|p| [p.x * m, p.y * m, 0.0]).collect()
    }
}

/// Ring cell visited at ball frame `b` by `class`: classes 0..8 walk the
/// ring forward from their own cell, the last class walks backward from 0.
pub fn ring_cell(class: usize, b: usize) -> usize {
    let step = b / SUB_OFFSETS;
    if class < RING_CELLS {
        (class + step) % RING_CELLS
    } else {
        (RING_CELLS - step % RING_CELLS) % RING_CELLS
    }
}

/// Forearm turn of the release pose for `class`.
fn release_turn(class: usize) -> f64 {
    (-80.0 + 20.0 * class as f64).to_radians()
}

fn windup(k: usize) -> ArmPose {
    ArmPose {
        reach: 0.5 + 0.5 * k as f64 / (WINDUP_FRAMES - 1) as f64,
        turn: 0.0,
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedTrial {
    pub record: TrialRecord,
    pub planted_start: usize,
}

/// Renders trials for one spec; the scene is built once.
pub struct Synthesizer {
    spec: SynthSpec,
    scene: Scene,
}

impl Synthesizer {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        let scene = Scene::new(&spec);
        Ok(Synthesizer { spec, scene })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    fn pose(&self, class: usize, t: usize, start: usize) -> Pose {
        let rest = Pose { arm: None, ball: None };
        if t < start {
            return rest;
        }
        let k = t - start;
        if k < WINDUP_FRAMES {
            return Pose {
                arm: Some(windup(k)),
                ball: None,
            };
        }
        let b = k - WINDUP_FRAMES;
        match self.spec.mode {
            SynthMode::MotionCued if b < BALL_FRAMES => {
                let p = ring_cell(class, b) * SUB_OFFSETS + b % SUB_OFFSETS;
                Pose {
                    arm: Some(windup(WINDUP_FRAMES - 1)),
                    ball: Some(self.scene.ring_position(p)),
                }
            }
            SynthMode::MotionCued => rest,
            SynthMode::PoseCued => {
                let arm = ArmPose {
                    reach: 1.0,
                    turn: release_turn(class),
                };
                Pose {
                    arm: Some(arm),
                    ball: Some(self.scene.arm(arm).0[2]),
                }
            }
        }
    }

    /// One trial of `class`, fully determined by `seed`. Fails if the
    /// rendered trial does not trigger detection at the planted frame.
    pub fn generate_trial(&self, class: usize, seed: u64) -> Result<GeneratedTrial> {
        if class >= NUM_CLASSES {
            return Err(Error::OutOfRange(format!("class {class} outside 0..{NUM_CLASSES}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = match self.spec.planted_start {
            Some(s) => s,
            None => rng.gen_range(START_RANGE),
        };
        let noise = Normal::new(0.0, self.spec.joint_noise).map_err(|e| Error::config(e.to_string()))?;
        let mut frames = Vec::with_capacity(TRIAL_FRAMES);
        let mut joints = Vec::with_capacity(TRIAL_FRAMES);
        let rest = self.scene.render(&Pose { arm: None, ball: None });
        for t in 0..TRIAL_FRAMES {
            let pose = self.pose(class, t, start);
            let img = if pose.arm.is_none() && pose.ball.is_none() {
                rest.clone()
            } else {
                self.scene.render(&pose)
            };
            frames.push(img);
            let mut j = self.scene.joints(&pose, self.spec.joint_count);
            for v in &mut j {
                *v += noise.sample(&mut rng);
            }
            joints.push(j);
        }
        let record = TrialRecord {
            participant: String::new(),
            trial: String::new(),
            label: class,
            frames,
            joints,
        };
        let found = detect_start(&record, &self.spec.detection());
        match found {
            Ok(s) if s == start => Ok(GeneratedTrial {
                record,
                planted_start: start,
            }),
            other => Err(Error::config(format!(
                "spec infeasible: planted start {start} detected as {other:?}"
            ))),
        }
    }

    /// Writes `9 * trials_per_class` trials and the manifest under `root`.
    pub fn generate_dataset(&self, root: &Path) -> Result<Manifest> {
        let spec = &self.spec;
        let mut entries = Vec::new();
        for class in 0..NUM_CLASSES {
            for i in 0..spec.trials_per_class {
                let seed = derive_seed(spec.seed, &[class as u64, i as u64]);
                let mut g = self.generate_trial(class, seed)?;
                let entry = TrialEntry {
                    participant: format!("s{:02}", i % spec.participants),
                    trial: format!("c{class}_t{i:03}"),
                    label: class,
                    planted_start: Some(g.planted_start),
                };
                g.record.participant = entry.participant.clone();
                g.record.trial = entry.trial.clone();
                write_trial(root, &entry, &g.record)?;
                entries.push(entry);
            }
        }
        let manifest = Manifest {
            name: format!("synthetic-{}", spec.mode),
            synthetic: true,
            frame_count: TRIAL_FRAMES,
            fps: 30.0,
            resolution: [spec.resolution, spec.resolution],
            joint_count: spec.joint_count,
            joint_units: "m".into(),
            normalization: Normalization::default(),
            detection: spec.detection(),
            generator: Some(serde_json::to_value(spec)?),
            trials: entries,
        };
        write_manifest(root, &manifest)?;
        Ok(manifest)
    }
}

pub fn generate_trial(class: usize, spec: &SynthSpec, seed: u64) -> Result<GeneratedTrial> {
    Synthesizer::new(spec.clone())?.generate_trial(class, seed)
}

pub fn generate_dataset(spec: &SynthSpec, root: &Path) -> Result<Manifest> {
    Synthesizer::new(spec.clone())?.generate_dataset(root)
}
