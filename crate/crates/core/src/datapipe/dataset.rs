use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames per trial (3 s at 30 fps).
pub const TRIAL_FRAMES: usize = 90;
pub const NUM_CLASSES: usize = 9;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Pixel normalization: `(v / pixel_scale - mean) / std` per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub pixel_scale: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            pixel_scale: 255.0,
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

/// Start-detection thresholds and the image scale they were tuned under:
/// center crop of `center_crop` pixels, values divided by `pixel_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    pub delta1: f64,
    pub delta2: f64,
    pub center_crop: u32,
    pub pixel_scale: f64,
    /// Frame every difference is taken against.
    pub reference_frame: usize,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            delta1: 6.0,
            delta2: 0.16,
            center_crop: 240,
            pixel_scale: 255.0,
            reference_frame: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub participant: String,
    pub trial: String,
    pub label: usize,
    /// Known start frame, recorded for generated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_start: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub synthetic: bool,
    pub frame_count: usize,
    pub fps: f64,
    /// `[width, height]` of every frame.
    pub resolution: [u32; 2],
    pub joint_count: usize,
    pub joint_units: String,
    pub normalization: Normalization,
    pub detection: DetectionParams,
    /// Free-form generator settings for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
    pub trials: Vec<TrialEntry>,
}

impl Manifest {
    pub fn validate(&self, root: &Path) -> Result<()> {
        let bad = |msg: String| Err(Error::dataset(root.join(MANIFEST_FILE), msg));
        if self.frame_count < 40 {
            return bad(format!("trials need at least 40 frames, manifest declares {}", self.frame_count));
        }
        if self.resolution.contains(&0) || self.joint_count == 0 {
            return bad("resolution and joint count must be positive".into());
        }
        if self.trials.is_empty() {
            return bad("no trials listed".into());
        }
        if self.detection.reference_frame + 9 > self.frame_count {
            return bad("reference frame leaves no room for a start".into());
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.trials {
            if t.label >= NUM_CLASSES {
                return bad(format!("trial {}/{} has label {} outside 0..9", t.participant, t.trial, t.label));
            }
            if !seen.insert((&t.participant, &t.trial)) {
                return bad(format!("trial {}/{} listed twice", t.participant, t.trial));
            }
        }
        Ok(())
    }
}

/// One trial fully loaded: frames, per-frame joint vectors, label.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub participant: String,
    pub trial: String,
    pub label: usize,
    pub frames: Vec<RgbImage>,
    /// `J x 3` coordinates per frame, flattened.
    pub joints: Vec<Vec<f64>>,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<()> {
        let here = || PathBuf::from(format!("{}/{}", self.participant, self.trial));
        if self.frames.is_empty() || self.frames.len() != self.joints.len() {
            return Err(Error::dataset(here(), "frame and joint counts differ"));
        }
        let dims = self.frames[0].dimensions();
        if self.frames.iter().any(|f| f.dimensions() != dims) {
            return Err(Error::dataset(here(), "frames differ in resolution"));
        }
        if self.label >= NUM_CLASSES {
            return Err(Error::dataset(here(), format!("label {} outside 0..9", self.label)));
        }
        Ok(())
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:03}.png")
}

pub fn trial_dir(root: &Path, entry: &TrialEntry) -> PathBuf {
    root.join(&entry.participant).join(&entry.trial)
}

/// A dataset directory: manifest plus per-trial folders.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::dataset(&path, format!("cannot read manifest: {e}")))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::dataset(&path, format!("invalid manifest: {e}")))?;
        manifest.validate(&root)?;
        Ok(Dataset { root, manifest })
    }

    pub fn len(&self) -> usize {
        self.manifest.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.trials.is_empty()
    }

    pub fn entries(&self) -> &[TrialEntry] {
        &self.manifest.trials
    }

    pub fn frame_path(&self, entry: &TrialEntry, index: usize) -> PathBuf {
        trial_dir(&self.root, entry).join(frame_file_name(index))
    }

    pub fn load_frame(&self, entry: &TrialEntry, index: usize) -> Result<RgbImage> {
        let path = self.frame_path(entry, index);
        let img = image::open(&path).map_err(|e| Error::dataset(&path, format!("unreadable frame: {e}")))?;
        let img = img.to_rgb8();
        let [w, h] = self.manifest.resolution;
        if img.dimensions() != (w, h) {
            return Err(Error::dataset(
                &path,
                format!("frame is {:?}, manifest declares {w}x{h}", img.dimensions()),
            ));
        }
        Ok(img)
    }

    pub fn load_joints(&self, entry: &TrialEntry) -> Result<Vec<Vec<f64>>> {
        let path = trial_dir(&self.root, entry).join("joints.csv");
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(&path)
            .map_err(|e| Error::dataset(&path, format!("cannot read joints: {e}")))?;
        let width = 1 + 3 * self.manifest.joint_count;
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::dataset(&path, e.to_string()))?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                // A header row is allowed.
                Err(_) if i == 0 => continue,
                Err(e) => return Err(Error::dataset(&path, format!("row {i}: {e}"))),
            };
            if values.len() != width {
                return Err(Error::dataset(&path, format!("row {i} has {} columns, expected {width}", values.len())));
            }
            if values[0] as usize != rows.len() {
                return Err(Error::dataset(&path, format!("row {i} has frame index {}", values[0])));
            }
            rows.push(values[1..].to_vec());
        }
        if rows.len() != self.manifest.frame_count {
            return Err(Error::dataset(
                &path,
                format!("{} joint rows for {} frames", rows.len(), self.manifest.frame_count),
            ));
        }
        Ok(rows)
    }

    pub fn load_label(&self, entry: &TrialEntry) -> Result<usize> {
        let path = trial_dir(&self.root, entry).join("label.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::dataset(&path, format!("cannot read label: {e}")))?;
        let label: usize = text
            .trim()
            .parse()
            .map_err(|e| Error::dataset(&path, format!("bad label {text:?}: {e}")))?;
        if label != entry.label {
            return Err(Error::dataset(&path, format!("label {label} disagrees with manifest ({})", entry.label)));
        }
        Ok(label)
    }

    pub fn load_trial(&self, entry: &TrialEntry) -> Result<TrialRecord> {
        let frames = (0..self.manifest.frame_count)
            .map(|i| self.load_frame(entry, i))
            .collect::<Result<Vec<_>>>()?;
        let rec = TrialRecord {
            participant: entry.participant.clone(),
            trial: entry.trial.clone(),
            label: self.load_label(entry)?,
            frames,
            joints: self.load_joints(entry)?,
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Writes one trial in the directory layout.
pub fn write_trial(root: &Path, entry: &TrialEntry, record: &TrialRecord) -> Result<()> {
    record.validate()?;
    let dir = trial_dir(root, entry);
    fs::create_dir_all(&dir)?;
    for (i, f) in record.frames.iter().enumerate() {
        f.save(dir.join(frame_file_name(i)))?;
    }
    let mut w = csv::Writer::from_path(dir.join("joints.csv"))?;
    let j = record.joints[0].len() / 3;
    let mut header = vec!["frame".to_string()];
    for k in 0..j {
        for axis in ["x", "y", "z"] {
            header.push(format!("j{k}_{axis}"));
        }
    }
    w.write_record(&header)?;
    for (i, row) in record.joints.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    fs::write(dir.join("label.txt"), format!("{}\n", record.label))?;
    Ok(())
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(root)?;
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(root.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

/// Frames of one trial either held in memory or read on demand.
#[derive(Clone, Debug)]
pub enum FrameStore {
    Memory(Vec<RgbImage>),
    Disk(Vec<PathBuf>),
}

impl FrameStore {
    pub fn len(&self) -> usize {
        match self {
            FrameStore::Memory(v) => v.len(),
            FrameStore::Disk(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<Cow<'_, RgbImage>> {
        match self {
            FrameStore::Memory(v) => v
                .get(i)
                .map(Cow::Borrowed)
                .ok_or_else(|| Error::OutOfRange(format!("frame {i} of {}", v.len()))),
            FrameStore::Disk(v) => {
                let path = v
                    .get(i)
                    .ok_or_else(|| Error::OutOfRange(format!("frame {i} of {}", v.len())))?;
                let img = image::open(path).map_err(|e| Error::dataset(path, format!("unreadable frame: {e}")))?;
                Ok(Cow::Owned(img.to_rgb8()))
            }
        }
    }
}
