//! Trial storage, start detection, sampling, augmentation, splits and
//! robustness perturbations.

mod clips;
mod dataset;
mod detect;
mod perturb;
mod sampling;
mod split;
mod transform;

pub use clips::{geometry_for, prepare_trial, prepare_trials, supports, ClipBuilder, PreparedTrial, SPARE_FRAMES};
pub use dataset::{
    frame_file_name, trial_dir, write_manifest, write_trial, Dataset, DetectionParams, FrameStore, Manifest,
    Normalization, TrialEntry, TrialRecord, MANIFEST_FILE, NUM_CLASSES, TRIAL_FRAMES,
};
pub use detect::{
    center_crop_unit, detect_start, detect_start_from_series, detect_start_in, make_window, ActionWindow, MotionSeries,
    RAMP_FRAMES, WINDOW_FRAMES,
};
pub use perturb::{perturb, shift_for, PerturbationKind, PerturbationSpec, WindowView};
pub use sampling::{indices_from_gaps, SamplingScheme, Steps};
pub use split::{split, Split, GROUP_SIZE, TEST_PER_GROUP};
pub use transform::{
    augment_train, augment_with, color_jitter, crop_planar, normalize, preprocess_test, preprocess_with,
    resize_bilinear, AugmentParams, CropGeometry, JitterStrength,
};
