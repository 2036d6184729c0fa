use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{perturb, supports, ClipBuilder, PerturbationKind, PerturbationSpec, PreparedTrial, SamplingScheme, WindowView};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::scalar::Scalar;
use crate::seeds::derive_seed;
use crate::tensor_core::{softmax, Tensor};

/// Accuracy and confusion counts (rows are true classes).
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.confusion.len();
        let mut header = vec!["true\\pred".to_string()];
        header.extend((0..n).map(|c| c.to_string()));
        w.write_record(&header)?;
        for (c, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities of one clip. Single-frame models average the
/// per-frame softmax outputs.
pub fn clip_probabilities<T: Scalar>(model: &Model<T>, clip: &Tensor<T>) -> Result<Vec<f64>> {
    let to64 = |p: Vec<T>| p.into_iter().map(|v| v.to_f64_lossy()).collect::<Vec<f64>>();
    if !model.config().architecture.single_frame() || clip.shape()[0] == 1 {
        return Ok(to64(softmax(model.logits(clip)?.data())));
    }
    let steps = clip.shape()[0];
    let mut acc = vec![0.0; model.config().num_classes];
    for t in 0..steps {
        let frame = clip.index0(t)?;
        let mut shape = vec![1];
        shape.extend_from_slice(frame.shape());
        let p = to64(softmax(model.logits(&frame.reshape(&shape)?)?.data()));
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v / steps as f64;
        }
    }
    Ok(acc)
}

/// Evaluation variations: a perturbation applied per trial and/or a
/// random reordering of the frames of every test clip.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub perturbation: Option<(PerturbationKind, u32, u64)>,
    pub permute_seed: Option<u64>,
}

fn permute_frames<T: Scalar>(clip: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let steps = clip.shape()[0];
    let per = clip.len() / steps;
    let mut order: Vec<usize> = (0..steps).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut data = Vec::with_capacity(clip.len());
    for &t in &order {
        data.extend_from_slice(&clip.data()[t * per..(t + 1) * per]);
    }
    Tensor::new(clip.shape().to_vec(), data)
}

/// Averages softmax outputs over every test sampling of each trial and
/// predicts the argmax.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    trials: &[PreparedTrial],
    builder: &ClipBuilder,
    scheme: &SamplingScheme,
) -> Result<Evaluation> {
    evaluate_with(model, trials, builder, scheme, &EvalOptions::default())
}

pub fn evaluate_with<T: Scalar>(
    model: &Model<T>,
    trials: &[PreparedTrial],
    builder: &ClipBuilder,
    scheme: &SamplingScheme,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let refs: Vec<&PreparedTrial> = trials.iter().collect();
    evaluate_refs(model, &refs, builder, scheme, opts)
}

fn evaluate_refs<T: Scalar>(
    model: &Model<T>,
    trials: &[&PreparedTrial],
    builder: &ClipBuilder,
    scheme: &SamplingScheme,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if trials.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let classes = model.config().num_classes;
    let mut confusion = vec![vec![0; classes]; classes];
    let mut predictions = Vec::with_capacity(trials.len());
    let mut correct = 0;
    for (i, trial) in trials.iter().enumerate() {
        let view = match opts.perturbation {
            Some((kind, level, seed)) => {
                let spec = PerturbationSpec::new(kind, level, derive_seed(seed, &[i as u64]))?;
                perturb(&trial.window, trial.trial_len, &spec)?
            }
            None => WindowView::plain(),
        };
        let clips = builder.test_clips(trial, scheme, &view)?;
        let mut mean = vec![0.0; classes];
        for (j, clip) in clips.iter().enumerate() {
            let mut clip = clip.cast::<T>();
            if let Some(seed) = opts.permute_seed {
                clip = permute_frames(&clip, derive_seed(seed, &[i as u64, j as u64]))?;
            }
            for (m, p) in mean.iter_mut().zip(clip_probabilities(model, &clip)?) {
                *m += p / clips.len() as f64;
            }
        }
        let pred = argmax(&mean);
        let label = trial.label();
        if label >= classes {
            return Err(Error::OutOfRange(format!("label {label} for a {classes}-class model")));
        }
        confusion[label][pred] += 1;
        correct += usize::from(pred == label);
        predictions.push(pred);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / trials.len() as f64,
        correct,
        total: trials.len(),
        confusion,
        predictions,
    })
}

/// One line of a robustness report; `repeat` is `None` for the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    pub kind: PerturbationKind,
    pub level: u32,
    pub repeat: Option<usize>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    pub fn mean(&self, level: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.level == level && r.repeat.is_none())
            .map(|r| r.accuracy)
    }

    pub fn means(&self) -> Vec<&RobustnessRow> {
        self.rows.iter().filter(|r| r.repeat.is_none()).collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "kind,level,repeat,accuracy")?;
        for r in &self.rows {
            let repeat = r.repeat.map_or("mean".to_string(), |k| k.to_string());
            writeln!(out, "{},{},{},{:.6}", r.kind, r.level, repeat, r.accuracy)?;
        }
        Ok(())
    }
}

/// Evaluates under `kind` at each level, `repeats` times with distinct
/// seeds. Level 0 is the unperturbed control.
#[allow(clippy::too_many_arguments)]
pub fn robustness_eval<T: Scalar>(
    model: &Model<T>,
    trials: &[PreparedTrial],
    builder: &ClipBuilder,
    scheme: &SamplingScheme,
    kind: PerturbationKind,
    levels: &[u32],
    repeats: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    if repeats == 0 {
        return Err(Error::config("at least one repeat is needed"));
    }
    let kind_id = PerturbationKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64;
    let mut rows = Vec::new();
    for &level in levels {
        let mut accs = Vec::with_capacity(repeats);
        if level == 0 {
            let acc = evaluate(model, trials, builder, scheme)?.accuracy;
            accs.resize(repeats, acc);
        } else {
            PerturbationSpec::new(kind, level, 0)?;
            let usable: Vec<&PreparedTrial> = trials.iter().filter(|t| supports(t, kind, level)).collect();
            if usable.len() < trials.len() {
                log::warn!(
                    "{kind} level {level}: {} trial(s) lack the frames and are skipped",
                    trials.len() - usable.len()
                );
            }
            for r in 0..repeats {
                let opts = EvalOptions {
                    perturbation: Some((kind, level, derive_seed(seed, &[kind_id, level as u64, r as u64]))),
                    permute_seed: None,
                };
                accs.push(evaluate_refs(model, &usable, builder, scheme, &opts)?.accuracy);
            }
        }
        for (r, &a) in accs.iter().enumerate() {
            rows.push(RobustnessRow {
                kind,
                level,
                repeat: Some(r),
                accuracy: a,
            });
        }
        rows.push(RobustnessRow {
            kind,
            level,
            repeat: None,
            accuracy: accs.iter().sum::<f64>() / repeats as f64,
        });
    }
    Ok(RobustnessReport { rows })
}
