use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::eval::{argmax, evaluate, Evaluation};
use crate::datapipe::{geometry_for, prepare_trials, split, ClipBuilder, Dataset, PreparedTrial, SamplingScheme};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::scalar::Scalar;
use crate::seeds::derive_seed;
use crate::tensor_core::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Sampling scheme, 1 to 7.
    pub scheme: u8,
    /// Seed of shuffling, sampling, augmentation and dropout.
    pub seed: u64,
    /// Seed of the train/test split.
    pub split_seed: u64,
    /// Evaluate on the test split every this many epochs (and always after
    /// the last one).
    pub eval_interval: usize,
    /// Stop once test accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Threads computing per-sample gradients; 1 is bit-reproducible.
    pub workers: usize,
    /// Keep decoded window frames in memory.
    pub cache_frames: bool,
    /// Write wall-clock seconds into the metrics file as well as the
    /// timing file.
    pub wall_clock_in_metrics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 300,
            l2: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            scheme: 1,
            seed: 0,
            split_seed: 0,
            eval_interval: 1,
            target_accuracy: None,
            workers: 1,
            cache_frames: true,
            wall_clock_in_metrics: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.learning_rate) || !finite_nonneg(self.l2) {
            return Err(Error::config("learning rate and L2 weight must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("Adam epsilon must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_interval == 0 || self.workers == 0 {
            return Err(Error::config("batch size, epochs, evaluation interval and workers must be at least 1"));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("target accuracy must lie in [0, 1]"));
            }
        }
        SamplingScheme::table(self.scheme)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            l2: self.l2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean cross-entropy, without the L2 term.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,seconds";

impl EpochMetrics {
    pub fn csv_row(&self, with_seconds: bool) -> String {
        let test = self.test_acc.map_or(String::new(), |a| format!("{a:.6}"));
        let secs = if with_seconds {
            format!("{:.3}", self.seconds)
        } else {
            String::new()
        };
        format!("{},{:.6},{:.6},{test},{secs}", self.epoch, self.train_loss, self.train_acc)
    }
}

/// Prepared train and test trials plus the clip builder.
pub struct TrainData {
    pub train: Vec<PreparedTrial>,
    pub test: Vec<PreparedTrial>,
    pub builder: ClipBuilder,
}

impl TrainData {
    /// Splits the dataset, detects starts and fixes the crop geometry for
    /// `input_size` model inputs.
    pub fn from_dataset(ds: &Dataset, input_size: usize, split_seed: u64, cache: bool) -> Result<Self> {
        let [w, h] = ds.manifest.resolution;
        let geometry = geometry_for(w, h, input_size as u32);
        geometry.validate(w, h)?;
        let s = split(ds.entries(), split_seed);
        Ok(TrainData {
            train: prepare_trials(ds, &s.train, cache)?,
            test: prepare_trials(ds, &s.test, cache)?,
            builder: ClipBuilder::new(geometry, ds.manifest.normalization.clone()),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_test_acc: Option<f64>,
    pub final_eval: Evaluation,
    pub stopped_early: bool,
}

struct SampleOut<T> {
    loss: f64,
    correct: bool,
    grads: Vec<Tensor<T>>,
}

fn sample_step<T: Scalar>(
    model: &Model<T>,
    data: &TrainData,
    scheme: &SamplingScheme,
    index: usize,
    epoch: usize,
    seed: u64,
) -> Result<SampleOut<T>> {
    let trial = &data.train[index];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64, index as u64]));
    let clip = if model.config().architecture.single_frame() {
        data.builder.train_frame(trial, scheme, &mut rng)?
    } else {
        data.builder.train_clip(trial, scheme, &mut rng)?
    };
    let out = model.loss_and_grads(&clip.cast::<T>(), trial.label(), Some(&mut rng))?;
    let logits: Vec<f64> = out.logits.data().iter().map(|v| v.to_f64_lossy()).collect();
    Ok(SampleOut {
        loss: out.loss.to_f64_lossy(),
        correct: argmax(&logits) == trial.label(),
        grads: out.grads,
    })
}

/// Sums gradients of `indices` in order; returns (grads, loss sum, correct).
fn accumulate<T: Scalar>(
    model: &Model<T>,
    data: &TrainData,
    scheme: &SamplingScheme,
    indices: &[usize],
    epoch: usize,
    seed: u64,
) -> Result<(Vec<Tensor<T>>, f64, usize)> {
    let mut sum: Vec<Tensor<T>> = model.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    let (mut loss, mut correct) = (0.0, 0);
    for &i in indices {
        let s = sample_step(model, data, scheme, i, epoch, seed).inspect_err(|e| {
            log::error!("epoch {epoch}: sample {} ({}) failed: {e}", i, data.train[i].entry.trial);
        })?;
        for (a, g) in sum.iter_mut().zip(&s.grads) {
            a.add_assign(g)?;
        }
        loss += s.loss;
        correct += usize::from(s.correct);
    }
    Ok((sum, loss, correct))
}

fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    data: &TrainData,
    scheme: &SamplingScheme,
    batch: &[usize],
    epoch: usize,
    cfg: &TrainConfig,
) -> Result<(Vec<Tensor<T>>, f64, usize)> {
    let workers = cfg.workers.min(batch.len());
    if workers <= 1 {
        return accumulate(model, data, scheme, batch, epoch, cfg.seed);
    }
    let chunk = batch.len().div_ceil(workers);
    let parts: Vec<Result<(Vec<Tensor<T>>, f64, usize)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|c| s.spawn(move || accumulate(model, data, scheme, c, epoch, cfg.seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::config("a gradient worker panicked"))))
            .collect()
    });
    let mut parts = parts.into_iter();
    let (mut sum, mut loss, mut correct) = parts.next().expect("at least one worker")?;
    for p in parts {
        let (g, l, c) = p?;
        for (a, b) in sum.iter_mut().zip(&g) {
            a.add_assign(b)?;
        }
        loss += l;
        correct += c;
    }
    Ok((sum, loss, correct))
}

/// Trains `model` in place. With `out`, writes `metrics.csv`,
/// `timing.csv`, `best.ckpt`, `final.ckpt` and `confusion.csv` there.
pub fn train<T: Scalar>(model: &mut Model<T>, data: &TrainData, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::config("both the training and the test split need at least one trial"));
    }
    let scheme = SamplingScheme::table(cfg.scheme)?;
    let adam = cfg.adam();
    let mut state = AdamState::new(model.params());
    let mut files = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut metrics = fs::File::create(dir.join("metrics.csv"))?;
            writeln!(metrics, "{METRICS_HEADER}")?;
            let mut timing = fs::File::create(dir.join("timing.csv"))?;
            writeln!(timing, "epoch,seconds")?;
            Some((metrics, timing))
        }
        None => None,
    };
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let (mut best_epoch, mut best_acc) = (None, None::<f64>);
    let mut final_eval = None;
    let mut stopped_early = false;
    let n = data.train.len();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::MAX, epoch as u64])));
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (mut grads, loss, c) = batch_gradients(model, data, &scheme, batch, epoch, cfg)?;
            if !loss.is_finite() {
                log::error!("epoch {epoch} batch {b}: non-finite loss, trials {batch:?}");
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            let inv = T::lit(1.0 / batch.len() as f64);
            for g in &mut grads {
                g.scale_in_place(inv);
            }
            adam_step(model.params_mut(), &grads, &mut state, &adam).inspect_err(|e| {
                log::error!("epoch {epoch} batch {b}: update aborted ({e}), trials {batch:?}");
            })?;
            loss_sum += loss;
            correct += c;
        }
        let last = epoch == cfg.epochs;
        let test_eval = if epoch % cfg.eval_interval == 0 || last {
            Some(evaluate(model, &data.test, &data.builder, &scheme)?)
        } else {
            None
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_acc: test_eval.as_ref().map(|e| e.accuracy),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.3} test {}",
            m.train_loss,
            m.train_acc,
            m.test_acc.map_or("-".into(), |a| format!("{a:.3}"))
        );
        if let Some((mf, tf)) = files.as_mut() {
            writeln!(mf, "{}", m.csv_row(cfg.wall_clock_in_metrics))?;
            writeln!(tf, "{epoch},{:.3}", m.seconds)?;
        }
        if let Some(acc) = m.test_acc {
            if best_acc.is_none_or(|b| acc > b) {
                best_acc = Some(acc);
                best_epoch = Some(epoch);
                if let Some(dir) = out {
                    model.save(dir.join("best.ckpt"))?;
                }
            }
        }
        let reached = matches!((cfg.target_accuracy, m.test_acc), (Some(t), Some(a)) if a >= t);
        metrics.push(m);
        if let Some(e) = test_eval {
            final_eval = Some(e);
        }
        if reached && !last {
            stopped_early = true;
            log::info!("target accuracy reached after epoch {epoch}");
            break;
        }
    }
    let final_eval = final_eval.expect("the last epoch is always evaluated");
    if let Some(dir) = out {
        model.save(dir.join("final.ckpt"))?;
        final_eval.write_confusion_csv(&dir.join("confusion.csv"))?;
    }
    Ok(TrainReport {
        metrics,
        best_epoch,
        best_test_acc: best_acc,
        final_eval,
        stopped_early,
    })
}
